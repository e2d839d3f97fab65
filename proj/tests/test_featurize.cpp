#include <doctest.h>

#include <cmath>
#include <random>

#include "elp/featurize.hpp"
#include "elp/text.hpp"
#include "support.hpp"

using namespace elp;
using elp::testing::make_record;
using elp::testing::make_serp;

namespace {

ModelInput doc(const std::string& text) {
  ModelInput in;
  in.segments.push_back({SegmentKind::query, {text}});
  return in;
}

ClarificationRecord serp_record(int results) {
  auto r = make_record("running shoes", 4, {"men", "women", "kids"}, "who are they for");
  std::vector<std::pair<std::string, std::string>> rs;
  for (int i = 0; i < results; ++i)
    rs.emplace_back("title" + std::to_string(i), "snippet number " + std::to_string(i));
  r.serp = make_serp(rs);
  return r;
}

std::vector<std::string> random_words(std::mt19937_64& rng, int n) {
  static const char* pool[] = {"alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"};
  std::uniform_int_distribution<int> pick(0, 7);
  std::vector<std::string> w;
  for (int i = 0; i < n; ++i) w.push_back(pool[pick(rng)]);
  return w;
}

}  // namespace

TEST_SUITE("featurize") {
  TEST_CASE("setting names round trip") {
    for (auto s : kAllSettings) CHECK(parse_setting(to_string(s)) == s);
    CHECK_FALSE(parse_setting("query+everything").has_value());
    CHECK(kAllSettings.size() == 6);
  }

  TEST_CASE("query setting gives one segment") {
    const auto in = compose_input(serp_record(3), InputSetting::query);
    REQUIRE(in.segments.size() == 1);
    CHECK(in.segments[0].text() == "running shoes");
  }

  TEST_CASE("query+pane+titles with nine results") {
    const auto in = compose_input(serp_record(9), InputSetting::query_pane_titles, 10);
    REQUIRE(in.segments.size() == 4);
    CHECK(in.segments[3].kind == SegmentKind::serp);
    CHECK(in.segments[3].text() ==
          "title0 title1 title2 title3 title4 title5 title6 title7 title8");
    CHECK(in.segments[2].text() == "men women kids");
    CHECK(in.segments[2].parts.size() == 3);
  }

  TEST_CASE("max_results limits the serp segment") {
    const auto in = compose_input(serp_record(9), InputSetting::query_snippets, 2);
    REQUIRE(in.segments.size() == 2);
    CHECK(in.segments[1].text() == "snippet number 0 snippet number 1");
    CHECK(compose_input(serp_record(9), InputSetting::query_snippets, 0).segments.size() == 1);
  }

  TEST_CASE("serp settings need a serp") {
    auto r = make_record("q", 1);
    try {
      compose_input(r, InputSetting::query_snippets);
      FAIL("expected MissingSerp");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::MissingSerp);
    }
    CHECK_NOTHROW(compose_input(r, InputSetting::query_pane));
  }

  TEST_CASE("segments follow the setting and extend the query composition") {
    const auto r = serp_record(5);
    for (auto s : kAllSettings) {
      const auto in = compose_input(r, s);
      const bool pane = includes_pane(s);
      const bool serp = needs_serp(s);
      CHECK(in.segments.size() == 1 + (pane ? 2 : 0) + (serp ? 1 : 0));
      CHECK(in.segments[0].kind == SegmentKind::query);
      if (pane) {
        CHECK(in.segments[1].kind == SegmentKind::question);
        CHECK(in.segments[2].kind == SegmentKind::answers);
      }
      for (const auto& seg : in.segments) CHECK_FALSE(seg.text().empty());
      CHECK(compose_input(r, s).joined_text() == in.joined_text());
    }
    const auto q = compose_input(r, InputSetting::query);
    const auto qp = compose_input(r, InputSetting::query_pane);
    CHECK(qp.segments[0].text() == q.segments[0].text());
  }

  TEST_CASE("vocabulary examples") {
    std::vector<ModelInput> docs{doc("a b"), doc("b c")};
    auto v = fit_vocabulary(docs);
    CHECK(v.terms() == std::vector<std::string>{"a", "b", "c"});
    v = fit_vocabulary(docs, {.min_df = 2});
    CHECK(v.terms() == std::vector<std::string>{"b"});

    std::vector<ModelInput> equal{doc("c b a")};
    v = fit_vocabulary(equal, {.max_features = 2});
    CHECK(v.terms() == std::vector<std::string>{"a", "b"});
  }

  TEST_CASE("vocabulary indices are dense and dfs positive") {
    std::mt19937_64 rng(1);
    std::vector<ModelInput> docs;
    for (int i = 0; i < 30; ++i) {
      std::string t;
      for (const auto& w : random_words(rng, 6)) t += w + " ";
      docs.push_back(doc(t));
    }
    const auto v = fit_vocabulary(docs);
    for (std::size_t i = 0; i < v.size(); ++i) {
      CHECK(v.index(v.terms()[i]) == static_cast<int>(i));
      CHECK(v.document_frequencies()[i] >= 1);
    }
    CHECK(std::is_sorted(v.terms().begin(), v.terms().end()));
  }

  TEST_CASE("tf-idf weights on the two-document example") {
    std::vector<ModelInput> docs{doc("a b"), doc("b")};
    const auto v = fit_vocabulary(docs);
    CHECK(v.idf(*v.index("a")) == doctest::Approx(std::log(1.5) + 1));
    CHECK(v.idf(*v.index("b")) == doctest::Approx(1.0));
    const auto bow = transform_bow(docs[0], v);
    REQUIRE(bow.weights.size() == 2);
    const double wa = std::log(1.5) + 1, wb = 1.0, n = std::hypot(wa, wb);
    CHECK(bow.weights[0].second == doctest::Approx(wa / n).epsilon(1e-12));
    CHECK(bow.weights[1].second == doctest::Approx(wb / n).epsilon(1e-12));
    CHECK(bow.vocabulary_id == v.id());
  }

  TEST_CASE("single-term document has unit norm; out-of-vocabulary gives zero") {
    std::vector<ModelInput> docs{doc("b")};
    const auto v = fit_vocabulary(docs);
    const auto one = transform_bow(docs[0], v);
    REQUIRE(one.weights.size() == 1);
    CHECK(one.norm() == doctest::Approx(1));
    CHECK(transform_bow(doc("x y z"), v).weights.empty());
    CHECK(transform_bow(doc("x y z"), v).norm() == 0);
  }

  TEST_CASE("bow norms are zero or one and cover every fitted term") {
    std::mt19937_64 rng(2);
    std::vector<ModelInput> docs;
    for (int i = 0; i < 40; ++i) {
      std::string t;
      for (const auto& w : random_words(rng, 1 + i % 7)) t += w + " ";
      docs.push_back(doc(t));
    }
    const auto v = fit_vocabulary(docs, {.min_df = 3});
    for (const auto& d : docs) {
      const auto bow = transform_bow(d, v);
      const double n = bow.norm();
      CHECK((std::fabs(n) <= 1e-9 || std::fabs(n - 1) <= 1e-9));
      for (const auto& term : text::analyze(d.joined_text())) {
        if (const auto idx = v.index(term)) {
          const bool present = std::any_of(bow.weights.begin(), bow.weights.end(),
                                           [&](const auto& w) { return w.first == *idx; });
          CHECK(present);
        }
      }
    }
    const SparseRows rows = bow_matrix(docs, v);
    CHECK(rows.rows() == static_cast<Eigen::Index>(docs.size()));
    CHECK(rows.cols() == static_cast<Eigen::Index>(v.size()));
  }

  TEST_CASE("vocabulary text artifact round trips") {
    std::vector<ModelInput> docs{doc("Hello world"), doc("hello there")};
    const auto v = fit_vocabulary(docs, {.min_df = 1, .max_features = 2});
    const auto back = Vocabulary::from_text(v.to_text());
    CHECK(back.terms() == v.terms());
    CHECK(back.document_frequencies() == v.document_frequencies());
    CHECK(back.id() == v.id());
    CHECK(v.to_text().rfind("# elp-vocabulary v1", 0) == 0);

    elp::testing::TempDir dir("vocab");
    v.save(dir / "vocab.txt");
    CHECK(Vocabulary::load(dir / "vocab.txt").terms() == v.terms());
  }

  TEST_CASE("analyzer lowercases and splits on punctuation") {
    CHECK(text::analyze("Red-Dress, SIZE 10!") ==
          std::vector<std::string>{"red", "dress", "size", "10"});
    CHECK(text::analyze("Red", false) == std::vector<std::string>{"Red"});
  }

  TEST_CASE("encoder layout and separators between answers") {
    const auto r = serp_record(2);
    const auto in = compose_input(r, InputSetting::query_pane);
    const auto tok = WordTokenizer::fit(std::span<const ModelInput>(&in, 1));
    const auto seq = tokenize_for_encoder(in, tok);
    // [CLS] running shoes [SEP] who are they for [SEP] men [SEP] women [SEP] kids [SEP]
    CHECK(seq.ids.size() == 1 + 3 + 5 + 6);
    CHECK(seq.ids.front() == tok.cls_id());
    CHECK(seq.ids.back() == tok.sep_id());
    CHECK(seq.segment_of.front() == -1);
    CHECK(seq.truncated_tokens == 0);
  }

  TEST_CASE("truncation removes the serp tail first") {
    auto r = make_record("q1 q2", 1, {"a1", "a2"}, "w1 w2");
    std::vector<std::pair<std::string, std::string>> rs;
    for (int i = 0; i < 10; ++i) {
      std::string snip;
      for (int j = 0; j < 80; ++j) snip += "s" + std::to_string(i) + "x" + std::to_string(j) + " ";
      rs.emplace_back("t", snip);
    }
    r.serp = make_serp(rs);
    const auto in = compose_input(r, InputSetting::query_pane_snippets);
    const auto tok = WordTokenizer::fit(std::span<const ModelInput>(&in, 1));
    const auto seq = tokenize_for_encoder(in, tok, 512);
    CHECK(seq.ids.size() == 512);
    CHECK(seq.truncated_tokens == 800 - (512 - 1 - 3 - 3 - 2 - 2 - 1));
    // Everything up to the serp segment is intact.
    const auto head = tok.encode("q1 q2");
    CHECK(std::equal(head.begin(), head.end(), seq.ids.begin() + 1));
    const auto first_snip = tok.encode("s0x0");
    CHECK(seq.ids[1 + 3 + 3 + 2 + 2] == first_snip[0]);
  }

  TEST_CASE("truncation keeps the marker and a query token") {
    auto r = make_record("one two three", 1, {"a", "b"}, "question words");
    const auto in = compose_input(r, InputSetting::query_pane);
    const auto tok = WordTokenizer::fit(std::span<const ModelInput>(&in, 1));
    for (std::size_t budget = 2; budget < 14; ++budget) {
      const auto seq = tokenize_for_encoder(in, tok, budget);
      CHECK(seq.ids.size() <= budget);
      CHECK(seq.ids[0] == tok.cls_id());
      CHECK(seq.segment_of[1] == 0);
    }
    try {
      tokenize_for_encoder(in, tok, 1);
      FAIL("expected BudgetTooSmall");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::BudgetTooSmall);
    }
  }

  TEST_CASE("encoder length never exceeds the budget") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 100; ++trial) {
      auto r = make_record("q " + random_words(rng, 1)[0], 1, random_words(rng, 2 + trial % 4));
      std::vector<std::pair<std::string, std::string>> rs;
      for (int i = 0; i < trial % 11; ++i) {
        std::string s;
        for (const auto& w : random_words(rng, trial)) s += w + " ";
        rs.emplace_back("t", s);
      }
      r.serp = make_serp(rs);
      const auto in = compose_input(r, InputSetting::query_pane_snippets);
      const auto tok = WordTokenizer::fit(std::span<const ModelInput>(&in, 1));
      const std::size_t budget = 2 + static_cast<std::size_t>(trial) * 3;
      CHECK(tokenize_for_encoder(in, tok, budget).ids.size() <= budget);
    }
  }

  TEST_CASE("word tokenizer maps unknown words to the unknown id") {
    std::vector<ModelInput> docs{doc("known words only")};
    const auto tok = WordTokenizer::fit(docs);
    const auto ids = tok.encode("known mystery");
    REQUIRE(ids.size() == 2);
    CHECK(ids[0] > 3);
    CHECK(ids[1] == tok.unk_id());
  }

  TEST_CASE("wordpiece greedy longest match") {
    WordPieceTokenizer wp({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "play", "##ing", "##s", "run"});
    const auto ids = wp.encode("Playing runs jump");
    CHECK(ids == std::vector<int>{4, 5, 7, 6, 1});
  }
}
