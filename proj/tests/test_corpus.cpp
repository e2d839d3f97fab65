#include <doctest.h>

#include <algorithm>
#include <set>

#include "elp/corpus.hpp"
#include "support.hpp"

using namespace elp;
using elp::testing::make_record;
using elp::testing::make_serp;
using elp::testing::TempDir;

namespace {

const std::filesystem::path kFixtures = ELP_FIXTURE_DIR;

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an elp::Error");
  return ErrorKind::Io;
}

Corpus engagement_corpus(std::initializer_list<int> levels) {
  std::vector<ClarificationRecord> recs;
  int i = 0;
  for (int e : levels) recs.push_back(make_record("q" + std::to_string(i++), e));
  return Corpus(recs);
}

}  // namespace

TEST_SUITE("corpus") {
  TEST_CASE("click log fixture: eight records, two malformed") {
    const Corpus c = parse_click_log(kFixtures / "click_log.tsv");
    CHECK(c.size() == 8);
    CHECK(c.provenance().click_log.rows_read == 10);
    CHECK(c.provenance().click_log.malformed == 2);
    CHECK(c.provenance().click_log.accepted == 8);

    const auto& dino = c[0];
    CHECK(dino.query == "dinosaur");
    CHECK(dino.answers.size() == 5);
    CHECK(dino.engagement == 3);
    CHECK(dino.impression == Impression::high);
    CHECK_FALSE(dino.serp.has_value());

    // Empty option cells are dropped.
    CHECK(c[1].answers == std::vector<std::string>{"long", "short"});
  }

  TEST_CASE("rows violating label invariants are rejected and counted") {
    TempDir dir("labels");
    elp::testing::write_text(
        dir / "log.tsv",
        "query\tquestion\toption_1\toption_2\toption_3\toption_4\toption_5\timpression_level\t"
        "engagement_level\n"
        "ok\tq\ta\tb\t\t\t\tlow\t4\n"
        "no answers\tq\t\t\t\t\t\tlow\t4\n"
        "bad level\tq\ta\tb\t\t\t\tlow\t12\n"
        "bad impression\tq\ta\tb\t\t\t\tenormous\t1\n");
    const Corpus c = parse_click_log(dir / "log.tsv");
    CHECK(c.size() == 1);
    CHECK(c.provenance().click_log.invalid == 3);
  }

  TEST_CASE("zero valid rows is an empty corpus") {
    CHECK(kind_of([] { parse_click_log(kFixtures / "empty_click_log.tsv"); }) ==
          ErrorKind::EmptyCorpus);
  }

  TEST_CASE("missing click log is an io error naming the path") {
    try {
      parse_click_log(kFixtures / "does_not_exist.tsv");
      FAIL("expected Io");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Io);
      CHECK(std::string(e.what()).find("does_not_exist.tsv") != std::string::npos);
    }
  }

  TEST_CASE("record validation") {
    auto r = make_record("q", 3, {"only"});
    CHECK(kind_of([&] { validate(r); }) == ErrorKind::InvalidLabel);
    r = make_record("q", 11);
    CHECK(kind_of([&] { validate(r); }) == ErrorKind::InvalidLabel);
    r = make_record("q", 10, {"a", "b", "c", "d", "e"});
    CHECK_NOTHROW(validate(r));
  }

  TEST_CASE("serp dump: truncation, missing snippet, malformed lines") {
    const SerpDump d = parse_serp_dump(kFixtures / "serp.jsonl");
    CHECK(d.malformed == 1);
    REQUIRE(d.serps.count("dinosaur") == 1);
    const auto& dino = d.serps.at("dinosaur").results;
    CHECK(dino.size() == 10);
    CHECK(dino.front().title == "dinosaur fact 0");
    CHECK(dino.back().title == "dinosaur fact 9");
    CHECK(d.truncated == 1);
    CHECK(d.serps.at("jaguar").results.size() == 10);
    const auto& py = d.serps.at("python").results;
    REQUIRE(py.size() == 3);
    CHECK(py[2].snippet.empty());
    CHECK(py[2].title == "monty python");
  }

  TEST_CASE("join attaches matched serps and records statistics") {
    std::vector<ClarificationRecord> recs{make_record("a", 1), make_record("b", 2),
                                          make_record("c", 3)};
    std::unordered_map<std::string, Serp> serps{{"a", make_serp({{"ta", "sa"}})},
                                                {"b", make_serp({{"tb", "sb"}})}};
    const Corpus joined = join(Corpus(recs), serps);
    CHECK(joined[0].serp.has_value());
    CHECK(joined[1].serp.has_value());
    CHECK_FALSE(joined[2].serp.has_value());
    REQUIRE(joined.provenance().join.has_value());
    CHECK(joined.provenance().join->matched == 2);
    CHECK(joined.provenance().join->unmatched == 1);

    const Corpus same = join(Corpus(recs), {});
    CHECK(same.records() == Corpus(recs).records());
  }

  TEST_CASE("duplicate queries share equal serps") {
    std::vector<ClarificationRecord> recs{make_record("a", 1), make_record("a", 4)};
    std::unordered_map<std::string, Serp> serps{{"a", make_serp({{"t", "s"}, {"u", "v"}})}};
    const Corpus joined = join(Corpus(recs), serps);
    CHECK(*joined[0].serp == *joined[1].serp);
    REQUIRE(joined.pane_groups().size() == 1);
    CHECK(joined.pane_groups()[0].records.size() == 2);
  }

  TEST_CASE("case-folded join is opt-in") {
    std::vector<ClarificationRecord> recs{make_record("Paris Hotels", 1)};
    std::unordered_map<std::string, Serp> serps{{"paris hotels", make_serp({{"t", "s"}})}};
    CHECK_FALSE(join(Corpus(recs), serps)[0].serp.has_value());
    CHECK(join(Corpus(recs), serps, {.case_fold = true})[0].serp.has_value());
  }

  TEST_CASE("fixture files ingest end to end") {
    const Corpus c = parse_click_log(kFixtures / "click_log.tsv");
    const Corpus joined = join(c, parse_serp_dump(kFixtures / "serp.jsonl").serps);
    CHECK(joined.provenance().join->matched == 4);
    const auto stats = compute_stats(joined);
    CHECK(stats.records == 8);
    CHECK(stats.records_with_serp == 4);
    CHECK(stats.answers_per_query.min == 2);
    CHECK(stats.answers_per_query.max == 5);
    REQUIRE(stats.results_per_query.has_value());
    CHECK(stats.results_per_query->max == 10);
  }

  TEST_CASE("stats of a single record") {
    const Corpus c({make_record("red dress", 0)});
    const auto s = compute_stats(c);
    CHECK(s.query_length.mean == 2);
    CHECK(s.query_length.median == 2);
    CHECK(s.query_length.min == 2);
    CHECK(s.query_length.max == 2);
    CHECK(s.query_length.std == 0);
    CHECK_FALSE(s.title_length.has_value());
  }

  TEST_CASE("title and snippet lengths are per result") {
    auto r = make_record("q", 1);
    r.serp = make_serp({{"one two three", "a"}, {"one", "a b c d e"}});
    const auto s = compute_stats(Corpus({r}));
    REQUIRE(s.title_length.has_value());
    CHECK(s.title_length->mean == doctest::Approx(2.0));
    CHECK(s.title_length->count == 2);
    CHECK(s.snippet_length->mean == doctest::Approx(3.0));
  }

  TEST_CASE("identical records give zero spread") {
    auto r = make_record("same query here", 4, {"x", "y", "z"});
    r.serp = make_serp({{"t t", "s s s"}});
    const auto s = compute_stats(Corpus({r, r, r, r}));
    CHECK(s.query_length.std == 0);
    CHECK(s.question_length.std == 0);
    CHECK(s.answers_per_query.std == 0);
    CHECK(s.title_length->std == 0);
    CHECK(s.snippet_length->std == 0);
    for (const auto& f : {s.query_length, s.question_length, s.answers_per_query}) {
      CHECK(f.min <= f.median);
      CHECK(f.median <= f.max);
    }
  }

  TEST_CASE("empty corpus stats") {
    CHECK(kind_of([] { compute_stats(Corpus{}); }) == ErrorKind::EmptyCorpus);
  }

  TEST_CASE("el-only filter") {
    const Corpus c = engagement_corpus({0, 0, 3, 7, 0});
    const Corpus f = filter_el_only(c);
    CHECK(f.size() == 2);
    CHECK(filter_el_only(f).records() == f.records());
    CHECK(kind_of([] { filter_el_only(engagement_corpus({0, 0})); }) == ErrorKind::EmptyCorpus);
  }

  TEST_CASE("holdout split") {
    std::vector<ClarificationRecord> recs;
    for (int i = 0; i < 100; ++i) recs.push_back(make_record("q" + std::to_string(i), i % 11));
    const Corpus c(recs);
    const Split a = holdout_split(c, 0.2, 7);
    const Split b = holdout_split(c, 0.2, 7);
    CHECK(a.train.size() == 80);
    CHECK(a.test.size() == 20);
    CHECK(a.test_indices == b.test_indices);

    std::vector<std::size_t> all = a.train_indices;
    all.insert(all.end(), a.test_indices.begin(), a.test_indices.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);

    const Split other = holdout_split(c, 0.2, 8);
    CHECK(std::set(other.test_indices.begin(), other.test_indices.end()) !=
          std::set(a.test_indices.begin(), a.test_indices.end()));

    const Split small = holdout_split(engagement_corpus({1, 2, 3, 4, 5}), 0.2, 0);
    CHECK(small.train.size() == 4);
    CHECK(small.test.size() == 1);
    CHECK(kind_of([] { holdout_split(Corpus{}, 0.2, 0); }) == ErrorKind::EmptyCorpus);
  }

  TEST_CASE("split sizes stay within one record of the fraction") {
    for (std::size_t n : {1u, 2u, 3u, 7u, 10u, 33u}) {
      std::vector<ClarificationRecord> recs;
      for (std::size_t i = 0; i < n; ++i) recs.push_back(make_record("q" + std::to_string(i), 1));
      for (double f : {0.1, 0.2, 0.5, 0.9}) {
        const Split s = holdout_split(Corpus(recs), f, 3);
        CHECK(s.train.size() + s.test.size() == n);
        CHECK(std::fabs(static_cast<double>(s.test.size()) - f * static_cast<double>(n)) <= 1.0);
      }
    }
  }

  TEST_CASE("native cache round trip") {
    auto r = make_record("tab\tand \"quotes\" ünïcode", 6, {"a", "b", "c"});
    r.impression = Impression::medium;
    r.answer_click_probs = std::vector<double>{0.125, 0.5, 0.375};
    r.serp = make_serp({{"title one", "snippet one"}, {"", ""}});
    const Corpus c({r, make_record("plain", 0)},
                   Provenance{{{"x.tsv", "abc"}}, {2, 2, 0, 0}, JoinStats{1, 1}, {"note"}});
    const Corpus back = deserialize_corpus(serialize_corpus(c));
    CHECK(back.records() == c.records());
    CHECK(back.provenance() == c.provenance());
    CHECK(back.hash() == c.hash());

    TempDir dir("cache");
    save_corpus(c, dir / "corpus.json");
    CHECK(load_corpus(dir / "corpus.json").records() == c.records());
  }

  TEST_CASE("cache rejects unknown format versions") {
    std::string data = serialize_corpus(Corpus({make_record("q", 1)}));
    const auto pos = data.find("\"format_version\":1");
    REQUIRE(pos != std::string::npos);
    data.replace(pos, 18, "\"format_version\":99");
    CHECK(kind_of([&] { deserialize_corpus(data); }) == ErrorKind::Format);
  }

  TEST_CASE("raw writers round trip through the parsers") {
    auto a = make_record("alpha", 2, {"x", "y"});
    a.serp = make_serp({{"t1", "s1"}, {"t2", "s2"}});
    auto b = make_record("beta", 9, {"p", "q", "r"});
    b.impression = Impression::high;
    b.serp = make_serp({{"u1", "v1"}});
    const Corpus c({a, b});
    TempDir dir("writers");
    write_click_log(c, dir / "log.tsv");
    write_serp_dump(c, dir / "serp.jsonl");
    const Corpus back = join(parse_click_log(dir / "log.tsv"),
                             parse_serp_dump(dir / "serp.jsonl").serps);
    CHECK(back.records() == c.records());
  }

  TEST_CASE("multi-pane index covers every record once") {
    std::vector<ClarificationRecord> recs{make_record("a", 1), make_record("b", 2),
                                          make_record("a", 3), make_record("c", 0),
                                          make_record("b", 5)};
    const Corpus c(recs);
    std::vector<int> seen(recs.size(), 0);
    for (const auto& g : c.pane_groups())
      for (auto i : g.records) {
        CHECK(c[i].query == g.query);
        ++seen[i];
      }
    for (int s : seen) CHECK(s == 1);
    CHECK(c.pane_groups()[0].query == "a");
    CHECK(c.panes_for("b")->size() == 2);
    CHECK(c.panes_for("zzz") == nullptr);
  }
}
