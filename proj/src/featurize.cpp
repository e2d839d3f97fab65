#include "elp/featurize.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "elp/text.hpp"

namespace elp {

std::string_view to_string(InputSetting setting) {
  switch (setting) {
    case InputSetting::query: return "query";
    case InputSetting::query_pane: return "query+pane";
    case InputSetting::query_titles: return "query+titles";
    case InputSetting::query_snippets: return "query+snippets";
    case InputSetting::query_pane_titles: return "query+pane+titles";
    case InputSetting::query_pane_snippets: return "query+pane+snippets";
  }
  return "query";
}

std::optional<InputSetting> parse_setting(std::string_view name) {
  for (auto s : kAllSettings)
    if (to_string(s) == name) return s;
  return std::nullopt;
}

bool includes_pane(InputSetting s) {
  return s == InputSetting::query_pane || s == InputSetting::query_pane_titles ||
         s == InputSetting::query_pane_snippets;
}

std::optional<SerpField> serp_field(InputSetting s) {
  switch (s) {
    case InputSetting::query_titles:
    case InputSetting::query_pane_titles:
      return SerpField::titles;
    case InputSetting::query_snippets:
    case InputSetting::query_pane_snippets:
      return SerpField::snippets;
    default:
      return std::nullopt;
  }
}

std::string Segment::text() const { return text::join(parts, " "); }

std::string ModelInput::joined_text() const {
  std::string out;
  for (const auto& seg : segments) {
    if (!out.empty()) out.push_back(' ');
    out += seg.text();
  }
  return out;
}

ModelInput compose_input(const ClarificationRecord& record, InputSetting setting,
                         int max_results) {
  if (max_results < 0 || max_results > static_cast<int>(kMaxSerpResults))
    throw Error(ErrorKind::InvalidSpec, "max_results must lie in [0,10]");
  ModelInput in;
  in.setting = setting;
  in.max_results = max_results;
  in.segments.push_back({SegmentKind::query, {record.query}});
  if (includes_pane(setting)) {
    in.segments.push_back({SegmentKind::question, {record.question}});
    in.segments.push_back({SegmentKind::answers, record.answers});
  }
  if (auto field = serp_field(setting)) {
    if (!record.serp)
      throw Error(ErrorKind::MissingSerp, "setting " + std::string(to_string(setting)) +
                                              " needs SERP results for query '" + record.query +
                                              "'");
    const auto& results = record.serp->results;
    const std::size_t n = std::min(results.size(), static_cast<std::size_t>(max_results));
    Segment seg{SegmentKind::serp, {}};
    for (std::size_t i = 0; i < n; ++i)
      seg.parts.push_back(*field == SerpField::titles ? results[i].title : results[i].snippet);
    if (!seg.parts.empty()) in.segments.push_back(std::move(seg));
  }
  return in;
}

std::vector<ModelInput> compose_all(const Corpus& corpus, InputSetting setting, int max_results) {
  std::vector<ModelInput> out;
  out.reserve(corpus.size());
  for (const auto& r : corpus.records()) out.push_back(compose_input(r, setting, max_results));
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

void Vocabulary::rebuild_lookup() {
  lookup_.clear();
  for (std::size_t i = 0; i < terms_.size(); ++i) lookup_.emplace(terms_[i], static_cast<int>(i));
}

std::optional<int> Vocabulary::index(std::string_view term) const {
  auto it = lookup_.find(std::string(term));
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

double Vocabulary::idf(int index) const {
  const double n = static_cast<double>(n_docs_);
  return std::log((1.0 + n) / (1.0 + static_cast<double>(df_[static_cast<std::size_t>(index)]))) +
         1.0;
}

std::string Vocabulary::to_text() const {
  std::ostringstream out;
  out << "# elp-vocabulary v1 documents=" << n_docs_ << " lowercase=" << options_.lowercase
      << " min_df=" << options_.min_df
      << " max_features=" << (options_.max_features ? std::to_string(*options_.max_features) : "none")
      << " fitted=" << fitted_hash_ << '\n';
  for (std::size_t i = 0; i < terms_.size(); ++i)
    out << terms_[i] << '\t' << i << '\t' << df_[i] << '\n';
  return out.str();
}

std::string Vocabulary::id() const { return text::content_hash(to_text()); }

Vocabulary Vocabulary::from_text(std::string_view data) {
  std::istringstream in{std::string(data)};
  std::string line;
  if (!std::getline(in, line) || line.rfind("# elp-vocabulary v1", 0) != 0)
    throw Error(ErrorKind::Format, "not an elp vocabulary artifact");
  Vocabulary v;
  std::istringstream header(line.substr(std::string("# elp-vocabulary v1").size()));
  std::string kv;
  while (header >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
    if (key == "documents") v.n_docs_ = std::stoull(val);
    else if (key == "lowercase") v.options_.lowercase = val == "1";
    else if (key == "min_df") v.options_.min_df = std::stoi(val);
    else if (key == "max_features" && val != "none") v.options_.max_features = std::stoull(val);
    else if (key == "fitted") v.fitted_hash_ = val;
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cols = text::split(line, '\t');
    if (cols.size() != 3) throw Error(ErrorKind::Format, "bad vocabulary line: " + line);
    if (std::stoull(cols[1]) != v.terms_.size())
      throw Error(ErrorKind::Format, "vocabulary indices must be dense and ordered");
    v.terms_.push_back(cols[0]);
    v.df_.push_back(std::stoi(cols[2]));
  }
  v.rebuild_lookup();
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << to_text();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) { return from_text(read_file(path)); }

Vocabulary fit_vocabulary(std::span<const ModelInput> docs, const VocabularyOptions& options) {
  if (docs.empty()) throw Error(ErrorKind::EmptyCorpus, "fit_vocabulary on no documents");
  if (options.min_df < 1) throw Error(ErrorKind::InvalidHyperparameter, "min_df must be >= 1");
  std::map<std::string, std::pair<int, long>> stats;  // term -> (df, total count)
  std::uint64_t h = text::fnv1a("");
  for (const auto& doc : docs) {
    const std::string joined = doc.joined_text();
    h = text::fnv1a(joined, h);
    h = text::fnv1a("\x1f", h);
    auto tokens = text::analyze(joined, options.lowercase);
    std::sort(tokens.begin(), tokens.end());
    for (std::size_t i = 0; i < tokens.size();) {
      std::size_t j = i;
      while (j < tokens.size() && tokens[j] == tokens[i]) ++j;
      auto& s = stats[tokens[i]];
      s.first += 1;
      s.second += static_cast<long>(j - i);
      i = j;
    }
  }
  std::vector<std::pair<std::string, std::pair<int, long>>> kept;
  for (auto& [term, s] : stats)
    if (s.first >= options.min_df) kept.emplace_back(term, s);
  if (options.max_features && kept.size() > *options.max_features) {
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
      return a.second.second > b.second.second;  // stable keeps lexicographic order on ties
    });
    kept.resize(*options.max_features);
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  }
  Vocabulary v;
  v.options_ = options;
  v.n_docs_ = docs.size();
  v.fitted_hash_ = text::hex64(h);
  for (auto& [term, s] : kept) {
    v.terms_.push_back(term);
    v.df_.push_back(s.first);
  }
  v.rebuild_lookup();
  return v;
}

Vocabulary fit_vocabulary(const Corpus& corpus, InputSetting setting,
                          const VocabularyOptions& options, int max_results) {
  if (corpus.empty()) throw Error(ErrorKind::EmptyCorpus, "fit_vocabulary on empty corpus");
  const auto docs = compose_all(corpus, setting, max_results);
  return fit_vocabulary(docs, options);
}

double BowVector::norm() const {
  double ss = 0.0;
  for (const auto& [i, w] : weights) ss += w * w;
  return std::sqrt(ss);
}

BowVector transform_bow(const ModelInput& input, const Vocabulary& vocab) {
  std::map<int, double> tf;
  for (const auto& tok : text::analyze(input.joined_text(), vocab.options().lowercase))
    if (auto idx = vocab.index(tok)) tf[*idx] += 1.0;
  BowVector out;
  out.vocabulary_id = vocab.id();
  double ss = 0.0;
  for (const auto& [idx, count] : tf) {
    const double w = count * vocab.idf(idx);
    out.weights.emplace_back(idx, w);
    ss += w * w;
  }
  if (ss > 0.0) {
    const double inv = 1.0 / std::sqrt(ss);
    for (auto& [idx, w] : out.weights) w *= inv;
  }
  return out;
}

SparseRows bow_matrix(std::span<const ModelInput> inputs, const Vocabulary& vocab) {
  std::vector<Eigen::Triplet<double>> triplets;
  for (std::size_t r = 0; r < inputs.size(); ++r)
    for (const auto& [idx, w] : transform_bow(inputs[r], vocab).weights)
      triplets.emplace_back(static_cast<int>(r), idx, w);
  SparseRows m(static_cast<Eigen::Index>(inputs.size()), static_cast<Eigen::Index>(vocab.size()));
  m.setFromTriplets(triplets.begin(), triplets.end());
  m.makeCompressed();
  return m;
}

// ---------------------------------------------------------------------------
// Tokenizers

WordTokenizer::WordTokenizer(std::vector<std::string> words) {
  words_ = {std::string(kPadToken), std::string(kUnkToken), std::string(kClsToken),
            std::string(kSepToken)};
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  for (auto& w : words)
    if (w != kPadToken && w != kUnkToken && w != kClsToken && w != kSepToken)
      words_.push_back(std::move(w));
  for (std::size_t i = 0; i < words_.size(); ++i) lookup_.emplace(words_[i], static_cast<int>(i));
}

WordTokenizer WordTokenizer::fit(std::span<const ModelInput> inputs, int min_count) {
  std::map<std::string, int> counts;
  for (const auto& in : inputs)
    for (auto& tok : text::analyze(in.joined_text())) ++counts[tok];
  std::vector<std::string> words;
  for (auto& [w, c] : counts)
    if (c >= min_count) words.push_back(w);
  return WordTokenizer(std::move(words));
}

std::vector<int> WordTokenizer::encode(std::string_view s) const {
  std::vector<int> ids;
  for (const auto& tok : text::analyze(s)) {
    auto it = lookup_.find(tok);
    ids.push_back(it == lookup_.end() ? unk_id() : it->second);
  }
  return ids;
}

WordPieceTokenizer::WordPieceTokenizer(std::vector<std::string> vocab, bool lowercase)
    : vocab_(std::move(vocab)), lowercase_(lowercase) {
  for (std::size_t i = 0; i < vocab_.size(); ++i) lookup_.emplace(vocab_[i], static_cast<int>(i));
  auto require = [this](std::string_view tok) {
    auto it = lookup_.find(std::string(tok));
    if (it == lookup_.end())
      throw Error(ErrorKind::EncoderUnavailable,
                  "wordpiece vocabulary lacks " + std::string(tok));
    return it->second;
  };
  cls_ = require(kClsToken);
  sep_ = require(kSepToken);
  unk_ = require(kUnkToken);
}

WordPieceTokenizer WordPieceTokenizer::from_file(const std::filesystem::path& vocab_txt,
                                                 bool lowercase) {
  std::ifstream in(vocab_txt);
  if (!in) throw Error(ErrorKind::EncoderUnavailable, "cannot read " + vocab_txt.string());
  std::vector<std::string> vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    vocab.push_back(line);
  }
  return WordPieceTokenizer(std::move(vocab), lowercase);
}

std::vector<int> WordPieceTokenizer::encode(std::string_view s) const {
  // Basic pre-tokenization: whitespace split, punctuation as single tokens.
  std::vector<std::string> words;
  for (auto w : text::split_whitespace(s)) {
    std::string cur;
    for (char ch : w) {
      const auto c = static_cast<unsigned char>(ch);
      if (c < 0x80 && std::ispunct(c)) {
        if (!cur.empty()) words.push_back(std::move(cur));
        cur.clear();
        words.emplace_back(1, ch);
      } else {
        cur.push_back(lowercase_ && c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
      }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
  }
  std::vector<int> ids;
  for (const auto& w : words) {
    if (w.size() > 100) {
      ids.push_back(unk_);
      continue;
    }
    std::vector<int> pieces;
    std::size_t start = 0;
    bool bad = false;
    while (start < w.size()) {
      std::size_t end = w.size();
      int found = -1;
      while (start < end) {
        std::string sub = w.substr(start, end - start);
        if (start > 0) sub = "##" + sub;
        auto it = lookup_.find(sub);
        if (it != lookup_.end()) {
          found = it->second;
          break;
        }
        --end;
      }
      if (found < 0) {
        bad = true;
        break;
      }
      pieces.push_back(found);
      start = end;
    }
    if (bad) ids.push_back(unk_);
    else ids.insert(ids.end(), pieces.begin(), pieces.end());
  }
  return ids;
}

TokenSequence tokenize_for_encoder(const ModelInput& input, const EncoderTokenizer& tokenizer,
                                   std::size_t budget) {
  if (budget < 2)
    throw Error(ErrorKind::BudgetTooSmall,
                "budget " + std::to_string(budget) + " cannot hold [CLS] and one query token");
  std::vector<std::vector<int>> content;
  for (const auto& seg : input.segments) {
    std::vector<int> ids;
    if (seg.kind == SegmentKind::answers) {
      for (std::size_t i = 0; i < seg.parts.size(); ++i) {
        if (i > 0) ids.push_back(tokenizer.sep_id());
        auto part = tokenizer.encode(seg.parts[i]);
        ids.insert(ids.end(), part.begin(), part.end());
      }
    } else {
      ids = tokenizer.encode(seg.text());
    }
    content.push_back(std::move(ids));
  }

  std::size_t length = 1;
  for (const auto& c : content) length += c.size() + 1;
  std::vector<bool> present(content.size(), true);
  bool query_sep = true;
  std::size_t truncated = 0;
  while (length > budget) {
    std::size_t s = content.size();
    while (s > 1 && !present[s - 1]) --s;
    if (s > 1) {
      auto& c = content[s - 1];
      if (!c.empty()) {
        c.pop_back();
        ++truncated;
        --length;
      } else {
        present[s - 1] = false;
        --length;
      }
    } else if (!content.empty() && content[0].size() > 1) {
      content[0].pop_back();
      ++truncated;
      --length;
    } else {
      query_sep = false;
      --length;
    }
  }

  TokenSequence out;
  out.truncated_tokens = truncated;
  out.ids.push_back(tokenizer.cls_id());
  out.segment_of.push_back(-1);
  for (std::size_t s = 0; s < content.size(); ++s) {
    if (!present[s]) continue;
    for (int id : content[s]) {
      out.ids.push_back(id);
      out.segment_of.push_back(static_cast<int>(s));
    }
    if (s > 0 || query_sep) {
      out.ids.push_back(tokenizer.sep_id());
      out.segment_of.push_back(static_cast<int>(s));
    }
  }
  return out;
}

}  // namespace elp
