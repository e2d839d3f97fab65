#include "elp/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "elp/text.hpp"
#include "json.hpp"

namespace elp {

using nlohmann::json;

std::string_view to_string(Impression level) {
  switch (level) {
    case Impression::low: return "low";
    case Impression::medium: return "medium";
    case Impression::high: return "high";
  }
  return "low";
}

std::optional<Impression> parse_impression(std::string_view token) {
  const std::string t = text::to_lower(token);
  if (t == "low") return Impression::low;
  if (t == "medium") return Impression::medium;
  if (t == "high") return Impression::high;
  return std::nullopt;
}

void validate(const ClarificationRecord& r) {
  if (r.answers.size() < kMinAnswers || r.answers.size() > kMaxAnswers)
    throw Error(ErrorKind::InvalidLabel,
                "answer count " + std::to_string(r.answers.size()) + " outside [2,5]");
  if (r.engagement < 0 || r.engagement > kMaxEngagement)
    throw Error(ErrorKind::InvalidLabel,
                "engagement " + std::to_string(r.engagement) + " outside [0,10]");
  if (r.answer_click_probs) {
    if (r.answer_click_probs->size() != r.answers.size())
      throw Error(ErrorKind::InvalidLabel, "click probability count differs from answer count");
    for (double p : *r.answer_click_probs)
      if (!(p >= 0.0 && p <= 1.0))
        throw Error(ErrorKind::InvalidLabel, "click probability outside [0,1]");
  }
  if (r.serp) {
    if (r.serp->results.size() > kMaxSerpResults)
      throw Error(ErrorKind::InvalidLabel, "more than 10 SERP results");
    for (const auto& res : r.serp->results)
      if (res.url.empty()) throw Error(ErrorKind::InvalidLabel, "SERP result without url");
  }
}

// ---------------------------------------------------------------------------
// Corpus

Corpus::Corpus(std::vector<ClarificationRecord> records, Provenance provenance)
    : records_(std::move(records)), provenance_(std::move(provenance)) {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    auto [it, inserted] = group_of_query_.try_emplace(records_[i].query, pane_groups_.size());
    if (inserted) pane_groups_.push_back({records_[i].query, {}});
    pane_groups_[it->second].records.push_back(i);
  }
}

const std::vector<std::size_t>* Corpus::panes_for(const std::string& query) const {
  auto it = group_of_query_.find(query);
  return it == group_of_query_.end() ? nullptr : &pane_groups_[it->second].records;
}

Corpus Corpus::subset(std::span<const std::size_t> indices) const {
  std::vector<ClarificationRecord> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(records_.at(i));
  return Corpus(std::move(out), provenance_);
}

// ---------------------------------------------------------------------------
// Click log

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

std::string_view strip_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == '\t') {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

std::optional<int> parse_engagement(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  if (!std::isfinite(v) || v != std::floor(v)) return std::nullopt;
  return static_cast<int>(v);
}

std::optional<double> parse_real(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::size_t column_of(const std::vector<std::string_view>& header, const std::string& name,
                      const std::filesystem::path& path) {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw Error(ErrorKind::Format, path.string() + ": missing column '" + name + "'");
}

}  // namespace

Corpus parse_click_log(const std::filesystem::path& path, const ClickLogFormat& format) {
  const std::string data = read_file(path);
  std::string_view rest(data);
  auto next_line = [&rest]() -> std::optional<std::string_view> {
    if (rest.empty()) return std::nullopt;
    const auto nl = rest.find('\n');
    std::string_view line = rest.substr(0, nl);
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    return strip_cr(line);
  };

  auto header_line = next_line();
  if (!header_line) throw Error(ErrorKind::EmptyCorpus, path.string() + ": no header row");
  const auto header = split_tabs(*header_line);

  const std::size_t c_query = column_of(header, format.query, path);
  const std::size_t c_question = column_of(header, format.question, path);
  const std::size_t c_impression = column_of(header, format.impression, path);
  const std::size_t c_engagement = column_of(header, format.engagement, path);
  if (format.answers.empty()) throw Error(ErrorKind::Format, "no answer columns configured");
  std::vector<std::size_t> c_answers;
  for (const auto& name : format.answers) c_answers.push_back(column_of(header, name, path));
  // Click-probability columns are optional as a group.
  std::vector<std::size_t> c_probs;
  bool have_probs = !format.click_probs.empty();
  for (const auto& name : format.click_probs) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      have_probs = false;
      break;
    }
    c_probs.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  if (have_probs && c_probs.size() != c_answers.size())
    throw Error(ErrorKind::Format, "click-probability columns must pair with answer columns");
  if (!have_probs) c_probs.clear();

  std::vector<ClarificationRecord> records;
  ParseCounts counts;
  while (auto line = next_line()) {
    if (line->empty()) continue;
    ++counts.rows_read;
    const auto cells = split_tabs(*line);
    if (cells.size() != header.size()) {
      ++counts.malformed;
      continue;
    }
    ClarificationRecord r;
    r.query = std::string(cells[c_query]);
    r.question = std::string(cells[c_question]);
    const auto impression = parse_impression(cells[c_impression]);
    const auto engagement = parse_engagement(cells[c_engagement]);
    if (!impression || !engagement) {
      ++counts.invalid;
      continue;
    }
    r.impression = *impression;
    r.engagement = *engagement;

    std::vector<double> probs;
    bool probs_complete = !c_probs.empty();
    bool probs_bad = false;
    for (std::size_t a = 0; a < c_answers.size(); ++a) {
      const auto cell = cells[c_answers[a]];
      if (cell.empty()) continue;
      r.answers.emplace_back(cell);
      if (!c_probs.empty()) {
        const auto pcell = cells[c_probs[a]];
        if (pcell.empty()) {
          probs_complete = false;
        } else if (auto p = parse_real(pcell)) {
          probs.push_back(*p);
        } else {
          probs_bad = true;
        }
      }
    }
    if (probs_bad) {
      ++counts.invalid;
      continue;
    }
    if (probs_complete) r.answer_click_probs = std::move(probs);
    try {
      validate(r);
    } catch (const Error&) {
      ++counts.invalid;
      continue;
    }
    records.push_back(std::move(r));
  }
  counts.accepted = records.size();
  if (records.empty())
    throw Error(ErrorKind::EmptyCorpus, path.string() + ": no valid rows (" +
                                            std::to_string(counts.malformed) + " malformed, " +
                                            std::to_string(counts.invalid) + " invalid)");
  Provenance prov;
  prov.sources.push_back({path.string(), text::content_hash(data)});
  prov.click_log = counts;
  return Corpus(std::move(records), std::move(prov));
}

// ---------------------------------------------------------------------------
// SERP dump

SerpDump parse_serp_dump(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  SerpDump dump;
  dump.source = {path.string(), text::content_hash(data)};
  std::istringstream in(data);
  std::string line;
  while (std::getline(in, line)) {
    const auto view = strip_cr(line);
    if (view.find_first_not_of(" \t") == std::string_view::npos) continue;
    ++dump.lines_read;
    json entry = json::parse(view.begin(), view.end(), nullptr, false);
    if (entry.is_discarded() || !entry.is_object() || !entry.contains("query") ||
        !entry["query"].is_string() || !entry.contains("results") ||
        !entry["results"].is_array()) {
      ++dump.malformed;
      continue;
    }
    Serp serp;
    for (const auto& item : entry["results"]) {
      if (serp.results.size() == kMaxSerpResults) {
        ++dump.truncated;
        break;
      }
      auto field = [&item](const char* key) -> std::string {
        auto it = item.find(key);
        return it != item.end() && it->is_string() ? it->get<std::string>() : std::string{};
      };
      if (!item.is_object() || field("url").empty()) {
        ++dump.results_dropped;
        continue;
      }
      serp.results.push_back({field("title"), field("url"), field("snippet")});
    }
    auto [it, inserted] = dump.serps.try_emplace(entry["query"].get<std::string>(), std::move(serp));
    if (!inserted) ++dump.duplicates;
  }
  return dump;
}

Corpus join(const Corpus& corpus, const std::unordered_map<std::string, Serp>& serps,
            const JoinOptions& options) {
  const std::unordered_map<std::string, Serp>* lookup = &serps;
  std::unordered_map<std::string, Serp> folded;
  if (options.case_fold) {
    // First-seen key wins among case variants; iterate keys in sorted order
    // so the winner does not depend on hash-map layout.
    std::vector<const std::string*> keys;
    for (const auto& kv : serps) keys.push_back(&kv.first);
    std::sort(keys.begin(), keys.end(), [](auto* a, auto* b) { return *a < *b; });
    for (auto* k : keys) folded.try_emplace(text::to_lower(*k), serps.at(*k));
    lookup = &folded;
  }
  std::vector<ClarificationRecord> records = corpus.records();
  JoinStats stats;
  for (auto& r : records) {
    auto it = lookup->find(options.case_fold ? text::to_lower(r.query) : r.query);
    if (it != lookup->end()) {
      r.serp = it->second;
      ++stats.matched;
    } else {
      ++stats.unmatched;
    }
  }
  Provenance prov = corpus.provenance();
  prov.join = stats;
  return Corpus(std::move(records), std::move(prov));
}

// ---------------------------------------------------------------------------
// Statistics

FieldStats field_stats(std::vector<double> values) {
  FieldStats s;
  s.count = values.size();
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  s.min = values.front();
  s.max = values.back();
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / n);
  const std::size_t mid = values.size() / 2;
  s.median = values.size() % 2 == 1 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
  return s;
}

CorpusStats compute_stats(const Corpus& corpus) {
  if (corpus.empty()) throw Error(ErrorKind::EmptyCorpus, "compute_stats on empty corpus");
  std::vector<double> query, question, title, snippet, answers, results;
  for (const auto& r : corpus.records()) {
    query.push_back(static_cast<double>(text::count_whitespace_tokens(r.query)));
    question.push_back(static_cast<double>(text::count_whitespace_tokens(r.question)));
    answers.push_back(static_cast<double>(r.answers.size()));
    if (r.serp) {
      results.push_back(static_cast<double>(r.serp->results.size()));
      for (const auto& res : r.serp->results) {
        title.push_back(static_cast<double>(text::count_whitespace_tokens(res.title)));
        snippet.push_back(static_cast<double>(text::count_whitespace_tokens(res.snippet)));
      }
    }
  }
  CorpusStats s;
  s.records = corpus.size();
  s.records_with_serp = results.size();
  s.query_length = field_stats(std::move(query));
  s.question_length = field_stats(std::move(question));
  s.answers_per_query = field_stats(std::move(answers));
  if (!results.empty()) s.results_per_query = field_stats(std::move(results));
  if (!title.empty()) {
    s.title_length = field_stats(std::move(title));
    s.snippet_length = field_stats(std::move(snippet));
  }
  return s;
}

Corpus filter_el_only(const Corpus& corpus) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (corpus[i].engagement > 0) keep.push_back(i);
  if (keep.empty()) throw Error(ErrorKind::EmptyCorpus, "no records with engagement > 0");
  return corpus.subset(keep);
}

Split holdout_split(const Corpus& corpus, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw Error(ErrorKind::InvalidSpec, "test_fraction must lie in (0,1)");
  if (corpus.empty()) throw Error(ErrorKind::EmptyCorpus, "holdout_split on empty corpus");
  const std::size_t n = corpus.size();
  auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
  if (n >= 2) n_test = std::clamp<std::size_t>(n_test, 1, n - 1);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  Split split;
  split.test_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  split.train_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(split.test_indices.begin(), split.test_indices.end());
  std::sort(split.train_indices.begin(), split.train_indices.end());
  split.train = corpus.subset(split.train_indices);
  split.test = corpus.subset(split.test_indices);
  return split;
}

// ---------------------------------------------------------------------------
// Native cache

namespace {

json record_to_json(const ClarificationRecord& r) {
  json j;
  j["query"] = r.query;
  j["question"] = r.question;
  j["answers"] = r.answers;
  j["impression"] = std::string(to_string(r.impression));
  j["engagement"] = r.engagement;
  if (r.answer_click_probs) j["answer_click_probs"] = *r.answer_click_probs;
  if (r.serp) {
    json results = json::array();
    for (const auto& res : r.serp->results)
      results.push_back({{"title", res.title}, {"url", res.url}, {"snippet", res.snippet}});
    j["serp"] = results;
  }
  return j;
}

ClarificationRecord record_from_json(const json& j) {
  ClarificationRecord r;
  r.query = j.at("query").get<std::string>();
  r.question = j.at("question").get<std::string>();
  r.answers = j.at("answers").get<std::vector<std::string>>();
  const auto impression = parse_impression(j.at("impression").get<std::string>());
  if (!impression) throw Error(ErrorKind::Format, "bad impression in corpus cache");
  r.impression = *impression;
  r.engagement = j.at("engagement").get<int>();
  if (j.contains("answer_click_probs"))
    r.answer_click_probs = j["answer_click_probs"].get<std::vector<double>>();
  if (j.contains("serp")) {
    Serp serp;
    for (const auto& res : j["serp"])
      serp.results.push_back({res.at("title").get<std::string>(), res.at("url").get<std::string>(),
                              res.at("snippet").get<std::string>()});
    r.serp = std::move(serp);
  }
  validate(r);
  return r;
}

json provenance_to_json(const Provenance& p) {
  json j;
  j["sources"] = json::array();
  for (const auto& s : p.sources) j["sources"].push_back({{"path", s.path}, {"hash", s.hash}});
  j["click_log"] = {{"rows_read", p.click_log.rows_read},
                    {"accepted", p.click_log.accepted},
                    {"malformed", p.click_log.malformed},
                    {"invalid", p.click_log.invalid}};
  if (p.join) j["join"] = {{"matched", p.join->matched}, {"unmatched", p.join->unmatched}};
  j["notes"] = p.notes;
  return j;
}

Provenance provenance_from_json(const json& j) {
  Provenance p;
  for (const auto& s : j.at("sources"))
    p.sources.push_back({s.at("path").get<std::string>(), s.at("hash").get<std::string>()});
  const auto& c = j.at("click_log");
  p.click_log = {c.at("rows_read").get<std::size_t>(), c.at("accepted").get<std::size_t>(),
                 c.at("malformed").get<std::size_t>(), c.at("invalid").get<std::size_t>()};
  if (j.contains("join"))
    p.join = JoinStats{j["join"].at("matched").get<std::size_t>(),
                       j["join"].at("unmatched").get<std::size_t>()};
  if (j.contains("notes")) p.notes = j["notes"].get<std::vector<std::string>>();
  return p;
}

json records_to_json(const std::vector<ClarificationRecord>& records) {
  json arr = json::array();
  for (const auto& r : records) arr.push_back(record_to_json(r));
  return arr;
}

}  // namespace

std::string Corpus::hash() const { return text::content_hash(records_to_json(records_).dump()); }

std::string serialize_corpus(const Corpus& corpus) {
  json j;
  j["format"] = "elp-corpus";
  j["format_version"] = kCorpusFormatVersion;
  j["provenance"] = provenance_to_json(corpus.provenance());
  j["records"] = records_to_json(corpus.records());
  return j.dump();
}

Corpus deserialize_corpus(std::string_view data) {
  json j = json::parse(data, nullptr, false);
  if (j.is_discarded() || !j.is_object() || j.value("format", "") != "elp-corpus")
    throw Error(ErrorKind::Format, "not an elp corpus cache");
  if (j.value("format_version", -1) != kCorpusFormatVersion)
    throw Error(ErrorKind::Format, "unsupported corpus format_version " +
                                       std::to_string(j.value("format_version", -1)));
  try {
    std::vector<ClarificationRecord> records;
    for (const auto& r : j.at("records")) records.push_back(record_from_json(r));
    return Corpus(std::move(records), provenance_from_json(j.at("provenance")));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("corrupt corpus cache: ") + e.what());
  }
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << serialize_corpus(corpus);
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

Corpus load_corpus(const std::filesystem::path& path) { return deserialize_corpus(read_file(path)); }

namespace {

std::string clean_cell(std::string_view s) {
  std::string out(s);
  for (auto& c : out)
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  return out;
}

std::string format_prob(double p) {
  std::ostringstream out;
  out.precision(17);
  out << p;
  return out.str();
}

}  // namespace

void write_click_log(const Corpus& corpus, const std::filesystem::path& path,
                     const ClickLogFormat& format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  const bool probs = !corpus.empty() && !format.click_probs.empty() &&
                     std::all_of(corpus.records().begin(), corpus.records().end(),
                                 [](const ClarificationRecord& r) { return r.answer_click_probs.has_value(); });
  std::vector<std::string> header = {format.query, format.question};
  header.insert(header.end(), format.answers.begin(), format.answers.end());
  header.push_back(format.impression);
  header.push_back(format.engagement);
  if (probs) header.insert(header.end(), format.click_probs.begin(), format.click_probs.end());
  out << text::join(header, "\t") << '\n';
  for (const auto& r : corpus.records()) {
    if (r.answers.size() > format.answers.size())
      throw Error(ErrorKind::Format, "record has more answers than answer columns");
    std::vector<std::string> cells = {clean_cell(r.query), clean_cell(r.question)};
    for (std::size_t a = 0; a < format.answers.size(); ++a)
      cells.push_back(a < r.answers.size() ? clean_cell(r.answers[a]) : "");
    cells.emplace_back(to_string(r.impression));
    cells.push_back(std::to_string(r.engagement));
    if (probs)
      for (std::size_t a = 0; a < format.click_probs.size(); ++a)
        cells.push_back(a < r.answer_click_probs->size() ? format_prob((*r.answer_click_probs)[a]) : "");
    out << text::join(cells, "\t") << '\n';
  }
}

void write_serp_dump(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  std::unordered_map<std::string, bool> written;
  for (const auto& r : corpus.records()) {
    if (!r.serp || written.count(r.query)) continue;
    written[r.query] = true;
    json results = json::array();
    for (const auto& res : r.serp->results)
      results.push_back({{"title", res.title}, {"url", res.url}, {"snippet", res.snippet}});
    out << json{{"query", r.query}, {"results", std::move(results)}}.dump() << '\n';
  }
}

}  // namespace elp
