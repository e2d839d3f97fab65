#include "elp/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "elp/error.hpp"
#include "elp/text.hpp"

namespace elp {

std::string_view to_string(DatasetSelector d) { return d == DatasetSelector::full ? "full" : "el-only"; }

std::optional<DatasetSelector> parse_dataset(std::string_view s) {
  if (s == "full") return DatasetSelector::full;
  if (s == "el-only") return DatasetSelector::el_only;
  return std::nullopt;
}

Corpus select_dataset(const Corpus& corpus, DatasetSelector selector) {
  return selector == DatasetSelector::full ? corpus : filter_el_only(corpus);
}

// ---------------------------------------------------------------------------
// Specs

namespace {

[[noreturn]] void invalid_spec(const std::string& what) { throw Error(ErrorKind::InvalidSpec, what); }
[[noreturn]] void invalid_config(const std::string& what) { throw Error(ErrorKind::InvalidConfig, what); }

InputSetting setting_from(const Json& j) {
  const auto name = j.get<std::string>();
  auto s = parse_setting(name);
  if (!s) invalid_config("unknown setting '" + name + "'");
  return *s;
}

}  // namespace

Json ModelSpec::to_json() const {
  Json j = {{"name", name}, {"hyperparameters", hyperparameters}};
  if (grid) j["grid"] = grid->to_json();
  return j;
}

ModelSpec ModelSpec::from_json(const Json& j) {
  ModelSpec m;
  if (j.is_string()) {
    m.name = j.get<std::string>();
    return m;
  }
  if (!j.is_object()) invalid_config("model entry must be a name or an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "name") m.name = value.get<std::string>();
    else if (key == "hyperparameters") m.hyperparameters = value;
    else if (key == "grid") {
      if (value.is_string() && value.get<std::string>() == "default") m.grid = ParamGrid{};
      else m.grid = ParamGrid::from_json(value);
    } else invalid_config("unknown model key '" + key + "'");
  }
  if (m.name.empty()) invalid_config("model entry needs a name");
  if (m.grid && m.grid->axes().empty()) m.grid = default_grid(m.name);
  return m;
}

void ExperimentSpec::validate() const {
  if (roster.empty()) invalid_spec("roster is empty");
  for (const auto& m : roster)
    if (!is_static_baseline(m.name) && !is_classical(m.name) && !is_neural(m.name))
      invalid_spec("unknown model '" + m.name + "' in roster");
  if (settings.empty()) invalid_spec("settings list is empty");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) invalid_spec("test_fraction must lie in (0, 1)");
  if (train_seeds.empty()) invalid_spec("train_seeds is empty");
  for (const auto& m : metrics)
    if (m != "mae" && m != "mse" && m != "r2") invalid_spec("unknown metric '" + m + "'");
  if (max_results < 0 || max_results > static_cast<int>(kMaxSerpResults))
    invalid_spec("max_results must lie in [0, 10]");
  if (cv_folds < 2) invalid_spec("cv_folds must be >= 2");
}

Json ExperimentSpec::to_json() const {
  Json roster_j = Json::array();
  for (const auto& m : roster) roster_j.push_back(m.to_json());
  Json settings_j = Json::array();
  for (auto s : settings) settings_j.push_back(std::string(to_string(s)));
  return {{"dataset", std::string(to_string(dataset))},
          {"models", std::move(roster_j)},
          {"settings", std::move(settings_j)},
          {"test_fraction", test_fraction},
          {"split_seed", split_seed},
          {"train_seeds", train_seeds},
          {"metrics", metrics},
          {"significance_loss", significance_loss == LossKind::squared ? "squared" : "absolute"},
          {"max_results", max_results},
          {"cv_folds", cv_folds},
          {"scoring", std::string(to_string(scoring))}};
}

ExperimentSpec ExperimentSpec::from_json(const Json& j) {
  if (!j.is_object()) invalid_config("experiment spec must be an object");
  ExperimentSpec s;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "dataset") {
        auto d = parse_dataset(value.get<std::string>());
        if (!d) invalid_config("dataset must be 'full' or 'el-only'");
        s.dataset = *d;
      } else if (key == "models") {
        s.roster.clear();
        for (const auto& m : value) s.roster.push_back(ModelSpec::from_json(m));
      } else if (key == "settings") {
        s.settings.clear();
        if (value.is_string() && value.get<std::string>() == "all") {
          s.settings.assign(kAllSettings.begin(), kAllSettings.end());
        } else {
          for (const auto& v : value) s.settings.push_back(setting_from(v));
        }
      } else if (key == "test_fraction") {
        s.test_fraction = value.get<double>();
      } else if (key == "split_seed") {
        s.split_seed = value.get<std::uint64_t>();
      } else if (key == "train_seeds") {
        s.train_seeds = value.get<std::vector<std::uint64_t>>();
      } else if (key == "metrics") {
        s.metrics = value.get<std::vector<std::string>>();
      } else if (key == "significance_loss") {
        const auto v = value.get<std::string>();
        if (v == "squared") s.significance_loss = LossKind::squared;
        else if (v == "absolute") s.significance_loss = LossKind::absolute;
        else invalid_config("significance_loss must be 'squared' or 'absolute'");
      } else if (key == "max_results") {
        s.max_results = value.get<int>();
      } else if (key == "cv_folds") {
        s.cv_folds = value.get<int>();
      } else if (key == "scoring") {
        s.scoring = parse_scoring(value.get<std::string>());
      } else {
        invalid_config("unknown experiment key '" + key + "'");
      }
    }
  } catch (const Json::exception& e) {
    invalid_config(std::string("bad experiment value: ") + e.what());
  }
  return s;
}

std::string ExperimentSpec::hash() const { return text::content_hash(to_json().dump()); }

// ---------------------------------------------------------------------------
// Reports

std::string format_number(double v, int precision) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  std::string s = buf;
  if (s.front() == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);  // no "-0.000"
  return s;
}

namespace {

std::string format_p(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", p);
  return buf;
}

}  // namespace

std::string write_tsv(const TsvTable& table, const ReportMetadata& meta) {
  std::ostringstream out;
  out << "# report: " << meta.report << '\n';
  out << "# spec_hash: " << meta.spec_hash << '\n';
  out << "# corpus_hash: " << meta.corpus_hash << '\n';
  out << "# seeds:";
  for (auto s : meta.seeds) out << ' ' << s;
  out << '\n';
  for (const auto& [k, v] : meta.extra) out << "# " << k << ": " << v << '\n';
  for (std::size_t i = 0; i < table.header.size(); ++i) out << (i ? "\t" : "") << table.header[i];
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "\t" : "") << row[i];
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Evaluation

Eigen::VectorXd engagement_labels(const Corpus& corpus) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(corpus.size()));
  for (std::size_t i = 0; i < corpus.size(); ++i) y(static_cast<Eigen::Index>(i)) = corpus[i].engagement;
  return y;
}

namespace {

std::unique_ptr<Predictor> fit_model(const ModelSpec& model, std::span<const ModelInput> inputs,
                                     const Eigen::VectorXd& labels, std::uint64_t seed,
                                     const ExperimentSpec& spec, Json* params) {
  if (model.grid && !model.grid->empty()) {
    const Json base = model.hyperparameters.is_null() ? Json::object() : model.hyperparameters;
    PredictorFactory factory = [&](const Json& candidate) {
      Json hp = base;
      hp.update(candidate);
      return make_predictor(model.name, hp);
    };
    auto result = grid_search_cv(factory, *model.grid, inputs, labels, spec.cv_folds, spec.scoring, seed);
    if (params) *params = result.best_model->hyperparameters();
    return std::move(result.best_model);
  }
  auto p = make_predictor(model.name, model.hyperparameters);
  p->fit(inputs, labels, seed);
  if (params) *params = p->hyperparameters();
  return p;
}

struct SeedAverage {
  double mae = 0, mse = 0, r2 = 0;
  bool r2_defined = true;
  Eigen::VectorXd losses;
  std::size_t count = 0;

  void add(const Eigen::VectorXd& y, const Eigen::VectorXd& pred, LossKind kind) {
    const auto s = regression_scores(y, pred);
    mae += s.mae;
    mse += s.mse;
    r2 += s.r2;
    r2_defined = r2_defined && s.r2_defined;
    const Eigen::VectorXd l = per_sample_loss(y, pred, kind);
    losses = count == 0 ? l : (losses + l).eval();
    ++count;
  }

  RegressionScores<double> scores(std::size_t n) const {
    RegressionScores<double> s;
    const double c = static_cast<double>(count);
    s.mae = mae / c;
    s.mse = mse / c;
    s.r2 = r2 / c;
    s.r2_defined = r2_defined;
    if (!r2_defined) s.r2_note = "labels have zero variance";
    s.n = n;
    return s;
  }
};

}  // namespace

CellResult evaluate_cell(const ModelSpec& model, const Corpus& train, const Corpus& test,
                         InputSetting setting, int max_results, const ExperimentSpec& spec) {
  const auto train_in = compose_all(train, setting, max_results);
  const auto test_in = compose_all(test, setting, max_results);
  const Eigen::VectorXd y_train = engagement_labels(train);
  const Eigen::VectorXd y_test = engagement_labels(test);

  CellResult r;
  r.model = model.name;
  r.setting = setting;
  SeedAverage avg;
  for (std::size_t i = 0; i < spec.train_seeds.size(); ++i) {
    Json params;
    auto p = fit_model(model, train_in, y_train, spec.train_seeds[i], spec, &params);
    const Eigen::VectorXd pred = p->predict(test_in);
    if (i == 0) {
      r.predictions = pred;
      r.params = params;
    }
    avg.add(y_test, pred, spec.significance_loss);
  }
  r.scores = avg.scores(test.size());
  r.losses = avg.losses / static_cast<double>(avg.count);
  return r;
}

PreparedSplit prepare_split(const Corpus& corpus, const ExperimentSpec& spec, bool need_serp) {
  Corpus data = select_dataset(corpus, spec.dataset);
  PreparedSplit out;
  if (need_serp) {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < data.size(); ++i)
      if (data[i].serp) keep.push_back(i);
    out.excluded_missing_serp = data.size() - keep.size();
    if (keep.empty()) throw Error(ErrorKind::EmptyCorpus, "no records with SERP results");
    if (keep.size() != data.size()) data = data.subset(keep);
  }
  if (data.size() < 2) throw Error(ErrorKind::EmptyCorpus, "need at least two records to split");
  out.split = holdout_split(data, spec.test_fraction, spec.split_seed);
  return out;
}

namespace {

// Significantly lower mean loss than the reference at level alpha.
bool improves(const CellResult& row, const CellResult& ref, double alpha, double* p_out) {
  const auto t = significance(as_span(row.losses), as_span(ref.losses));
  if (p_out) *p_out = t.p_value;
  return t.p_value < alpha && t.mean_a < t.mean_b;
}

std::string metric_value(const RegressionScores<double>& s, const std::string& metric) {
  if (metric == "mae") return format_number(s.mae);
  if (metric == "mse") return format_number(s.mse);
  return s.r2_defined ? format_number(s.r2) : "nan";
}

}  // namespace

ComparisonTable run_main_comparison(const Corpus& corpus, const ExperimentSpec& spec) {
  spec.validate();
  const InputSetting setting = spec.settings.front();
  const auto prepared = prepare_split(corpus, spec, needs_serp(setting));
  const auto& split = prepared.split;

  ComparisonTable table;
  table.kind = "main";
  table.dataset = spec.dataset;
  table.n_train = split.train.size();
  table.n_test = split.test.size();
  table.excluded_missing_serp = prepared.excluded_missing_serp;
  table.corpus_hash = corpus.hash();

  std::vector<CellResult> cells;
  for (const auto& m : spec.roster)
    cells.push_back(evaluate_cell(m, split.train, split.test, setting, spec.max_results, spec));

  for (std::size_t i = 0; i < cells.size(); ++i) {
    ComparisonRow row{cells[i], "", {}};
    bool over_static = false, all_static = true;
    bool over_classical = false, all_classical = true;
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (i == j) continue;
      const auto& ref = cells[j];
      const bool ref_static = is_static_baseline(ref.model);
      const bool ref_classical = is_classical(ref.model);
      if (!ref_static && !ref_classical) continue;
      double p = 1.0;
      const bool better = improves(cells[i], ref, kMainAlpha, &p);
      row.p_values[ref.model] = p;
      if (ref_static) {
        over_static = true;
        all_static = all_static && better;
      } else if (!is_classical(cells[i].model) && !is_static_baseline(cells[i].model)) {
        over_classical = true;
        all_classical = all_classical && better;
      }
    }
    if (!is_static_baseline(cells[i].model) && over_static && all_static) row.markers += "†";
    if (over_classical && all_classical) row.markers += "‡";
    table.rows.push_back(std::move(row));
  }
  return table;
}

ComparisonTable run_ablation(const Corpus& corpus, const ExperimentSpec& spec) {
  spec.validate();
  bool need_serp = false;
  for (auto s : spec.settings) need_serp = need_serp || needs_serp(s);
  const auto prepared = prepare_split(corpus, spec, need_serp);
  const auto& split = prepared.split;

  ComparisonTable table;
  table.kind = "ablation";
  table.dataset = spec.dataset;
  table.n_train = split.train.size();
  table.n_test = split.test.size();
  table.excluded_missing_serp = prepared.excluded_missing_serp;
  table.corpus_hash = corpus.hash();
  if (prepared.excluded_missing_serp > 0)
    table.notes.push_back(std::to_string(prepared.excluded_missing_serp) +
                          " records without SERP results excluded from every setting");

  const ModelSpec& model = spec.roster.front();
  std::vector<CellResult> cells;
  for (auto s : spec.settings)
    cells.push_back(evaluate_cell(model, split.train, split.test, s, spec.max_results, spec));

  const CellResult* query_row = nullptr;
  const CellResult* pane_row = nullptr;
  for (const auto& c : cells) {
    if (c.setting == InputSetting::query && !query_row) query_row = &c;
    if (c.setting == InputSetting::query_pane && !pane_row) pane_row = &c;
  }
  for (const auto& c : cells) {
    ComparisonRow row{c, "", {}};
    double p = 1.0;
    if (query_row && query_row != &c) {
      if (improves(c, *query_row, kAblationAlpha, &p)) row.markers += "†";
      row.p_values["query"] = p;
    }
    if (pane_row && pane_row != &c) {
      if (improves(c, *pane_row, kAblationAlpha, &p)) row.markers += "‡";
      row.p_values["query+pane"] = p;
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

TsvTable ComparisonTable::to_table(const std::vector<std::string>& metrics) const {
  TsvTable t;
  t.header = {"model", "setting", "dataset"};
  for (const auto& m : metrics) t.header.push_back(m);
  t.header.insert(t.header.end(), {"markers", "n_test", "p_values"});
  for (const auto& row : rows) {
    std::vector<std::string> r = {row.cell.model, std::string(to_string(row.cell.setting)),
                                  std::string(to_string(dataset))};
    for (const auto& m : metrics) r.push_back(metric_value(row.cell.scores, m));
    r.push_back(row.markers.empty() ? "-" : row.markers);
    r.push_back(std::to_string(row.cell.scores.n));
    std::string ps;
    for (const auto& [name, p] : row.p_values) ps += (ps.empty() ? "" : ",") + name + "=" + format_p(p);
    r.push_back(ps.empty() ? "-" : ps);
    t.rows.push_back(std::move(r));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Analyses

std::string_view to_string(BucketAxis a) {
  switch (a) {
    case BucketAxis::impression: return "impression";
    case BucketAxis::query_length: return "query_length";
    case BucketAxis::coverage: return "coverage";
    case BucketAxis::diversity: return "diversity";
  }
  return "impression";
}

std::optional<BucketAxis> parse_axis(std::string_view s) {
  for (auto a : {BucketAxis::impression, BucketAxis::query_length, BucketAxis::coverage, BucketAxis::diversity})
    if (to_string(a) == s) return a;
  return std::nullopt;
}

std::string_view to_string(Coverage c) {
  switch (c) {
    case Coverage::all: return "all";
    case Coverage::some: return "some";
    case Coverage::none: return "none";
  }
  return "none";
}

Coverage answer_coverage(const ClarificationRecord& record) {
  if (!record.serp || record.answers.empty()) return Coverage::none;
  std::vector<std::string> texts;
  for (const auto& r : record.serp->results) texts.push_back(text::to_lower(r.title + " " + r.snippet));
  std::size_t present = 0;
  for (const auto& a : record.answers) {
    const std::string needle = text::to_lower(a);
    for (const auto& t : texts)
      if (t.find(needle) != std::string::npos) {
        ++present;
        break;
      }
  }
  if (present == record.answers.size()) return Coverage::all;
  return present == 0 ? Coverage::none : Coverage::some;
}

namespace {

const std::set<std::string>& closed_class() {
  static const std::set<std::string> words = {
      "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any",
      "are", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both",
      "but", "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "either",
      "every", "few", "for", "from", "further", "get", "gets", "got", "had", "has", "have", "having",
      "he", "her", "here", "hers", "herself", "him", "himself", "his", "how", "i", "if", "in",
      "into", "is", "it", "its", "itself", "just", "may", "me", "might", "more", "most", "must",
      "my", "myself", "neither", "no", "nor", "not", "now", "of", "off", "on", "once", "only", "or",
      "other", "our", "ours", "ourselves", "out", "over", "own", "same", "shall", "she", "should",
      "so", "some", "such", "than", "that", "the", "their", "theirs", "them", "themselves", "then",
      "there", "these", "they", "this", "those", "through", "to", "too", "under", "until", "up",
      "upon", "us", "very", "was", "we", "were", "what", "when", "where", "whether", "which",
      "while", "who", "whom", "whose", "why", "will", "with", "within", "without", "would", "yet",
      "you", "your", "yours", "yourself", "yourselves", "new", "best", "good", "great", "many",
      "much", "make", "made", "use", "used", "using", "find", "see", "like", "one", "two", "three",
      "first", "last", "next", "well", "even", "still", "back", "via", "per", "amp", "s", "t"};
  return words;
}

bool ends_with(std::string_view w, std::string_view suffix) {
  return w.size() > suffix.size() + 2 && w.substr(w.size() - suffix.size()) == suffix;
}

}  // namespace

std::vector<bool> heuristic_noun_tagger(std::span<const std::string> tokens) {
  static const char* const kNonNounSuffixes[] = {"ly", "ous", "ful", "ive", "able", "ible",
                                                 "ish", "less", "ed", "ing", "est"};
  std::vector<bool> out;
  out.reserve(tokens.size());
  for (const auto& tok : tokens) {
    const std::string w = text::to_lower(tok);
    bool noun = w.size() >= 2 && !closed_class().count(w) &&
                std::all_of(w.begin(), w.end(), [](unsigned char c) { return std::isalpha(c) || c >= 0x80; });
    for (const char* suffix : kNonNounSuffixes)
      if (noun && ends_with(w, suffix)) noun = false;
    out.push_back(noun);
  }
  return out;
}

std::optional<double> unique_noun_ratio(const Serp& serp, const PosTagger& tagger) {
  std::vector<std::string> tokens;
  for (const auto& r : serp.results)
    for (auto& t : text::analyze(r.snippet)) tokens.push_back(std::move(t));
  const auto tags = tagger(tokens);
  std::set<std::string> unique;
  std::size_t nouns = 0;
  for (std::size_t i = 0; i < tokens.size() && i < tags.size(); ++i) {
    if (!tags[i]) continue;
    ++nouns;
    unique.insert(text::porter_stem(tokens[i]));
  }
  if (nouns == 0) return std::nullopt;
  return static_cast<double>(unique.size()) / static_cast<double>(nouns);
}

namespace {

void fill_bucket(Bucket& b, const std::vector<std::size_t>& idx, std::span<const double> predictions,
                 const Corpus& records) {
  b.count = idx.size();
  if (idx.empty()) {
    b.note = "empty bucket";
    return;
  }
  std::vector<double> y, p;
  for (auto i : idx) {
    y.push_back(records[i].engagement);
    if (!predictions.empty()) p.push_back(predictions[i]);
  }
  b.mean_engagement = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  if (!predictions.empty()) b.scores = regression_scores(y, p);
}

std::vector<double> labels_of(const std::vector<std::size_t>& idx, const Corpus& records) {
  std::vector<double> v;
  for (auto i : idx) v.push_back(records[i].engagement);
  return v;
}

std::string edge_label(double v) {
  std::string s = format_number(v, 2);
  while (s.size() > 1 && s.back() == '0') s.pop_back();
  if (s.back() == '.') s.pop_back();
  return s;
}

}  // namespace

AnalysisBucketReport analyze_by_bucket(std::span<const double> predictions, const Corpus& records,
                                       BucketAxis axis, const BucketOptions& options) {
  if (!predictions.empty() && predictions.size() != records.size())
    throw Error(ErrorKind::LengthMismatch, "predictions are not aligned to records");
  AnalysisBucketReport report;
  report.axis = axis;
  report.evaluated = records.size();

  std::vector<std::string> keys;
  std::vector<std::vector<std::size_t>> members;

  switch (axis) {
    case BucketAxis::impression: {
      keys = {"low", "medium", "high"};
      members.resize(3);
      for (std::size_t i = 0; i < records.size(); ++i)
        members[static_cast<std::size_t>(records[i].impression)].push_back(i);
      break;
    }
    case BucketAxis::query_length: {
      const auto& edges = options.length_buckets;
      if (edges.empty()) throw Error(ErrorKind::InvalidSpec, "no query-length buckets");
      for (std::size_t b = 0; b < edges.size(); ++b)
        keys.push_back(std::to_string(edges[b]) + (b + 1 == edges.size() ? "+" : ""));
      members.resize(edges.size());
      for (std::size_t i = 0; i < records.size(); ++i) {
        const int len = static_cast<int>(text::count_whitespace_tokens(records[i].query));
        std::size_t b = 0;
        while (b + 1 < edges.size() && len > edges[b]) ++b;
        members[b].push_back(i);
      }
      break;
    }
    case BucketAxis::coverage: {
      keys = {"all", "some", "none"};
      members.resize(3);
      for (std::size_t i = 0; i < records.size(); ++i)
        members[static_cast<std::size_t>(answer_coverage(records[i]))].push_back(i);
      break;
    }
    case BucketAxis::diversity: {
      const auto& edges = options.diversity_edges;
      if (edges.size() < 2) throw Error(ErrorKind::InvalidSpec, "diversity needs at least two edges");
      for (std::size_t b = 0; b + 1 < edges.size(); ++b)
        keys.push_back((b == 0 ? "[" : "(") + edge_label(edges[b]) + "," + edge_label(edges[b + 1]) + "]");
      keys.push_back("undefined");
      members.resize(keys.size());
      std::vector<double> xs, ys;
      for (std::size_t i = 0; i < records.size(); ++i) {
        std::optional<double> ratio;
        if (records[i].serp) ratio = unique_noun_ratio(*records[i].serp, options.tagger);
        std::size_t b = keys.size() - 1;
        if (ratio) {
          xs.push_back(*ratio);
          ys.push_back(records[i].engagement);
          for (std::size_t e = 0; e + 1 < edges.size(); ++e) {
            const bool lower_ok = e == 0 ? *ratio >= edges[e] : *ratio > edges[e];
            if (lower_ok && *ratio <= edges[e + 1]) {
              b = e;
              break;
            }
          }
        }
        members[b].push_back(i);
      }
      if (xs.size() >= 2) {
        const double r = pearson_correlation(xs, ys);
        if (!std::isnan(r)) report.correlation = r;
      }
      break;
    }
  }

  for (std::size_t b = 0; b < keys.size(); ++b) {
    Bucket bucket;
    bucket.key = keys[b];
    fill_bucket(bucket, members[b], predictions, records);
    report.buckets.push_back(std::move(bucket));
  }
  if (axis == BucketAxis::coverage) {
    const std::pair<std::size_t, std::size_t> pairs[] = {{0, 1}, {0, 2}, {1, 2}};
    for (auto [a, b] : pairs) {
      if (members[a].empty() || members[b].empty()) continue;
      report.tests.push_back({keys[a], keys[b],
                              group_comparison(labels_of(members[a], records), labels_of(members[b], records))});
    }
  }
  return report;
}

TsvTable AnalysisBucketReport::to_table() const {
  TsvTable t;
  t.header = {"axis", "bucket", "count", "mean_engagement", "mae", "mse", "r2", "note"};
  for (const auto& b : buckets) {
    std::vector<std::string> r = {std::string(to_string(axis)), b.key, std::to_string(b.count),
                                  format_number(b.mean_engagement)};
    if (b.scores) {
      r.push_back(format_number(b.scores->mae));
      r.push_back(format_number(b.scores->mse));
      r.push_back(b.scores->r2_defined ? format_number(b.scores->r2) : "nan");
    } else {
      r.insert(r.end(), {"-", "-", "-"});
    }
    r.push_back(b.note.empty() ? (b.scores && !b.scores->r2_defined ? b.scores->r2_note : "-") : b.note);
    t.rows.push_back(std::move(r));
  }
  for (const auto& test : tests) {
    t.rows.push_back({std::string(to_string(axis)), "test:" + test.a + "_vs_" + test.b, "-",
                      "-", "-", "-", "-",
                      test.result.test + " t=" + format_number(test.result.statistic, 4) +
                          " p=" + format_p(test.result.p_value) + " mean_a=" +
                          format_number(test.result.mean_a, 4) + " mean_b=" +
                          format_number(test.result.mean_b, 4)});
  }
  if (correlation)
    t.rows.push_back({std::string(to_string(axis)), "pearson_r", "-", format_number(*correlation), "-", "-",
                      "-", "ratio vs engagement"});
  return t;
}

// ---------------------------------------------------------------------------
// Result-count sweep

SweepReport sweep_result_count(const Corpus& corpus, const ExperimentSpec& spec,
                               std::span<const int> counts, std::span<const InputSetting> settings,
                               SweepMode mode) {
  spec.validate();
  for (int c : counts)
    if (c < 0 || c > static_cast<int>(kMaxSerpResults))
      throw Error(ErrorKind::InvalidSpec, "result counts must lie in [0, 10]");
  for (auto s : settings)
    if (!needs_serp(s)) throw Error(ErrorKind::InvalidSpec, "sweep settings must use SERP results");
  const auto prepared = prepare_split(corpus, spec, true);
  const auto& split = prepared.split;
  const ModelSpec& model = spec.roster.front();

  SweepReport report;
  report.mode = mode;
  for (auto setting : settings) {
    if (mode == SweepMode::retrain) {
      for (int c : counts) {
        const auto cell = evaluate_cell(model, split.train, split.test, setting, c, spec);
        report.points.push_back({setting, c, cell.scores});
      }
      continue;
    }
    const auto train_in = compose_all(split.train, setting, spec.max_results);
    const Eigen::VectorXd y_train = engagement_labels(split.train);
    const Eigen::VectorXd y_test = engagement_labels(split.test);
    std::vector<std::unique_ptr<Predictor>> fitted;
    for (auto seed : spec.train_seeds) fitted.push_back(fit_model(model, train_in, y_train, seed, spec, nullptr));
    for (int c : counts) {
      const auto test_in = compose_all(split.test, setting, c);
      SeedAverage avg;
      for (const auto& p : fitted) avg.add(y_test, p->predict(test_in), spec.significance_loss);
      report.points.push_back({setting, c, avg.scores(split.test.size())});
    }
  }
  return report;
}

TsvTable SweepReport::to_series() const {
  TsvTable t;
  t.header = {"x", "y", "series"};
  for (const auto& p : points)
    t.rows.push_back({std::to_string(p.count), p.scores.r2_defined ? format_number(p.scores.r2) : "nan",
                      std::string(to_string(p.setting))});
  return t;
}

std::optional<double> SweepReport::r2(InputSetting setting, int count) const {
  for (const auto& p : points)
    if (p.setting == setting && p.count == count) return p.scores.r2;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Pane re-ranking

namespace {

RankedPaneList multi_pane_list(std::span<const double> scores, const Corpus& corpus) {
  RankedPaneList list;
  for (const auto& group : corpus.pane_groups()) {
    if (group.records.size() < 2) continue;
    QueryPanes q;
    q.query = group.query;
    for (auto i : group.records)
      q.panes.push_back({static_cast<int>(i), static_cast<double>(corpus[i].engagement), scores[i]});
    list.push_back(std::move(q));
  }
  if (list.empty()) throw Error(ErrorKind::NoMultiPaneQueries, "no query has two or more panes");
  return list;
}

}  // namespace

RerankReport run_pane_reranking(std::span<const double> scores, const Corpus& corpus,
                                const RerankOptions& options, std::string method) {
  if (scores.size() != corpus.size())
    throw Error(ErrorKind::LengthMismatch, "scores are not aligned to records");
  for (int k : options.ks)
    if (k < 1) throw Error(ErrorKind::InvalidSpec, "nDCG cutoffs must be >= 1");
  const RankedPaneList list = multi_pane_list(scores, corpus);

  RerankReport report;
  report.ks = options.ks;
  report.queries = list.size();

  RerankRow model{std::move(method), {}};
  for (int k : options.ks) model.ndcg.push_back(ndcg_at_k(list, k, options.ndcg));
  report.rows.push_back(std::move(model));

  RerankRow random{"Random", std::vector<double>(options.ks.size(), 0.0)};
  const int shuffles = std::max(1, options.random_shuffles);
  for (int s = 0; s < shuffles; ++s) {
    std::seed_seq seq{static_cast<std::uint32_t>(options.seed), static_cast<std::uint32_t>(options.seed >> 32),
                      static_cast<std::uint32_t>(s)};
    std::mt19937_64 rng(seq);
    RankedPaneList shuffled = list;
    for (auto& q : shuffled) {
      std::vector<double> ranks(q.panes.size());
      std::iota(ranks.begin(), ranks.end(), 0.0);
      std::shuffle(ranks.begin(), ranks.end(), rng);
      for (std::size_t i = 0; i < q.panes.size(); ++i) q.panes[i].predicted = ranks[i];
    }
    for (std::size_t k = 0; k < options.ks.size(); ++k)
      random.ndcg[k] += ndcg_at_k(shuffled, options.ks[k], options.ndcg) / shuffles;
  }
  report.rows.push_back(std::move(random));

  RankedPaneList worst = list;
  for (auto& q : worst) {
    std::size_t lowest = 0;
    double top = q.panes[0].true_engagement;
    for (std::size_t i = 0; i < q.panes.size(); ++i) {
      q.panes[i].predicted = q.panes[i].true_engagement;
      top = std::max(top, q.panes[i].true_engagement);
      if (q.panes[i].true_engagement < q.panes[lowest].true_engagement) lowest = i;
    }
    q.panes[lowest].predicted = top + 1.0;
  }
  RerankRow worst_row{"Worst question", {}};
  for (int k : options.ks) worst_row.ndcg.push_back(ndcg_at_k(worst, k, options.ndcg));
  report.rows.push_back(std::move(worst_row));
  return report;
}

RerankReport run_pane_reranking(const Predictor& model, InputSetting setting, const Corpus& corpus,
                                const RerankOptions& options, int max_results) {
  const auto inputs = compose_all(corpus, setting, max_results);
  const Eigen::VectorXd scores = model.predict(inputs);
  return run_pane_reranking(as_span(scores), corpus, options, model.name());
}

TsvTable RerankReport::to_table() const {
  TsvTable t;
  t.header = {"method"};
  for (int k : ks) t.header.push_back("ndcg@" + std::to_string(k));
  t.header.push_back("queries");
  for (const auto& r : rows) {
    std::vector<std::string> row = {r.method};
    for (double v : r.ndcg) row.push_back(format_number(v, 4));
    row.push_back(std::to_string(queries));
    t.rows.push_back(std::move(row));
  }
  return t;
}

const RerankRow* RerankReport::row(std::string_view method) const {
  for (const auto& r : rows)
    if (r.method == method) return &r;
  return nullptr;
}

// ---------------------------------------------------------------------------
// Synthetic corpora

std::string_view to_string(SignalField f) {
  switch (f) {
    case SignalField::query: return "query";
    case SignalField::question: return "question";
    case SignalField::answers: return "answers";
    case SignalField::titles: return "titles";
    case SignalField::snippets: return "snippets";
  }
  return "titles";
}

std::optional<SignalField> parse_signal_field(std::string_view s) {
  for (auto f : {SignalField::query, SignalField::question, SignalField::answers, SignalField::titles,
                 SignalField::snippets})
    if (to_string(f) == s) return f;
  return std::nullopt;
}

void SyntheticSpec::validate() const {
  if (records == 0) invalid_spec("records must be >= 1");
  if (vocabulary_size < 10) invalid_spec("vocabulary_size must be >= 10");
  if (keywords.empty()) invalid_spec("at least one keyword is needed");
  if (keywords.size() != weights.size()) invalid_spec("keywords and weights differ in length");
  for (const auto& k : keywords) {
    const auto tokens = text::analyze(k);
    if (tokens.size() != 1 || tokens[0] != k) invalid_spec("keyword '" + k + "' must be one lowercase word");
  }
  for (double w : weights)
    if (!std::isfinite(w)) invalid_spec("weights must be finite");
  if (!std::isfinite(intercept)) invalid_spec("intercept must be finite");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) invalid_spec("noise_sigma must be >= 0");
  if (signal_slots < 0) invalid_spec("signal_slots must be >= 0");
  if (!(keyword_probability >= 0.0 && keyword_probability <= 1.0))
    invalid_spec("keyword_probability must lie in [0, 1]");
  if (results_per_serp < 1 || results_per_serp > static_cast<int>(kMaxSerpResults))
    invalid_spec("results_per_serp must lie in [1, 10]");
  if (panes_per_query < 1) invalid_spec("panes_per_query must be >= 1");
}

Json SyntheticSpec::to_json() const {
  return {{"records", records},
          {"vocabulary_size", vocabulary_size},
          {"keywords", keywords},
          {"weights", weights},
          {"intercept", intercept},
          {"noise_sigma", noise_sigma},
          {"field", std::string(to_string(field))},
          {"signal_slots", signal_slots},
          {"keyword_probability", keyword_probability},
          {"results_per_serp", results_per_serp},
          {"panes_per_query", panes_per_query},
          {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const Json& j) {
  if (!j.is_object()) invalid_config("synthetic spec must be an object");
  SyntheticSpec s;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "records") s.records = value.get<std::size_t>();
      else if (key == "vocabulary_size") s.vocabulary_size = value.get<std::size_t>();
      else if (key == "keywords") s.keywords = value.get<std::vector<std::string>>();
      else if (key == "weights") s.weights = value.get<std::vector<double>>();
      else if (key == "intercept") s.intercept = value.get<double>();
      else if (key == "noise_sigma") s.noise_sigma = value.get<double>();
      else if (key == "field") {
        auto f = parse_signal_field(value.get<std::string>());
        if (!f) invalid_config("unknown signal field '" + value.get<std::string>() + "'");
        s.field = *f;
      } else if (key == "signal_slots") s.signal_slots = value.get<int>();
      else if (key == "keyword_probability") s.keyword_probability = value.get<double>();
      else if (key == "results_per_serp") s.results_per_serp = value.get<int>();
      else if (key == "panes_per_query") s.panes_per_query = value.get<int>();
      else if (key == "seed") s.seed = value.get<std::uint64_t>();
      else invalid_config("unknown synthetic key '" + key + "'");
    }
  } catch (const Json::exception& e) {
    invalid_config(std::string("bad synthetic value: ") + e.what());
  }
  return s;
}

namespace {

int effective_slots(const SyntheticSpec& spec) {
  if (spec.field == SignalField::titles || spec.field == SignalField::snippets)
    return std::min(spec.signal_slots, spec.results_per_serp);
  return spec.signal_slots;
}

std::vector<std::string> field_texts(const SyntheticSpec& spec, const ClarificationRecord& r) {
  switch (spec.field) {
    case SignalField::query: return {r.query};
    case SignalField::question: return {r.question};
    case SignalField::answers: return r.answers;
    case SignalField::titles:
    case SignalField::snippets: {
      std::vector<std::string> out;
      if (!r.serp) return out;
      for (const auto& res : r.serp->results)
        out.push_back(spec.field == SignalField::titles ? res.title : res.snippet);
      return out;
    }
  }
  return {};
}

std::vector<std::string> filler_vocabulary(std::size_t n, const std::vector<std::string>& keywords) {
  static const char* const kSyllables[] = {"ba", "ce", "di", "fo", "gu", "ha", "ke", "li", "mo", "nu",
                                           "pa", "re", "si", "to", "vu", "za", "be", "ko", "ri", "tu"};
  constexpr std::size_t kS = std::size(kSyllables);
  const std::set<std::string> reserved(keywords.begin(), keywords.end());
  std::vector<std::string> words;
  for (std::size_t i = 0; words.size() < n; ++i) {
    std::string w = std::string(kSyllables[i % kS]) + kSyllables[(i / kS) % kS] + kSyllables[(i / (kS * kS)) % kS];
    if (i >= kS * kS * kS) w += std::to_string(i / (kS * kS * kS));
    if (!reserved.count(w)) words.push_back(std::move(w));
  }
  return words;
}

}  // namespace

double planted_signal(const SyntheticSpec& spec, const ClarificationRecord& record) {
  double s = spec.intercept;
  const auto texts = field_texts(spec, record);
  for (std::size_t k = 0; k < spec.keywords.size(); ++k) {
    std::size_t count = 0;
    for (const auto& t : texts)
      for (const auto& tok : text::analyze(t))
        if (tok == spec.keywords[k]) ++count;
    s += spec.weights[k] * static_cast<double>(count);
  }
  return s;
}

double variance_ratio_ceiling(const SyntheticSpec& spec) {
  const double p = spec.keyword_probability;
  double var = 0.0;
  for (double w : spec.weights) var += w * w * effective_slots(spec) * p * (1.0 - p);
  const double noise = spec.noise_sigma * spec.noise_sigma;
  if (var + noise == 0.0) return 1.0;
  return var / (var + noise);
}

Corpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const auto vocab = filler_vocabulary(spec.vocabulary_size, spec.keywords);
  std::uniform_int_distribution<std::size_t> word(0, vocab.size() - 1);
  auto words = [&](int lo, int hi) {
    std::uniform_int_distribution<int> len(lo, hi);
    std::vector<std::string> out;
    for (int n = len(rng); n > 0; --n) out.push_back(vocab[word(rng)]);
    return out;
  };
  auto join = [](const std::vector<std::string>& w) { return text::join(w, " "); };
  std::bernoulli_distribution plant(spec.keyword_probability);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  std::uniform_int_distribution<int> impression(0, 2);

  // Inserts each keyword into the text with the planting probability.
  auto planted = [&](std::vector<std::string> w) {
    for (const auto& k : spec.keywords) {
      if (!plant(rng)) continue;
      std::uniform_int_distribution<std::size_t> pos(0, w.size());
      w.insert(w.begin() + static_cast<std::ptrdiff_t>(pos(rng)), k);
    }
    return w;
  };

  std::vector<ClarificationRecord> records;
  records.reserve(spec.records);
  std::set<std::string> used_queries;  // one SERP per query string
  while (records.size() < spec.records) {
    std::vector<std::string> query = words(1, 4);
    while (used_queries.count(join(query))) query.push_back(vocab[word(rng)]);
    used_queries.insert(join(query));
    Serp serp;
    for (int r = 0; r < spec.results_per_serp; ++r) {
      const std::string id = std::to_string(records.size()) + "-" + std::to_string(r);
      serp.results.push_back({join(words(4, 8)), "https://example.org/" + id, join(words(12, 20))});
    }
    const int panes = std::min<int>(spec.panes_per_query, static_cast<int>(spec.records - records.size()));
    for (int pane = 0; pane < panes; ++pane) {
      ClarificationRecord rec;
      std::vector<std::string> q = query;
      std::vector<std::string> question = words(4, 8);
      std::uniform_int_distribution<int> n_answers(static_cast<int>(kMinAnswers), static_cast<int>(kMaxAnswers));
      std::vector<std::vector<std::string>> answers(static_cast<std::size_t>(n_answers(rng)));
      for (auto& a : answers) a = words(1, 2);
      Serp s = serp;
      for (int slot = 0; slot < effective_slots(spec); ++slot) {
        switch (spec.field) {
          case SignalField::query: q = planted(std::move(q)); break;
          case SignalField::question: question = planted(std::move(question)); break;
          case SignalField::answers: {
            auto& a = answers[static_cast<std::size_t>(slot) % answers.size()];
            a = planted(std::move(a));
            break;
          }
          case SignalField::titles: {
            auto& t = s.results[static_cast<std::size_t>(slot)].title;
            t = join(planted(text::split(t, ' ')));
            break;
          }
          case SignalField::snippets: {
            auto& t = s.results[static_cast<std::size_t>(slot)].snippet;
            t = join(planted(text::split(t, ' ')));
            break;
          }
        }
      }
      rec.query = join(q);
      rec.question = join(question);
      for (const auto& a : answers) rec.answers.push_back(join(a));
      rec.impression = static_cast<Impression>(impression(rng));
      rec.serp = std::move(s);
      const double signal = planted_signal(spec, rec) + (spec.noise_sigma > 0.0 ? noise(rng) : 0.0);
      rec.engagement = static_cast<int>(std::clamp(std::round(signal), 0.0, static_cast<double>(kMaxEngagement)));
      records.push_back(std::move(rec));
    }
  }
  Provenance prov;
  prov.notes.push_back("synthetic spec " + text::content_hash(spec.to_json().dump()));
  return Corpus(std::move(records), std::move(prov));
}

}  // namespace elp
