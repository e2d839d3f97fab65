#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "elp/corpus.hpp"
#include "elp/featurize.hpp"
#include "elp/grid_search.hpp"
#include "elp/metrics.hpp"
#include "elp/predictor.hpp"

namespace elp {

enum class DatasetSelector { full, el_only };
std::string_view to_string(DatasetSelector d);
std::optional<DatasetSelector> parse_dataset(std::string_view s);

// full keeps every record; el-only keeps engagement > 0.
Corpus select_dataset(const Corpus& corpus, DatasetSelector selector);

struct ModelSpec {
  std::string name;
  Json hyperparameters = Json::object();
  std::optional<ParamGrid> grid;  // set: grid search, merged over hyperparameters

  Json to_json() const;
  static ModelSpec from_json(const Json& j);
};

struct ExperimentSpec {
  DatasetSelector dataset = DatasetSelector::full;
  std::vector<ModelSpec> roster;
  std::vector<InputSetting> settings{InputSetting::query_pane_snippets};
  double test_fraction = 0.2;
  std::uint64_t split_seed = 0;
  std::vector<std::uint64_t> train_seeds{0};
  std::vector<std::string> metrics{"mae", "mse", "r2"};
  LossKind significance_loss = LossKind::squared;
  int max_results = 10;
  int cv_folds = 5;
  Scoring scoring = Scoring::r2;

  // Throws InvalidSpec naming the offending field.
  void validate() const;
  Json to_json() const;
  // Unknown keys throw InvalidConfig naming the key.
  static ExperimentSpec from_json(const Json& j);
  std::string hash() const;
};

// Metadata preamble written as "# key: value" lines above every report.
struct ReportMetadata {
  std::string report;
  std::string spec_hash;
  std::string corpus_hash;
  std::vector<std::uint64_t> seeds;
  std::vector<std::pair<std::string, std::string>> extra;
};

struct TsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

std::string format_number(double v, int precision = 6);
std::string write_tsv(const TsvTable& table, const ReportMetadata& meta);

// ---------------------------------------------------------------------------
// Model evaluation

struct CellResult {
  std::string model;
  InputSetting setting = InputSetting::query;
  RegressionScores<double> scores;
  Eigen::VectorXd predictions;  // first train seed
  Eigen::VectorXd losses;       // per-sample loss averaged over train seeds
  Json params = Json::object();
};

// Fits the model on train and scores it on test. Scores and losses are
// averaged over the train seeds.
CellResult evaluate_cell(const ModelSpec& model, const Corpus& train, const Corpus& test,
                         InputSetting setting, int max_results, const ExperimentSpec& spec);

Eigen::VectorXd engagement_labels(const Corpus& corpus);

struct ComparisonRow {
  CellResult cell;
  std::string markers;
  std::map<std::string, double> p_values;  // reference row name -> p
};

struct ComparisonTable {
  std::string kind;  // "main" or "ablation"
  DatasetSelector dataset = DatasetSelector::full;
  std::vector<ComparisonRow> rows;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::size_t excluded_missing_serp = 0;
  std::string corpus_hash;
  std::vector<std::string> notes;

  TsvTable to_table(const std::vector<std::string>& metrics) const;
};

inline constexpr double kMainAlpha = 0.01;
inline constexpr double kAblationAlpha = 0.05;

// Every roster model on one split under settings[0]. A row gets a dagger
// when its per-sample losses are significantly lower (paired, p < 0.01) than
// every static baseline's, and a double dagger when lower than every
// classical model's.
ComparisonTable run_main_comparison(const Corpus& corpus, const ExperimentSpec& spec);

// roster[0] under every setting, with markers against the query and
// query+pane rows. Records without SERP results are dropped before the
// split when any setting needs them.
ComparisonTable run_ablation(const Corpus& corpus, const ExperimentSpec& spec);

// Dataset selection, SERP filtering and the holdout split shared by the runners.
struct PreparedSplit {
  Split split;
  std::size_t excluded_missing_serp = 0;
};
PreparedSplit prepare_split(const Corpus& corpus, const ExperimentSpec& spec, bool need_serp);

// ---------------------------------------------------------------------------
// Analyses

enum class BucketAxis { impression, query_length, coverage, diversity };
std::string_view to_string(BucketAxis a);
std::optional<BucketAxis> parse_axis(std::string_view s);

enum class Coverage { all, some, none };
std::string_view to_string(Coverage c);
// Case-folded substring match of each answer in any result's title + snippet.
// Records without a SERP are "none".
Coverage answer_coverage(const ClarificationRecord& record);

// Tags each token as noun or not.
using PosTagger = std::function<std::vector<bool>(std::span<const std::string> tokens)>;
// Closed-class stoplist plus suffix rules. Approximate.
std::vector<bool> heuristic_noun_tagger(std::span<const std::string> tokens);

// Unique stemmed nouns over all nouns across the snippets; nullopt when the
// snippets contain no noun.
std::optional<double> unique_noun_ratio(const Serp& serp, const PosTagger& tagger = heuristic_noun_tagger);

struct BucketOptions {
  std::vector<int> length_buckets{1, 2, 3, 4, 5};   // last one is open-ended
  std::vector<double> diversity_edges{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  PosTagger tagger = heuristic_noun_tagger;
};

struct Bucket {
  std::string key;
  std::size_t count = 0;
  double mean_engagement = std::numeric_limits<double>::quiet_NaN();
  std::optional<RegressionScores<double>> scores;  // when predictions were given
  std::string note;                                // "empty bucket" etc.
};

struct GroupTest {
  std::string a;
  std::string b;
  SignificanceResult result;
};

struct AnalysisBucketReport {
  BucketAxis axis = BucketAxis::impression;
  std::vector<Bucket> buckets;
  std::vector<GroupTest> tests;
  std::optional<double> correlation;  // diversity axis: ratio vs engagement
  std::size_t evaluated = 0;

  TsvTable to_table() const;
};

// predictions may be empty (label-only analysis) or aligned to records.
AnalysisBucketReport analyze_by_bucket(std::span<const double> predictions, const Corpus& records,
                                       BucketAxis axis, const BucketOptions& options = {});

enum class SweepMode { retrain, recompose };

inline constexpr InputSetting kSweepSettings[] = {InputSetting::query_pane_titles,
                                                  InputSetting::query_pane_snippets};

struct SweepPoint {
  InputSetting setting;
  int count;
  RegressionScores<double> scores;
};

struct SweepReport {
  std::vector<SweepPoint> points;
  SweepMode mode = SweepMode::retrain;

  // Figure series: (count, r2, setting) triples.
  TsvTable to_series() const;
  std::optional<double> r2(InputSetting setting, int count) const;
};

// roster[0] over max_results in counts for each base setting, on the same
// split the ablation uses.
SweepReport sweep_result_count(const Corpus& corpus, const ExperimentSpec& spec,
                               std::span<const int> counts,
                               std::span<const InputSetting> settings =
                                   std::span<const InputSetting>(kSweepSettings),
                               SweepMode mode = SweepMode::retrain);

struct RerankOptions {
  std::vector<int> ks{1, 2, 3, 5};
  int random_shuffles = 10;
  std::uint64_t seed = 0;
  NdcgOptions ndcg;
};

struct RerankRow {
  std::string method;
  std::vector<double> ndcg;  // aligned with ks
};

struct RerankReport {
  std::vector<int> ks;
  std::vector<RerankRow> rows;
  std::size_t queries = 0;

  TsvTable to_table() const;
  const RerankRow* row(std::string_view method) const;
};

// Ranks the panes of every multi-pane query by score (aligned to records).
// Adds the Random and Worst question baselines. Throws NoMultiPaneQueries.
RerankReport run_pane_reranking(std::span<const double> scores, const Corpus& corpus,
                                const RerankOptions& options = {},
                                std::string method = "model");
RerankReport run_pane_reranking(const Predictor& model, InputSetting setting, const Corpus& corpus,
                                const RerankOptions& options = {}, int max_results = 10);

// ---------------------------------------------------------------------------
// Synthetic corpora

enum class SignalField { query, question, answers, titles, snippets };
std::string_view to_string(SignalField f);
std::optional<SignalField> parse_signal_field(std::string_view s);

// Engagement = clamp(round(intercept + sum_k weight_k * count_k + N(0, sigma)), 0, 10)
// where count_k is the number of planted occurrences of keyword k in the
// signal field. Each of the first signal_slots results (or the single field
// text) receives keyword k with probability keyword_probability.
struct SyntheticSpec {
  std::size_t records = 5000;
  std::size_t vocabulary_size = 300;
  std::vector<std::string> keywords{"widget"};
  std::vector<double> weights{1.8};
  double intercept = 0.5;
  double noise_sigma = 1.0;
  SignalField field = SignalField::titles;
  int signal_slots = 5;
  double keyword_probability = 0.5;
  int results_per_serp = 10;
  int panes_per_query = 1;  // records sharing one query and SERP
  std::uint64_t seed = 0;

  void validate() const;  // throws InvalidSpec
  Json to_json() const;
  static SyntheticSpec from_json(const Json& j);
};

// Planted signal (before noise, rounding and clamping) of a record.
double planted_signal(const SyntheticSpec& spec, const ClarificationRecord& record);
// Var(signal) / (Var(signal) + sigma^2) from the binomial keyword counts.
double variance_ratio_ceiling(const SyntheticSpec& spec);

Corpus generate_synthetic(const SyntheticSpec& spec);

}  // namespace elp
