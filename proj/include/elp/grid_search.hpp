#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "elp/predictor.hpp"

namespace elp {

// Ordered axes; candidates enumerate the cartesian product with the last
// axis varying fastest.
class ParamGrid {
 public:
  ParamGrid() = default;
  ParamGrid& add(std::string key, std::vector<Json> values);

  std::size_t size() const;
  bool empty() const { return size() == 0; }
  std::vector<Json> candidates() const;
  const std::vector<std::pair<std::string, std::vector<Json>>>& axes() const { return axes_; }

  // {"key": [values...], ...} with keys in document order.
  static ParamGrid from_json(const Json& j);
  Json to_json() const;

 private:
  std::vector<std::pair<std::string, std::vector<Json>>> axes_;
};

// Grids used when no override is configured. Static baselines get a grid of
// one empty candidate.
ParamGrid default_grid(const std::string& model);

enum class Scoring { r2, neg_mae, neg_mse };
std::string_view to_string(Scoring s);
Scoring parse_scoring(std::string_view s);

struct CandidateScore {
  Json params;
  std::vector<double> fold_scores;
  double mean_score = 0.0;
};

struct GridSearchResult {
  Json best_params;
  std::size_t best_index = 0;
  std::vector<CandidateScore> candidates;
  int folds = 0;
  Scoring scoring = Scoring::r2;
  std::unique_ptr<Predictor> best_model;  // refit on all training data

  // One row per candidate: index, params, fold scores, mean.
  std::string score_table() const;
  Json to_json() const;
};

// Fold of each training index; sizes differ by at most one.
std::vector<int> assign_folds(std::size_t n, int folds, std::uint64_t seed);

// Scores every candidate on every fold, picks the best mean score (earliest
// candidate on ties; NaN means never win) and refits it on all inputs.
GridSearchResult grid_search_cv(const PredictorFactory& factory, const ParamGrid& grid,
                                std::span<const ModelInput> inputs, const Eigen::VectorXd& labels,
                                int folds = 5, Scoring scoring = Scoring::r2,
                                std::uint64_t seed = 0);

}  // namespace elp
