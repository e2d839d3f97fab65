#include "elp/grid_search.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "elp/error.hpp"
#include "elp/metrics.hpp"

namespace elp {

ParamGrid& ParamGrid::add(std::string key, std::vector<Json> values) {
  axes_.emplace_back(std::move(key), std::move(values));
  return *this;
}

std::size_t ParamGrid::size() const {
  std::size_t n = 1;
  for (const auto& [k, v] : axes_) n *= v.size();
  return n;
}

std::vector<Json> ParamGrid::candidates() const {
  std::vector<Json> out;
  const std::size_t n = size();
  out.reserve(n);
  for (std::size_t c = 0; c < n; ++c) {
    Json params = Json::object();
    std::size_t rest = c;
    for (std::size_t a = axes_.size(); a-- > 0;) {
      const auto& [key, values] = axes_[a];
      params[key] = values[rest % values.size()];
      rest /= values.size();
    }
    out.push_back(std::move(params));
  }
  return out;
}

ParamGrid ParamGrid::from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, "grid must be an object");
  ParamGrid g;
  // nlohmann::json sorts object keys; axis order follows that ordering.
  for (const auto& [key, values] : j.items()) {
    if (!values.is_array()) throw Error(ErrorKind::InvalidConfig, "grid axis '" + key + "' must be a list");
    g.add(key, std::vector<Json>(values.begin(), values.end()));
  }
  return g;
}

Json ParamGrid::to_json() const {
  Json j = Json::object();
  for (const auto& [key, values] : axes_) j[key] = values;
  return j;
}

ParamGrid default_grid(const std::string& model) {
  ParamGrid g;
  if (model == "svr") {
    g.add("kernel", {"linear", "rbf"})
        .add("C", {0.1, 1.0, 10.0})
        .add("epsilon", {0.01, 0.1, 0.5})
        .add("gamma", {"scale", 0.01, 0.1})
        .add("min_df", {1, 5});
  } else if (model == "random_forest") {
    g.add("n_estimators", {100, 300}).add("max_depth", {8, 16, nullptr}).add("min_df", {1, 5});
  } else if (model == "linear_regression") {
    g.add("min_df", {1, 5});
  }
  return g;
}

std::string_view to_string(Scoring s) {
  switch (s) {
    case Scoring::r2: return "r2";
    case Scoring::neg_mae: return "neg_mae";
    case Scoring::neg_mse: return "neg_mse";
  }
  return "r2";
}

Scoring parse_scoring(std::string_view s) {
  if (s == "r2") return Scoring::r2;
  if (s == "neg_mae") return Scoring::neg_mae;
  if (s == "neg_mse") return Scoring::neg_mse;
  throw Error(ErrorKind::InvalidConfig, "unknown scoring '" + std::string(s) + "'");
}

std::vector<int> assign_folds(std::size_t n, int folds, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> fold(n);
  for (std::size_t i = 0; i < n; ++i) fold[order[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));
  return fold;
}

namespace {

double score(Scoring s, const Eigen::VectorXd& truth, const Eigen::VectorXd& pred) {
  const auto r = regression_scores(truth, pred);
  switch (s) {
    case Scoring::r2: return r.r2;
    case Scoring::neg_mae: return -r.mae;
    case Scoring::neg_mse: return -r.mse;
  }
  return r.r2;
}

}  // namespace

GridSearchResult grid_search_cv(const PredictorFactory& factory, const ParamGrid& grid,
                                std::span<const ModelInput> inputs, const Eigen::VectorXd& labels,
                                int folds, Scoring scoring, std::uint64_t seed) {
  if (grid.empty()) throw Error(ErrorKind::EmptyGrid, "grid has no candidates");
  if (folds < 2) throw Error(ErrorKind::InvalidConfig, "grid search needs at least 2 folds");
  if (inputs.empty()) throw Error(ErrorKind::EmptyTraining, "no training inputs");
  if (static_cast<Eigen::Index>(inputs.size()) != labels.size())
    throw Error(ErrorKind::LengthMismatch, "inputs and labels differ in length");
  if (inputs.size() < static_cast<std::size_t>(folds))
    throw Error(ErrorKind::EmptyTraining, "fewer training inputs than folds");

  const auto fold_of = assign_folds(inputs.size(), folds, seed);
  std::vector<std::vector<ModelInput>> fit_in(folds), eval_in(folds);
  std::vector<std::vector<double>> fit_y(folds), eval_y(folds);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (int f = 0; f < folds; ++f) {
      if (fold_of[i] == f) {
        eval_in[f].push_back(inputs[i]);
        eval_y[f].push_back(labels(static_cast<Eigen::Index>(i)));
      } else {
        fit_in[f].push_back(inputs[i]);
        fit_y[f].push_back(labels(static_cast<Eigen::Index>(i)));
      }
    }
  }
  auto as_vec = [](const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())).eval();
  };

  GridSearchResult result;
  result.folds = folds;
  result.scoring = scoring;
  double best = -std::numeric_limits<double>::infinity();
  bool have_best = false;
  const auto candidates = grid.candidates();
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    CandidateScore cs;
    cs.params = candidates[c];
    for (int f = 0; f < folds; ++f) {
      auto model = factory(candidates[c]);
      model->fit(fit_in[f], as_vec(fit_y[f]), seed);
      cs.fold_scores.push_back(score(scoring, as_vec(eval_y[f]), model->predict(eval_in[f])));
    }
    cs.mean_score = std::accumulate(cs.fold_scores.begin(), cs.fold_scores.end(), 0.0) /
                    static_cast<double>(folds);
    if (!std::isnan(cs.mean_score) && (!have_best || cs.mean_score > best)) {
      best = cs.mean_score;
      result.best_index = c;
      have_best = true;
    }
    result.candidates.push_back(std::move(cs));
  }
  result.best_params = candidates[result.best_index];
  result.best_model = factory(result.best_params);
  result.best_model->fit(inputs, labels, seed);
  return result;
}

std::string GridSearchResult::score_table() const {
  std::ostringstream out;
  out.precision(10);
  out << "candidate\tparams";
  for (int f = 0; f < folds; ++f) out << "\tfold" << f;
  out << "\tmean_" << to_string(scoring) << "\tbest\n";
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    out << c << '\t' << candidates[c].params.dump();
    for (double s : candidates[c].fold_scores) out << '\t' << s;
    out << '\t' << candidates[c].mean_score << '\t' << (c == best_index ? 1 : 0) << '\n';
  }
  return out.str();
}

Json GridSearchResult::to_json() const {
  Json cands = Json::array();
  for (const auto& c : candidates)
    cands.push_back({{"params", c.params}, {"fold_scores", c.fold_scores}, {"mean_score", c.mean_score}});
  return {{"best_params", best_params},
          {"best_index", best_index},
          {"folds", folds},
          {"scoring", std::string(to_string(scoring))},
          {"candidates", std::move(cands)}};
}

}  // namespace elp
