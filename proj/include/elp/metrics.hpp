#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "elp/error.hpp"

namespace elp {

template <typename Scalar = double>
struct RegressionScores {
  Scalar mae{0};
  Scalar mse{0};
  Scalar r2{0};  // NaN when undefined, see r2_note
  bool r2_defined = true;
  std::string r2_note;
  std::size_t n = 0;
};

// MAE, MSE and the coefficient of determination 1 - SSE/SST. With zero label
// variance R^2 is 1 for a perfect fit and flagged undefined otherwise.
template <typename DerivedY, typename DerivedP>
RegressionScores<typename DerivedY::Scalar> regression_scores(const Eigen::DenseBase<DerivedY>& y,
                                                              const Eigen::DenseBase<DerivedP>& yhat) {
  using Scalar = typename DerivedY::Scalar;
  if (y.size() != yhat.size())
    throw Error(ErrorKind::LengthMismatch, "labels and predictions differ in length");
  if (y.size() == 0) throw Error(ErrorKind::EmptyInput, "no samples to score");
  if (!y.derived().allFinite() || !yhat.derived().allFinite())
    throw Error(ErrorKind::EmptyInput, "non-finite label or prediction");

  const auto n = static_cast<Scalar>(y.size());
  const auto residual = (y.derived().template cast<Scalar>() - yhat.derived().template cast<Scalar>()).eval();
  RegressionScores<Scalar> s;
  s.n = static_cast<std::size_t>(y.size());
  s.mae = residual.cwiseAbs().sum() / n;
  const Scalar sse = residual.squaredNorm();
  s.mse = sse / n;
  const Scalar mean = y.derived().template cast<Scalar>().mean();
  const Scalar sst = (y.derived().template cast<Scalar>().array() - mean).matrix().squaredNorm();
  if (sst > Scalar(0)) {
    s.r2 = Scalar(1) - sse / sst;
  } else if (sse == Scalar(0)) {
    s.r2 = Scalar(1);
  } else {
    s.r2 = std::numeric_limits<Scalar>::quiet_NaN();
    s.r2_defined = false;
    s.r2_note = "labels have zero variance";
  }
  // Jensen: mae^2 <= mse.
  eigen_assert(s.mae * s.mae <= s.mse * (Scalar(1) + Scalar(1e-12)) + Scalar(1e-300));
  return s;
}

inline RegressionScores<double> regression_scores(std::span<const double> y,
                                                  std::span<const double> yhat) {
  using Map = Eigen::Map<const Eigen::VectorXd>;
  if (y.size() != yhat.size())
    throw Error(ErrorKind::LengthMismatch, "labels and predictions differ in length");
  return regression_scores(Map(y.data(), static_cast<Eigen::Index>(y.size())),
                           Map(yhat.data(), static_cast<Eigen::Index>(yhat.size())));
}

enum class LossKind { squared, absolute };

template <typename DerivedY, typename DerivedP>
Eigen::Matrix<typename DerivedY::Scalar, Eigen::Dynamic, 1> per_sample_loss(
    const Eigen::DenseBase<DerivedY>& y, const Eigen::DenseBase<DerivedP>& yhat, LossKind kind) {
  if (y.size() != yhat.size())
    throw Error(ErrorKind::LengthMismatch, "labels and predictions differ in length");
  const auto r = (y.derived() - yhat.derived()).eval();
  if (kind == LossKind::absolute) return r.cwiseAbs();
  return r.cwiseAbs2();
}

// ---------------------------------------------------------------------------
// Ranking

struct PaneEntry {
  int pane_id = 0;
  double true_engagement = 0.0;
  double predicted = 0.0;
};

struct QueryPanes {
  std::string query;
  std::vector<PaneEntry> panes;
};

using RankedPaneList = std::vector<QueryPanes>;

enum class GainKind { linear, exponential };
enum class ZeroQueryPolicy { count_as_one, exclude };

struct NdcgOptions {
  GainKind gain = GainKind::linear;
  ZeroQueryPolicy zero_queries = ZeroQueryPolicy::count_as_one;
};

// nDCG@k for one query. Predicted order: score descending, ties by pane id.
// Returns NaN for an all-zero query under the exclude policy.
double ndcg_at_k(const QueryPanes& query, int k, const NdcgOptions& options = {});

// Mean over queries with at least two panes.
double ndcg_at_k(const RankedPaneList& list, int k, const NdcgOptions& options = {});

// Per-query values (queries with fewer than two panes are skipped; excluded
// zero queries are omitted).
std::vector<double> ndcg_per_query(const RankedPaneList& list, int k,
                                   const NdcgOptions& options = {});

// ---------------------------------------------------------------------------
// Significance

enum class PairingMode { paired, two_sample };

struct SignificanceResult {
  double statistic = 0.0;
  double p_value = 1.0;
  double dof = 0.0;
  std::string test;
  PairingMode mode = PairingMode::paired;
  bool degenerate_variance = false;
  double mean_a = 0.0;
  double mean_b = 0.0;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
};

// Two-sided tail probability of Student's t with dof degrees of freedom.
double student_t_two_sided_p(double t, double dof);

// Paired two-sided t-test over a[i] - b[i]. Zero variance of the
// differences gives p = 0 for a nonzero mean difference and p = 1 otherwise.
SignificanceResult paired_t_test(std::span<const double> a, std::span<const double> b);

// Welch two-sample t-test with Welch-Satterthwaite degrees of freedom.
SignificanceResult welch_t_test(std::span<const double> a, std::span<const double> b);

inline SignificanceResult significance(std::span<const double> errors_a,
                                       std::span<const double> errors_b) {
  return paired_t_test(errors_a, errors_b);
}

inline SignificanceResult group_comparison(std::span<const double> values_a,
                                           std::span<const double> values_b) {
  return welch_t_test(values_a, values_b);
}

inline std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

double pearson_correlation(std::span<const double> x, std::span<const double> y);

}  // namespace elp
