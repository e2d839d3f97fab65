#include "elp/metrics.hpp"

#include <algorithm>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

namespace elp {

namespace {

double gain(double rel, GainKind kind) {
  return kind == GainKind::linear ? rel : std::exp2(rel) - 1.0;
}

double dcg(const std::vector<double>& rels, int k, GainKind kind) {
  double s = 0.0;
  const std::size_t cut = std::min(rels.size(), static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < cut; ++i) s += gain(rels[i], kind) / std::log2(static_cast<double>(i) + 2.0);
  return s;
}

}  // namespace

double ndcg_at_k(const QueryPanes& query, int k, const NdcgOptions& options) {
  if (k < 1) throw Error(ErrorKind::EmptyInput, "k must be >= 1");
  std::vector<PaneEntry> predicted = query.panes;
  std::sort(predicted.begin(), predicted.end(), [](const PaneEntry& a, const PaneEntry& b) {
    if (a.predicted != b.predicted) return a.predicted > b.predicted;
    return a.pane_id < b.pane_id;
  });
  std::vector<double> rels, ideal;
  for (const auto& p : predicted) rels.push_back(p.true_engagement);
  ideal = rels;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double idcg = dcg(ideal, k, options.gain);
  if (idcg <= 0.0)
    return options.zero_queries == ZeroQueryPolicy::count_as_one
               ? 1.0
               : std::numeric_limits<double>::quiet_NaN();
  return dcg(rels, k, options.gain) / idcg;
}

std::vector<double> ndcg_per_query(const RankedPaneList& list, int k, const NdcgOptions& options) {
  std::vector<double> out;
  for (const auto& q : list) {
    if (q.panes.size() < 2) continue;
    const double v = ndcg_at_k(q, k, options);
    if (!std::isnan(v)) out.push_back(v);
  }
  return out;
}

double ndcg_at_k(const RankedPaneList& list, int k, const NdcgOptions& options) {
  const auto values = ndcg_per_query(list, k, options);
  if (values.empty()) throw Error(ErrorKind::EmptyInput, "no query with at least two panes");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double student_t_two_sided_p(double t, double dof) {
  if (std::isnan(t)) return 1.0;
  if (std::isinf(t)) return 0.0;
  const boost::math::students_t_distribution<double> dist(dof);
  const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  return std::clamp(p, 0.0, 1.0);
}

namespace {

struct MeanVar {
  double mean = 0.0;
  double var = 0.0;  // unbiased; 0 for a single value
};

MeanVar mean_var(std::span<const double> v) {
  MeanVar mv;
  const double n = static_cast<double>(v.size());
  mv.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - mv.mean) * (x - mv.mean);
    mv.var = ss / (n - 1.0);
  }
  return mv;
}

}  // namespace

SignificanceResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::LengthMismatch, "paired test needs equal lengths");
  if (a.empty()) throw Error(ErrorKind::EmptyInput, "paired test on empty samples");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const MeanVar mv = mean_var(d);

  SignificanceResult r;
  r.test = "paired-t";
  r.mode = PairingMode::paired;
  r.n_a = r.n_b = a.size();
  r.mean_a = mean_var(a).mean;
  r.mean_b = mean_var(b).mean;
  r.dof = static_cast<double>(a.size()) - 1.0;
  // Relative threshold: differences that are equal up to rounding count as constant.
  const double scale = std::max(1.0, std::abs(mv.mean));
  if (mv.var <= 1e-28 * scale * scale || a.size() < 2) {
    r.degenerate_variance = true;
    const bool nonzero = std::abs(mv.mean) > 1e-14 * scale;
    r.statistic = nonzero ? std::copysign(std::numeric_limits<double>::infinity(), mv.mean) : 0.0;
    r.p_value = nonzero ? 0.0 : 1.0;
    return r;
  }
  r.statistic = mv.mean / std::sqrt(mv.var / static_cast<double>(a.size()));
  r.p_value = student_t_two_sided_p(r.statistic, r.dof);
  return r;
}

SignificanceResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw Error(ErrorKind::EmptyInput, "two-sample test needs both groups");
  const MeanVar ma = mean_var(a), mb = mean_var(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());

  SignificanceResult r;
  r.test = "welch-t";
  r.mode = PairingMode::two_sample;
  r.n_a = a.size();
  r.n_b = b.size();
  r.mean_a = ma.mean;
  r.mean_b = mb.mean;
  const double va = ma.var / na, vb = mb.var / nb;
  const double se2 = va + vb;
  const double diff = ma.mean - mb.mean;
  const double scale = std::max({1.0, std::abs(ma.mean), std::abs(mb.mean)});
  if (se2 <= 1e-28 * scale * scale) {
    r.degenerate_variance = true;
    const bool nonzero = std::abs(diff) > 1e-14 * scale;
    r.statistic = nonzero ? std::copysign(std::numeric_limits<double>::infinity(), diff) : 0.0;
    r.p_value = nonzero ? 0.0 : 1.0;
    r.dof = na + nb - 2.0;
    return r;
  }
  auto term = [](double v, double n) { return n > 1.0 ? v * v / (n - 1.0) : 0.0; };
  r.dof = se2 * se2 / (term(va, na) + term(vb, nb));
  r.statistic = diff / std::sqrt(se2);
  r.p_value = student_t_two_sided_p(r.statistic, r.dof);
  return r;
}

double pearson_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::LengthMismatch, "correlation needs equal lengths");
  if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const MeanVar mx = mean_var(x), my = mean_var(y);
  double sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sxy += (x[i] - mx.mean) * (y[i] - my.mean);
  const double denom = std::sqrt(mx.var * my.var) * (static_cast<double>(x.size()) - 1.0);
  return denom > 0.0 ? sxy / denom : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace elp
