#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "elp/corpus.hpp"
#include "elp/featurize.hpp"

namespace elp::testing {

inline ClarificationRecord make_record(std::string query, int engagement,
                                       std::vector<std::string> answers = {"yes", "no"},
                                       std::string question = "what do you mean") {
  ClarificationRecord r;
  r.query = std::move(query);
  r.question = std::move(question);
  r.answers = std::move(answers);
  r.engagement = engagement;
  return r;
}

inline Serp make_serp(const std::vector<std::pair<std::string, std::string>>& title_snippet) {
  Serp s;
  for (std::size_t i = 0; i < title_snippet.size(); ++i)
    s.results.push_back({title_snippet[i].first, "http://example.com/" + std::to_string(i),
                         title_snippet[i].second});
  return s;
}

// Fresh directory under the build tree's temp area, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() /
            ("elp-test-" + tag + "-" + std::to_string(rng() % 1000000007ULL));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

// ---------------------------------------------------------------------------
// Independent oracles. Written straight from the textbook formulas with no
// shared code paths with the library.

namespace oracle {

inline double mae(const std::vector<double>& y, const std::vector<double>& p) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::fabs(y[i] - p[i]);
  return s / static_cast<double>(y.size());
}

inline double mse(const std::vector<double>& y, const std::vector<double>& p) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - p[i]) * (y[i] - p[i]);
  return s / static_cast<double>(y.size());
}

inline double r2(const std::vector<double>& y, const std::vector<double>& p) {
  double mean = 0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double sst = 0, sse = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    sst += (y[i] - mean) * (y[i] - mean);
    sse += (y[i] - p[i]) * (y[i] - p[i]);
  }
  if (sst == 0) return sse == 0 ? 1.0 : std::nan("");
  return 1.0 - sse / sst;
}

// nDCG@k with linear gain; ties in the predicted order go to the lower pane
// index, all-zero queries score 1.
inline double ndcg(const std::vector<double>& truth, const std::vector<double>& score, int k) {
  const std::size_t n = truth.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Selection sort keeps the tie rule obvious.
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = i;
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool higher = score[order[j]] > score[order[best]];
      const bool tie_lower_id = score[order[j]] == score[order[best]] && order[j] < order[best];
      if (higher || tie_lower_id) best = j;
    }
    std::swap(order[i], order[best]);
  }
  std::vector<double> ideal = truth;
  std::sort(ideal.rbegin(), ideal.rend());
  double dcg = 0, idcg = 0;
  for (std::size_t r = 0; r < n && static_cast<int>(r) < k; ++r) {
    dcg += truth[order[r]] / std::log2(static_cast<double>(r) + 2.0);
    idcg += ideal[r] / std::log2(static_cast<double>(r) + 2.0);
  }
  return idcg == 0 ? 1.0 : dcg / idcg;
}

// Regularized incomplete beta I_x(a, b) by the modified Lentz continued
// fraction.
inline double incomplete_beta(double x, double a, double b) {
  if (x <= 0) return 0;
  if (x >= 1) return 1;
  if (x > (a + 1) / (a + b + 2)) return 1.0 - incomplete_beta(1.0 - x, b, a);
  const double front =
      std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
               b * std::log1p(-x)) /
      a;
  const double tiny = 1e-300;
  double f = 1, c = 1, d = 0;
  for (int i = 0; i <= 2000; ++i) {
    const int m = i / 2;
    double num;
    if (i == 0)
      num = 1;
    else if (i % 2 == 0)
      num = (m * (b - m) * x) / ((a + 2.0 * m - 1) * (a + 2.0 * m));
    else
      num = -((a + m) * (a + b + m) * x) / ((a + 2.0 * m) * (a + 2.0 * m + 1));
    d = 1 + num * d;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1 / d;
    c = 1 + num / c;
    if (std::fabs(c) < tiny) c = tiny;
    const double cd = c * d;
    f *= cd;
    if (std::fabs(1 - cd) < 1e-15) break;
  }
  return front * (f - 1);
}

inline double t_two_sided(double t, double dof) {
  return incomplete_beta(dof / (dof + t * t), dof / 2, 0.5);
}

struct TTest {
  double t;
  double p;
  double dof;
};

inline TTest paired(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  double mean = 0;
  for (double v : d) mean += v;
  mean /= n;
  double ss = 0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1));
  if (sd == 0) return {0, mean == 0 ? 1.0 : 0.0, n - 1};
  const double t = mean / (sd / std::sqrt(n));
  return {t, t_two_sided(t, n - 1), n - 1};
}

inline TTest welch(const std::vector<double>& a, const std::vector<double>& b) {
  auto moments = [](const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::pair{m, ss / static_cast<double>(v.size() - 1)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double se2 = va / na + vb / nb;
  if (se2 == 0) return {0, ma == mb ? 1.0 : 0.0, na + nb - 2};
  const double t = (ma - mb) / std::sqrt(se2);
  const double dof = se2 * se2 / ((va / na) * (va / na) / (na - 1) + (vb / nb) * (vb / nb) / (nb - 1));
  return {t, t_two_sided(t, dof), dof};
}

}  // namespace oracle
}  // namespace elp::testing
