#include "elp/regressors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace elp {

namespace {

void check_training(const SparseRows& x, const Eigen::VectorXd& y) {
  if (x.rows() == 0 || y.size() == 0) throw Error(ErrorKind::EmptyTraining, "no training rows");
  if (x.rows() != y.size())
    throw Error(ErrorKind::LengthMismatch, "feature rows and labels differ in length");
}

Json vector_to_json(const Eigen::VectorXd& v) {
  return Json(std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd vector_from_json(const Json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

Json sparse_to_json(const SparseRows& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.outerSize(); ++r) {
    Json row = Json::array();
    for (SparseRows::InnerIterator it(m, r); it; ++it) row.push_back({it.col(), it.value()});
    rows.push_back(std::move(row));
  }
  return {{"cols", m.cols()}, {"rows", rows}};
}

SparseRows sparse_from_json(const Json& j) {
  const auto& rows = j.at("rows");
  std::vector<Eigen::Triplet<double>> t;
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (const auto& e : rows[r])
      t.emplace_back(static_cast<int>(r), e.at(0).get<int>(), e.at(1).get<double>());
  SparseRows m(static_cast<Eigen::Index>(rows.size()), j.at("cols").get<Eigen::Index>());
  m.setFromTriplets(t.begin(), t.end());
  m.makeCompressed();
  return m;
}

// Value of x(row, col) by binary search in the compressed row.
double sparse_at(const SparseRows& x, Eigen::Index row, int col) {
  const auto* outer = x.outerIndexPtr();
  const auto* inner = x.innerIndexPtr();
  const auto* begin = inner + outer[row];
  const auto* end = inner + outer[row + 1];
  const auto* it = std::lower_bound(begin, end, col);
  if (it != end && *it == col) return x.valuePtr()[it - inner];
  return 0.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// LinearRegression

void LinearRegression::fit(const SparseRows& x, const Eigen::VectorXd& y, std::uint64_t) {
  check_training(x, y);
  const Eigen::Index d = x.cols();
  const double n = static_cast<double>(x.rows());
  const Eigen::VectorXd mu = (x.transpose() * Eigen::VectorXd::Ones(x.rows())) / n;
  const double y_mean = y.mean();

  // A = X - 1 mu^T, applied implicitly.
  auto apply = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    Eigen::VectorXd out = x * v;
    out.array() -= mu.dot(v);
    return out;
  };
  auto apply_t = [&](const Eigen::VectorXd& r) -> Eigen::VectorXd {
    Eigen::VectorXd out = x.transpose() * r;
    out -= mu * r.sum();
    return out;
  };

  Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd r = y.array() - y_mean;
  Eigen::VectorXd s = apply_t(r);
  Eigen::VectorXd p = s;
  double gamma = s.squaredNorm();
  const double target = options_.tolerance * std::sqrt(gamma);
  const int max_iter = options_.max_iterations > 0 ? options_.max_iterations
                                                   : static_cast<int>(4 * (d + 1) + 100);
  int it = 0;
  while (it < max_iter && std::sqrt(gamma) > target && gamma > 0.0) {
    const Eigen::VectorXd q = apply(p);
    const double qq = q.squaredNorm();
    if (qq <= 0.0) break;
    const double alpha = gamma / qq;
    w += alpha * p;
    r -= alpha * q;
    s = apply_t(r);
    const double gamma_next = s.squaredNorm();
    p = s + (gamma_next / gamma) * p;
    gamma = gamma_next;
    ++it;
  }
  coef_ = std::move(w);
  intercept_ = y_mean - mu.dot(coef_);
  normal_residual_ = apply_t(y.array() - y_mean - apply(coef_).array()).norm();
  iterations_ = it;
  fitted_ = true;
}

Eigen::VectorXd LinearRegression::predict(const SparseRows& x) const {
  if (!fitted_) throw Error(ErrorKind::NotFitted, "linear_regression used before fit");
  if (x.cols() != coef_.size()) throw Error(ErrorKind::LengthMismatch, "feature count differs from fit");
  Eigen::VectorXd out = x * coef_;
  out.array() += intercept_;
  return out;
}

Json LinearRegression::weights() const {
  return {{"coefficients", vector_to_json(coef_)}, {"intercept", intercept_}};
}

void LinearRegression::load_weights(const Json& j) {
  coef_ = vector_from_json(j.at("coefficients"));
  intercept_ = j.at("intercept").get<double>();
  fitted_ = true;
}

// ---------------------------------------------------------------------------
// SupportVectorRegression

SupportVectorRegression::SupportVectorRegression(Params params) : params_(params) {
  if (!(params_.c > 0.0) || !std::isfinite(params_.c))
    throw Error(ErrorKind::InvalidHyperparameter, "svr C must be finite and > 0");
  if (!(params_.epsilon >= 0.0) || !std::isfinite(params_.epsilon))
    throw Error(ErrorKind::InvalidHyperparameter, "svr epsilon must be finite and >= 0");
  if (params_.gamma && (!(*params_.gamma > 0.0) || !std::isfinite(*params_.gamma)))
    throw Error(ErrorKind::InvalidHyperparameter, "svr gamma must be finite and > 0");
  if (!(params_.tolerance > 0.0))
    throw Error(ErrorKind::InvalidHyperparameter, "svr tolerance must be > 0");
}

namespace {

// LRU cache of base kernel rows K(i, .) over the training rows.
class KernelRows {
 public:
  KernelRows(const SparseRows& x, KernelKind kind, double gamma, double cache_mb)
      : x_(x), xt_(x.transpose()), kind_(kind), gamma_(gamma) {
    sq_ = Eigen::VectorXd(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) sq_[i] = x.row(i).squaredNorm();
    const double bytes = cache_mb * 1024.0 * 1024.0;
    capacity_ = std::max<std::size_t>(
        2, static_cast<std::size_t>(bytes / (8.0 * static_cast<double>(x.rows()))));
  }

  double diag(Eigen::Index i) const { return kind_ == KernelKind::linear ? sq_[i] : 1.0; }

  const Eigen::VectorXd& row(Eigen::Index i) {
    auto found = index_.find(i);
    if (found != index_.end()) {
      lru_.splice(lru_.begin(), lru_, found->second);
      return found->second->second;
    }
    if (lru_.size() >= capacity_) {
      index_.erase(lru_.back().first);
      lru_.pop_back();
    }
    Eigen::VectorXd dense = Eigen::VectorXd(xt_.col(i));
    Eigen::VectorXd k = x_ * dense;
    if (kind_ == KernelKind::rbf)
      k = (-gamma_ * (sq_.array() + sq_[i] - 2.0 * k.array()).max(0.0)).exp().matrix();
    lru_.emplace_front(i, std::move(k));
    index_[i] = lru_.begin();
    return lru_.front().second;
  }

 private:
  const SparseRows& x_;
  Eigen::SparseMatrix<double> xt_;  // column-major transpose: column i is row i of x
  KernelKind kind_;
  double gamma_;
  Eigen::VectorXd sq_;
  std::size_t capacity_;
  std::list<std::pair<Eigen::Index, Eigen::VectorXd>> lru_;
  std::unordered_map<Eigen::Index, std::list<std::pair<Eigen::Index, Eigen::VectorXd>>::iterator>
      index_;
};

double scale_gamma(const SparseRows& x) {
  const double count = static_cast<double>(x.rows()) * static_cast<double>(x.cols());
  if (count <= 0.0) return 1.0;
  double sum = 0.0, sumsq = 0.0;
  for (Eigen::Index k = 0; k < x.nonZeros(); ++k) {
    sum += x.valuePtr()[k];
    sumsq += x.valuePtr()[k] * x.valuePtr()[k];
  }
  const double mean = sum / count;
  const double var = sumsq / count - mean * mean;
  return var > 0.0 ? 1.0 / (static_cast<double>(x.cols()) * var) : 1.0;
}

}  // namespace

void SupportVectorRegression::fit(const SparseRows& x, const Eigen::VectorXd& y, std::uint64_t) {
  check_training(x, y);
  constexpr double kTau = 1e-12;
  const Eigen::Index l = x.rows();
  const Eigen::Index l2 = 2 * l;
  const double c = params_.c;
  gamma_ = params_.gamma.value_or(scale_gamma(x));
  KernelRows kernel(x, params_.kernel, gamma_, params_.cache_mb);

  // Variables 0..l-1 carry sign +1, l..2l-1 sign -1 (libsvm's formulation).
  auto sign = [l](Eigen::Index t) { return t < l ? 1.0 : -1.0; };
  auto base = [l](Eigen::Index t) { return t < l ? t : t - l; };
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(l2);
  Eigen::VectorXd grad(l2);
  Eigen::VectorXd qd(l2);
  for (Eigen::Index t = 0; t < l; ++t) {
    grad[t] = params_.epsilon - y[t];
    grad[t + l] = params_.epsilon + y[t];
    qd[t] = qd[t + l] = kernel.diag(t);
  }
  auto upper = [&](Eigen::Index t) { return alpha[t] >= c; };
  auto lower = [&](Eigen::Index t) { return alpha[t] <= 0.0; };
  auto q_entry = [&](Eigen::Index i, const Eigen::VectorXd& krow_i, Eigen::Index t) {
    return sign(i) * sign(t) * krow_i[base(t)];
  };

  const long max_iter = params_.max_iterations > 0 ? params_.max_iterations
                                                   : std::max<long>(1'000'000, 100 * l);
  long iter = 0;
  for (; iter < max_iter; ++iter) {
    // Working set selection (maximal violating pair, second-order choice of j).
    double gmax = -std::numeric_limits<double>::infinity();
    double gmax2 = -std::numeric_limits<double>::infinity();
    Eigen::Index gmax_idx = -1, gmin_idx = -1;
    double obj_diff_min = std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < l2; ++t) {
      if (sign(t) > 0) {
        if (!upper(t) && -grad[t] >= gmax) {
          gmax = -grad[t];
          gmax_idx = t;
        }
      } else if (!lower(t) && grad[t] >= gmax) {
        gmax = grad[t];
        gmax_idx = t;
      }
    }
    if (gmax_idx < 0) break;
    const Eigen::Index i = gmax_idx;
    const Eigen::VectorXd krow_i = kernel.row(base(i));
    for (Eigen::Index j = 0; j < l2; ++j) {
      if (sign(j) > 0) {
        if (lower(j)) continue;
        const double grad_diff = gmax + grad[j];
        gmax2 = std::max(gmax2, grad[j]);
        if (grad_diff > 0.0) {
          const double quad = qd[i] + qd[j] - 2.0 * sign(i) * q_entry(i, krow_i, j);
          const double obj = -(grad_diff * grad_diff) / (quad > 0.0 ? quad : kTau);
          if (obj <= obj_diff_min) {
            gmin_idx = j;
            obj_diff_min = obj;
          }
        }
      } else {
        if (upper(j)) continue;
        const double grad_diff = gmax - grad[j];
        gmax2 = std::max(gmax2, -grad[j]);
        if (grad_diff > 0.0) {
          const double quad = qd[i] + qd[j] + 2.0 * sign(i) * q_entry(i, krow_i, j);
          const double obj = -(grad_diff * grad_diff) / (quad > 0.0 ? quad : kTau);
          if (obj <= obj_diff_min) {
            gmin_idx = j;
            obj_diff_min = obj;
          }
        }
      }
    }
    if (gmax + gmax2 < params_.tolerance || gmin_idx < 0) break;
    const Eigen::Index j = gmin_idx;
    const Eigen::VectorXd& krow_j = kernel.row(base(j));
    const double qij = q_entry(i, krow_i, j);
    const double old_ai = alpha[i], old_aj = alpha[j];

    if (sign(i) != sign(j)) {
      double quad = qd[i] + qd[j] + 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0.0) {
        if (alpha[j] < 0.0) {
          alpha[j] = 0.0;
          alpha[i] = diff;
        }
      } else if (alpha[i] < 0.0) {
        alpha[i] = 0.0;
        alpha[j] = -diff;
      }
      if (diff > 0.0) {
        if (alpha[i] > c) {
          alpha[i] = c;
          alpha[j] = c - diff;
        }
      } else if (alpha[j] > c) {
        alpha[j] = c;
        alpha[i] = c + diff;
      }
    } else {
      double quad = qd[i] + qd[j] - 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > c) {
        if (alpha[i] > c) {
          alpha[i] = c;
          alpha[j] = sum - c;
        }
      } else if (alpha[j] < 0.0) {
        alpha[j] = 0.0;
        alpha[i] = sum;
      }
      if (sum > c) {
        if (alpha[j] > c) {
          alpha[j] = c;
          alpha[i] = sum - c;
        }
      } else if (alpha[i] < 0.0) {
        alpha[i] = 0.0;
        alpha[j] = sum;
      }
    }
    const double dai = alpha[i] - old_ai, daj = alpha[j] - old_aj;
    const double si = sign(i), sj = sign(j);
    for (Eigen::Index t = 0; t < l2; ++t)
      grad[t] += sign(t) * (si * krow_i[base(t)] * dai + sj * krow_j[base(t)] * daj);
  }
  iterations_ = iter;

  // Bias from free variables, or the midpoint of the feasible interval.
  double ub = std::numeric_limits<double>::infinity(), lb = -ub, sum_free = 0.0;
  long n_free = 0;
  for (Eigen::Index t = 0; t < l2; ++t) {
    const double yg = sign(t) * grad[t];
    if (upper(t)) {
      if (sign(t) < 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (lower(t)) {
      if (sign(t) > 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  const double rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : 0.5 * (ub + lb);
  bias_ = -rho;

  std::vector<Eigen::Index> support;
  std::vector<double> coef;
  for (Eigen::Index t = 0; t < l; ++t) {
    const double beta = alpha[t] - alpha[t + l];
    if (beta != 0.0) {
      support.push_back(t);
      coef.push_back(beta);
    }
  }
  std::vector<Eigen::Triplet<double>> trip;
  for (std::size_t s = 0; s < support.size(); ++s)
    for (SparseRows::InnerIterator it(x, support[s]); it; ++it)
      trip.emplace_back(static_cast<int>(s), static_cast<int>(it.col()), it.value());
  sv_ = SparseRows(static_cast<Eigen::Index>(support.size()), x.cols());
  sv_.setFromTriplets(trip.begin(), trip.end());
  sv_.makeCompressed();
  coef_ = Eigen::Map<Eigen::VectorXd>(coef.data(), static_cast<Eigen::Index>(coef.size()));
  sv_sq_norms_ = Eigen::VectorXd(sv_.rows());
  for (Eigen::Index s = 0; s < sv_.rows(); ++s) sv_sq_norms_[s] = sv_.row(s).squaredNorm();
  fitted_ = true;
}

Eigen::VectorXd SupportVectorRegression::predict(const SparseRows& x) const {
  if (!fitted_) throw Error(ErrorKind::NotFitted, "svr used before fit");
  if (x.cols() != sv_.cols()) throw Error(ErrorKind::LengthMismatch, "feature count differs from fit");
  Eigen::VectorXd out(x.rows());
  if (sv_.rows() == 0) {
    out.setConstant(bias_);
    return out;
  }
  const Eigen::SparseMatrix<double> xt = x.transpose();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Eigen::VectorXd dense = Eigen::VectorXd(xt.col(r));
    Eigen::VectorXd k = sv_ * dense;
    if (params_.kernel == KernelKind::rbf) {
      const double sq = dense.squaredNorm();
      k = (-gamma_ * (sv_sq_norms_.array() + sq - 2.0 * k.array()).max(0.0)).exp().matrix();
    }
    out[r] = coef_.dot(k) + bias_;
  }
  return out;
}

Json SupportVectorRegression::hyperparameters() const {
  Json j;
  j["kernel"] = params_.kernel == KernelKind::linear ? "linear" : "rbf";
  j["C"] = params_.c;
  j["epsilon"] = params_.epsilon;
  if (params_.gamma) j["gamma"] = *params_.gamma;
  else j["gamma"] = "scale";
  return j;
}

Json SupportVectorRegression::weights() const {
  return {{"support_vectors", sparse_to_json(sv_)},
          {"coefficients", vector_to_json(coef_)},
          {"gamma", gamma_},
          {"bias", bias_}};
}

void SupportVectorRegression::load_weights(const Json& j) {
  sv_ = sparse_from_json(j.at("support_vectors"));
  coef_ = vector_from_json(j.at("coefficients"));
  gamma_ = j.at("gamma").get<double>();
  bias_ = j.at("bias").get<double>();
  sv_sq_norms_ = Eigen::VectorXd(sv_.rows());
  for (Eigen::Index s = 0; s < sv_.rows(); ++s) sv_sq_norms_[s] = sv_.row(s).squaredNorm();
  fitted_ = true;
}

// ---------------------------------------------------------------------------
// RandomForest

RandomForest::RandomForest(Params params) : params_(params) {
  if (params_.n_estimators < 1)
    throw Error(ErrorKind::InvalidHyperparameter, "n_estimators must be >= 1");
  if (params_.max_depth && *params_.max_depth < 0)
    throw Error(ErrorKind::InvalidHyperparameter, "max_depth must be >= 0");
  if (!(params_.max_features > 0.0 && params_.max_features <= 1.0))
    throw Error(ErrorKind::InvalidHyperparameter, "max_features must lie in (0,1]");
  if (params_.min_samples_split < 2)
    throw Error(ErrorKind::InvalidHyperparameter, "min_samples_split must be >= 2");
}

namespace {

class TreeBuilder {
 public:
  TreeBuilder(const SparseRows& x, const Eigen::VectorXd& y, const RandomForest::Params& params,
              std::mt19937_64& rng)
      : x_(x), y_(y), params_(params), rng_(rng), buckets_(static_cast<std::size_t>(x.cols())) {
    all_features_.resize(static_cast<std::size_t>(x.cols()));
    std::iota(all_features_.begin(), all_features_.end(), 0);
    feature_allowed_.assign(static_cast<std::size_t>(x.cols()), 1);
  }

  RandomForest::Tree build(std::vector<Eigen::Index> samples) {
    RandomForest::Tree tree;
    struct Work {
      int node;
      int depth;
      std::vector<Eigen::Index> samples;
    };
    std::vector<Work> stack;
    tree.push_back({});
    stack.push_back({0, 0, std::move(samples)});
    while (!stack.empty()) {
      Work w = std::move(stack.back());
      stack.pop_back();
      double sum = 0.0, sumsq = 0.0;
      for (auto s : w.samples) {
        sum += y_[s];
        sumsq += y_[s] * y_[s];
      }
      const double n = static_cast<double>(w.samples.size());
      tree[static_cast<std::size_t>(w.node)].value = sum / n;
      const double sse = sumsq - sum * sum / n;
      const bool depth_reached = params_.max_depth && w.depth >= *params_.max_depth;
      if (depth_reached || static_cast<int>(w.samples.size()) < params_.min_samples_split ||
          sse <= 1e-12 * std::max(1.0, sumsq))
        continue;
      const auto split = best_split(w.samples, sum);
      if (split.feature < 0) continue;
      std::vector<Eigen::Index> left, right;
      for (auto s : w.samples)
        (sparse_at(x_, s, split.feature) <= split.threshold ? left : right).push_back(s);
      if (left.empty() || right.empty()) continue;
      const int li = static_cast<int>(tree.size());
      tree.push_back({});
      tree.push_back({});
      auto& node = tree[static_cast<std::size_t>(w.node)];
      node.feature = split.feature;
      node.threshold = split.threshold;
      node.left = li;
      node.right = li + 1;
      stack.push_back({li + 1, w.depth + 1, std::move(right)});
      stack.push_back({li, w.depth + 1, std::move(left)});
    }
    return tree;
  }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
  };

  struct Entry {
    double value;
    double count;
    double sum;
  };

  Split best_split(const std::vector<Eigen::Index>& samples, double total_sum) {
    const double n = static_cast<double>(samples.size());
    if (params_.max_features < 1.0) {
      const auto k = std::max<std::size_t>(
          1, static_cast<std::size_t>(params_.max_features * static_cast<double>(x_.cols())));
      std::fill(feature_allowed_.begin(), feature_allowed_.end(), 0);
      for (std::size_t i = 0; i < k && i < all_features_.size(); ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, all_features_.size() - 1);
        std::swap(all_features_[i], all_features_[pick(rng_)]);
        feature_allowed_[static_cast<std::size_t>(all_features_[i])] = 1;
      }
    }
    touched_.clear();
    for (auto s : samples) {
      for (SparseRows::InnerIterator it(x_, s); it; ++it) {
        const auto f = static_cast<std::size_t>(it.col());
        if (!feature_allowed_[f] || it.value() == 0.0) continue;
        if (buckets_[f].empty()) touched_.push_back(static_cast<int>(f));
        buckets_[f].push_back({it.value(), 1.0, y_[s]});
      }
    }
    std::sort(touched_.begin(), touched_.end());

    Split best;
    double best_score = total_sum * total_sum / n;
    best_score += 1e-12 * std::max(1.0, std::abs(best_score));
    for (int f : touched_) {
      auto& entries = buckets_[static_cast<std::size_t>(f)];
      double nz_count = 0.0, nz_sum = 0.0;
      for (const auto& e : entries) {
        nz_count += 1.0;
        nz_sum += e.sum;
      }
      if (nz_count < n) entries.push_back({0.0, n - nz_count, total_sum - nz_sum});
      std::sort(entries.begin(), entries.end(),
                [](const Entry& a, const Entry& b) { return a.value < b.value; });
      double left_n = 0.0, left_sum = 0.0;
      for (std::size_t k = 0; k + 1 < entries.size(); ++k) {
        left_n += entries[k].count;
        left_sum += entries[k].sum;
        if (entries[k].value == entries[k + 1].value) continue;
        const double right_n = n - left_n, right_sum = total_sum - left_sum;
        const double score = left_sum * left_sum / left_n + right_sum * right_sum / right_n;
        if (score > best_score) {
          best_score = score;
          best.feature = f;
          best.threshold = 0.5 * (entries[k].value + entries[k + 1].value);
        }
      }
      entries.clear();
    }
    return best;
  }

  const SparseRows& x_;
  const Eigen::VectorXd& y_;
  const RandomForest::Params& params_;
  std::mt19937_64& rng_;
  std::vector<std::vector<Entry>> buckets_;
  std::vector<int> touched_;
  std::vector<int> all_features_;
  std::vector<char> feature_allowed_;
};

}  // namespace

void RandomForest::fit(const SparseRows& x, const Eigen::VectorXd& y, std::uint64_t seed) {
  check_training(x, y);
  trees_.clear();
  std::mt19937_64 seeder(seed);
  const auto n = static_cast<std::size_t>(x.rows());
  for (int t = 0; t < params_.n_estimators; ++t) {
    std::mt19937_64 rng(seeder());
    std::vector<Eigen::Index> samples(n);
    if (params_.bootstrap) {
      std::uniform_int_distribution<Eigen::Index> pick(0, x.rows() - 1);
      for (auto& s : samples) s = pick(rng);
      std::sort(samples.begin(), samples.end());
    } else {
      std::iota(samples.begin(), samples.end(), 0);
    }
    TreeBuilder builder(x, y, params_, rng);
    trees_.push_back(builder.build(std::move(samples)));
  }
}

Eigen::VectorXd RandomForest::predict(const SparseRows& x) const {
  if (trees_.empty()) throw Error(ErrorKind::NotFitted, "random_forest used before fit");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double sum = 0.0;
    for (const auto& tree : trees_) {
      int node = 0;
      while (tree[static_cast<std::size_t>(node)].feature >= 0) {
        const auto& nd = tree[static_cast<std::size_t>(node)];
        node = sparse_at(x, r, nd.feature) <= nd.threshold ? nd.left : nd.right;
      }
      sum += tree[static_cast<std::size_t>(node)].value;
    }
    out[r] = sum / static_cast<double>(trees_.size());
  }
  return out;
}

Json RandomForest::hyperparameters() const {
  Json j;
  j["n_estimators"] = params_.n_estimators;
  if (params_.max_depth) j["max_depth"] = *params_.max_depth;
  else j["max_depth"] = nullptr;
  j["max_features"] = params_.max_features;
  j["min_samples_split"] = params_.min_samples_split;
  j["bootstrap"] = params_.bootstrap;
  return j;
}

Json RandomForest::weights() const {
  Json trees = Json::array();
  for (const auto& tree : trees_) {
    Json nodes = Json::array();
    for (const auto& nd : tree)
      nodes.push_back({nd.feature, nd.threshold, nd.left, nd.right, nd.value});
    trees.push_back(std::move(nodes));
  }
  return {{"trees", trees}};
}

void RandomForest::load_weights(const Json& j) {
  trees_.clear();
  for (const auto& nodes : j.at("trees")) {
    Tree tree;
    for (const auto& nd : nodes)
      tree.push_back({nd.at(0).get<int>(), nd.at(1).get<double>(), nd.at(2).get<int>(),
                      nd.at(3).get<int>(), nd.at(4).get<double>()});
    trees_.push_back(std::move(tree));
  }
}

}  // namespace elp
