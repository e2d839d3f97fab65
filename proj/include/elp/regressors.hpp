#pragma once

#include <cstdint>
#include <list>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "elp/featurize.hpp"
#include "json.hpp"

namespace elp {

using Json = nlohmann::json;

// Regressor over sparse feature rows (tf-idf vectors).
class SparseRegressor {
 public:
  virtual ~SparseRegressor() = default;
  virtual std::string name() const = 0;
  virtual void fit(const SparseRows& x, const Eigen::VectorXd& y, std::uint64_t seed) = 0;
  virtual Eigen::VectorXd predict(const SparseRows& x) const = 0;
  virtual bool fitted() const = 0;
  virtual Json hyperparameters() const = 0;
  virtual Json weights() const = 0;
  virtual void load_weights(const Json& j) = 0;
};

// Ordinary least squares with an unpenalized intercept. Solved by CGLS on the
// implicitly centered design, which converges to the minimum-norm solution
// when the system is rank deficient.
class LinearRegression final : public SparseRegressor {
 public:
  struct Options {
    double tolerance = 1e-10;  // relative normal-equations residual
    int max_iterations = 0;    // 0: 4 * (features + 1) + 100
  };

  LinearRegression() = default;
  explicit LinearRegression(Options options) : options_(options) {}

  std::string name() const override { return "linear_regression"; }
  void fit(const SparseRows& x, const Eigen::VectorXd& y, std::uint64_t seed) override;
  Eigen::VectorXd predict(const SparseRows& x) const override;
  bool fitted() const override { return fitted_; }
  Json hyperparameters() const override { return Json::object(); }
  Json weights() const override;
  void load_weights(const Json& j) override;

  const Eigen::VectorXd& coefficients() const { return coef_; }
  double intercept() const { return intercept_; }
  // ||X_c^T (y_c - X_c w)|| at the end of the fit.
  double normal_residual() const { return normal_residual_; }
  int iterations() const { return iterations_; }

 private:
  Options options_;
  Eigen::VectorXd coef_;
  double intercept_ = 0.0;
  double normal_residual_ = 0.0;
  int iterations_ = 0;
  bool fitted_ = false;
};

enum class KernelKind { linear, rbf };

// Epsilon-insensitive support vector regression solved with SMO using
// second-order working-set selection.
class SupportVectorRegression final : public SparseRegressor {
 public:
  struct Params {
    KernelKind kernel = KernelKind::rbf;
    double c = 1.0;
    std::optional<double> gamma;  // nullopt: 1 / (features * Var(X))
    double epsilon = 0.1;
    double tolerance = 1e-3;
    double cache_mb = 200.0;
    long max_iterations = 0;  // 0: max(1e6, 100 * n)
  };

  explicit SupportVectorRegression(Params params);

  std::string name() const override { return "svr"; }
  void fit(const SparseRows& x, const Eigen::VectorXd& y, std::uint64_t seed) override;
  Eigen::VectorXd predict(const SparseRows& x) const override;
  bool fitted() const override { return fitted_; }
  Json hyperparameters() const override;
  Json weights() const override;
  void load_weights(const Json& j) override;

  double effective_gamma() const { return gamma_; }
  double bias() const { return bias_; }
  Eigen::Index support_vectors() const { return sv_.rows(); }
  long iterations() const { return iterations_; }

 private:
  Params params_;
  SparseRows sv_;
  Eigen::VectorXd coef_;
  Eigen::VectorXd sv_sq_norms_;
  double gamma_ = 0.0;
  double bias_ = 0.0;
  long iterations_ = 0;
  bool fitted_ = false;
};

// Bagged CART regression trees (variance reduction splits).
class RandomForest final : public SparseRegressor {
 public:
  struct Params {
    int n_estimators = 100;
    std::optional<int> max_depth;  // nullopt: grow until pure
    double max_features = 1.0;     // fraction of features tried per split
    int min_samples_split = 2;
    bool bootstrap = true;
  };

  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
  };

  using Tree = std::vector<Node>;

  explicit RandomForest(Params params);

  std::string name() const override { return "random_forest"; }
  void fit(const SparseRows& x, const Eigen::VectorXd& y, std::uint64_t seed) override;
  Eigen::VectorXd predict(const SparseRows& x) const override;
  bool fitted() const override { return !trees_.empty(); }
  Json hyperparameters() const override;
  Json weights() const override;
  void load_weights(const Json& j) override;

  const std::vector<Tree>& trees() const { return trees_; }

 private:
  Params params_;
  std::vector<Tree> trees_;
};

}  // namespace elp
