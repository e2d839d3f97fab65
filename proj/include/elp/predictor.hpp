#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>

#include <Eigen/Core>

#include "elp/featurize.hpp"
#include "elp/regressors.hpp"

namespace elp {

// Uniform fit/predict contract for every engagement model.
class Predictor {
 public:
  virtual ~Predictor() = default;

  virtual std::string name() const = 0;
  virtual void fit(std::span<const ModelInput> inputs, const Eigen::VectorXd& labels,
                   std::uint64_t seed) = 0;
  // Throws NotFitted before fit. Each output depends only on its own input.
  virtual Eigen::VectorXd predict(std::span<const ModelInput> inputs) const = 0;
  virtual bool fitted() const = 0;
  virtual Json hyperparameters() const = 0;
  // Versioned container: name, hyperparameters, vocabulary id and weights.
  virtual Json to_json() const = 0;
};

inline constexpr int kModelFormatVersion = 1;

class MeanBaseline final : public Predictor {
 public:
  std::string name() const override { return "mean"; }
  void fit(std::span<const ModelInput> inputs, const Eigen::VectorXd& labels,
           std::uint64_t seed) override;
  Eigen::VectorXd predict(std::span<const ModelInput> inputs) const override;
  bool fitted() const override { return fitted_; }
  Json hyperparameters() const override { return Json::object(); }
  Json to_json() const override;
  void load(const Json& j);
  double value() const { return value_; }

 private:
  double value_ = 0.0;
  bool fitted_ = false;
};

// Even counts use the mean of the two central order statistics.
class MedianBaseline final : public Predictor {
 public:
  std::string name() const override { return "median"; }
  void fit(std::span<const ModelInput> inputs, const Eigen::VectorXd& labels,
           std::uint64_t seed) override;
  Eigen::VectorXd predict(std::span<const ModelInput> inputs) const override;
  bool fitted() const override { return fitted_; }
  Json hyperparameters() const override { return Json::object(); }
  Json to_json() const override;
  void load(const Json& j);
  double value() const { return value_; }

 private:
  double value_ = 0.0;
  bool fitted_ = false;
};

// Draws from N(mu, sigma^2) of the training labels, unclipped. Each draw is
// seeded from the fit seed and the input text, so predictions are pure and
// follow their inputs under reordering.
class NormalBaseline final : public Predictor {
 public:
  std::string name() const override { return "normal"; }
  void fit(std::span<const ModelInput> inputs, const Eigen::VectorXd& labels,
           std::uint64_t seed) override;
  Eigen::VectorXd predict(std::span<const ModelInput> inputs) const override;
  bool fitted() const override { return fitted_; }
  Json hyperparameters() const override { return Json::object(); }
  Json to_json() const override;
  void load(const Json& j);
  double mu() const { return mu_; }
  double sigma() const { return sigma_; }

 private:
  double mu_ = 0.0;
  double sigma_ = 0.0;
  std::uint64_t seed_ = 0;
  bool fitted_ = false;
};

// tf-idf features of the composed input text fed to a sparse regressor. The
// vocabulary is fitted on the training inputs only.
class BowPredictor final : public Predictor {
 public:
  BowPredictor(std::unique_ptr<SparseRegressor> regressor, VocabularyOptions vocab_options);

  std::string name() const override { return regressor_->name(); }
  void fit(std::span<const ModelInput> inputs, const Eigen::VectorXd& labels,
           std::uint64_t seed) override;
  Eigen::VectorXd predict(std::span<const ModelInput> inputs) const override;
  bool fitted() const override { return fitted_; }
  Json hyperparameters() const override;
  Json to_json() const override;
  void load(const Json& j);

  const Vocabulary& vocabulary() const { return vocab_; }
  const SparseRegressor& regressor() const { return *regressor_; }

 private:
  std::unique_ptr<SparseRegressor> regressor_;
  VocabularyOptions vocab_options_;
  Vocabulary vocab_;
  bool fitted_ = false;
};

// Builds a predictor by name: mean, median, normal, linear_regression, svr,
// random_forest, elbert, bilstm. Unknown names or hyperparameter keys throw
// InvalidHyperparameter.
std::unique_ptr<Predictor> make_predictor(const std::string& name,
                                          const Json& hyperparameters = Json::object());

using PredictorFactory = std::function<std::unique_ptr<Predictor>(const Json& hyperparameters)>;
PredictorFactory factory_for(const std::string& name);

bool is_static_baseline(const std::string& name);
bool is_classical(const std::string& name);
bool is_neural(const std::string& name);

void save_predictor(const Predictor& predictor, const std::filesystem::path& path);
std::unique_ptr<Predictor> load_predictor(const std::filesystem::path& path);
std::unique_ptr<Predictor> predictor_from_json(const Json& j);

}  // namespace elp
