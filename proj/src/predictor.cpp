#include "elp/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "elp/error.hpp"
#include "elp/neural.hpp"
#include "elp/text.hpp"

namespace elp {

namespace {

void require_labels(std::span<const ModelInput> inputs, const Eigen::VectorXd& labels,
                    std::size_t minimum) {
  if (labels.size() == 0 || static_cast<std::size_t>(labels.size()) < minimum)
    throw Error(ErrorKind::EmptyTraining, "need at least " + std::to_string(minimum) +
                                              " training labels, got " +
                                              std::to_string(labels.size()));
  if (!inputs.empty() && static_cast<Eigen::Index>(inputs.size()) != labels.size())
    throw Error(ErrorKind::LengthMismatch, "inputs and labels differ in length");
}

Json container(const Predictor& p, Json weights, std::string vocabulary_id = "") {
  return {{"format", "elp-model"},
          {"format_version", kModelFormatVersion},
          {"name", p.name()},
          {"hyperparameters", p.hyperparameters()},
          {"vocabulary_id", std::move(vocabulary_id)},
          {"weights", std::move(weights)}};
}

Eigen::VectorXd constant(std::size_t n, double value) {
  return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), value);
}

}  // namespace

// ---------------------------------------------------------------------------
// Central-tendency baselines

void MeanBaseline::fit(std::span<const ModelInput> inputs, const Eigen::VectorXd& labels,
                       std::uint64_t) {
  require_labels(inputs, labels, 1);
  value_ = labels.mean();
  fitted_ = true;
}

Eigen::VectorXd MeanBaseline::predict(std::span<const ModelInput> inputs) const {
  if (!fitted_) throw Error(ErrorKind::NotFitted, "mean used before fit");
  return constant(inputs.size(), value_);
}

Json MeanBaseline::to_json() const { return container(*this, {{"value", value_}}); }

void MeanBaseline::load(const Json& j) {
  value_ = j.at("value").get<double>();
  fitted_ = true;
}

void MedianBaseline::fit(std::span<const ModelInput> inputs, const Eigen::VectorXd& labels,
                         std::uint64_t) {
  require_labels(inputs, labels, 1);
  std::vector<double> v(labels.data(), labels.data() + labels.size());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  value_ = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  fitted_ = true;
}

Eigen::VectorXd MedianBaseline::predict(std::span<const ModelInput> inputs) const {
  if (!fitted_) throw Error(ErrorKind::NotFitted, "median used before fit");
  return constant(inputs.size(), value_);
}

Json MedianBaseline::to_json() const { return container(*this, {{"value", value_}}); }

void MedianBaseline::load(const Json& j) {
  value_ = j.at("value").get<double>();
  fitted_ = true;
}

void NormalBaseline::fit(std::span<const ModelInput> inputs, const Eigen::VectorXd& labels,
                         std::uint64_t seed) {
  require_labels(inputs, labels, 2);
  mu_ = labels.mean();
  sigma_ = std::sqrt((labels.array() - mu_).square().mean());
  seed_ = seed;
  fitted_ = true;
}

Eigen::VectorXd NormalBaseline::predict(std::span<const ModelInput> inputs) const {
  if (!fitted_) throw Error(ErrorKind::NotFitted, "normal used before fit");
  Eigen::VectorXd out(static_cast<Eigen::Index>(inputs.size()));
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (sigma_ == 0.0) {
      out(static_cast<Eigen::Index>(i)) = mu_;
      continue;
    }
    std::mt19937_64 rng(text::fnv1a(inputs[i].joined_text(), seed_ ^ 0xcbf29ce484222325ULL));
    std::normal_distribution<double> dist(mu_, sigma_);
    out(static_cast<Eigen::Index>(i)) = dist(rng);
  }
  return out;
}

Json NormalBaseline::to_json() const {
  return container(*this, {{"mu", mu_}, {"sigma", sigma_}, {"seed", seed_}});
}

void NormalBaseline::load(const Json& j) {
  mu_ = j.at("mu").get<double>();
  sigma_ = j.at("sigma").get<double>();
  seed_ = j.at("seed").get<std::uint64_t>();
  fitted_ = true;
}

// ---------------------------------------------------------------------------
// Bag-of-words regressors

BowPredictor::BowPredictor(std::unique_ptr<SparseRegressor> regressor, VocabularyOptions vocab_options)
    : regressor_(std::move(regressor)), vocab_options_(vocab_options) {}

void BowPredictor::fit(std::span<const ModelInput> inputs, const Eigen::VectorXd& labels,
                       std::uint64_t seed) {
  if (inputs.empty()) throw Error(ErrorKind::EmptyTraining, "no training inputs");
  require_labels(inputs, labels, 1);
  vocab_ = fit_vocabulary(inputs, vocab_options_);
  regressor_->fit(bow_matrix(inputs, vocab_), labels, seed);
  fitted_ = true;
}

Eigen::VectorXd BowPredictor::predict(std::span<const ModelInput> inputs) const {
  if (!fitted_) throw Error(ErrorKind::NotFitted, name() + " used before fit");
  if (inputs.empty()) return {};
  return regressor_->predict(bow_matrix(inputs, vocab_));
}

Json BowPredictor::hyperparameters() const {
  Json j = regressor_->hyperparameters();
  j["min_df"] = vocab_options_.min_df;
  if (vocab_options_.max_features) j["vocab_max_features"] = *vocab_options_.max_features;
  else j["vocab_max_features"] = nullptr;
  j["lowercase"] = vocab_options_.lowercase;
  return j;
}

Json BowPredictor::to_json() const {
  if (!fitted_) throw Error(ErrorKind::NotFitted, name() + " saved before fit");
  Json w = {{"vocabulary", vocab_.to_text()}, {"regressor", regressor_->weights()}};
  return container(*this, std::move(w), vocab_.id());
}

void BowPredictor::load(const Json& j) {
  vocab_ = Vocabulary::from_text(j.at("vocabulary").get<std::string>());
  regressor_->load_weights(j.at("regressor"));
  fitted_ = true;
}

// ---------------------------------------------------------------------------
// Factory

namespace {

[[noreturn]] void bad(const std::string& what) { throw Error(ErrorKind::InvalidHyperparameter, what); }

void check_keys(const std::string& model, const Json& hp, const std::set<std::string>& allowed) {
  if (!hp.is_object()) bad("hyperparameters for " + model + " must be an object");
  for (const auto& [key, value] : hp.items())
    if (!allowed.count(key)) bad("unknown hyperparameter '" + key + "' for " + model);
}

VocabularyOptions vocab_options(const Json& hp) {
  VocabularyOptions o;
  if (hp.contains("min_df")) {
    o.min_df = hp["min_df"].get<int>();
    if (o.min_df < 1) bad("min_df must be >= 1");
  }
  if (hp.contains("vocab_max_features") && !hp["vocab_max_features"].is_null()) {
    const auto v = hp["vocab_max_features"].get<long>();
    if (v < 1) bad("vocab_max_features must be >= 1");
    o.max_features = static_cast<std::size_t>(v);
  }
  if (hp.contains("lowercase")) o.lowercase = hp["lowercase"].get<bool>();
  return o;
}

const std::set<std::string> kVocabKeys = {"min_df", "vocab_max_features", "lowercase"};

std::set<std::string> with_vocab(std::set<std::string> keys) {
  keys.insert(kVocabKeys.begin(), kVocabKeys.end());
  return keys;
}

std::unique_ptr<Predictor> make_classical(const std::string& name, const Json& hp) {
  if (name == "linear_regression") {
    check_keys(name, hp, with_vocab({"tolerance"}));
    LinearRegression::Options o;
    if (hp.contains("tolerance")) o.tolerance = hp["tolerance"].get<double>();
    return std::make_unique<BowPredictor>(std::make_unique<LinearRegression>(o), vocab_options(hp));
  }
  if (name == "svr") {
    check_keys(name, hp, with_vocab({"kernel", "C", "gamma", "epsilon", "tolerance", "cache_mb"}));
    SupportVectorRegression::Params p;
    if (hp.contains("kernel")) {
      const auto k = hp["kernel"].get<std::string>();
      if (k == "linear") p.kernel = KernelKind::linear;
      else if (k == "rbf") p.kernel = KernelKind::rbf;
      else bad("unknown kernel '" + k + "'");
    }
    if (hp.contains("C")) p.c = hp["C"].get<double>();
    if (hp.contains("epsilon")) p.epsilon = hp["epsilon"].get<double>();
    if (hp.contains("tolerance")) p.tolerance = hp["tolerance"].get<double>();
    if (hp.contains("cache_mb")) p.cache_mb = hp["cache_mb"].get<double>();
    if (hp.contains("gamma")) {
      const Json& g = hp["gamma"];
      if (g.is_string()) {
        if (g.get<std::string>() != "scale") bad("gamma must be a number or \"scale\"");
      } else {
        p.gamma = g.get<double>();
      }
    }
    return std::make_unique<BowPredictor>(std::make_unique<SupportVectorRegression>(p),
                                          vocab_options(hp));
  }
  if (name == "random_forest") {
    check_keys(name, hp,
               with_vocab({"n_estimators", "max_depth", "max_features", "min_samples_split", "bootstrap"}));
    RandomForest::Params p;
    if (hp.contains("n_estimators")) p.n_estimators = hp["n_estimators"].get<int>();
    if (hp.contains("max_depth") && !hp["max_depth"].is_null()) p.max_depth = hp["max_depth"].get<int>();
    if (hp.contains("max_features")) p.max_features = hp["max_features"].get<double>();
    if (hp.contains("min_samples_split")) p.min_samples_split = hp["min_samples_split"].get<int>();
    if (hp.contains("bootstrap")) p.bootstrap = hp["bootstrap"].get<bool>();
    return std::make_unique<BowPredictor>(std::make_unique<RandomForest>(p), vocab_options(hp));
  }
  bad("unknown model '" + name + "'");
}

}  // namespace

bool is_static_baseline(const std::string& name) {
  return name == "mean" || name == "median" || name == "normal";
}

bool is_classical(const std::string& name) {
  return name == "linear_regression" || name == "svr" || name == "random_forest";
}

bool is_neural(const std::string& name) { return name == "elbert" || name == "bilstm"; }

std::unique_ptr<Predictor> make_predictor(const std::string& name, const Json& hyperparameters) {
  const Json hp = hyperparameters.is_null() ? Json::object() : hyperparameters;
  try {
    if (is_static_baseline(name)) {
      check_keys(name, hp, {});
      if (name == "mean") return std::make_unique<MeanBaseline>();
      if (name == "median") return std::make_unique<MedianBaseline>();
      return std::make_unique<NormalBaseline>();
    }
    if (is_classical(name)) return make_classical(name, hp);
    if (is_neural(name)) return std::make_unique<NeuralPredictor>(name, hp);
  } catch (const Json::exception& e) {
    bad("bad hyperparameter value for " + name + ": " + e.what());
  }
  bad("unknown model '" + name + "'");
}

PredictorFactory factory_for(const std::string& name) {
  if (!is_static_baseline(name) && !is_classical(name) && !is_neural(name))
    bad("unknown model '" + name + "'");
  return [name](const Json& hp) { return make_predictor(name, hp); };
}

std::unique_ptr<Predictor> predictor_from_json(const Json& j) {
  if (j.value("format", "") != "elp-model") throw Error(ErrorKind::Format, "not an elp model container");
  if (j.value("format_version", 0) != kModelFormatVersion)
    throw Error(ErrorKind::Format, "unsupported model container version");
  try {
    const auto name = j.at("name").get<std::string>();
    auto p = make_predictor(name, j.at("hyperparameters"));
    const Json& w = j.at("weights");
    if (auto* m = dynamic_cast<MeanBaseline*>(p.get())) m->load(w);
    else if (auto* m = dynamic_cast<MedianBaseline*>(p.get())) m->load(w);
    else if (auto* m = dynamic_cast<NormalBaseline*>(p.get())) m->load(w);
    else if (auto* m = dynamic_cast<BowPredictor*>(p.get())) m->load(w);
    else if (auto* m = dynamic_cast<NeuralPredictor*>(p.get())) m->load(j);
    return p;
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Format, std::string("malformed model container: ") + e.what());
  }
}

void save_predictor(const Predictor& predictor, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << predictor.to_json().dump() << '\n';
}

std::unique_ptr<Predictor> load_predictor(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  Json j;
  try {
    j = Json::parse(data);
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Format, path.string() + ": " + e.what());
  }
  return predictor_from_json(j);
}

}  // namespace elp
