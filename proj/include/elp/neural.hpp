#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "elp/autodiff.hpp"
#include "elp/corpus.hpp"
#include "elp/featurize.hpp"
#include "elp/predictor.hpp"
#include "elp/regressors.hpp"

namespace elp {

inline constexpr std::string_view kTinyRandom = "tiny-random";

// Only the tiny-random profile can be built; other names throw
// EncoderUnavailable. The vocabulary comes from the training corpus.
struct EncoderSpec {
  std::string name{kTinyRandom};
  int layers = 2;
  int hidden = 64;
  int heads = 2;
  int intermediate = 256;
  int max_positions = 512;
  int min_count = 1;
  double dropout = 0.1;
  std::vector<std::string> vocabulary;  // without the four special tokens
};

struct HeadSpec {
  int hidden = 0;  // 0: encoder hidden size
  double dropout = 0.1;
};

// source is "tiny-random" or a GloVe-style text file (word then values).
struct EmbeddingSpec {
  std::string source{kTinyRandom};
  int dim = 50;
  int min_count = 1;
  bool trainable = false;  // tiny-random tables are always trained
  std::vector<std::string> vocabulary;
};

struct TrainConfig {
  int epochs = 4;
  double learning_rate = 5e-5;
  int batch_size = 32;
  double warmup_fraction = 0.1;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  // Throws InvalidConfig.
  void validate() const;
  Json to_json() const;
  static TrainConfig from_json(const Json& j);
};

long warmup_steps(const TrainConfig& config, long total_steps);
// Linear warmup from 0, then linear decay to 0 at total_steps.
double scheduled_learning_rate(const TrainConfig& config, long step, long total_steps);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> dev_loss;
};

struct TrainReport {
  std::vector<EpochLog> epochs;
  long steps = 0;
  double wall_seconds = 0.0;
  std::string checkpoint;

  // One "epoch=<i> train_loss=<x> [dev_loss=<y>]" line per epoch.
  std::string to_lines() const;
};

// Shared base of the transformer and recurrent regressors. Predictions are
// mean + scale * raw, where the affine is fixed from the training labels at
// the start of training.
class NeuralRegressor {
 public:
  virtual ~NeuralRegressor() = default;

  virtual std::string kind() const = 0;
  InputSetting setting() const { return setting_; }

  std::vector<nn::Parameter>& parameters() { return params_; }
  const std::vector<nn::Parameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  const EncoderTokenizer& tokenizer() const { return *tokenizer_; }
  std::size_t token_budget() const { return budget_; }
  TokenSequence tokenize(const ModelInput& input) const;

  // One 1x1 output per sequence; train enables dropout.
  virtual nn::Var forward(nn::Graph& graph, const TokenSequence& seq, bool train,
                          std::mt19937_64& rng) const = 0;

  Eigen::VectorXd predict(std::span<const ModelInput> inputs) const;
  double predict_one(const ModelInput& input) const;

  double label_mean() const { return label_mean_; }
  double label_scale() const { return label_scale_; }
  void set_label_affine(double mean, double scale);

  virtual Json config_json() const = 0;
  // Checkpoint container: kind, encoder config and hash, weights, setting.
  Json to_json() const;
  std::string weights_hash() const;

 protected:
  InputSetting setting_ = InputSetting::query;
  std::vector<nn::Parameter> params_;
  std::unique_ptr<EncoderTokenizer> tokenizer_;
  std::size_t budget_ = kEncoderBudget;
  double label_mean_ = 0.0;
  double label_scale_ = 1.0;

  std::size_t add_param(std::string name, nn::Matrix value, bool trainable = true);
  nn::Var apply_affine(nn::Graph& graph, nn::Var raw) const;

  friend std::unique_ptr<NeuralRegressor> neural_from_json(const Json& j);
};

// BERT-style post-norm transformer over [CLS] seg [SEP] ... sequences with a
// linear, tanh, dropout, linear head on the classification position.
class EncoderRegressor final : public NeuralRegressor {
 public:
  EncoderRegressor(InputSetting setting, EncoderSpec encoder, HeadSpec head, std::uint64_t seed);

  std::string kind() const override { return "elbert"; }
  nn::Var forward(nn::Graph& graph, const TokenSequence& seq, bool train,
                  std::mt19937_64& rng) const override;
  Json config_json() const override;

  const EncoderSpec& encoder_spec() const { return encoder_; }
  const HeadSpec& head_spec() const { return head_; }

 private:
  EncoderSpec encoder_;
  HeadSpec head_;
  struct Layer {
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo, ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b;
  };
  std::size_t tok_, pos_, type_, emb_ln_g_, emb_ln_b_;
  std::vector<Layer> layers_;
  std::size_t head_w1_, head_b1_, head_w2_, head_b2_;

  friend std::unique_ptr<NeuralRegressor> neural_from_json(const Json& j);
};

// Multi-layer bidirectional LSTM, mean pooled, with a linear head.
class RecurrentRegressor final : public NeuralRegressor {
 public:
  RecurrentRegressor(InputSetting setting, EmbeddingSpec embedding, int layers, int hidden,
                     std::uint64_t seed);

  std::string kind() const override { return "bilstm"; }
  nn::Var forward(nn::Graph& graph, const TokenSequence& seq, bool train,
                  std::mt19937_64& rng) const override;
  Json config_json() const override;

  int layers() const { return layers_; }
  int hidden() const { return hidden_; }

 private:
  EmbeddingSpec embedding_;
  int layers_;
  int hidden_;
  struct Direction {
    std::size_t w, u, b;
  };
  std::size_t table_;
  std::vector<std::pair<Direction, Direction>> cells_;
  std::size_t head_w_, head_b_;

  friend std::unique_ptr<NeuralRegressor> neural_from_json(const Json& j);
};

// Throws EncoderUnavailable unless the spec names the tiny-random profile.
std::unique_ptr<EncoderRegressor> build_elbert(InputSetting setting, const EncoderSpec& encoder,
                                               const HeadSpec& head, std::uint64_t seed = 0);
// Throws EmbeddingUnavailable when the embedding file cannot be read.
std::unique_ptr<RecurrentRegressor> build_bilstm(InputSetting setting,
                                                 const EmbeddingSpec& embedding, int layers,
                                                 int hidden, std::uint64_t seed = 0);

// Fills the spec vocabulary from the given inputs.
EncoderSpec tiny_encoder_for(std::span<const ModelInput> inputs, EncoderSpec base = {});
EmbeddingSpec embedding_for(std::span<const ModelInput> inputs, EmbeddingSpec base = {});

std::unique_ptr<NeuralRegressor> neural_from_json(const Json& j);

struct DevSet {
  std::span<const ModelInput> inputs;
  const Eigen::VectorXd* labels = nullptr;
};

// epochs * ceil(N / batch) AdamW steps with clipping and the warmup/decay
// schedule. Throws NonFiniteLoss on a non-finite batch loss.
TrainReport train(NeuralRegressor& model, std::span<const ModelInput> inputs,
                  const Eigen::VectorXd& labels, const TrainConfig& config,
                  std::optional<DevSet> dev = std::nullopt);
TrainReport train(NeuralRegressor& model, const Corpus& corpus, const TrainConfig& config,
                  const Corpus* dev = nullptr, int max_results = 10);

Eigen::VectorXd predict(const NeuralRegressor& model, const Corpus& corpus, int max_results = 10);

// Batch MSE loss and its analytic gradient (dropout off).
double loss_and_gradient(const NeuralRegressor& model, std::span<const TokenSequence> batch,
                         const Eigen::VectorXd& targets, nn::Gradients* grads);

std::unique_ptr<NeuralRegressor> neural_from_json(const Json& j);
void save_checkpoint(const NeuralRegressor& model, const std::filesystem::path& path);
std::unique_ptr<NeuralRegressor> load_checkpoint(const std::filesystem::path& path);

// Predictor adapter: fit builds the model from the training inputs (tokenizer
// vocabulary included) and trains it with the fit seed.
class NeuralPredictor final : public Predictor {
 public:
  // kind is "elbert" or "bilstm". Unknown keys throw InvalidHyperparameter.
  NeuralPredictor(std::string kind, const Json& hyperparameters);

  std::string name() const override { return kind_; }
  void fit(std::span<const ModelInput> inputs, const Eigen::VectorXd& labels,
           std::uint64_t seed) override;
  Eigen::VectorXd predict(std::span<const ModelInput> inputs) const override;
  bool fitted() const override { return model_ != nullptr; }
  Json hyperparameters() const override { return hyperparameters_; }
  Json to_json() const override;
  void load(const Json& j);

  const NeuralRegressor* model() const { return model_.get(); }
  const TrainReport& report() const { return report_; }
  const TrainConfig& train_config() const { return config_; }

 private:
  std::string kind_;
  Json hyperparameters_;
  EncoderSpec encoder_;
  HeadSpec head_;
  EmbeddingSpec embedding_;
  int rnn_layers_ = 2;
  int rnn_hidden_ = 64;
  std::size_t max_tokens_ = kEncoderBudget;
  TrainConfig config_;
  std::unique_ptr<NeuralRegressor> model_;
  TrainReport report_;
};

}  // namespace elp
