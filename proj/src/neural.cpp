#include "elp/neural.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "elp/error.hpp"
#include "elp/text.hpp"

namespace elp {

using nn::Graph;
using nn::Matrix;
using nn::Var;

namespace {

constexpr double kInitStd = 0.02;

Matrix random_normal(Eigen::Index rows, Eigen::Index cols, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Matrix random_uniform(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

std::vector<std::string> collect_words(std::span<const ModelInput> inputs, int min_count) {
  std::map<std::string, int> counts;
  for (const auto& in : inputs)
    for (auto& tok : text::analyze(in.joined_text())) ++counts[tok];
  std::vector<std::string> words;
  for (auto& [w, c] : counts)
    if (c >= min_count) words.push_back(w);
  return words;
}

Json matrix_to_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()},
          {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Matrix matrix_from_json(const Json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw Error(ErrorKind::Format, "matrix data size does not match its shape");
  return Eigen::Map<const Matrix>(data.data(), rows, cols);
}

Json encoder_to_json(const EncoderSpec& e) {
  return {{"name", e.name},       {"layers", e.layers},
          {"hidden", e.hidden},   {"heads", e.heads},
          {"intermediate", e.intermediate}, {"max_positions", e.max_positions},
          {"min_count", e.min_count}, {"dropout", e.dropout},
          {"vocabulary", e.vocabulary}};
}

EncoderSpec encoder_from_json(const Json& j) {
  EncoderSpec e;
  e.name = j.at("name").get<std::string>();
  e.layers = j.at("layers").get<int>();
  e.hidden = j.at("hidden").get<int>();
  e.heads = j.at("heads").get<int>();
  e.intermediate = j.at("intermediate").get<int>();
  e.max_positions = j.at("max_positions").get<int>();
  e.min_count = j.at("min_count").get<int>();
  e.dropout = j.at("dropout").get<double>();
  e.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
  return e;
}

Json embedding_to_json(const EmbeddingSpec& e) {
  return {{"source", e.source},
          {"dim", e.dim},
          {"min_count", e.min_count},
          {"trainable", e.trainable},
          {"vocabulary", e.vocabulary}};
}

EmbeddingSpec embedding_from_json(const Json& j) {
  EmbeddingSpec e;
  e.source = j.at("source").get<std::string>();
  e.dim = j.at("dim").get<int>();
  e.min_count = j.at("min_count").get<int>();
  e.trainable = j.at("trainable").get<bool>();
  e.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
  return e;
}

// Reads "word v1 ... vd" lines for the requested words only.
std::unordered_map<std::string, Eigen::RowVectorXd> read_embeddings(
    const std::filesystem::path& path, const std::set<std::string>& wanted, int& dim) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::EmbeddingUnavailable, "cannot open " + path.string());
  std::unordered_map<std::string, Eigen::RowVectorXd> out;
  std::string line;
  std::size_t line_no = 0;
  int seen_dim = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    std::vector<double> values;
    double v;
    while (ss >> v) values.push_back(v);
    if (seen_dim < 0) seen_dim = static_cast<int>(values.size());
    if (static_cast<int>(values.size()) != seen_dim || seen_dim == 0)
      throw Error(ErrorKind::EmbeddingUnavailable,
                  path.string() + ":" + std::to_string(line_no) + ": inconsistent vector width");
    if (!wanted.count(word) || out.count(word)) continue;
    out.emplace(word, Eigen::Map<const Eigen::RowVectorXd>(values.data(), seen_dim));
  }
  if (seen_dim <= 0) throw Error(ErrorKind::EmbeddingUnavailable, path.string() + " has no vectors");
  dim = seen_dim;
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::InvalidConfig, what); };
  if (epochs < 1) fail("epochs must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be > 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) fail("warmup_fraction must be in [0, 1)");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (!(grad_clip > 0.0)) fail("grad_clip must be > 0");
}

Json TrainConfig::to_json() const {
  return {{"epochs", epochs},           {"learning_rate", learning_rate},
          {"batch_size", batch_size},   {"warmup_fraction", warmup_fraction},
          {"weight_decay", weight_decay}, {"grad_clip", grad_clip},
          {"adam_beta1", adam_beta1},   {"adam_beta2", adam_beta2},
          {"adam_eps", adam_eps},       {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const Json& j) {
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "epochs") c.epochs = value.get<int>();
    else if (key == "learning_rate") c.learning_rate = value.get<double>();
    else if (key == "batch_size") c.batch_size = value.get<int>();
    else if (key == "warmup_fraction") c.warmup_fraction = value.get<double>();
    else if (key == "weight_decay") c.weight_decay = value.get<double>();
    else if (key == "grad_clip") c.grad_clip = value.get<double>();
    else if (key == "adam_beta1") c.adam_beta1 = value.get<double>();
    else if (key == "adam_beta2") c.adam_beta2 = value.get<double>();
    else if (key == "adam_eps") c.adam_eps = value.get<double>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else throw Error(ErrorKind::InvalidConfig, "unknown train config key '" + key + "'");
  }
  return c;
}

long warmup_steps(const TrainConfig& config, long total_steps) {
  return static_cast<long>(std::ceil(config.warmup_fraction * static_cast<double>(total_steps) - 1e-9));
}

double scheduled_learning_rate(const TrainConfig& config, long step, long total_steps) {
  const long warm = warmup_steps(config, total_steps);
  if (step < warm) return config.learning_rate * static_cast<double>(step) / static_cast<double>(warm);
  if (total_steps <= warm) return config.learning_rate;
  const double remaining = static_cast<double>(std::max(0L, total_steps - step));
  return config.learning_rate * remaining / static_cast<double>(total_steps - warm);
}

std::string TrainReport::to_lines() const {
  std::ostringstream out;
  out.precision(8);
  for (const auto& e : epochs) {
    out << "epoch=" << e.epoch << " train_loss=" << e.train_loss;
    if (e.dev_loss) out << " dev_loss=" << *e.dev_loss;
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Shared base

std::size_t NeuralRegressor::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

std::size_t NeuralRegressor::add_param(std::string name, Matrix value, bool trainable) {
  params_.push_back({std::move(name), std::move(value), trainable});
  return params_.size() - 1;
}

void NeuralRegressor::set_label_affine(double mean, double scale) {
  label_mean_ = mean;
  label_scale_ = scale;
}

Var NeuralRegressor::apply_affine(Graph& graph, Var raw) const {
  return add(nn::scale(raw, label_scale_), graph.constant(Matrix::Constant(1, 1, label_mean_)));
}

TokenSequence NeuralRegressor::tokenize(const ModelInput& input) const {
  return tokenize_for_encoder(input, *tokenizer_, budget_);
}

double NeuralRegressor::predict_one(const ModelInput& input) const {
  const TokenSequence seq = tokenize(input);
  Graph graph(params_);
  std::mt19937_64 unused(0);
  return forward(graph, seq, false, unused).value()(0, 0);
}

Eigen::VectorXd NeuralRegressor::predict(std::span<const ModelInput> inputs) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(inputs.size()));
  for (std::size_t i = 0; i < inputs.size(); ++i)
    out(static_cast<Eigen::Index>(i)) = predict_one(inputs[i]);
  return out;
}

Json NeuralRegressor::to_json() const {
  Json params = Json::array();
  for (const auto& p : params_) {
    Json m = matrix_to_json(p.value);
    m["name"] = p.name;
    m["trainable"] = p.trainable;
    params.push_back(std::move(m));
  }
  return {{"format", "elp-checkpoint"},
          {"format_version", kModelFormatVersion},
          {"kind", kind()},
          {"setting", std::string(to_string(setting_))},
          {"config", config_json()},
          {"token_budget", budget_},
          {"label_mean", label_mean_},
          {"label_scale", label_scale_},
          {"weights_hash", weights_hash()},
          {"parameters", std::move(params)}};
}

std::string NeuralRegressor::weights_hash() const {
  std::uint64_t h = text::fnv1a("elp-weights");
  for (const auto& p : params_) {
    h = text::fnv1a(p.name, h);
    h = text::fnv1a(std::string_view(reinterpret_cast<const char*>(p.value.data()),
                                     static_cast<std::size_t>(p.value.size()) * sizeof(double)),
                    h);
  }
  return text::hex64(h);
}

// ---------------------------------------------------------------------------
// Transformer

EncoderRegressor::EncoderRegressor(InputSetting setting, EncoderSpec encoder, HeadSpec head,
                                   std::uint64_t seed)
    : encoder_(std::move(encoder)), head_(head) {
  if (encoder_.name != kTinyRandom)
    throw Error(ErrorKind::EncoderUnavailable,
                "encoder '" + encoder_.name + "' has no weights available; only '" +
                    std::string(kTinyRandom) + "' can be built");
  const auto& e = encoder_;
  if (e.layers < 1 || e.hidden < 1 || e.heads < 1 || e.hidden % e.heads != 0 || e.intermediate < 1 ||
      e.max_positions < 2 || e.dropout < 0.0 || e.dropout >= 1.0)
    throw Error(ErrorKind::InvalidHyperparameter, "invalid encoder dimensions");
  if (head_.hidden < 0 || head_.dropout < 0.0 || head_.dropout >= 1.0)
    throw Error(ErrorKind::InvalidHyperparameter, "invalid head dimensions");
  setting_ = setting;
  tokenizer_ = std::make_unique<WordTokenizer>(encoder_.vocabulary);
  budget_ = std::min<std::size_t>(kEncoderBudget, static_cast<std::size_t>(e.max_positions));

  std::mt19937_64 rng(seed);
  const Eigen::Index d = e.hidden;
  const Eigen::Index v = static_cast<Eigen::Index>(tokenizer_->vocab_size());
  tok_ = add_param("embeddings.token", random_normal(v, d, kInitStd, rng));
  pos_ = add_param("embeddings.position", random_normal(e.max_positions, d, kInitStd, rng));
  type_ = add_param("embeddings.type", random_normal(2, d, kInitStd, rng));
  emb_ln_g_ = add_param("embeddings.ln.gain", Matrix::Ones(1, d));
  emb_ln_b_ = add_param("embeddings.ln.bias", Matrix::Zero(1, d));
  for (int l = 0; l < e.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Layer L{};
    L.wq = add_param(p + "attn.wq", random_normal(d, d, kInitStd, rng));
    L.bq = add_param(p + "attn.bq", Matrix::Zero(1, d));
    L.wk = add_param(p + "attn.wk", random_normal(d, d, kInitStd, rng));
    L.bk = add_param(p + "attn.bk", Matrix::Zero(1, d));
    L.wv = add_param(p + "attn.wv", random_normal(d, d, kInitStd, rng));
    L.bv = add_param(p + "attn.bv", Matrix::Zero(1, d));
    L.wo = add_param(p + "attn.wo", random_normal(d, d, kInitStd, rng));
    L.bo = add_param(p + "attn.bo", Matrix::Zero(1, d));
    L.ln1_g = add_param(p + "ln1.gain", Matrix::Ones(1, d));
    L.ln1_b = add_param(p + "ln1.bias", Matrix::Zero(1, d));
    L.w1 = add_param(p + "ffn.w1", random_normal(d, e.intermediate, kInitStd, rng));
    L.b1 = add_param(p + "ffn.b1", Matrix::Zero(1, e.intermediate));
    L.w2 = add_param(p + "ffn.w2", random_normal(e.intermediate, d, kInitStd, rng));
    L.b2 = add_param(p + "ffn.b2", Matrix::Zero(1, d));
    L.ln2_g = add_param(p + "ln2.gain", Matrix::Ones(1, d));
    L.ln2_b = add_param(p + "ln2.bias", Matrix::Zero(1, d));
    layers_.push_back(L);
  }
  const Eigen::Index hh = head_.hidden > 0 ? head_.hidden : d;
  head_w1_ = add_param("head.w1", random_normal(d, hh, kInitStd, rng));
  head_b1_ = add_param("head.b1", Matrix::Zero(1, hh));
  head_w2_ = add_param("head.w2", random_normal(hh, 1, kInitStd, rng));
  head_b2_ = add_param("head.b2", Matrix::Zero(1, 1));
}

Var EncoderRegressor::forward(Graph& g, const TokenSequence& seq, bool train,
                              std::mt19937_64& rng) const {
  auto P = [&g](std::size_t i) { return g.parameter(i); };
  const double p_drop = train ? encoder_.dropout : 0.0;
  const auto T = static_cast<Eigen::Index>(seq.ids.size());

  std::vector<int> positions(seq.ids.size());
  std::iota(positions.begin(), positions.end(), 0);
  std::vector<int> types(seq.ids.size());
  for (std::size_t i = 0; i < types.size(); ++i) types[i] = seq.segment_of[i] <= 0 ? 0 : 1;

  Var x = gather_rows(P(tok_), seq.ids);
  x = add(x, gather_rows(P(pos_), positions));
  x = add(x, gather_rows(P(type_), types));
  x = layer_norm(x, P(emb_ln_g_), P(emb_ln_b_));
  x = dropout(x, p_drop, rng);

  const Eigen::Index d = encoder_.hidden;
  const Eigen::Index dh = d / encoder_.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const auto& L : layers_) {
    Var q = add_row(matmul(x, P(L.wq)), P(L.bq));
    Var k = add_row(matmul(x, P(L.wk)), P(L.bk));
    Var v = add_row(matmul(x, P(L.wv)), P(L.bv));
    std::vector<Var> ctx;
    for (int h = 0; h < encoder_.heads; ++h) {
      Var qh = slice_cols(q, h * dh, dh);
      Var kh = slice_cols(k, h * dh, dh);
      Var vh = slice_cols(v, h * dh, dh);
      Var att = softmax_rows(nn::scale(matmul_nt(qh, kh), inv_sqrt));
      ctx.push_back(matmul(att, vh));
    }
    Var attn = ctx.size() == 1 ? ctx[0] : concat_cols(ctx);
    attn = dropout(add_row(matmul(attn, P(L.wo)), P(L.bo)), p_drop, rng);
    x = layer_norm(add(x, attn), P(L.ln1_g), P(L.ln1_b));
    Var ff = gelu(add_row(matmul(x, P(L.w1)), P(L.b1)));
    ff = dropout(add_row(matmul(ff, P(L.w2)), P(L.b2)), p_drop, rng);
    x = layer_norm(add(x, ff), P(L.ln2_g), P(L.ln2_b));
  }
  (void)T;

  Var cls = slice_rows(x, 0, 1);
  Var h = nn::tanh(add_row(matmul(cls, P(head_w1_)), P(head_b1_)));
  h = dropout(h, train ? head_.dropout : 0.0, rng);
  Var raw = add_row(matmul(h, P(head_w2_)), P(head_b2_));
  return apply_affine(g, raw);
}

Json EncoderRegressor::config_json() const {
  return {{"encoder", encoder_to_json(encoder_)},
          {"head", {{"hidden", head_.hidden}, {"dropout", head_.dropout}}}};
}

// ---------------------------------------------------------------------------
// BiLSTM

RecurrentRegressor::RecurrentRegressor(InputSetting setting, EmbeddingSpec embedding, int layers,
                                       int hidden, std::uint64_t seed)
    : embedding_(std::move(embedding)), layers_(layers), hidden_(hidden) {
  if (layers_ < 1 || hidden_ < 1 || embedding_.dim < 1)
    throw Error(ErrorKind::InvalidHyperparameter, "invalid recurrent dimensions");
  setting_ = setting;
  std::mt19937_64 rng(seed);

  const bool random_table = embedding_.source == kTinyRandom;
  Matrix table;
  if (random_table) {
    tokenizer_ = std::make_unique<WordTokenizer>(embedding_.vocabulary);
    table = random_normal(static_cast<Eigen::Index>(tokenizer_->vocab_size()), embedding_.dim, 0.1, rng);
  } else {
    const std::set<std::string> wanted(embedding_.vocabulary.begin(), embedding_.vocabulary.end());
    int dim = 0;
    auto vectors = read_embeddings(embedding_.source, wanted, dim);
    embedding_.dim = dim;
    std::vector<std::string> kept;
    for (const auto& w : embedding_.vocabulary)
      if (vectors.count(w)) kept.push_back(w);
    embedding_.vocabulary = kept;
    auto tok = std::make_unique<WordTokenizer>(kept);
    table = Matrix::Zero(static_cast<Eigen::Index>(tok->vocab_size()), dim);
    // Specials and the shared unknown row get small random vectors.
    table.topRows(4) = random_normal(4, dim, 0.1, rng);
    table.row(0).setZero();
    const auto words = tok->vocabulary();
    for (std::size_t i = 4; i < words.size(); ++i)
      table.row(static_cast<Eigen::Index>(i)) = vectors.at(words[i]);
    tokenizer_ = std::move(tok);
  }
  table_ = add_param("embeddings.table", std::move(table), random_table || embedding_.trainable);

  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_));
  Eigen::Index in = embedding_.dim;
  for (int l = 0; l < layers_; ++l) {
    auto make = [&](const std::string& p) {
      Direction d{};
      d.w = add_param(p + ".w", random_uniform(in, 4 * hidden_, bound, rng));
      d.u = add_param(p + ".u", random_uniform(hidden_, 4 * hidden_, bound, rng));
      Matrix b = Matrix::Zero(1, 4 * hidden_);
      b.middleCols(hidden_, hidden_).setOnes();  // forget gate
      d.b = add_param(p + ".b", std::move(b));
      return d;
    };
    const std::string p = "lstm" + std::to_string(l);
    Direction fwd = make(p + ".fwd");
    Direction bwd = make(p + ".bwd");
    cells_.emplace_back(fwd, bwd);
    in = 2 * hidden_;
  }
  head_w_ = add_param("head.w", random_normal(2 * hidden_, 1, kInitStd, rng));
  head_b_ = add_param("head.b", Matrix::Zero(1, 1));
}

Var RecurrentRegressor::forward(Graph& g, const TokenSequence& seq, bool train,
                                std::mt19937_64& rng) const {
  (void)train;
  (void)rng;
  auto P = [&g](std::size_t i) { return g.parameter(i); };
  const auto T = static_cast<Eigen::Index>(seq.ids.size());
  const Eigen::Index H = hidden_;

  auto run = [&](Var x, const Direction& d, bool reverse) {
    Var xw = add_row(matmul(x, P(d.w)), P(d.b));
    Var u = P(d.u);
    Var h = g.constant(Matrix::Zero(1, H));
    Var c = g.constant(Matrix::Zero(1, H));
    std::vector<Var> outs(static_cast<std::size_t>(T));
    for (Eigen::Index s = 0; s < T; ++s) {
      const Eigen::Index t = reverse ? T - 1 - s : s;
      Var gates = add(slice_rows(xw, t, 1), matmul(h, u));
      Var i = nn::sigmoid(slice_cols(gates, 0, H));
      Var f = nn::sigmoid(slice_cols(gates, H, H));
      Var cand = nn::tanh(slice_cols(gates, 2 * H, H));
      Var o = nn::sigmoid(slice_cols(gates, 3 * H, H));
      c = add(mul(f, c), mul(i, cand));
      h = mul(o, nn::tanh(c));
      outs[static_cast<std::size_t>(t)] = h;
    }
    return concat_rows(outs);
  };

  Var x = gather_rows(P(table_), seq.ids);
  for (const auto& [fwd, bwd] : cells_) {
    const Var parts[] = {run(x, fwd, false), run(x, bwd, true)};
    x = concat_cols(parts);
  }
  Var raw = add_row(matmul(mean_rows(x), P(head_w_)), P(head_b_));
  return apply_affine(g, raw);
}

Json RecurrentRegressor::config_json() const {
  return {{"embedding", embedding_to_json(embedding_)}, {"layers", layers_}, {"hidden", hidden_}};
}

// ---------------------------------------------------------------------------
// Builders

std::unique_ptr<EncoderRegressor> build_elbert(InputSetting setting, const EncoderSpec& encoder,
                                               const HeadSpec& head, std::uint64_t seed) {
  return std::make_unique<EncoderRegressor>(setting, encoder, head, seed);
}

std::unique_ptr<RecurrentRegressor> build_bilstm(InputSetting setting,
                                                 const EmbeddingSpec& embedding, int layers,
                                                 int hidden, std::uint64_t seed) {
  return std::make_unique<RecurrentRegressor>(setting, embedding, layers, hidden, seed);
}

EncoderSpec tiny_encoder_for(std::span<const ModelInput> inputs, EncoderSpec base) {
  base.vocabulary = collect_words(inputs, base.min_count);
  return base;
}

EmbeddingSpec embedding_for(std::span<const ModelInput> inputs, EmbeddingSpec base) {
  base.vocabulary = collect_words(inputs, base.min_count);
  return base;
}

// ---------------------------------------------------------------------------
// Training

namespace {

double batch_loss(const NeuralRegressor& model, std::span<const TokenSequence> batch,
                  const Eigen::VectorXd& targets, nn::Gradients* grads, bool train,
                  std::mt19937_64& rng) {
  Graph graph(model.parameters());
  std::vector<Var> preds;
  preds.reserve(batch.size());
  for (const auto& seq : batch) preds.push_back(model.forward(graph, seq, train, rng));
  Var stacked = preds.size() == 1 ? preds[0] : concat_rows(preds);
  Var loss = mse(stacked, graph.constant(targets));
  const double value = loss.value()(0, 0);
  if (grads && std::isfinite(value)) graph.backward(loss, *grads);
  return value;
}

bool decays(const nn::Parameter& p) { return p.value.rows() > 1; }  // no biases or norms

}  // namespace

double loss_and_gradient(const NeuralRegressor& model, std::span<const TokenSequence> batch,
                         const Eigen::VectorXd& targets, nn::Gradients* grads) {
  std::mt19937_64 rng(0);
  return batch_loss(model, batch, targets, grads, false, rng);
}

TrainReport train(NeuralRegressor& model, std::span<const ModelInput> inputs,
                  const Eigen::VectorXd& labels, const TrainConfig& config,
                  std::optional<DevSet> dev) {
  config.validate();
  if (inputs.empty()) throw Error(ErrorKind::EmptyTraining, "no training inputs");
  if (static_cast<Eigen::Index>(inputs.size()) != labels.size())
    throw Error(ErrorKind::LengthMismatch, "inputs and labels differ in length");
  const auto start = std::chrono::steady_clock::now();

  const double mean = labels.mean();
  const double var = (labels.array() - mean).square().mean();
  model.set_label_affine(mean, var > 0.0 ? std::sqrt(var) : 1.0);

  std::vector<TokenSequence> seqs;
  seqs.reserve(inputs.size());
  for (const auto& in : inputs) seqs.push_back(model.tokenize(in));

  const long n = static_cast<long>(inputs.size());
  const long per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const long total = per_epoch * config.epochs;

  auto& params = model.parameters();
  nn::Gradients m = nn::zero_gradients(params);
  nn::Gradients v = nn::zero_gradients(params);
  std::mt19937_64 order_rng(config.seed);
  std::mt19937_64 dropout_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  TrainReport report;
  std::vector<long> perm(static_cast<std::size_t>(n));
  long step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(perm.begin(), perm.end(), 0L);
    std::shuffle(perm.begin(), perm.end(), order_rng);
    double loss_sum = 0.0;
    for (long b = 0; b < per_epoch; ++b, ++step) {
      const long lo = b * config.batch_size;
      const long hi = std::min(n, lo + config.batch_size);
      std::vector<TokenSequence> batch;
      Eigen::VectorXd targets(hi - lo);
      for (long i = lo; i < hi; ++i) {
        batch.push_back(seqs[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
        targets(i - lo) = labels(perm[static_cast<std::size_t>(i)]);
      }
      nn::Gradients grads = nn::zero_gradients(params);
      const double loss = batch_loss(model, batch, targets, &grads, true, dropout_rng);
      const double lr = scheduled_learning_rate(config, step, total);
      if (!std::isfinite(loss))
        throw Error(ErrorKind::NonFiniteLoss, "loss " + std::to_string(loss) + " at epoch " +
                                                   std::to_string(epoch) + " step " +
                                                   std::to_string(step) + " (lr " +
                                                   std::to_string(lr) + ")");
      loss_sum += loss * static_cast<double>(hi - lo);

      double norm_sq = 0.0;
      for (const auto& g : grads) norm_sq += g.squaredNorm();
      const double norm = std::sqrt(norm_sq);
      const double clip = norm > config.grad_clip ? config.grad_clip / norm : 1.0;

      const double t = static_cast<double>(step + 1);
      const double c1 = 1.0 - std::pow(config.adam_beta1, t);
      const double c2 = 1.0 - std::pow(config.adam_beta2, t);
      for (std::size_t p = 0; p < params.size(); ++p) {
        if (!params[p].trainable) continue;
        const Matrix g = grads[p] * clip;
        m[p] = config.adam_beta1 * m[p] + (1.0 - config.adam_beta1) * g;
        v[p] = config.adam_beta2 * v[p] + (1.0 - config.adam_beta2) * g.cwiseAbs2();
        Matrix update = (m[p] / c1).array() / ((v[p] / c2).array().sqrt() + config.adam_eps);
        if (decays(params[p])) update += config.weight_decay * params[p].value;
        params[p].value -= lr * update;
        if (!params[p].value.allFinite())
          throw Error(ErrorKind::NonFiniteLoss,
                      "parameter " + params[p].name + " became non-finite at step " + std::to_string(step));
      }
    }
    EpochLog log{epoch, loss_sum / static_cast<double>(n), std::nullopt};
    if (dev && dev->labels && !dev->inputs.empty()) {
      const Eigen::VectorXd pred = model.predict(dev->inputs);
      log.dev_loss = (pred - *dev->labels).squaredNorm() / static_cast<double>(pred.size());
    }
    report.epochs.push_back(log);
  }
  report.steps = step;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report.checkpoint = model.weights_hash();
  return report;
}

TrainReport train(NeuralRegressor& model, const Corpus& corpus, const TrainConfig& config,
                  const Corpus* dev, int max_results) {
  const auto inputs = compose_all(corpus, model.setting(), max_results);
  Eigen::VectorXd labels(static_cast<Eigen::Index>(corpus.size()));
  for (std::size_t i = 0; i < corpus.size(); ++i)
    labels(static_cast<Eigen::Index>(i)) = corpus.records()[i].engagement;
  if (!dev) return train(model, inputs, labels, config);
  const auto dev_inputs = compose_all(*dev, model.setting(), max_results);
  Eigen::VectorXd dev_labels(static_cast<Eigen::Index>(dev->size()));
  for (std::size_t i = 0; i < dev->size(); ++i)
    dev_labels(static_cast<Eigen::Index>(i)) = dev->records()[i].engagement;
  return train(model, inputs, labels, config, DevSet{dev_inputs, &dev_labels});
}

Eigen::VectorXd predict(const NeuralRegressor& model, const Corpus& corpus, int max_results) {
  const auto inputs = compose_all(corpus, model.setting(), max_results);
  return model.predict(inputs);
}

// ---------------------------------------------------------------------------
// Checkpoints

std::unique_ptr<NeuralRegressor> neural_from_json(const Json& j) {
  if (j.value("format", "") != "elp-checkpoint")
    throw Error(ErrorKind::Format, "not an elp checkpoint");
  if (j.value("format_version", 0) != kModelFormatVersion)
    throw Error(ErrorKind::Format, "unsupported checkpoint version");
  const auto setting = parse_setting(j.at("setting").get<std::string>());
  if (!setting) throw Error(ErrorKind::Format, "unknown setting in checkpoint");
  const auto kind = j.at("kind").get<std::string>();
  const Json& cfg = j.at("config");
  std::unique_ptr<NeuralRegressor> model;
  if (kind == "elbert") {
    HeadSpec head{cfg.at("head").at("hidden").get<int>(), cfg.at("head").at("dropout").get<double>()};
    model = std::make_unique<EncoderRegressor>(*setting, encoder_from_json(cfg.at("encoder")), head, 0);
  } else if (kind == "bilstm") {
    EmbeddingSpec emb = embedding_from_json(cfg.at("embedding"));
    const std::string source = emb.source;
    emb.source = std::string(kTinyRandom);
    auto rnn = std::make_unique<RecurrentRegressor>(*setting, emb, cfg.at("layers").get<int>(),
                                                    cfg.at("hidden").get<int>(), 0);
    rnn->embedding_.source = source;
    model = std::move(rnn);
  } else {
    throw Error(ErrorKind::Format, "unknown checkpoint kind '" + kind + "'");
  }
  const Json& params = j.at("parameters");
  if (params.size() != model->params_.size())
    throw Error(ErrorKind::Format, "checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = model->params_[i];
    if (params[i].at("name").get<std::string>() != p.name)
      throw Error(ErrorKind::Format, "checkpoint parameter name mismatch at " + p.name);
    Matrix value = matrix_from_json(params[i]);
    if (value.rows() != p.value.rows() || value.cols() != p.value.cols())
      throw Error(ErrorKind::Format, "checkpoint shape mismatch for " + p.name);
    p.value = std::move(value);
    p.trainable = params[i].at("trainable").get<bool>();
  }
  model->budget_ = j.at("token_budget").get<std::size_t>();
  model->set_label_affine(j.at("label_mean").get<double>(), j.at("label_scale").get<double>());
  return model;
}

void save_checkpoint(const NeuralRegressor& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << model.to_json().dump() << '\n';
}

std::unique_ptr<NeuralRegressor> load_checkpoint(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  Json j;
  try {
    j = Json::parse(data);
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Format, path.string() + ": " + e.what());
  }
  return neural_from_json(j);
}

// ---------------------------------------------------------------------------
// Predictor adapter

NeuralPredictor::NeuralPredictor(std::string kind, const Json& hp)
    : kind_(std::move(kind)), hyperparameters_(hp.is_null() ? Json::object() : hp) {
  if (kind_ != "elbert" && kind_ != "bilstm")
    throw Error(ErrorKind::InvalidHyperparameter, "unknown neural model '" + kind_ + "'");
  if (!hyperparameters_.is_object())
    throw Error(ErrorKind::InvalidHyperparameter, "hyperparameters must be an object");
  Json train_keys = Json::object();
  for (const auto& [key, value] : hyperparameters_.items()) {
    try {
      if (key == "epochs" || key == "learning_rate" || key == "batch_size" ||
          key == "warmup_fraction" || key == "weight_decay" || key == "grad_clip") {
        train_keys[key] = value;
      } else if (key == "max_tokens") {
        max_tokens_ = value.get<std::size_t>();
      } else if (kind_ == "elbert" && key == "encoder") {
        encoder_.name = value.get<std::string>();
      } else if (kind_ == "elbert" && key == "layers") {
        encoder_.layers = value.get<int>();
      } else if (kind_ == "elbert" && key == "hidden") {
        encoder_.hidden = value.get<int>();
      } else if (kind_ == "elbert" && key == "heads") {
        encoder_.heads = value.get<int>();
      } else if (kind_ == "elbert" && key == "intermediate") {
        encoder_.intermediate = value.get<int>();
      } else if (kind_ == "elbert" && key == "max_positions") {
        encoder_.max_positions = value.get<int>();
      } else if (kind_ == "elbert" && key == "dropout") {
        encoder_.dropout = value.get<double>();
      } else if (kind_ == "elbert" && key == "head_hidden") {
        head_.hidden = value.get<int>();
      } else if (kind_ == "elbert" && key == "head_dropout") {
        head_.dropout = value.get<double>();
      } else if (key == "min_count") {
        encoder_.min_count = embedding_.min_count = value.get<int>();
      } else if (kind_ == "bilstm" && key == "embedding") {
        embedding_.source = value.get<std::string>();
      } else if (kind_ == "bilstm" && key == "dim") {
        embedding_.dim = value.get<int>();
      } else if (kind_ == "bilstm" && key == "trainable_embeddings") {
        embedding_.trainable = value.get<bool>();
      } else if (kind_ == "bilstm" && key == "layers") {
        rnn_layers_ = value.get<int>();
      } else if (kind_ == "bilstm" && key == "hidden") {
        rnn_hidden_ = value.get<int>();
      } else {
        throw Error(ErrorKind::InvalidHyperparameter,
                    "unknown hyperparameter '" + key + "' for " + kind_);
      }
    } catch (const Json::exception&) {
      throw Error(ErrorKind::InvalidHyperparameter, "bad value for hyperparameter '" + key + "'");
    }
  }
  try {
    config_ = TrainConfig::from_json(train_keys);
  } catch (const Error& e) {
    throw Error(ErrorKind::InvalidHyperparameter, e.what());
  } catch (const Json::exception&) {
    throw Error(ErrorKind::InvalidHyperparameter, "bad training hyperparameter");
  }
  if (kind_ == "elbert" && encoder_.name != kTinyRandom)
    throw Error(ErrorKind::EncoderUnavailable,
                "encoder '" + encoder_.name + "' has no weights available");
  if (max_tokens_ < 2) throw Error(ErrorKind::InvalidHyperparameter, "max_tokens must be >= 2");
  if (encoder_.min_count < 1) throw Error(ErrorKind::InvalidHyperparameter, "min_count must be >= 1");
}

void NeuralPredictor::fit(std::span<const ModelInput> inputs, const Eigen::VectorXd& labels,
                          std::uint64_t seed) {
  if (inputs.empty()) throw Error(ErrorKind::EmptyTraining, "no training inputs");
  const InputSetting setting = inputs.front().setting;
  TrainConfig config = config_;
  config.seed = seed;
  std::unique_ptr<NeuralRegressor> model;
  if (kind_ == "elbert") {
    EncoderSpec spec = encoder_;
    spec.max_positions = std::min<int>(spec.max_positions, static_cast<int>(max_tokens_));
    model = build_elbert(setting, tiny_encoder_for(inputs, spec), head_, seed);
  } else {
    model = build_bilstm(setting, embedding_for(inputs, embedding_), rnn_layers_, rnn_hidden_, seed);
  }
  report_ = train(*model, inputs, labels, config);
  model_ = std::move(model);
  config_.seed = seed;
}

Eigen::VectorXd NeuralPredictor::predict(std::span<const ModelInput> inputs) const {
  if (!model_) throw Error(ErrorKind::NotFitted, kind_ + " used before fit");
  return model_->predict(inputs);
}

Json NeuralPredictor::to_json() const {
  if (!model_) throw Error(ErrorKind::NotFitted, kind_ + " saved before fit");
  return {{"format", "elp-model"},
          {"format_version", kModelFormatVersion},
          {"name", kind_},
          {"hyperparameters", hyperparameters_},
          {"vocabulary_id", text::content_hash(text::join(model_->tokenizer().vocabulary(), "\n"))},
          {"train_config", config_.to_json()},
          {"train_report", report_.to_lines()},
          {"weights", model_->to_json()}};
}

void NeuralPredictor::load(const Json& j) {
  model_ = neural_from_json(j.at("weights"));
  config_ = TrainConfig::from_json(j.at("train_config"));
}

}  // namespace elp
