#include <doctest.h>

#include <random>

#include "elp/experiments.hpp"
#include "elp/neural.hpp"
#include "neural_checks.hpp"
#include "support.hpp"

using namespace elp;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an elp::Error");
  return ErrorKind::Io;
}

Corpus small_corpus(std::size_t n, std::uint64_t seed = 1) {
  SyntheticSpec s;
  s.records = n;
  s.seed = seed;
  s.vocabulary_size = 40;
  return generate_synthetic(s);
}

EncoderSpec small_encoder() {
  EncoderSpec e;
  e.layers = 1;
  e.hidden = 16;
  e.heads = 2;
  e.intermediate = 32;
  e.max_positions = 64;
  return e;
}

}  // namespace

TEST_SUITE("neural") {
  TEST_CASE("encoder emits one finite scalar per input") {
    const Corpus c = small_corpus(8);
    const auto inputs = compose_all(c, InputSetting::query_pane_titles);
    auto m = build_elbert(InputSetting::query_pane_titles, tiny_encoder_for(inputs), HeadSpec{}, 0);
    const auto p = m->predict(inputs);
    CHECK(p.size() == 8);
    CHECK(p.allFinite());
    CHECK(m->predict(inputs) == p);
    CHECK(m->predict_one(inputs[3]) == p(3));
    CHECK(m->token_budget() == 512);
  }

  TEST_CASE("only the tiny-random encoder can be built") {
    EncoderSpec e;
    e.name = "bert-base-uncased";
    CHECK(kind_of([&] { build_elbert(InputSetting::query, e, HeadSpec{}); }) ==
          ErrorKind::EncoderUnavailable);
  }

  TEST_CASE("permuting a batch permutes the outputs") {
    const Corpus c = small_corpus(10);
    auto inputs = compose_all(c, InputSetting::query_pane);
    auto m = build_elbert(InputSetting::query_pane, tiny_encoder_for(inputs, small_encoder()),
                          HeadSpec{}, 2);
    const auto p = m->predict(inputs);
    std::vector<ModelInput> rev(inputs.rbegin(), inputs.rend());
    const auto q = m->predict(rev);
    for (Eigen::Index i = 0; i < 10; ++i) CHECK(q(i) == p(9 - i));
  }

  TEST_CASE("schedule endpoints") {
    TrainConfig tc;
    CHECK(warmup_steps(tc, 100) == 10);
    CHECK(scheduled_learning_rate(tc, 0, 100) == 0);
    CHECK(scheduled_learning_rate(tc, 10, 100) == doctest::Approx(5e-5).epsilon(1e-12));
    CHECK(scheduled_learning_rate(tc, 5, 100) == doctest::Approx(2.5e-5));
    CHECK(scheduled_learning_rate(tc, 55, 100) == doctest::Approx(2.5e-5));
    CHECK(scheduled_learning_rate(tc, 100, 100) == 0);
    for (long s = 1; s < 100; ++s) {
      CHECK(scheduled_learning_rate(tc, s, 100) > 0);
      CHECK(scheduled_learning_rate(tc, s, 100) <= tc.learning_rate * (1 + 1e-12));
    }
  }

  TEST_CASE("train config validation") {
    TrainConfig tc;
    CHECK_NOTHROW(tc.validate());
    tc.epochs = 0;
    CHECK(kind_of([&] { tc.validate(); }) == ErrorKind::InvalidConfig);
    tc = {};
    tc.learning_rate = 0;
    CHECK(kind_of([&] { tc.validate(); }) == ErrorKind::InvalidConfig);
    tc = {};
    tc.warmup_fraction = 1.0;
    CHECK(kind_of([&] { tc.validate(); }) == ErrorKind::InvalidConfig);
    CHECK(kind_of([] { TrainConfig::from_json({{"epoch", 3}}); }) == ErrorKind::InvalidConfig);
    TrainConfig back = TrainConfig::from_json(TrainConfig{}.to_json());
    CHECK(back.to_json() == TrainConfig{}.to_json());
  }

  TEST_CASE("one epoch over ten records at batch five takes two steps") {
    const Corpus c = small_corpus(10);
    const auto inputs = compose_all(c, InputSetting::query);
    auto m = build_elbert(InputSetting::query, tiny_encoder_for(inputs, small_encoder()),
                          HeadSpec{}, 0);
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 5;
    const auto report = train(*m, c, tc);
    CHECK(report.steps == 2);
    REQUIRE(report.epochs.size() == 1);
    CHECK(std::isfinite(report.epochs[0].train_loss));
    CHECK(report.epochs[0].train_loss >= 0);
    CHECK(report.to_lines().rfind("epoch=1 train_loss=", 0) == 0);
    for (const auto& p : m->parameters()) CHECK(p.value.allFinite());
  }

  TEST_CASE("dev loss is reported when a dev set is given") {
    const Corpus c = small_corpus(12);
    const auto inputs = compose_all(c, InputSetting::query);
    const Eigen::VectorXd y = engagement_labels(c);
    auto m = build_elbert(InputSetting::query, tiny_encoder_for(inputs, small_encoder()),
                          HeadSpec{}, 0);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 4;
    const auto report = train(*m, inputs, y, tc, DevSet{inputs, &y});
    REQUIRE(report.epochs.size() == 2);
    CHECK(report.epochs[1].dev_loss.has_value());
    CHECK(report.to_lines().find("dev_loss=") != std::string::npos);
  }

  TEST_CASE("constant labels are learned") {
    SyntheticSpec s;
    s.records = 200;
    s.noise_sigma = 0;
    s.weights = {0.0};
    s.intercept = 4.0;
    const Corpus c = generate_synthetic(s);
    const auto inputs = compose_all(c, InputSetting::query);
    const Eigen::VectorXd y = engagement_labels(c);
    REQUIRE(y.isConstant(4.0));
    auto m = build_elbert(InputSetting::query, tiny_encoder_for(inputs, small_encoder()),
                          HeadSpec{}, 0);
    TrainConfig tc;
    tc.learning_rate = 1e-3;
    train(*m, inputs, y, tc);
    const double mse = (m->predict(inputs).array() - 4.0).square().mean();
    // The variance-free reference is the squared label, 16.
    CHECK(mse < 0.1 * 16.0);
    CHECK(mse < 0.05);
  }

  TEST_CASE("empty corpus predicts nothing") {
    const Corpus c = small_corpus(4);
    const auto inputs = compose_all(c, InputSetting::query);
    auto m = build_elbert(InputSetting::query, tiny_encoder_for(inputs, small_encoder()),
                          HeadSpec{}, 0);
    CHECK(predict(*m, Corpus{}).size() == 0);
    CHECK(predict(*m, c) == predict(*m, c));
  }

  TEST_CASE("serp settings without a serp propagate MissingSerp") {
    Corpus c({elp::testing::make_record("q", 1), elp::testing::make_record("r", 2)});
    auto m = build_elbert(InputSetting::query_titles, tiny_encoder_for({}, small_encoder()),
                          HeadSpec{}, 0);
    CHECK(kind_of([&] { predict(*m, c); }) == ErrorKind::MissingSerp);
  }

  TEST_CASE("gradient check on a tiny encoder") {
    const auto r = elp::testing::encoder_gradient_check(3);
    CHECK(r.parameters <= 1000);
    CHECK(r.probes == 20);
    CHECK(r.worst_relative_error <= 1e-3);
  }

  TEST_CASE("training is deterministic per seed") {
    const Corpus c = small_corpus(20, 4);
    const auto inputs = compose_all(c, InputSetting::query_pane);
    const Eigen::VectorXd y = engagement_labels(c);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 8;
    tc.learning_rate = 1e-3;
    tc.seed = 11;
    auto run = [&] {
      auto m = build_elbert(InputSetting::query_pane, tiny_encoder_for(inputs, small_encoder()),
                            HeadSpec{}, 5);
      train(*m, inputs, y, tc);
      return m;
    };
    const auto a = run(), b = run();
    CHECK((a->predict(inputs) - b->predict(inputs)).cwiseAbs().maxCoeff() <= 1e-5);
    CHECK(a->weights_hash() == b->weights_hash());
  }

  TEST_CASE("checkpoints round trip") {
    const Corpus c = small_corpus(12, 6);
    const auto inputs = compose_all(c, InputSetting::query_pane_titles);
    const Eigen::VectorXd y = engagement_labels(c);
    auto m = build_elbert(InputSetting::query_pane_titles,
                          tiny_encoder_for(inputs, small_encoder()), HeadSpec{}, 1);
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 4;
    train(*m, inputs, y, tc);
    elp::testing::TempDir dir("ckpt");
    save_checkpoint(*m, dir / "model.json");
    const auto back = load_checkpoint(dir / "model.json");
    CHECK(back->kind() == "elbert");
    CHECK(back->setting() == InputSetting::query_pane_titles);
    CHECK(back->weights_hash() == m->weights_hash());
    CHECK(back->predict(inputs) == m->predict(inputs));
  }

  TEST_CASE("bilstm emits finite scalars and maps unknown words to one embedding") {
    const Corpus c = small_corpus(8);
    const auto inputs = compose_all(c, InputSetting::query_pane);
    EmbeddingSpec emb;
    emb.dim = 8;
    auto m = build_bilstm(InputSetting::query_pane, embedding_for(inputs, emb), 2, 6, 0);
    const auto p = m->predict(inputs);
    CHECK(p.size() == 8);
    CHECK(p.allFinite());

    ModelInput a, b;
    a.segments.push_back({SegmentKind::query, {"zzzunseen"}});
    b.segments.push_back({SegmentKind::query, {"qqqother"}});
    const auto ta = m->tokenize(a), tb = m->tokenize(b);
    CHECK(ta.ids == tb.ids);
    CHECK(m->predict_one(a) == m->predict_one(b));
    CHECK(std::isfinite(m->predict_one(a)));
  }

  TEST_CASE("bilstm loads a text embedding file") {
    elp::testing::TempDir dir("glove");
    elp::testing::write_text(dir / "vec.txt", "hello 0.1 0.2 0.3\nworld -0.1 0.0 0.5\n");
    EmbeddingSpec emb;
    emb.source = (dir / "vec.txt").string();
    emb.dim = 3;
    std::vector<ModelInput> inputs(1);
    inputs[0].segments.push_back({SegmentKind::query, {"hello world again"}});
    auto m = build_bilstm(InputSetting::query, embedding_for(inputs, emb), 1, 4, 0);
    CHECK(std::isfinite(m->predict_one(inputs[0])));

    emb.source = (dir / "missing.txt").string();
    CHECK(kind_of([&] { build_bilstm(InputSetting::query, emb, 1, 4, 0); }) ==
          ErrorKind::EmbeddingUnavailable);
  }

  TEST_CASE("bilstm gradients match finite differences") {
    const Corpus c = small_corpus(6, 2);
    const auto inputs = compose_all(c, InputSetting::query);
    EmbeddingSpec emb;
    emb.dim = 4;
    auto m = build_bilstm(InputSetting::query, embedding_for(inputs, emb), 1, 3, 0);
    const Eigen::VectorXd y = engagement_labels(c);
    m->set_label_affine(y.mean(), 2.0);
    std::mt19937_64 rng(7);
    std::normal_distribution<double> jitter(0, 0.5);
    for (auto& p : m->parameters())
      p.value += nn::Matrix::NullaryExpr(p.value.rows(), p.value.cols(), [&] { return jitter(rng); });
    std::vector<TokenSequence> seqs;
    for (const auto& in : inputs) seqs.push_back(m->tokenize(in));
    auto g = nn::zero_gradients(m->parameters());
    loss_and_gradient(*m, seqs, y, &g);
    auto& params = m->parameters();
    for (int t = 0; t < 20; ++t) {
      const std::size_t pi = rng() % params.size();
      auto& v = params[pi].value;
      const Eigen::Index e = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(v.size()));
      const double old = v.data()[e], h = 1e-5;
      v.data()[e] = old + h;
      const double up = loss_and_gradient(*m, seqs, y, nullptr);
      v.data()[e] = old - h;
      const double down = loss_and_gradient(*m, seqs, y, nullptr);
      v.data()[e] = old;
      const double num = (up - down) / (2 * h), an = g[pi].data()[e];
      INFO(params[pi].name);
      CHECK(std::fabs(an - num) / std::max({std::fabs(an), std::fabs(num), 1e-8}) <= 1e-3);
    }
  }

  TEST_CASE("divergent training stops with NonFiniteLoss") {
    const Corpus c = small_corpus(8);
    const auto inputs = compose_all(c, InputSetting::query);
    auto m = build_elbert(InputSetting::query, tiny_encoder_for(inputs, small_encoder()),
                          HeadSpec{}, 0);
    TrainConfig tc;
    tc.learning_rate = 1e300;
    tc.warmup_fraction = 0;
    tc.epochs = 5;
    tc.batch_size = 4;
    CHECK(kind_of([&] { train(*m, c, tc); }) == ErrorKind::NonFiniteLoss);
  }

  TEST_CASE("neural predictor adapter") {
    CHECK(kind_of([] { NeuralPredictor("elbert", {{"dropout_rate", 0.2}}); }) ==
          ErrorKind::InvalidHyperparameter);
    CHECK(kind_of([] { NeuralPredictor("elbert", {{"embedding", "x"}}); }) ==
          ErrorKind::InvalidHyperparameter);

    const Corpus c = small_corpus(12, 9);
    const auto inputs = compose_all(c, InputSetting::query_pane);
    const Eigen::VectorXd y = engagement_labels(c);
    for (const char* kind : {"elbert", "bilstm"}) {
      Json hp = {{"epochs", 1}, {"batch_size", 4}, {"hidden", 8}, {"layers", 1}};
      if (kind == std::string("elbert")) hp.update({{"heads", 2}, {"intermediate", 16}});
      else hp["dim"] = 6;
      auto p = make_predictor(kind, hp);
      CHECK_THROWS(p->predict(inputs));
      p->fit(inputs, y, 1);
      const auto pred = p->predict(inputs);
      CHECK(pred.allFinite());
      const auto back = predictor_from_json(p->to_json());
      CHECK(back->predict(inputs) == pred);
      CHECK(dynamic_cast<NeuralPredictor&>(*p).report().steps == 3);
    }
  }
}
