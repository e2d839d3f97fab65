#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "elp/grid_search.hpp"
#include "elp/metrics.hpp"
#include "elp/predictor.hpp"
#include "elp/regressors.hpp"
#include "support.hpp"

using namespace elp;

namespace {

ModelInput text_input(const std::string& t) {
  ModelInput in;
  in.segments.push_back({SegmentKind::query, {t}});
  return in;
}

std::vector<ModelInput> numbered_inputs(int n) {
  std::vector<ModelInput> v;
  for (int i = 0; i < n; ++i) v.push_back(text_input("item" + std::to_string(i)));
  return v;
}

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

SparseRows column(const Eigen::VectorXd& x) {
  SparseRows m(x.size(), 1);
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (x(i) != 0) m.insert(i, 0) = x(i);
  m.makeCompressed();
  return m;
}

// Text corpus where label = 2 * (#"good") - (#"bad") + 1 with filler words.
void planted_text(int n, std::uint64_t seed, std::vector<ModelInput>& inputs, Eigen::VectorXd& y) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> cnt(0, 3), filler(0, 19);
  inputs.clear();
  y.resize(n);
  for (int i = 0; i < n; ++i) {
    const int g = cnt(rng), b = cnt(rng);
    std::string t;
    for (int k = 0; k < g; ++k) t += "good ";
    for (int k = 0; k < b; ++k) t += "bad ";
    for (int k = 0; k < 3; ++k) t += "w" + std::to_string(filler(rng)) + " ";
    inputs.push_back(text_input(t));
    y(i) = 2.0 * g - b + 1.0;
  }
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an elp::Error");
  return ErrorKind::Io;
}

// Records which texts it was trained on and fails if asked to predict any.
class SpyPredictor final : public Predictor {
 public:
  explicit SpyPredictor(std::shared_ptr<int> violations) : violations_(std::move(violations)) {}
  std::string name() const override { return "spy"; }
  void fit(std::span<const ModelInput> inputs, const Eigen::VectorXd& labels,
           std::uint64_t) override {
    seen_.clear();
    for (const auto& in : inputs) seen_.insert(in.joined_text());
    mean_ = labels.mean();
  }
  Eigen::VectorXd predict(std::span<const ModelInput> inputs) const override {
    for (const auto& in : inputs)
      if (seen_.count(in.joined_text())) ++*violations_;
    return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(inputs.size()), mean_);
  }
  bool fitted() const override { return true; }
  Json hyperparameters() const override { return Json::object(); }
  Json to_json() const override { return Json::object(); }

 private:
  std::shared_ptr<int> violations_;
  std::set<std::string> seen_;
  double mean_ = 0;
};

}  // namespace

TEST_SUITE("predictors") {
  TEST_CASE("mean baseline") {
    MeanBaseline m;
    auto in = numbered_inputs(3);
    m.fit(in, vec({0, 0, 3}), 0);
    CHECK(m.predict(in).isConstant(1.0));

    auto one = numbered_inputs(1);
    m.fit(one, vec({5}), 0);
    CHECK(m.predict(in)(2) == 5);
    CHECK(kind_of([&] { m.fit({}, Eigen::VectorXd(), 0); }) == ErrorKind::EmptyTraining);
    CHECK(kind_of([] { MeanBaseline().predict(numbered_inputs(1)); }) == ErrorKind::NotFitted);
  }

  TEST_CASE("mean baseline scored on its training labels has zero R2") {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> lvl(0, 10);
    for (int t = 0; t < 200; ++t) {
      const int n = 2 + t % 40;
      Eigen::VectorXd y(n);
      for (int i = 0; i < n; ++i) y(i) = lvl(rng);
      if (y.isConstant(y(0))) y(0) += 1;
      auto in = numbered_inputs(n);
      MeanBaseline m;
      m.fit(in, y, 0);
      CHECK(std::fabs(regression_scores(y, m.predict(in)).r2) <= 1e-9);
    }
  }

  TEST_CASE("median baseline") {
    MedianBaseline m;
    auto in = numbered_inputs(4);
    m.fit(in, vec({1, 2, 3, 10}), 0);
    CHECK(m.predict(in).isConstant(2.5));
    auto five = numbered_inputs(10);
    m.fit(five, vec({0, 0, 0, 0, 0, 0, 0, 0, 0, 4}), 0);
    CHECK(m.value() == 0);
  }

  TEST_CASE("median minimizes MAE and mean minimizes MSE among constants") {
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<int> lvl(0, 10), len(1, 30);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int t = 0; t < 500; ++t) {
      const int n = len(rng);
      Eigen::VectorXd y(n);
      for (int i = 0; i < n; ++i) y(i) = t % 2 ? lvl(rng) : 10 * u(rng);
      auto in = numbered_inputs(n);
      MeanBaseline mean;
      MedianBaseline median;
      mean.fit(in, y, 0);
      median.fit(in, y, 0);
      const auto mae_of = [&](double c) { return (y.array() - c).abs().mean(); };
      const auto mse_of = [&](double c) { return (y.array() - c).square().mean(); };
      const double best_mae = mae_of(median.value()), best_mse = mse_of(mean.value());
      for (int k = 0; k < 20; ++k) {
        const double c = 12 * u(rng);
        CHECK(best_mae <= mae_of(c) + 1e-12);
        CHECK(best_mse <= mse_of(c) + 1e-12);
      }
      for (double d : {1e-3, -1e-3, 0.5, -0.5}) {
        CHECK(best_mae <= mae_of(median.value() + d) + 1e-12);
        CHECK(best_mse <= mse_of(mean.value() + d) + 1e-12);
      }
    }
  }

  TEST_CASE("normal baseline") {
    NormalBaseline m;
    auto in = numbered_inputs(5);
    m.fit(in, vec({4, 4, 4, 4, 4}), 1);
    CHECK(m.predict(in).isConstant(4));

    m.fit(in, vec({0, 1, 2, 3, 10}), 7);
    const auto a = m.predict(in);
    CHECK(a == m.predict(in));
    NormalBaseline other;
    other.fit(in, vec({0, 1, 2, 3, 10}), 7);
    CHECK(other.predict(in) == a);
    CHECK(m.mu() == doctest::Approx(3.2));
    CHECK(kind_of([&] { m.fit(numbered_inputs(1), vec({1}), 0); }) == ErrorKind::EmptyTraining);

    // Draws are not clipped to the label range.
    NormalBaseline wide;
    auto many = numbered_inputs(400);
    Eigen::VectorXd y(400);
    for (int i = 0; i < 400; ++i) y(i) = i % 2 ? 0 : 10;
    wide.fit(many, y, 3);
    const auto p = wide.predict(many);
    CHECK((p.array() < 0).any());
    CHECK((p.array() > 10).any());
  }

  TEST_CASE("ols recovers y = 2x exactly") {
    Eigen::VectorXd x(20), y(20);
    for (int i = 0; i < 20; ++i) x(i) = 0.1 * (i + 1), y(i) = 2 * x(i);
    LinearRegression lr;
    lr.fit(column(x), y, 0);
    CHECK(lr.coefficients()(0) == doctest::Approx(2).epsilon(1e-6));
    CHECK(std::fabs(lr.intercept()) <= 1e-6);
    CHECK(lr.normal_residual() <= 1e-8);
  }

  TEST_CASE("ols on constant labels gives the constant intercept") {
    Eigen::VectorXd x(6);
    x << 1, 0, 3, 0, 2, 5;
    LinearRegression lr;
    lr.fit(column(x), Eigen::VectorXd::Constant(6, 3.5), 0);
    CHECK(lr.intercept() == doctest::Approx(3.5));
    CHECK(std::fabs(lr.coefficients()(0)) <= 1e-9);
  }

  TEST_CASE("svr fits a line with linear kernel and epsilon 0") {
    Eigen::VectorXd x(50), y(50);
    for (int i = 0; i < 50; ++i) x(i) = i / 49.0, y(i) = x(i);
    SupportVectorRegression svr({.kernel = KernelKind::linear, .c = 1000, .epsilon = 0.0});
    svr.fit(column(x), y, 0);
    const auto p = svr.predict(column(x));
    CHECK((p - y).cwiseAbs().mean() < 0.05);
    CHECK(p.allFinite());
  }

  TEST_CASE("svr with epsilon wider than the label range is near constant") {
    Eigen::VectorXd x(40), y(40);
    for (int i = 0; i < 40; ++i) x(i) = i / 39.0, y(i) = x(i);
    SupportVectorRegression svr({.kernel = KernelKind::rbf, .c = 10, .epsilon = 5.0});
    svr.fit(column(x), y, 0);
    const auto p = svr.predict(column(x));
    CHECK(p.maxCoeff() - p.minCoeff() < 1e-9);
  }

  TEST_CASE("svr hyperparameter validation") {
    CHECK(kind_of([] { SupportVectorRegression({.c = 0}); }) == ErrorKind::InvalidHyperparameter);
    CHECK(kind_of([] { SupportVectorRegression({.epsilon = -1}); }) ==
          ErrorKind::InvalidHyperparameter);
    CHECK(kind_of([] { make_predictor("svr", {{"C", -2.0}}); }) == ErrorKind::InvalidHyperparameter);
  }

  TEST_CASE("random forest: one unbagged tree of depth 0 predicts the mean") {
    Eigen::VectorXd x(5), y(5);
    x << 1, 2, 3, 4, 5;
    y << 0, 1, 1, 2, 10;
    RandomForest rf({.n_estimators = 1, .max_depth = 0, .bootstrap = false});
    rf.fit(column(x), y, 0);
    CHECK(rf.predict(column(x)).isConstant(y.mean()));
  }

  TEST_CASE("random forest predictions stay in the label range") {
    std::vector<ModelInput> in;
    Eigen::VectorXd y;
    planted_text(120, 5, in, y);
    for (std::uint64_t seed : {0u, 1u, 2u}) {
      auto rf = make_predictor("random_forest", {{"n_estimators", 15}, {"max_depth", 6}});
      rf->fit(std::span(in).subspan(0, 80), y.head(80), seed);
      const auto p = rf->predict(in);
      CHECK(p.minCoeff() >= y.head(80).minCoeff() - 1e-12);
      CHECK(p.maxCoeff() <= y.head(80).maxCoeff() + 1e-12);
    }
    CHECK(kind_of([] { make_predictor("random_forest", {{"n_estimators", 0}}); }) ==
          ErrorKind::InvalidHyperparameter);
  }

  TEST_CASE("classical models learn the planted text signal") {
    std::vector<ModelInput> in;
    Eigen::VectorXd y;
    planted_text(300, 1, in, y);
    const auto train = std::span(in).subspan(0, 240);
    const auto test = std::span(in).subspan(240);
    for (const char* name : {"linear_regression", "svr", "random_forest"}) {
      auto p = make_predictor(name, name == std::string("svr") ? Json{{"kernel", "linear"}, {"C", 10.0}}
                                                               : Json::object());
      p->fit(train, y.head(240), 0);
      const auto s = regression_scores(y.tail(60), p->predict(test));
      INFO(name);
      CHECK(s.r2 > 0.6);
    }
  }

  TEST_CASE("predict is pure and follows input order") {
    std::vector<ModelInput> in;
    Eigen::VectorXd y;
    planted_text(60, 2, in, y);
    std::mt19937_64 rng(8);
    for (const char* name :
         {"mean", "median", "normal", "linear_regression", "svr", "random_forest"}) {
      auto p = make_predictor(name, name == std::string("random_forest") ? Json{{"n_estimators", 10}}
                                                                        : Json::object());
      p->fit(std::span(in).subspan(0, 40), y.head(40), 3);
      const auto base = p->predict(in);
      CHECK(p->predict(in) == base);
      std::vector<std::size_t> perm(in.size());
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<ModelInput> shuffled;
      for (auto i : perm) shuffled.push_back(in[i]);
      const auto out = p->predict(shuffled);
      for (std::size_t i = 0; i < perm.size(); ++i)
        CHECK(out(static_cast<Eigen::Index>(i)) == base(static_cast<Eigen::Index>(perm[i])));
    }
  }

  TEST_CASE("fitted models round trip through the container") {
    std::vector<ModelInput> in;
    Eigen::VectorXd y;
    planted_text(50, 3, in, y);
    elp::testing::TempDir dir("models");
    for (const char* name :
         {"mean", "median", "normal", "linear_regression", "svr", "random_forest"}) {
      auto p = make_predictor(name, name == std::string("random_forest") ? Json{{"n_estimators", 5}}
                                                                        : Json::object());
      p->fit(in, y, 4);
      const auto path = dir / (std::string(name) + ".json");
      save_predictor(*p, path);
      const auto back = load_predictor(path);
      CHECK(back->name() == name);
      CHECK(back->predict(in) == p->predict(in));
      const Json j = p->to_json();
      CHECK(j.at("format") == "elp-model");
      CHECK(j.at("format_version") == kModelFormatVersion);
    }
  }

  TEST_CASE("unknown model names and keys are rejected") {
    CHECK(kind_of([] { make_predictor("xgboost"); }) == ErrorKind::InvalidHyperparameter);
    CHECK(kind_of([] { make_predictor("linear_regression", {{"alpha", 1.0}}); }) ==
          ErrorKind::InvalidHyperparameter);
    CHECK(kind_of([] { make_predictor("mean", {{"x", 1}}); }) == ErrorKind::InvalidHyperparameter);
    CHECK(is_static_baseline("median"));
    CHECK(is_classical("svr"));
    CHECK(is_neural("elbert"));
  }

  TEST_CASE("grid enumeration is last-axis fastest") {
    ParamGrid g;
    g.add("a", {1, 2}).add("b", {"x", "y", "z"});
    const auto c = g.candidates();
    REQUIRE(c.size() == 6);
    CHECK(c[0] == Json{{"a", 1}, {"b", "x"}});
    CHECK(c[1] == Json{{"a", 1}, {"b", "y"}});
    CHECK(c[3] == Json{{"a", 2}, {"b", "x"}});
    CHECK(default_grid("svr").size() == 2 * 3 * 3 * 3 * 2);
    CHECK(default_grid("random_forest").size() == 2 * 3 * 2);
    CHECK(default_grid("mean").size() == 1);
  }

  TEST_CASE("fold assignment partitions with balanced sizes") {
    for (std::size_t n : {5u, 11u, 100u}) {
      const auto f = assign_folds(n, 5, 3);
      CHECK(f == assign_folds(n, 5, 3));
      std::vector<int> sizes(5, 0);
      for (int k : f) ++sizes[static_cast<std::size_t>(k)];
      CHECK(*std::max_element(sizes.begin(), sizes.end()) -
                *std::min_element(sizes.begin(), sizes.end()) <=
            1);
    }
  }

  TEST_CASE("grid of one point refits that point") {
    std::vector<ModelInput> in;
    Eigen::VectorXd y;
    planted_text(40, 4, in, y);
    ParamGrid g;
    g.add("min_df", {1});
    const auto r = grid_search_cv(factory_for("linear_regression"), g, in, y, 5);
    CHECK(r.best_index == 0);
    CHECK(r.candidates.size() == 1);
    CHECK(r.candidates[0].fold_scores.size() == 5);
    REQUIRE(r.best_model);
    CHECK(r.best_model->fitted());
    auto direct = make_predictor("linear_regression", {{"min_df", 1}});
    direct->fit(in, y, 0);
    CHECK(r.best_model->predict(in).isApprox(direct->predict(in), 1e-12));
  }

  TEST_CASE("dominant candidate wins") {
    std::vector<ModelInput> in;
    Eigen::VectorXd y;
    planted_text(100, 6, in, y);
    ParamGrid g;
    // min_df 1000 leaves an empty vocabulary, i.e. an intercept-only model.
    g.add("min_df", {1000, 1});
    const auto r = grid_search_cv(factory_for("linear_regression"), g, in, y, 5);
    CHECK(r.best_index == 1);
    CHECK(r.best_params == Json{{"min_df", 1}});
    CHECK(r.candidates[1].mean_score > r.candidates[0].mean_score);
    const auto table = r.score_table();
    CHECK(table.find("min_df") != std::string::npos);
  }

  TEST_CASE("ties go to the earliest candidate") {
    std::vector<ModelInput> in;
    Eigen::VectorXd y;
    planted_text(30, 7, in, y);
    ParamGrid g;
    g.add("min_df", {500, 600, 700});
    const auto r = grid_search_cv(factory_for("linear_regression"), g, in, y, 3);
    CHECK(r.candidates[0].mean_score == r.candidates[2].mean_score);
    CHECK(r.best_index == 0);
  }

  TEST_CASE("grid search never scores a fold on its own training data") {
    std::vector<ModelInput> in = numbered_inputs(23);
    Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(23, 0, 10);
    auto violations = std::make_shared<int>(0);
    PredictorFactory spy = [violations](const Json&) {
      return std::make_unique<SpyPredictor>(violations);
    };
    ParamGrid g;
    g.add("k", {1, 2});
    const auto r = grid_search_cv(spy, g, in, y, 4, Scoring::neg_mse, 9);
    CHECK(*violations == 0);
    CHECK(r.candidates[0].fold_scores.size() == 4);
  }

  TEST_CASE("grid search errors") {
    auto in = numbered_inputs(10);
    Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(10, 0, 9);
    ParamGrid empty_axis;
    empty_axis.add("min_df", {});
    CHECK(kind_of([&] { grid_search_cv(factory_for("linear_regression"), empty_axis, in, y); }) ==
          ErrorKind::EmptyGrid);
    CHECK(kind_of([&] {
            grid_search_cv(factory_for("linear_regression"), default_grid("linear_regression"), {},
                           Eigen::VectorXd());
          }) == ErrorKind::EmptyTraining);
  }
}
