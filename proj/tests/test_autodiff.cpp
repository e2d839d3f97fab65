#include <doctest.h>

#include <functional>
#include <random>

#include "elp/autodiff.hpp"

using namespace elp::nn;

namespace {

using Build = std::function<Var(Graph&, std::mt19937_64&)>;

// Reduces an op output to a scalar with fixed random weights, then compares
// the tape gradient of every parameter entry with central differences.
double worst_error(std::vector<Parameter>& params, const Build& build) {
  auto scalar = [&](Gradients* grads) {
    Graph g(params);
    std::mt19937_64 rng(1);
    Var out = build(g, rng);
    std::mt19937_64 wrng(2);
    std::normal_distribution<double> n(0, 1);
    const Matrix u = Matrix::NullaryExpr(1, out.rows(), [&] { return n(wrng); });
    const Matrix v = Matrix::NullaryExpr(out.cols(), 1, [&] { return n(wrng); });
    Var root = matmul(matmul(g.constant(u), out), g.constant(v));
    if (grads) g.backward(root, *grads);
    return root.value()(0, 0);
  };
  Gradients grads = zero_gradients(params);
  scalar(&grads);
  double worst = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p].trainable) continue;
    for (Eigen::Index i = 0; i < params[p].value.size(); ++i) {
      double& x = params[p].value.data()[i];
      const double old = x, h = 1e-6;
      x = old + h;
      const double up = scalar(nullptr);
      x = old - h;
      const double down = scalar(nullptr);
      x = old;
      const double num = (up - down) / (2 * h);
      const double an = grads[p].data()[i];
      worst = std::max(worst, std::fabs(an - num) / std::max({std::fabs(an), std::fabs(num), 1e-6}));
    }
  }
  return worst;
}

std::vector<Parameter> random_params(std::initializer_list<std::pair<int, int>> shapes,
                                     std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  std::vector<Parameter> out;
  int k = 0;
  for (auto [r, c] : shapes)
    out.push_back({"p" + std::to_string(k++), Matrix::NullaryExpr(r, c, [&] { return n(rng); })});
  return out;
}

}  // namespace

TEST_SUITE("autodiff") {
  TEST_CASE("elementwise and matrix ops") {
    auto ps = random_params({{3, 4}, {4, 2}, {3, 4}, {1, 4}});
    const std::pair<const char*, Build> cases[] = {
        {"matmul", [](Graph& g, auto&) { return matmul(g.parameter(0), g.parameter(1)); }},
        {"matmul_nt", [](Graph& g, auto&) { return matmul_nt(g.parameter(0), g.parameter(2)); }},
        {"add", [](Graph& g, auto&) { return add(g.parameter(0), g.parameter(2)); }},
        {"sub", [](Graph& g, auto&) { return sub(g.parameter(0), g.parameter(2)); }},
        {"mul", [](Graph& g, auto&) { return mul(g.parameter(0), g.parameter(2)); }},
        {"add_row", [](Graph& g, auto&) { return add_row(g.parameter(0), g.parameter(3)); }},
        {"scale", [](Graph& g, auto&) { return scale(g.parameter(0), -1.7); }},
        {"tanh", [](Graph& g, auto&) { return elp::nn::tanh(g.parameter(0)); }},
        {"sigmoid", [](Graph& g, auto&) { return sigmoid(g.parameter(0)); }},
        {"gelu", [](Graph& g, auto&) { return gelu(g.parameter(0)); }},
        {"softmax", [](Graph& g, auto&) { return softmax_rows(g.parameter(0)); }},
        {"mean_rows", [](Graph& g, auto&) { return mean_rows(g.parameter(0)); }},
        {"slice_rows", [](Graph& g, auto&) { return slice_rows(g.parameter(0), 1, 2); }},
        {"slice_cols", [](Graph& g, auto&) { return slice_cols(g.parameter(0), 1, 3); }},
    };
    for (const auto& [name, build] : cases) {
      INFO(name);
      CHECK(worst_error(ps, build) <= 1e-6);
    }
  }

  TEST_CASE("layer norm, gather and concatenation") {
    auto ps = random_params({{3, 5}, {1, 5}, {1, 5}, {6, 5}});
    CHECK(worst_error(ps, [](Graph& g, auto&) {
            return layer_norm(g.parameter(0), g.parameter(1), g.parameter(2));
          }) <= 1e-5);
    const int ids[] = {4, 0, 4, 2};
    CHECK(worst_error(ps, [&](Graph& g, auto&) { return gather_rows(g.parameter(3), ids); }) <= 1e-6);
    CHECK(worst_error(ps, [](Graph& g, auto&) {
            const Var parts[] = {g.parameter(0), elp::nn::tanh(g.parameter(0))};
            return concat_cols(parts);
          }) <= 1e-6);
    CHECK(worst_error(ps, [](Graph& g, auto&) {
            const Var parts[] = {g.parameter(1), g.parameter(0), g.parameter(2)};
            return concat_rows(parts);
          }) <= 1e-6);
  }

  TEST_CASE("mse and dropout") {
    auto ps = random_params({{1, 1}, {2, 3}});
    CHECK(worst_error(ps, [](Graph& g, auto&) {
            return mse(g.parameter(0), g.constant(Matrix::Constant(1, 1, 0.3)));
          }) <= 1e-6);
    // Same rng seed per evaluation, so the mask is fixed across probes.
    CHECK(worst_error(ps, [](Graph& g, std::mt19937_64& rng) {
            return dropout(g.parameter(1), 0.5, rng);
          }) <= 1e-6);

    Graph g(ps);
    std::mt19937_64 rng(3);
    const Matrix big = Matrix::Ones(200, 200);
    const Matrix out = dropout(g.constant(big), 0.25, rng).value();
    const double kept = (out.array() != 0).cast<double>().mean();
    CHECK(kept == doctest::Approx(0.75).epsilon(0.02));
    CHECK(((out.array() == 0) || (out.array() - 1 / 0.75).abs() < 1e-12).all());
  }

  TEST_CASE("frozen parameters receive no gradient") {
    auto ps = random_params({{2, 2}, {2, 2}});
    ps[1].trainable = false;
    Graph g(ps);
    Var root = mean_rows(matmul(g.parameter(0), g.parameter(1)));
    root = matmul(root, g.constant(Matrix::Ones(2, 1)));
    Gradients grads = zero_gradients(ps);
    g.backward(root, grads);
    CHECK(grads[1].isZero());
    CHECK_FALSE(grads[0].isZero());
  }

  TEST_CASE("softmax rows sum to one") {
    auto ps = random_params({{4, 6}});
    Graph g(ps);
    const Matrix s = softmax_rows(scale(g.parameter(0), 50)).value();
    CHECK(s.allFinite());
    for (Eigen::Index r = 0; r < 4; ++r) CHECK(s.row(r).sum() == doctest::Approx(1));
  }
}
