#include "elp/autodiff.hpp"

#include <cassert>
#include <cmath>

#include "elp/error.hpp"

namespace elp::nn {

Gradients zero_gradients(std::span<const Parameter> params) {
  Gradients g;
  g.reserve(params.size());
  for (const auto& p : params) g.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  return g;
}

const Matrix& Var::value() const { return graph->value(id); }

Var Graph::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::parameter(std::size_t index) {
  Node n;
  n.param = static_cast<int>(index);
  n.needs_grad = params_[index].trainable;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

const Matrix& Graph::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.param >= 0 ? params_[static_cast<std::size_t>(n.param)].value : n.value;
}

Var Graph::record(Matrix value, std::vector<std::size_t> parents, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (auto p : parents) n.needs_grad = n.needs_grad || nodes_[p].needs_grad;
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Matrix& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.param >= 0) return (*grads_)[static_cast<std::size_t>(n.param)];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Graph::accumulate(std::size_t id, const Matrix& g) {
  if (!nodes_[id].needs_grad) return;
  grad_buffer(id) += g;
}

void Graph::backward(Var root, Gradients& grads, double scale) {
  assert(root.graph == this);
  if (value(root.id).size() != 1) throw Error(ErrorKind::LengthMismatch, "backward needs a scalar root");
  grads_ = &grads;
  nodes_[root.id].grad = Matrix::Constant(1, 1, scale);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.param >= 0 || !n.backward || n.grad.size() == 0) continue;
    const Matrix g = std::move(n.grad);
    n.backward(*this, g);
  }
  grads_ = nullptr;
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Graph& g = *a.graph;
  return g.record(a.value() * b.value(), {a.id, b.id}, [a, b](Graph& gr, const Matrix& go) {
    gr.accumulate_with(a.id, [&](Matrix& ga) { ga.noalias() += go * b.value().transpose(); });
    gr.accumulate_with(b.id, [&](Matrix& gb) { gb.noalias() += a.value().transpose() * go; });
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = *a.graph;
  return g.record(a.value() * b.value().transpose(), {a.id, b.id},
                  [a, b](Graph& gr, const Matrix& go) {
                    gr.accumulate_with(a.id, [&](Matrix& ga) { ga.noalias() += go * b.value(); });
                    gr.accumulate_with(b.id,
                                       [&](Matrix& gb) { gb.noalias() += go.transpose() * a.value(); });
                  });
}

Var add(Var a, Var b) {
  return a.graph->record(a.value() + b.value(), {a.id, b.id}, [a, b](Graph& gr, const Matrix& go) {
    gr.accumulate(a.id, go);
    gr.accumulate(b.id, go);
  });
}

Var add_row(Var a, Var row) {
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return a.graph->record(std::move(out), {a.id, row.id}, [a, row](Graph& gr, const Matrix& go) {
    gr.accumulate(a.id, go);
    gr.accumulate(row.id, go.colwise().sum());
  });
}

Var sub(Var a, Var b) {
  return a.graph->record(a.value() - b.value(), {a.id, b.id}, [a, b](Graph& gr, const Matrix& go) {
    gr.accumulate(a.id, go);
    gr.accumulate(b.id, -go);
  });
}

Var mul(Var a, Var b) {
  return a.graph->record(a.value().cwiseProduct(b.value()), {a.id, b.id},
                         [a, b](Graph& gr, const Matrix& go) {
                           gr.accumulate(a.id, go.cwiseProduct(b.value()));
                           gr.accumulate(b.id, go.cwiseProduct(a.value()));
                         });
}

Var scale(Var a, double s) {
  return a.graph->record(a.value() * s, {a.id},
                         [a, s](Graph& gr, const Matrix& go) { gr.accumulate(a.id, go * s); });
}

Var tanh(Var a) {
  Matrix out = a.value().array().tanh().matrix();
  return a.graph->record(out, {a.id}, [a, out](Graph& gr, const Matrix& go) {
    gr.accumulate(a.id, (go.array() * (1.0 - out.array().square())).matrix());
  });
}

Var sigmoid(Var a) {
  Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return a.graph->record(out, {a.id}, [a, out](Graph& gr, const Matrix& go) {
    gr.accumulate(a.id, (go.array() * out.array() * (1.0 - out.array())).matrix());
  });
}

namespace {
constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC = 0.044715;
}  // namespace

Var gelu(Var a) {
  constexpr double k = kGeluK;
  constexpr double c = kGeluC;
  const auto& x = a.value().array();
  const Eigen::ArrayXXd inner = k * (x + c * x.cube());
  const Eigen::ArrayXXd th = inner.tanh();
  Matrix out = (0.5 * x * (1.0 + th)).matrix();
  return a.graph->record(std::move(out), {a.id}, [a, th](Graph& gr, const Matrix& go) {
    const auto& xv = a.value().array();
    const Eigen::ArrayXXd dinner = kGeluK * (1.0 + 3.0 * kGeluC * xv.square());
    const Eigen::ArrayXXd d = 0.5 * (1.0 + th) + 0.5 * xv * (1.0 - th.square()) * dinner;
    gr.accumulate(a.id, (go.array() * d).matrix());
  });
}

Var softmax_rows(Var a) {
  Matrix out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double m = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return a.graph->record(out, {a.id}, [a, out](Graph& gr, const Matrix& go) {
    // dx = y * (g - sum(g * y)) per row
    const Eigen::VectorXd dots = go.cwiseProduct(out).rowwise().sum();
    Matrix dx = out.cwiseProduct(go);
    dx -= out.cwiseProduct(dots.replicate(1, out.cols()));
    gr.accumulate(a.id, dx);
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Matrix& xv = x.value();
  const Eigen::Index d = xv.cols();
  const Eigen::VectorXd mean = xv.rowwise().mean();
  const Matrix centered = xv.colwise() - mean;
  const Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<double>(d)) + eps).rsqrt().matrix();
  const Matrix xhat = centered.array().colwise() * inv_std.array();
  Matrix out = xhat.array().rowwise() * gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  return x.graph->record(std::move(out), {x.id, gain.id, bias.id},
                         [x, gain, bias, xhat, inv_std, d](Graph& gr, const Matrix& go) {
                           gr.accumulate(gain.id, go.cwiseProduct(xhat).colwise().sum());
                           gr.accumulate(bias.id, go.colwise().sum());
                           const Matrix gxhat = go.array().rowwise() * gain.value().row(0).array();
                           const Eigen::VectorXd m1 = gxhat.rowwise().mean();
                           const Eigen::VectorXd m2 = gxhat.cwiseProduct(xhat).rowwise().mean();
                           Matrix dx = gxhat.colwise() - m1;
                           dx -= (xhat.array().colwise() * m2.array()).matrix();
                           dx = (dx.array().colwise() * inv_std.array()).matrix();
                           gr.accumulate(x.id, dx);
                           (void)d;
                         });
}

Var gather_rows(Var table, std::span<const int> ids) {
  const Matrix& t = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), t.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = t.row(ids[i]);
  std::vector<int> idx(ids.begin(), ids.end());
  return table.graph->record(std::move(out), {table.id},
                             [table, idx = std::move(idx)](Graph& gr, const Matrix& go) {
                               gr.accumulate_with(table.id, [&](Matrix& gt) {
                                 for (std::size_t i = 0; i < idx.size(); ++i)
                                   gt.row(idx[i]) += go.row(static_cast<Eigen::Index>(i));
                               });
                             });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  Matrix out = a.value().middleRows(start, count);
  return a.graph->record(std::move(out), {a.id}, [a, start, count](Graph& gr, const Matrix& go) {
    gr.accumulate_with(a.id, [&](Matrix& ga) { ga.middleRows(start, count) += go; });
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  Matrix out = a.value().middleCols(start, count);
  return a.graph->record(std::move(out), {a.id}, [a, start, count](Graph& gr, const Matrix& go) {
    gr.accumulate_with(a.id, [&](Matrix& ga) { ga.middleCols(start, count) += go; });
  });
}

Var concat_cols(std::span<const Var> parts) {
  Eigen::Index cols = 0;
  for (auto p : parts) cols += p.cols();
  Matrix out(parts[0].rows(), cols);
  std::vector<std::size_t> ids;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> ranges;
  Eigen::Index at = 0;
  for (auto p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    ids.push_back(p.id);
    ranges.emplace_back(at, p.cols());
    at += p.cols();
  }
  return parts[0].graph->record(std::move(out), ids, [ids, ranges](Graph& gr, const Matrix& go) {
    for (std::size_t i = 0; i < ids.size(); ++i)
      gr.accumulate(ids[i], go.middleCols(ranges[i].first, ranges[i].second));
  });
}

Var concat_rows(std::span<const Var> parts) {
  Eigen::Index rows = 0;
  for (auto p : parts) rows += p.rows();
  Matrix out(rows, parts[0].cols());
  std::vector<std::size_t> ids;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> ranges;
  Eigen::Index at = 0;
  for (auto p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    ids.push_back(p.id);
    ranges.emplace_back(at, p.rows());
    at += p.rows();
  }
  return parts[0].graph->record(std::move(out), ids, [ids, ranges](Graph& gr, const Matrix& go) {
    for (std::size_t i = 0; i < ids.size(); ++i)
      gr.accumulate(ids[i], go.middleRows(ranges[i].first, ranges[i].second));
  });
}

Var mean_rows(Var a) {
  const double n = static_cast<double>(a.rows());
  Matrix out = a.value().colwise().mean();
  return a.graph->record(std::move(out), {a.id}, [a, n](Graph& gr, const Matrix& go) {
    gr.accumulate(a.id, go.replicate(a.rows(), 1) / n);
  });
}

Var dropout(Var a, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return a;
  std::bernoulli_distribution keep(1.0 - rate);
  Matrix mask(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
  return a.graph->record(a.value().cwiseProduct(mask), {a.id}, [a, mask](Graph& gr, const Matrix& go) {
    gr.accumulate(a.id, go.cwiseProduct(mask));
  });
}

Var mse(Var prediction, Var target) {
  const Matrix diff = prediction.value() - target.value();
  const double n = static_cast<double>(diff.size());
  Matrix out = Matrix::Constant(1, 1, diff.squaredNorm() / n);
  return prediction.graph->record(std::move(out), {prediction.id, target.id},
                                  [prediction, target, diff, n](Graph& gr, const Matrix& go) {
                                    const Matrix g = diff * (2.0 * go(0, 0) / n);
                                    gr.accumulate(prediction.id, g);
                                    gr.accumulate(target.id, -g);
                                  });
}

}  // namespace elp::nn
