#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace elp::nn {

using Matrix = Eigen::MatrixXd;

struct Parameter {
  std::string name;
  Matrix value;
  bool trainable = true;
};

// Per-parameter gradient buffers, shaped like the parameters.
using Gradients = std::vector<Matrix>;

Gradients zero_gradients(std::span<const Parameter> params);

class Graph;

// Handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

// Reverse-mode tape over dense matrices. Nodes are recorded in creation order
// so reverse order is a valid topological order for backward().
class Graph {
 public:
  explicit Graph(std::span<const Parameter> params) : params_(params) {}

  Var constant(Matrix value);
  Var parameter(std::size_t index);

  const Matrix& value(std::size_t id) const;

  // Seeds d(root)/d(root) = scale (root must be 1x1) and accumulates into
  // grads for every trainable parameter reached.
  void backward(Var root, Gradients& grads, double scale = 1.0);

  // Used by op implementations.
  using BackwardFn = std::function<void(Graph&, const Matrix& grad_out)>;
  Var record(Matrix value, std::vector<std::size_t> parents, BackwardFn backward);
  void accumulate(std::size_t id, const Matrix& g);
  template <typename Fn>
  void accumulate_with(std::size_t id, Fn&& fn) {
    if (nodes_[id].needs_grad) fn(grad_buffer(id));
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    int param = -1;
    bool needs_grad = false;
    BackwardFn backward;
  };

  Matrix& grad_buffer(std::size_t id);

  std::span<const Parameter> params_;
  std::vector<Node> nodes_;
  Gradients* grads_ = nullptr;
};

// Ops. Shapes follow row-major conventions: a sequence is T x d.
Var matmul(Var a, Var b);              // a b
Var matmul_nt(Var a, Var b);           // a b^T
Var add(Var a, Var b);                 // same shape
Var add_row(Var a, Var row);           // row (1 x d) broadcast over rows of a
Var sub(Var a, Var b);
Var mul(Var a, Var b);                 // elementwise
Var scale(Var a, double s);
Var tanh(Var a);
Var sigmoid(Var a);
Var gelu(Var a);                       // tanh approximation
Var softmax_rows(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);  // per row
Var gather_rows(Var table, std::span<const int> ids);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var mean_rows(Var a);                  // 1 x d
Var dropout(Var a, double rate, std::mt19937_64& rng);
Var mse(Var prediction, Var target);   // 1 x 1 mean squared error

}  // namespace elp::nn
