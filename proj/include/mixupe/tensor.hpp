#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mixupe/errors.hpp"

namespace mixupe {

enum class Op {
  leaf,
  matmul,
  matmul_nt,  // a * b^T
  add,
  sub,
  mul,
  scale,  // constant factor
  abs,
  relu,
  tanh,
  softplus,
  exp,
  log,
  sigmoid,
  sum,               // all elements -> 1x1
  row_sum,           // m x n -> m x 1
  log_sum_exp_rows,  // m x C -> m x 1
  softmax_rows,      // m x C -> m x C
};

const char* op_name(Op op);

namespace detail {

struct TensorMaker;

/**
 * One record of the dynamic computation graph: the op kind, the input
 * nodes, and the output buffer. Nodes carry a per-thread construction
 * sequence number; the reverse pass visits reachable nodes in strictly
 * decreasing sequence order, so every consumer finishes writing a node's
 * gradient before that node is processed. Graphs are rebuilt on every
 * forward pass and freed when the last Tensor handle goes away.
 */
struct TensorNode {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;
  std::vector<double> grad;  // empty until the backward pass touches it
  bool requires_grad = false;
  Op op = Op::leaf;
  double scale_factor = 0.0;
  std::vector<std::shared_ptr<TensorNode>> inputs;
  std::uint64_t seq = 0;
  bool backward_done = false;

  std::size_t size() const { return rows * cols; }
};

}  // namespace detail

/**
 * Dense row-major matrix of 64-bit floats participating in a reverse-mode
 * differentiation graph. Tensor is a cheap shared handle: copies alias the
 * same node. All forward results are checked finite; NaN/Inf raises
 * NonFiniteError naming the op.
 */
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::size_t rows, std::size_t cols,
                      bool requires_grad = false);
  static Tensor fill(std::size_t rows, std::size_t cols, double value);
  static Tensor from_flat(std::size_t rows, std::size_t cols,
                          std::vector<double> data,
                          bool requires_grad = false);
  static Tensor from_rows(const std::vector<std::vector<double>>& rows,
                          bool requires_grad = false);
  /// 1 x n basis row vector with a single 1 at `index`.
  static Tensor unit_row(std::size_t n, std::size_t index);

  bool valid() const { return node_ != nullptr; }
  std::size_t rows() const { return node().rows; }
  std::size_t cols() const { return node().cols; }
  std::size_t size() const { return node().size(); }
  bool is_scalar() const { return rows() == 1 && cols() == 1; }

  double at(std::size_t r, std::size_t c) const;
  /// Scalar payload of a 1x1 tensor.
  double value() const;
  const std::vector<double>& data() const { return node().data; }
  /// Mutable access for leaves (parameter updates between graph builds).
  std::vector<double>& data_mut();

  bool requires_grad() const { return node().requires_grad; }
  bool has_grad() const { return !node().grad.empty(); }
  const std::vector<double>& grad() const;
  void clear_grad() { node().grad.clear(); }

  /// Deep copy with no gradient tracking.
  Tensor detached() const;
  /// Deep copy as a fresh differentiable leaf.
  Tensor detached_with_grad() const;
  /// Single row r as a new 1 x cols constant leaf.
  Tensor row_detached(std::size_t r) const;

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node)
      : node_(std::move(node)) {}
  detail::TensorNode& node() const;

  std::shared_ptr<detail::TensorNode> node_;

  friend struct detail::TensorMaker;
};

// Binary ops accept equal shapes, or a 1 x n row vector against an m x n
// matrix (either side). No other broadcasting.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// Unary elementwise. abs and relu take subgradient 0 at exactly 0.
Tensor abs(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor row_sum(const Tensor& a);
/// Row-wise log(sum(exp(.))), max-shifted for stability.
Tensor log_sum_exp_rows(const Tensor& a);
Tensor softmax_rows(const Tensor& a);

/**
 * Reverse pass from a scalar root. Populates grad on every reachable
 * node that requires it. Running twice on the same root without
 * rebuilding the graph is an error.
 */
void backward(const Tensor& root);

/**
 * Jacobian of a 1 x C model output w.r.t. a 1 x d input: row j holds
 * d out_j / d x. Implemented as C independent forward+backward passes,
 * one per output coordinate. The callable must build a fresh graph per
 * invocation and must not route gradients into shared parameters (use a
 * parameter-detached forward).
 */
Tensor jacobian_rows(const std::function<Tensor(const Tensor&)>& f,
                     const Tensor& x);

}  // namespace mixupe
