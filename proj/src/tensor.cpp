#include "mixupe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace mixupe {

namespace {

thread_local std::uint64_t g_next_seq = 0;

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

std::string shape_str(const TensorNode& n) {
  std::ostringstream os;
  os << n.rows << "x" << n.cols;
  return os.str();
}

NodePtr make_node(std::size_t rows, std::size_t cols) {
  auto n = std::make_shared<TensorNode>();
  n->rows = rows;
  n->cols = cols;
  n->data.assign(rows * cols, 0.0);
  n->seq = ++g_next_seq;
  return n;
}

void check_finite(Op op, const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NonFiniteError(std::string("op '") + op_name(op) +
                           "' produced a non-finite value");
    }
  }
}

std::vector<double>& grad_buf(TensorNode& n) {
  if (n.grad.empty()) n.grad.assign(n.size(), 0.0);
  return n.grad;
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::matmul_nt: return "matmul_nt";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::scale: return "scale";
    case Op::abs: return "abs";
    case Op::relu: return "relu";
    case Op::tanh: return "tanh";
    case Op::softplus: return "softplus";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::sigmoid: return "sigmoid";
    case Op::sum: return "sum";
    case Op::row_sum: return "row_sum";
    case Op::log_sum_exp_rows: return "log_sum_exp_rows";
    case Op::softmax_rows: return "softmax_rows";
  }
  return "?";
}

detail::TensorNode& Tensor::node() const {
  if (!node_) throw std::logic_error("use of empty Tensor handle");
  return *node_;
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  if (rows == 0 || cols == 0)
    throw ShapeError("tensor dimensions must be positive");
  auto n = make_node(rows, cols);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::fill(std::size_t rows, std::size_t cols, double value) {
  Tensor t = zeros(rows, cols, false);
  std::fill(t.node().data.begin(), t.node().data.end(), value);
  check_finite(Op::leaf, t.node().data);
  return t;
}

Tensor Tensor::from_flat(std::size_t rows, std::size_t cols,
                         std::vector<double> data, bool requires_grad) {
  if (rows * cols != data.size())
    throw ShapeError("from_flat: " + std::to_string(data.size()) +
                     " values for shape " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  Tensor t = zeros(rows, cols, requires_grad);
  t.node().data = std::move(data);
  check_finite(Op::leaf, t.node().data);
  return t;
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows,
                         bool requires_grad) {
  if (rows.empty() || rows.front().empty())
    throw ShapeError("from_rows: empty input");
  const std::size_t cols = rows.front().size();
  std::vector<double> flat;
  flat.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols)
      throw ShapeError("from_rows: ragged rows");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return from_flat(rows.size(), cols, std::move(flat), requires_grad);
}

Tensor Tensor::unit_row(std::size_t n, std::size_t index) {
  if (index >= n) throw ShapeError("unit_row: index out of range");
  Tensor t = zeros(1, n, false);
  t.node().data[index] = 1.0;
  return t;
}

double Tensor::at(std::size_t r, std::size_t c) const {
  const auto& n = node();
  if (r >= n.rows || c >= n.cols)
    throw ShapeError("at(" + std::to_string(r) + "," + std::to_string(c) +
                     ") out of range for " + shape_str(n));
  return n.data[r * n.cols + c];
}

double Tensor::value() const {
  const auto& n = node();
  if (n.size() != 1)
    throw ShapeError("value(): tensor is " + shape_str(n) + ", not scalar");
  return n.data[0];
}

std::vector<double>& Tensor::data_mut() {
  auto& n = node();
  if (n.op != Op::leaf)
    throw AutogradError("data_mut: only leaf tensors may be mutated");
  return n.data;
}

const std::vector<double>& Tensor::grad() const {
  const auto& n = node();
  if (n.grad.empty())
    throw AutogradError("grad(): no gradient present (run backward first)");
  return n.grad;
}

Tensor Tensor::detached() const {
  return from_flat(rows(), cols(), node().data, false);
}

Tensor Tensor::detached_with_grad() const {
  return from_flat(rows(), cols(), node().data, true);
}

Tensor Tensor::row_detached(std::size_t r) const {
  const auto& n = node();
  if (r >= n.rows) throw ShapeError("row_detached: row out of range");
  std::vector<double> d(n.data.begin() + r * n.cols,
                        n.data.begin() + (r + 1) * n.cols);
  return from_flat(1, n.cols, std::move(d), false);
}

// ---------------------------------------------------------------------------
// forward ops
// ---------------------------------------------------------------------------

namespace detail {
struct TensorMaker {
  static Tensor wrap(NodePtr n) { return Tensor(std::move(n)); }
  static NodePtr ptr(const Tensor& t) { return t.node_; }
};
}  // namespace detail

namespace {

using detail::TensorMaker;

Tensor make_result(NodePtr out, Op op, std::vector<NodePtr> inputs) {
  out->op = op;
  out->inputs = std::move(inputs);
  out->requires_grad = false;
  for (const auto& in : out->inputs)
    if (in->requires_grad) out->requires_grad = true;
  check_finite(op, out->data);
  return TensorMaker::wrap(std::move(out));
}

enum class BinaryLayout { same, b_is_row, a_is_row };

BinaryLayout binary_layout(const TensorNode& a, const TensorNode& b,
                           const char* what) {
  if (a.rows == b.rows && a.cols == b.cols) return BinaryLayout::same;
  if (b.rows == 1 && b.cols == a.cols) return BinaryLayout::b_is_row;
  if (a.rows == 1 && a.cols == b.cols) return BinaryLayout::a_is_row;
  throw ShapeError(std::string(what) + ": shapes " + shape_str(a) + " and " +
                   shape_str(b) + " are not equal or row-broadcastable");
}

template <typename F>
Tensor binary_op(Op op, const Tensor& ta, const Tensor& tb, F&& f) {
  NodePtr a = TensorMaker::ptr(ta);
  NodePtr b = TensorMaker::ptr(tb);
  const BinaryLayout layout = binary_layout(*a, *b, op_name(op));
  const std::size_t rows = std::max(a->rows, b->rows);
  const std::size_t cols = a->cols;
  NodePtr out = make_node(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t ar = (layout == BinaryLayout::a_is_row) ? 0 : r;
    const std::size_t br = (layout == BinaryLayout::b_is_row) ? 0 : r;
    for (std::size_t c = 0; c < cols; ++c) {
      out->data[r * cols + c] =
          f(a->data[ar * cols + c], b->data[br * cols + c]);
    }
  }
  return make_result(std::move(out), op, {std::move(a), std::move(b)});
}

template <typename F>
Tensor unary_op(Op op, const Tensor& ta, F&& f) {
  NodePtr a = TensorMaker::ptr(ta);
  NodePtr out = make_node(a->rows, a->cols);
  for (std::size_t i = 0; i < a->data.size(); ++i)
    out->data[i] = f(a->data[i]);
  return make_result(std::move(out), op, {std::move(a)});
}

double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor matmul(const Tensor& ta, const Tensor& tb) {
  NodePtr a = TensorMaker::ptr(ta);
  NodePtr b = TensorMaker::ptr(tb);
  if (a->cols != b->rows)
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(*a) +
                     " vs " + shape_str(*b));
  NodePtr out = make_node(a->rows, b->cols);
  const std::size_t m = a->rows, k = a->cols, n = b->cols;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a->data[i * k + p];
      if (av == 0.0) continue;
      const double* brow = &b->data[p * n];
      double* orow = &out->data[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return make_result(std::move(out), Op::matmul, {std::move(a), std::move(b)});
}

Tensor matmul_nt(const Tensor& ta, const Tensor& tb) {
  NodePtr a = TensorMaker::ptr(ta);
  NodePtr b = TensorMaker::ptr(tb);
  if (a->cols != b->cols)
    throw ShapeError("matmul_nt: inner dimensions differ, " + shape_str(*a) +
                     " vs " + shape_str(*b) + " (second operand transposed)");
  const std::size_t m = a->rows, k = a->cols, n = b->rows;
  NodePtr out = make_node(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = &a->data[i * k];
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = &b->data[j * k];
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      out->data[i * n + j] = acc;
    }
  }
  return make_result(std::move(out), Op::matmul_nt,
                     {std::move(a), std::move(b)});
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(Op::add, a, b, [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(Op::sub, a, b, [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(Op::mul, a, b, [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& ta, double factor) {
  NodePtr a = TensorMaker::ptr(ta);
  NodePtr out = make_node(a->rows, a->cols);
  for (std::size_t i = 0; i < a->data.size(); ++i)
    out->data[i] = factor * a->data[i];
  out->scale_factor = factor;
  return make_result(std::move(out), Op::scale, {std::move(a)});
}

Tensor abs(const Tensor& a) {
  return unary_op(Op::abs, a, [](double x) { return std::fabs(x); });
}

Tensor relu(const Tensor& a) {
  return unary_op(Op::relu, a, [](double x) { return x > 0.0 ? x : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary_op(Op::tanh, a, [](double x) { return std::tanh(x); });
}

Tensor softplus(const Tensor& a) {
  return unary_op(Op::softplus, a, stable_softplus);
}

Tensor exp(const Tensor& a) {
  return unary_op(Op::exp, a, [](double x) { return std::exp(x); });
}

Tensor log(const Tensor& a) {
  return unary_op(Op::log, a, [](double x) { return std::log(x); });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(Op::sigmoid, a, stable_sigmoid);
}

Tensor sum(const Tensor& ta) {
  NodePtr a = TensorMaker::ptr(ta);
  NodePtr out = make_node(1, 1);
  double acc = 0.0;
  for (double v : a->data) acc += v;
  out->data[0] = acc;
  return make_result(std::move(out), Op::sum, {std::move(a)});
}

Tensor row_sum(const Tensor& ta) {
  NodePtr a = TensorMaker::ptr(ta);
  NodePtr out = make_node(a->rows, 1);
  for (std::size_t r = 0; r < a->rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < a->cols; ++c) acc += a->data[r * a->cols + c];
    out->data[r] = acc;
  }
  return make_result(std::move(out), Op::row_sum, {std::move(a)});
}

Tensor log_sum_exp_rows(const Tensor& ta) {
  NodePtr a = TensorMaker::ptr(ta);
  if (a->cols < 1) throw ShapeError("log_sum_exp_rows: needs >= 1 column");
  NodePtr out = make_node(a->rows, 1);
  for (std::size_t r = 0; r < a->rows; ++r) {
    const double* row = &a->data[r * a->cols];
    double mx = row[0];
    for (std::size_t c = 1; c < a->cols; ++c) mx = std::max(mx, row[c]);
    double acc = 0.0;
    for (std::size_t c = 0; c < a->cols; ++c) acc += std::exp(row[c] - mx);
    out->data[r] = mx + std::log(acc);
  }
  return make_result(std::move(out), Op::log_sum_exp_rows, {std::move(a)});
}

Tensor softmax_rows(const Tensor& ta) {
  NodePtr a = TensorMaker::ptr(ta);
  NodePtr out = make_node(a->rows, a->cols);
  for (std::size_t r = 0; r < a->rows; ++r) {
    const double* row = &a->data[r * a->cols];
    double* orow = &out->data[r * a->cols];
    double mx = row[0];
    for (std::size_t c = 1; c < a->cols; ++c) mx = std::max(mx, row[c]);
    double acc = 0.0;
    for (std::size_t c = 0; c < a->cols; ++c) {
      orow[c] = std::exp(row[c] - mx);
      acc += orow[c];
    }
    for (std::size_t c = 0; c < a->cols; ++c) orow[c] /= acc;
  }
  return make_result(std::move(out), Op::softmax_rows, {std::move(a)});
}

// ---------------------------------------------------------------------------
// reverse pass
// ---------------------------------------------------------------------------

namespace {

// Accumulate `g` (shaped like `from`) into the gradient of `to`, reducing
// over rows when `to` was row-broadcast.
void accumulate_binary_grad(TensorNode& to, const TensorNode& from,
                            const std::vector<double>& g, double sign) {
  if (!to.requires_grad) return;
  auto& dst = grad_buf(to);
  if (to.rows == from.rows) {
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += sign * g[i];
  } else {
    for (std::size_t r = 0; r < from.rows; ++r)
      for (std::size_t c = 0; c < from.cols; ++c)
        dst[c] += sign * g[r * from.cols + c];
  }
}

void accumulate_mul_grad(TensorNode& to, const TensorNode& other,
                         const TensorNode& from,
                         const std::vector<double>& g) {
  if (!to.requires_grad) return;
  auto& dst = grad_buf(to);
  const std::size_t cols = from.cols;
  for (std::size_t r = 0; r < from.rows; ++r) {
    const std::size_t orow = (other.rows == 1) ? 0 : r;
    for (std::size_t c = 0; c < cols; ++c) {
      const double contrib = g[r * cols + c] * other.data[orow * cols + c];
      if (to.rows == 1 && from.rows != 1)
        dst[c] += contrib;
      else
        dst[r * cols + c] += contrib;
    }
  }
}

void backward_node(TensorNode& n) {
  const std::vector<double>& g = n.grad;
  switch (n.op) {
    case Op::leaf:
      return;
    case Op::matmul: {
      TensorNode& a = *n.inputs[0];
      TensorNode& b = *n.inputs[1];
      const std::size_t m = a.rows, k = a.cols, c = b.cols;
      if (a.requires_grad) {
        auto& da = grad_buf(a);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            const double gv = g[i * c + j];
            if (gv == 0.0) continue;
            for (std::size_t p = 0; p < k; ++p)
              da[i * k + p] += gv * b.data[p * c + j];
          }
      }
      if (b.requires_grad) {
        auto& db = grad_buf(b);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = a.data[i * k + p];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < c; ++j)
              db[p * c + j] += av * g[i * c + j];
          }
      }
      return;
    }
    case Op::matmul_nt: {
      // out[m x n] = a[m x k] * b[n x k]^T
      TensorNode& a = *n.inputs[0];
      TensorNode& b = *n.inputs[1];
      const std::size_t m = a.rows, k = a.cols, nn = b.rows;
      if (a.requires_grad) {
        auto& da = grad_buf(a);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < nn; ++j) {
            const double gv = g[i * nn + j];
            if (gv == 0.0) continue;
            for (std::size_t p = 0; p < k; ++p)
              da[i * k + p] += gv * b.data[j * k + p];
          }
      }
      if (b.requires_grad) {
        auto& db = grad_buf(b);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < nn; ++j) {
            const double gv = g[i * nn + j];
            if (gv == 0.0) continue;
            for (std::size_t p = 0; p < k; ++p)
              db[j * k + p] += gv * a.data[i * k + p];
          }
      }
      return;
    }
    case Op::add: {
      accumulate_binary_grad(*n.inputs[0], n, g, +1.0);
      accumulate_binary_grad(*n.inputs[1], n, g, +1.0);
      return;
    }
    case Op::sub: {
      accumulate_binary_grad(*n.inputs[0], n, g, +1.0);
      accumulate_binary_grad(*n.inputs[1], n, g, -1.0);
      return;
    }
    case Op::mul: {
      accumulate_mul_grad(*n.inputs[0], *n.inputs[1], n, g);
      accumulate_mul_grad(*n.inputs[1], *n.inputs[0], n, g);
      return;
    }
    case Op::scale: {
      TensorNode& a = *n.inputs[0];
      if (!a.requires_grad) return;
      auto& da = grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        da[i] += n.scale_factor * g[i];
      return;
    }
    case Op::abs: {
      TensorNode& a = *n.inputs[0];
      if (!a.requires_grad) return;
      auto& da = grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = a.data[i];
        da[i] += g[i] * (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
      }
      return;
    }
    case Op::relu: {
      TensorNode& a = *n.inputs[0];
      if (!a.requires_grad) return;
      auto& da = grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        da[i] += g[i] * (a.data[i] > 0.0 ? 1.0 : 0.0);
      return;
    }
    case Op::tanh: {
      TensorNode& a = *n.inputs[0];
      if (!a.requires_grad) return;
      auto& da = grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        da[i] += g[i] * (1.0 - n.data[i] * n.data[i]);
      return;
    }
    case Op::softplus: {
      TensorNode& a = *n.inputs[0];
      if (!a.requires_grad) return;
      auto& da = grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        da[i] += g[i] * stable_sigmoid(a.data[i]);
      return;
    }
    case Op::exp: {
      TensorNode& a = *n.inputs[0];
      if (!a.requires_grad) return;
      auto& da = grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * n.data[i];
      return;
    }
    case Op::log: {
      TensorNode& a = *n.inputs[0];
      if (!a.requires_grad) return;
      auto& da = grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] / a.data[i];
      return;
    }
    case Op::sigmoid: {
      TensorNode& a = *n.inputs[0];
      if (!a.requires_grad) return;
      auto& da = grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        da[i] += g[i] * n.data[i] * (1.0 - n.data[i]);
      return;
    }
    case Op::sum: {
      TensorNode& a = *n.inputs[0];
      if (!a.requires_grad) return;
      auto& da = grad_buf(a);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[0];
      return;
    }
    case Op::row_sum: {
      TensorNode& a = *n.inputs[0];
      if (!a.requires_grad) return;
      auto& da = grad_buf(a);
      for (std::size_t r = 0; r < a.rows; ++r)
        for (std::size_t c = 0; c < a.cols; ++c) da[r * a.cols + c] += g[r];
      return;
    }
    case Op::log_sum_exp_rows: {
      TensorNode& a = *n.inputs[0];
      if (!a.requires_grad) return;
      auto& da = grad_buf(a);
      // d lse / d a = softmax(a) per row
      for (std::size_t r = 0; r < a.rows; ++r) {
        const double lse = n.data[r];
        for (std::size_t c = 0; c < a.cols; ++c)
          da[r * a.cols + c] += g[r] * std::exp(a.data[r * a.cols + c] - lse);
      }
      return;
    }
    case Op::softmax_rows: {
      TensorNode& a = *n.inputs[0];
      if (!a.requires_grad) return;
      auto& da = grad_buf(a);
      for (std::size_t r = 0; r < a.rows; ++r) {
        const double* s = &n.data[r * a.cols];
        const double* gr = &g[r * a.cols];
        double dot = 0.0;
        for (std::size_t c = 0; c < a.cols; ++c) dot += gr[c] * s[c];
        for (std::size_t c = 0; c < a.cols; ++c)
          da[r * a.cols + c] += s[c] * (gr[c] - dot);
      }
      return;
    }
  }
}

}  // namespace

void backward(const Tensor& root) {
  NodePtr r = TensorMaker::ptr(root);
  if (!r) throw std::logic_error("backward on empty Tensor handle");
  if (r->size() != 1)
    throw AutogradError("backward: root must be scalar, got " + shape_str(*r));
  if (r->backward_done)
    throw AutogradError(
        "backward: already run on this root; rebuild the graph first");
  r->backward_done = true;
  if (!r->requires_grad) return;  // constant graph: nothing to do

  // Reachable subgraph, then reverse construction order.
  std::vector<TensorNode*> nodes;
  std::unordered_set<TensorNode*> seen;
  std::vector<TensorNode*> stack{r.get()};
  seen.insert(r.get());
  while (!stack.empty()) {
    TensorNode* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (const auto& in : n->inputs)
      if (seen.insert(in.get()).second) stack.push_back(in.get());
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const TensorNode* a, const TensorNode* b) {
              return a->seq > b->seq;
            });

  grad_buf(*r)[0] = 1.0;
  for (TensorNode* n : nodes) {
    if (n->op == Op::leaf || !n->requires_grad) continue;
    backward_node(*n);
  }
}

Tensor jacobian_rows(const std::function<Tensor(const Tensor&)>& f,
                     const Tensor& x) {
  if (x.rows() != 1) throw ShapeError("jacobian_rows: x must be 1 x d");
  const std::size_t d = x.cols();
  Tensor probe = f(x.detached());
  if (probe.rows() != 1)
    throw ShapeError("jacobian_rows: model output must be 1 x C");
  const std::size_t out_dim = probe.cols();

  Tensor jac = Tensor::zeros(out_dim, d);
  for (std::size_t j = 0; j < out_dim; ++j) {
    Tensor xg = x.detached_with_grad();
    Tensor out = f(xg);
    Tensor root = sum(mul(out, Tensor::unit_row(out_dim, j)));
    backward(root);
    const auto& gx = xg.grad();
    for (std::size_t c = 0; c < d; ++c) jac.data_mut()[j * d + c] = gx[c];
  }
  return jac;
}

}  // namespace mixupe
