#pragma once

// Reverse-mode differentiation over dense row-major arrays of doubles.
//
// A Tensor is a cheap handle to a graph node. Operations record their parents
// and a local gradient rule only when at least one input requires a gradient;
// otherwise they produce a constant node and no graph is kept. Shapes are
// rank 0 (scalar), rank 1 (vector) or rank 2 (row-major matrix).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "softbeam/error.hpp"

namespace softbeam {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// Receives the node's forward value and its accumulated output gradient.
using BackwardFn =
    std::function<void(std::span<const double> value, std::span<const double> grad)>;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
  const char* op = "leaf";
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;

  std::vector<double>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

inline thread_local int no_grad_depth = 0;

}  // namespace detail

// While alive, operations on this thread record no graph (pure evaluation).
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

class Tensor;
inline void backward(const Tensor& loss);

class Tensor {
 public:
  Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape.size() > 2) {
      throw DimensionError("tensors are limited to rank 2, got " + shape_string(shape));
    }
    if (shape_size(shape) != values.size()) {
      throw DimensionError("value count " + std::to_string(values.size()) +
                           " does not match shape " + shape_string(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double v) {
    const auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor(Shape{}, {v}, requires_grad);
  }
  static Tensor vector(std::vector<double> v, bool requires_grad = false) {
    const auto n = v.size();
    return Tensor(Shape{n}, std::move(v), requires_grad);
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v,
                       bool requires_grad = false) {
    return Tensor(Shape{rows, cols}, std::move(v), requires_grad);
  }

  // Builds an interior node. Parents that do not require a gradient are
  // dropped; if none remain the result is a constant and `backward` is unused.
  static Tensor from_op(const char* op, Shape shape, std::vector<double> values,
                        std::vector<Tensor> parents, BackwardFn backward) {
    Tensor out(std::move(shape), std::move(values));
    out.node_->op = op;
    out.node_->leaf = false;
    bool any = false;
    if (grad_enabled()) {
      for (const auto& p : parents) any = any || p.requires_grad();
    }
    if (any) {
      out.node_->requires_grad = true;
      out.node_->backward = std::move(backward);
      out.node_->parents.reserve(parents.size());
      for (auto& p : parents) out.node_->parents.push_back(std::move(p.node_));
    }
    return out;
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rows() const { return rank() == 2 ? shape()[0] : 1; }
  std::size_t cols() const { return rank() == 0 ? 1 : shape().back(); }
  const char* op() const { return node_->op; }

  std::span<const double> values() const { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  double item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
  }

  // Leaves only: parameters are updated in place between passes.
  std::span<double> mutable_values() {
    if (!node_->leaf) throw ContractError("cannot mutate the value of an interior node");
    return node_->value;
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  void set_requires_grad(bool on) {
    if (!node_->leaf) throw ContractError("requires_grad can only be set on leaves");
    node_->requires_grad = on;
  }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  // Same node, identity check.
  bool same(const Tensor& other) const { return node_ == other.node_; }

  // Adds `g` into this tensor's gradient buffer; no-op when no gradient is needed.
  void accumulate_grad(std::size_t i, double g) const {
    if (node_->requires_grad) node_->grad_buffer()[i] += g;
  }
  double* grad_sink() const {
    return node_->requires_grad ? node_->grad_buffer().data() : nullptr;
  }

 private:
  friend void backward(const Tensor& loss);
  std::shared_ptr<detail::Node> node_;
};

// ---------------------------------------------------------------------------
// Backward pass

// Populates gradients of every gradient-requiring ancestor of `loss`. Leaf
// gradients accumulate across distinct graphs until zero_grad(); running
// backward twice through the same interior node is a contract error.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_string(loss.shape()));
  }
  auto* root = loss.node_.get();
  if (!root->requires_grad) return;
  if (root->leaf) {
    root->grad_buffer()[0] += 1.0;
    return;
  }

  // Iterative post-order DFS over interior nodes.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* parent = node->parents[next++].get();
      if (!parent->leaf && parent->requires_grad && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
      continue;
    }
    if (node->consumed) {
      throw ContractError(std::string("backward already ran through node '") + node->op + "'");
    }
    order.push_back(node);
    stack.pop_back();
  }

  root->grad_buffer()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    node->consumed = true;
    if (node->grad.empty()) continue;
    node->backward(node->value, node->grad);
    // Interior gradients are not needed once pushed to the parents.
    std::vector<double>().swap(node->grad);
  }
}

// ---------------------------------------------------------------------------
// Helpers

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_string(t.shape()));
  }
}

inline void require_finite(std::span<const double> v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

template <class Fwd, class Deriv>
Tensor unary(const char* op, const Tensor& a, Fwd fwd, Deriv deriv) {
  std::vector<double> out(a.size());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  return Tensor::from_op(op, a.shape(), std::move(out), {a},
                         [a, deriv](std::span<const double> y, std::span<const double> g) {
                           double* ga = a.grad_sink();
                           const auto x = a.values();
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
                         });
}

enum class Binary { add, sub, mul };

inline Tensor binary(const char* op, Binary kind, const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  const bool a_scalar = a.size() == 1 && !same;
  const bool b_scalar = b.size() == 1 && !same;
  if (!same && !a_scalar && !b_scalar) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " are not broadcastable");
  }
  const Shape shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_size(shape);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[a_scalar ? 0 : i];
    const double y = bv[b_scalar ? 0 : i];
    out[i] = kind == Binary::add ? x + y : kind == Binary::sub ? x - y : x * y;
  }
  return Tensor::from_op(
      op, shape, std::move(out), {a, b},
      [a, b, kind, a_scalar, b_scalar](std::span<const double>, std::span<const double> g) {
        double* ga = a.grad_sink();
        double* gb = b.grad_sink();
        const auto av = a.values();
        const auto bv = b.values();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t ia = a_scalar ? 0 : i;
          const std::size_t ib = b_scalar ? 0 : i;
          switch (kind) {
            case Binary::add:
              if (ga) ga[ia] += g[i];
              if (gb) gb[ib] += g[i];
              break;
            case Binary::sub:
              if (ga) ga[ia] += g[i];
              if (gb) gb[ib] -= g[i];
              break;
            case Binary::mul:
              if (ga) ga[ia] += g[i] * bv[ib];
              if (gb) gb[ib] += g[i] * av[ia];
              break;
          }
        }
      });
}

}  // namespace detail

// Indices of the k largest entries, descending by value; equal values keep
// scan order (lower flat index first).
inline std::vector<std::size_t> top_k_order(std::span<const double> values, std::size_t k) {
  if (k > values.size()) {
    throw ContractError("top-k: k=" + std::to_string(k) + " exceeds entry count " +
                        std::to_string(values.size()));
  }
  for (double v : values) {
    if (std::isnan(v)) throw NumericError("top-k: NaN score");
  }
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t i, std::size_t j) {
                      return values[i] > values[j] || (values[i] == values[j] && i < j);
                    });
  idx.resize(k);
  return idx;
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary("add", detail::Binary::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary("sub", detail::Binary::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary("mul", detail::Binary::mul, a, b); }

inline Tensor neg(const Tensor& a) {
  return detail::unary("neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}
inline Tensor exp(const Tensor& a) {
  return detail::unary("exp", a, [](double x) { return std::exp(x); },
                       [](double, double y) { return y; });
}
inline Tensor log(const Tensor& a) {
  return detail::unary("log", a, [](double x) { return std::log(x); },
                       [](double x, double) { return 1.0 / x; });
}
inline Tensor square(const Tensor& a) {
  return detail::unary("square", a, [](double x) { return x * x; },
                       [](double x, double) { return 2.0 * x; });
}
inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}
inline Tensor tanh(const Tensor& a) {
  return detail::unary("tanh", a, [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}
// max(x, c) per entry; at x == c the gradient goes to the constant.
inline Tensor maximum(const Tensor& a, double c) {
  return detail::unary("maximum", a, [c](double x) { return x > c ? x : c; },
                       [c](double x, double) { return x > c ? 1.0 : 0.0; });
}
inline Tensor add_scalar(const Tensor& a, double c) {
  return detail::unary("add_scalar", a, [c](double x) { return x + c; },
                       [](double, double) { return 1.0; });
}
inline Tensor mul_scalar(const Tensor& a, double c) {
  return detail::unary("mul_scalar", a, [c](double x) { return x * c; },
                       [c](double, double) { return c; });
}

// Cuts the graph: same values, no gradient flow.
inline Tensor detach(const Tensor& a) {
  return Tensor(a.shape(), std::vector<double>(a.values().begin(), a.values().end()));
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], n = a.shape()[1], p = b.shape()[1];
  if (b.shape()[0] != n) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()));
  }
  std::vector<double> out(m * p, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * p;
    for (std::size_t k = 0; k < n; ++k) {
      const double x = av[i * n + k];
      if (x == 0.0) continue;
      const double* brow = bv + k * p;
      for (std::size_t j = 0; j < p; ++j) row[j] += x * brow[j];
    }
  }
  return Tensor::from_op(
      "matmul", {m, p}, std::move(out), {a, b},
      [a, b, m, n, p](std::span<const double>, std::span<const double> g) {
        const double* av = a.values().data();
        const double* bv = b.values().data();
        if (double* ga = a.grad_sink()) {
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = g.data() + i * p;
            for (std::size_t k = 0; k < n; ++k) {
              const double* brow = bv + k * p;
              double acc[4] = {0.0, 0.0, 0.0, 0.0};
              std::size_t j = 0;
              for (; j + 4 <= p; j += 4) {
                for (std::size_t u = 0; u < 4; ++u) acc[u] += grow[j + u] * brow[j + u];
              }
              for (; j < p; ++j) acc[0] += grow[j] * brow[j];
              ga[i * n + k] += (acc[0] + acc[1]) + (acc[2] + acc[3]);
            }
          }
        }
        if (double* gb = b.grad_sink()) {
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = g.data() + i * p;
            for (std::size_t k = 0; k < n; ++k) {
              const double x = av[i * n + k];
              if (x == 0.0) continue;
              double* gbrow = gb + k * p;
              for (std::size_t j = 0; j < p; ++j) gbrow[j] += x * grow[j];
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  return Tensor::from_op("sum", {}, {s}, {a},
                         [a](std::span<const double>, std::span<const double> g) {
                           double* ga = a.grad_sink();
                           for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[0];
                         });
}

// Subgradient goes to the first maximal entry in scan order.
inline Tensor max(const Tensor& a) {
  if (a.size() == 0) throw DimensionError("max: empty tensor");
  const auto v = a.values();
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return Tensor::from_op("max", {}, {v[best]}, {a},
                         [a, best](std::span<const double>, std::span<const double> g) {
                           a.grad_sink()[best] += g[0];
                         });
}

inline Tensor row_sum(const Tensor& m) {
  detail::require_rank(m, 2, "row_sum");
  const std::size_t r = m.shape()[0], c = m.shape()[1];
  std::vector<double> out(r, 0.0);
  const auto v = m.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += v[i * c + j];
  return Tensor::from_op("row_sum", {r}, std::move(out), {m},
                         [m, r, c](std::span<const double>, std::span<const double> g) {
                           double* gm = m.grad_sink();
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < c; ++j) gm[i * c + j] += g[i];
                         });
}

inline Tensor column_sum(const Tensor& m) {
  detail::require_rank(m, 2, "column_sum");
  const std::size_t r = m.shape()[0], c = m.shape()[1];
  std::vector<double> out(c, 0.0);
  const auto v = m.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += v[i * c + j];
  return Tensor::from_op("column_sum", {c}, std::move(out), {m},
                         [m, r, c](std::span<const double>, std::span<const double> g) {
                           double* gm = m.grad_sink();
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < c; ++j) gm[i * c + j] += g[j];
                         });
}

inline Tensor dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }

// The k largest entries (flat scan order), descending. Each output is a max
// over the remaining entries, so its gradient flows to the selected entry.
inline Tensor top_k_values(const Tensor& a, std::size_t k) {
  auto order = top_k_order(a.values(), k);
  std::vector<double> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = a[order[i]];
  return Tensor::from_op("top_k_values", {k}, std::move(out), {a},
                         [a, order](std::span<const double>, std::span<const double> g) {
                           double* ga = a.grad_sink();
                           for (std::size_t i = 0; i < order.size(); ++i) ga[order[i]] += g[i];
                         });
}

// ---------------------------------------------------------------------------
// Normalizers

namespace detail {

inline void softmax_into(std::span<const double> s, double alpha, std::span<double> out) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : s) hi = std::max(hi, x);
  double z = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    out[i] = std::exp(alpha * (s[i] - hi));
    z += out[i];
  }
  for (double& y : out) y /= z;
}

inline void check_alpha(double alpha, const char* op) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw ContractError(std::string(op) + ": alpha must be a positive finite number");
  }
}

}  // namespace detail

// exp(alpha*s) / sum exp(alpha*s) over all entries, computed after
// subtracting max(s) so that large alpha cannot overflow.
inline Tensor softmax_scaled(const Tensor& s, double alpha) {
  detail::check_alpha(alpha, "softmax_scaled");
  detail::require_finite(s.values(), "softmax_scaled");
  std::vector<double> out(s.size());
  detail::softmax_into(s.values(), alpha, out);
  return Tensor::from_op("softmax_scaled", s.shape(), std::move(out), {s},
                         [s, alpha](std::span<const double> y, std::span<const double> g) {
                           double gy = 0.0;
                           for (std::size_t i = 0; i < y.size(); ++i) gy += g[i] * y[i];
                           double* gs = s.grad_sink();
                           for (std::size_t i = 0; i < y.size(); ++i)
                             gs[i] += alpha * y[i] * (g[i] - gy);
                         });
}

// softmax_scaled applied independently to each row of a matrix.
inline Tensor softmax_rows_scaled(const Tensor& m, double alpha) {
  detail::check_alpha(alpha, "softmax_rows_scaled");
  detail::require_rank(m, 2, "softmax_rows_scaled");
  detail::require_finite(m.values(), "softmax_rows_scaled");
  const std::size_t r = m.shape()[0], c = m.shape()[1];
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    detail::softmax_into(m.values().subspan(i * c, c), alpha,
                         std::span<double>(out).subspan(i * c, c));
  }
  return Tensor::from_op("softmax_rows_scaled", m.shape(), std::move(out), {m},
                         [m, alpha, r, c](std::span<const double> y, std::span<const double> g) {
                           double* gm = m.grad_sink();
                           for (std::size_t i = 0; i < r; ++i) {
                             const std::size_t o = i * c;
                             double gy = 0.0;
                             for (std::size_t j = 0; j < c; ++j) gy += g[o + j] * y[o + j];
                             for (std::size_t j = 0; j < c; ++j)
                               gm[o + j] += alpha * y[o + j] * (g[o + j] - gy);
                           }
                         });
}

inline Tensor log_softmax(const Tensor& s) {
  detail::require_finite(s.values(), "log_softmax");
  const auto v = s.values();
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : v) hi = std::max(hi, x);
  double z = 0.0;
  for (double x : v) z += std::exp(x - hi);
  const double lz = hi + std::log(z);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - lz;
  return Tensor::from_op("log_softmax", s.shape(), std::move(out), {s},
                         [s](std::span<const double> y, std::span<const double> g) {
                           double gs_total = 0.0;
                           for (double gi : g) gs_total += gi;
                           double* gs = s.grad_sink();
                           for (std::size_t i = 0; i < y.size(); ++i)
                             gs[i] += g[i] - std::exp(y[i]) * gs_total;
                         });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape: " + shape_string(a.shape()) + " to " + shape_string(shape));
  }
  return Tensor::from_op("reshape", std::move(shape),
                         std::vector<double>(a.values().begin(), a.values().end()), {a},
                         [a](std::span<const double>, std::span<const double> g) {
                           double* ga = a.grad_sink();
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                         });
}

inline Tensor flatten(const Tensor& a) { return reshape(a, {a.size()}); }

// Entry i of the flattened tensor, as a scalar.
inline Tensor element(const Tensor& a, std::size_t i) {
  if (i >= a.size()) throw DimensionError("element: index out of range");
  return Tensor::from_op("element", {}, {a[i]}, {a},
                         [a, i](std::span<const double>, std::span<const double> g) {
                           a.grad_sink()[i] += g[0];
                         });
}

// Rows `ids` of a matrix, in order (repeats allowed).
inline Tensor gather_rows(const Tensor& m, std::vector<std::size_t> ids) {
  detail::require_rank(m, 2, "gather_rows");
  const std::size_t r = m.shape()[0], c = m.shape()[1];
  std::vector<double> out(ids.size() * c);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= r) throw DimensionError("gather_rows: row index out of range");
    std::copy_n(m.values().begin() + static_cast<std::ptrdiff_t>(ids[i] * c), c,
                out.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  const std::size_t n = ids.size();
  return Tensor::from_op("gather_rows", {n, c}, std::move(out), {m},
                         [m, ids = std::move(ids), c](std::span<const double>,
                                                      std::span<const double> g) {
                           double* gm = m.grad_sink();
                           for (std::size_t i = 0; i < ids.size(); ++i)
                             for (std::size_t j = 0; j < c; ++j) gm[ids[i] * c + j] += g[i * c + j];
                         });
}

// Row i of a matrix as a vector.
inline Tensor row(const Tensor& m, std::size_t i) {
  return reshape(gather_rows(m, {i}), {m.cols()});
}

inline Tensor slice_rows(const Tensor& m, std::size_t begin, std::size_t end) {
  detail::require_rank(m, 2, "slice_rows");
  if (begin > end || end > m.shape()[0]) throw DimensionError("slice_rows: bad range");
  std::vector<std::size_t> ids(end - begin);
  std::iota(ids.begin(), ids.end(), begin);
  return gather_rows(m, std::move(ids));
}

inline Tensor slice_cols(const Tensor& m, std::size_t begin, std::size_t end) {
  detail::require_rank(m, 2, "slice_cols");
  const std::size_t r = m.shape()[0], c = m.shape()[1];
  if (begin > end || end > c) throw DimensionError("slice_cols: bad range");
  const std::size_t w = end - begin;
  std::vector<double> out(r * w);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = m[i * c + begin + j];
  return Tensor::from_op("slice_cols", {r, w}, std::move(out), {m},
                         [m, r, c, w, begin](std::span<const double>, std::span<const double> g) {
                           double* gm = m.grad_sink();
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < w; ++j) gm[i * c + begin + j] += g[i * w + j];
                         });
}

// Horizontal concatenation of matrices with equal row counts.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "concat_cols");
    if (p.rows() != r) throw DimensionError("concat_cols: row counts differ");
    total += p.cols();
  }
  std::vector<double> out(r * total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * total + off + j] = p[i * c + j];
    off += c;
  }
  return Tensor::from_op("concat_cols", {r, total}, std::move(out), parts,
                         [parts, r, total](std::span<const double>, std::span<const double> g) {
                           std::size_t off = 0;
                           for (const auto& p : parts) {
                             const std::size_t c = p.cols();
                             if (double* gp = p.grad_sink()) {
                               for (std::size_t i = 0; i < r; ++i)
                                 for (std::size_t j = 0; j < c; ++j) gp[i * c + j] += g[i * total + off + j];
                             }
                             off += c;
                           }
                         });
}

// Vertical concatenation. Vectors are treated as single rows.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  for (const auto& p : parts) {
    if (p.rank() == 0 || p.cols() != c) throw DimensionError("concat_rows: column counts differ");
    r += p.rows();
  }
  std::vector<double> out;
  out.reserve(r * c);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return Tensor::from_op("concat_rows", {r, c}, std::move(out), parts,
                         [parts](std::span<const double>, std::span<const double> g) {
                           std::size_t off = 0;
                           for (const auto& p : parts) {
                             if (double* gp = p.grad_sink()) {
                               for (std::size_t i = 0; i < p.size(); ++i) gp[i] += g[off + i];
                             }
                             off += p.size();
                           }
                         });
}

// Vector v[n] repeated as each of r rows: [r x n].
inline Tensor broadcast_rows(const Tensor& v, std::size_t r) {
  detail::require_rank(v, 1, "broadcast_rows");
  const std::size_t n = v.size();
  std::vector<double> out(r * n);
  for (std::size_t i = 0; i < r; ++i) std::copy(v.values().begin(), v.values().end(), out.begin() + static_cast<std::ptrdiff_t>(i * n));
  return Tensor::from_op("broadcast_rows", {r, n}, std::move(out), {v},
                         [v, r, n](std::span<const double>, std::span<const double> g) {
                           double* gv = v.grad_sink();
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < n; ++j) gv[j] += g[i * n + j];
                         });
}

// Vector v[r] repeated as each of c columns: [r x c].
inline Tensor broadcast_cols(const Tensor& v, std::size_t c) {
  detail::require_rank(v, 1, "broadcast_cols");
  const std::size_t r = v.size();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = v[i];
  return Tensor::from_op("broadcast_cols", {r, c}, std::move(out), {v},
                         [v, r, c](std::span<const double>, std::span<const double> g) {
                           double* gv = v.grad_sink();
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < c; ++j) gv[i] += g[i * c + j];
                         });
}

// Matrix plus a row vector added to every row.
inline Tensor add_row(const Tensor& m, const Tensor& v) {
  return add(m, broadcast_rows(v, m.rows()));
}

}  // namespace softbeam
