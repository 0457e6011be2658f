#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "scca/error.hpp"

namespace scca {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

namespace detail {
inline thread_local bool grad_enabled = true;
}

/// Disables gradient taping within its scope.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled; }

/// Dense row-major tensor with optional reverse-mode gradient tracking.
/// Copies share the underlying node (shallow value semantics, like a
/// shared buffer handle). Forward operations reject non-finite outputs.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor requires a floating-point scalar type");

 public:
  struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated lazily, same length as data once present
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
  };

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return leaf(std::move(shape), {}, requires_grad, true);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    std::vector<T> data(numel(shape), value);
    return leaf(std::move(shape), std::move(data), requires_grad, false);
  }

  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (data.size() != numel(shape)) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
    return leaf(std::move(shape), std::move(data), requires_grad, false);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  /// Builds an operation result node. `backward` pulls self.grad into the
  /// parents' grad buffers; it is dropped when no parent tracks gradients.
  static Tensor make(Shape shape, std::vector<T> data, std::vector<Tensor> parents,
                     std::function<void(Node&)> backward, const char* op) {
    if (data.size() != numel(shape)) {
      throw ShapeError(std::string(op) + ": internal result size mismatch");
    }
    for (const T v : data) {
      if (!std::isfinite(v)) {
        throw NumericError(std::string(op) + " produced a non-finite value");
      }
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    bool track = detail::grad_enabled;
    if (track) {
      bool any = false;
      for (const auto& p : parents) any = any || (p.node_ && p.node_->requires_grad);
      track = any;
    }
    if (track) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.node_);
      node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
  }

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const { return checked().shape; }
  std::size_t rank() const { return checked().shape.size(); }
  std::size_t size() const { return checked().data.size(); }

  const std::vector<T>& values() const { return checked().data; }

  /// Mutable access to the raw buffer; meant for leaf parameters
  /// (optimizer steps, finite-difference probes).
  std::vector<T>& mut_values() { return checked().data; }

  T value() const {
    if (size() != 1) throw ContractError("value() requires a single-element tensor");
    return checked().data[0];
  }

  template <typename... Is>
  T operator()(Is... is) const {
    return checked().data[offset_of(std::array<std::size_t, sizeof...(Is)>{
        static_cast<std::size_t>(is)...})];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }

  Tensor& set_requires_grad(bool on) {
    Node& n = checked();
    if (!n.parents.empty()) {
      throw ContractError("requires_grad can only be toggled on leaf tensors");
    }
    n.requires_grad = on;
    if (!on) n.grad.clear();
    return *this;
  }

  bool has_grad() const { return node_ && !node_->grad.empty(); }

  const std::vector<T>& grad() const {
    Node& n = checked();
    if (!n.requires_grad) throw ContractError("grad() on a tensor that does not track gradients");
    if (n.grad.empty()) n.grad.assign(n.data.size(), T(0));
    return n.grad;
  }

  void zero_grad() {
    Node& n = checked();
    if (n.requires_grad) n.grad.assign(n.data.size(), T(0));
  }

  /// Reverse-mode sweep from a scalar. Gradients accumulate across calls.
  void backward() const {
    Node& root = checked();
    if (root.data.size() != 1) {
      throw ContractError("backward() requires a scalar, got shape " + shape_str(root.shape));
    }
    if (!root.requires_grad) {
      throw ContractError("backward() on a tensor that does not track gradients");
    }
    std::vector<Node*> post;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(&root, 0);
    seen.insert(&root);
    while (!stack.empty()) {
      auto& top = stack.back();
      if (top.second < top.first->parents.size()) {
        Node* parent = top.first->parents[top.second++].get();
        if (parent->requires_grad && !seen.count(parent)) {
          seen.insert(parent);
          stack.emplace_back(parent, 0);
        }
      } else {
        post.push_back(top.first);
        stack.pop_back();
      }
    }
    // Interior nodes get a fresh buffer per sweep; only leaves accumulate
    // across repeated backward calls.
    for (Node* n : post) {
      if (n->backward) {
        n->grad.assign(n->data.size(), T(0));
      } else if (n->grad.empty()) {
        n->grad.assign(n->data.size(), T(0));
      }
    }
    root.grad[0] += T(1);
    for (auto it = post.rbegin(); it != post.rend(); ++it) {
      if ((*it)->backward) (*it)->backward(**it);
    }
  }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor leaf(Shape shape, std::vector<T> data, bool requires_grad, bool fill_zero) {
    auto node = std::make_shared<Node>();
    const std::size_t n = numel(shape);
    node->shape = std::move(shape);
    if (fill_zero) {
      node->data.assign(n, T(0));
    } else {
      for (const T v : data) {
        if (!std::isfinite(v)) throw NumericError("tensor initialized with a non-finite value");
      }
      node->data = std::move(data);
    }
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  template <std::size_t N>
  std::size_t offset_of(const std::array<std::size_t, N>& idx) const {
    const Shape& s = checked().shape;
    if (N != s.size()) throw ShapeError("index rank mismatch for shape " + shape_str(s));
    std::size_t off = 0;
    for (std::size_t d = 0; d < N; ++d) {
      if (idx[d] >= s[d]) throw ShapeError("index out of range for shape " + shape_str(s));
      off = off * s[d] + idx[d];
    }
    return off;
  }

  Node& checked() const {
    if (!node_) throw ContractError("use of an empty tensor");
    return *node_;
  }

  std::shared_ptr<Node> node_;
};

namespace detail {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename T>
void check_2d(const Tensor<T>& x, const char* op) {
  if (x.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " + shape_str(x.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise operations
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return Tensor<T>::make(
      a.shape(), std::move(out), {a, b},
      [](typename Tensor<T>::Node& self) {
        for (int k = 0; k < 2; ++k) {
          auto& p = *self.parents[k];
          if (!p.requires_grad) continue;
          for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
        }
      },
      "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "sub");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return Tensor<T>::make(
      a.shape(), std::move(out), {a, b},
      [](typename Tensor<T>::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad)
          for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
        if (pb.requires_grad)
          for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
      },
      "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return Tensor<T>::make(
      a.shape(), std::move(out), {a, b},
      [](typename Tensor<T>::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad)
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pa.grad[i] += self.grad[i] * pb.data[i];
        if (pb.requires_grad)
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pb.grad[i] += self.grad[i] * pa.data[i];
      },
      "mul");
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "div");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
  return Tensor<T>::make(
      a.shape(), std::move(out), {a, b},
      [](typename Tensor<T>::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad)
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pa.grad[i] += self.grad[i] / pb.data[i];
        if (pb.requires_grad)
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pb.grad[i] -= self.grad[i] * pa.data[i] / (pb.data[i] * pb.data[i]);
      },
      "div");
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  return Tensor<T>::make(
      a.shape(), std::move(out), {a},
      [c](typename Tensor<T>::Node& self) {
        auto& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * c;
      },
      "mul_scalar");
}

template <typename T>
Tensor<T> add_const(const Tensor<T>& a, T c) {
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
  return Tensor<T>::make(
      a.shape(), std::move(out), {a},
      [](typename Tensor<T>::Node& self) {
        auto& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
      },
      "add_const");
}

namespace detail {
inline constexpr double kInvSqrt2 = 0.7071067811865475244;
inline constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace detail

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  const auto& av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = T(0.5) * av[i] * (T(1) + std::erf(av[i] * T(detail::kInvSqrt2)));
  }
  return Tensor<T>::make(
      a.shape(), std::move(out), {a},
      [](typename Tensor<T>::Node& self) {
        auto& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const T x = pa.data[i];
          const T cdf = T(0.5) * (T(1) + std::erf(x * T(detail::kInvSqrt2)));
          const T pdf = T(detail::kInvSqrt2Pi) * std::exp(T(-0.5) * x * x);
          pa.grad[i] += self.grad[i] * (cdf + x * pdf);
        }
      },
      "gelu");
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  const auto& av = a.values();
  T acc = T(0);
  for (const T v : av) acc += v;
  return Tensor<T>::make(
      {1}, {acc}, {a},
      [](typename Tensor<T>::Node& self) {
        auto& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        const T g = self.grad[0];
        for (std::size_t i = 0; i < pa.grad.size(); ++i) pa.grad[i] += g;
      },
      "sum_all");
}

// ---------------------------------------------------------------------------
// Matrix operations (rank-2)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_2d(a, "matmul");
  detail::check_2d(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  }
  return Tensor<T>::make(
      {m, n}, std::move(out), {a, b},
      [m, k, n](typename Tensor<T>::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
          // dA = G · Bᵀ
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              const T g = self.grad[i * n + j];
              for (std::size_t p = 0; p < k; ++p) pa.grad[i * k + p] += g * pb.data[p * n + j];
            }
        }
        if (pb.requires_grad) {
          // dB = Aᵀ · G
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const T aip = pa.data[i * k + p];
              for (std::size_t j = 0; j < n; ++j) pb.grad[p * n + j] += aip * self.grad[i * n + j];
            }
        }
      },
      "matmul");
}

template <typename T>
Tensor<T> transpose2(const Tensor<T>& a) {
  detail::check_2d(a, "transpose2");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  const auto& av = a.values();
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return Tensor<T>::make(
      {n, m}, std::move(out), {a},
      [m, n](typename Tensor<T>::Node& self) {
        auto& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) pa.grad[i * n + j] += self.grad[j * m + i];
      },
      "transpose2");
}

/// Broadcasts a length-C vector into n identical rows (n×C).
template <typename T>
Tensor<T> tile_rows(const Tensor<T>& v, std::size_t n) {
  if (v.rank() != 1) throw ShapeError("tile_rows: expected a rank-1 tensor");
  const std::size_t c = v.shape()[0];
  const auto& vv = v.values();
  std::vector<T> out(n * c);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = vv[j];
  return Tensor<T>::make(
      {n, c}, std::move(out), {v},
      [n, c](typename Tensor<T>::Node& self) {
        auto& pv = *self.parents[0];
        if (!pv.requires_grad) return;
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < c; ++j) pv.grad[j] += self.grad[r * c + j];
      },
      "tile_rows");
}

/// Adds a length-C bias vector to every row of an n×C matrix.
template <typename T>
Tensor<T> add_row_vector(const Tensor<T>& x, const Tensor<T>& b) {
  detail::check_2d(x, "add_row_vector");
  if (b.rank() != 1 || b.shape()[0] != x.shape()[1]) {
    throw ShapeError("add_row_vector: bias shape " + shape_str(b.shape()) +
                     " does not match columns of " + shape_str(x.shape()));
  }
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  const auto& xv = x.values();
  const auto& bv = b.values();
  std::vector<T> out(n * c);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = xv[r * c + j] + bv[j];
  return Tensor<T>::make(
      {n, c}, std::move(out), {x, b},
      [n, c](typename Tensor<T>::Node& self) {
        auto& px = *self.parents[0];
        auto& pb = *self.parents[1];
        if (px.requires_grad)
          for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
        if (pb.requires_grad)
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) pb.grad[j] += self.grad[r * c + j];
      },
      "add_row_vector");
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t c0, std::size_t c1) {
  detail::check_2d(x, "slice_cols");
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  if (c0 >= c1 || c1 > c) throw ShapeError("slice_cols: invalid column range");
  const std::size_t w = c1 - c0;
  const auto& xv = x.values();
  std::vector<T> out(n * w);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] = xv[r * c + c0 + j];
  return Tensor<T>::make(
      {n, w}, std::move(out), {x},
      [n, c, c0, w](typename Tensor<T>::Node& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < w; ++j) px.grad[r * c + c0 + j] += self.grad[r * w + j];
      },
      "slice_cols");
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: empty input list");
  const std::size_t n = parts[0].shape()[0];
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::check_2d(p, "concat_cols");
    if (p.shape()[0] != n) throw ShapeError("concat_cols: row counts disagree");
    total += p.shape()[1];
  }
  std::vector<T> out(n * total);
  std::size_t col = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[1];
    const auto& pv = p.values();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < w; ++j) out[r * total + col + j] = pv[r * w + j];
    widths.push_back(w);
    col += w;
  }
  return Tensor<T>::make(
      {n, total}, std::move(out), parts,
      [n, total, widths](typename Tensor<T>::Node& self) {
        std::size_t col = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          auto& p = *self.parents[k];
          const std::size_t w = widths[k];
          if (p.requires_grad) {
            for (std::size_t r = 0; r < n; ++r)
              for (std::size_t j = 0; j < w; ++j)
                p.grad[r * w + j] += self.grad[r * total + col + j];
          }
          col += w;
        }
      },
      "concat_cols");
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: empty input list");
  const std::size_t c = parts[0].shape()[1];
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::check_2d(p, "concat_rows");
    if (p.shape()[1] != c) throw ShapeError("concat_rows: column counts disagree");
    total += p.shape()[0];
  }
  std::vector<T> out;
  out.reserve(total * c);
  std::vector<std::size_t> heights;
  for (const auto& p : parts) {
    const auto& pv = p.values();
    out.insert(out.end(), pv.begin(), pv.end());
    heights.push_back(p.shape()[0]);
  }
  return Tensor<T>::make(
      {total, c}, std::move(out), parts,
      [c, heights](typename Tensor<T>::Node& self) {
        std::size_t row = 0;
        for (std::size_t k = 0; k < heights.size(); ++k) {
          auto& p = *self.parents[k];
          const std::size_t h = heights[k];
          if (p.requires_grad) {
            for (std::size_t i = 0; i < h * c; ++i) p.grad[i] += self.grad[row * c + i];
          }
          row += h;
        }
      },
      "concat_rows");
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  return concat_cols<T>(std::vector<Tensor<T>>{a, b});
}

template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
  return concat_rows<T>(std::vector<Tensor<T>>{a, b});
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> out = x.values();
  return Tensor<T>::make(
      std::move(shape), std::move(out), {x},
      [](typename Tensor<T>::Node& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
      },
      "reshape");
}

/// Index -1 reads as zero and receives no gradient; all other entries must
/// be valid flat offsets into x.
template <typename T>
Tensor<T> gather_flat(const Tensor<T>& x, std::vector<std::ptrdiff_t> indices, Shape out_shape) {
  if (indices.size() != numel(out_shape)) {
    throw ShapeError("gather_flat: index count does not match output shape");
  }
  const auto& xv = x.values();
  std::vector<T> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::ptrdiff_t idx = indices[i];
    if (idx < -1 || idx >= static_cast<std::ptrdiff_t>(xv.size())) {
      throw ShapeError("gather_flat: index " + std::to_string(idx) + " out of range");
    }
    out[i] = idx < 0 ? T(0) : xv[static_cast<std::size_t>(idx)];
  }
  return Tensor<T>::make(
      std::move(out_shape), std::move(out), {x},
      [idx = std::move(indices)](typename Tensor<T>::Node& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        for (std::size_t i = 0; i < idx.size(); ++i)
          if (idx[i] >= 0) px.grad[static_cast<std::size_t>(idx[i])] += self.grad[i];
      },
      "gather_flat");
}

// ---------------------------------------------------------------------------
// Normalization and similarity
// ---------------------------------------------------------------------------

/// Softmax over the last dimension with max-subtraction for stability.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  if (x.rank() < 1) throw ShapeError("softmax_lastdim: rank must be >= 1");
  const std::size_t n = x.shape().back();
  if (n < 1) throw ShapeError("softmax_lastdim: last dimension must be >= 1");
  const std::size_t rows = x.size() / n;
  const auto& xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* px = xv.data() + r * n;
    T* py = out.data() + r * n;
    T mx = px[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, px[j]);
    T denom = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      py[j] = std::exp(px[j] - mx);
      denom += py[j];
    }
    const T inv = T(1) / denom;
    for (std::size_t j = 0; j < n; ++j) py[j] *= inv;
  }
  return Tensor<T>::make(
      x.shape(), std::move(out), {x},
      [rows, n](typename Tensor<T>::Node& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        for (std::size_t r = 0; r < rows; ++r) {
          const T* y = self.data.data() + r * n;
          const T* g = self.grad.data() + r * n;
          T dot = T(0);
          for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
          T* dx = px.grad.data() + r * n;
          for (std::size_t j = 0; j < n; ++j) dx[j] += y[j] * (g[j] - dot);
        }
      },
      "softmax_lastdim");
}

/// Pairwise cosine similarity between rows of a (p×d) and b (q×d);
/// norms are clamped at eps so zero rows score 0 against everything.
template <typename T>
Tensor<T> cosine_sim_matrix(const Tensor<T>& a, const Tensor<T>& b, T eps) {
  detail::check_2d(a, "cosine_sim_matrix");
  detail::check_2d(b, "cosine_sim_matrix");
  if (a.shape()[1] != b.shape()[1]) {
    throw ShapeError("cosine_sim_matrix: feature dimensions disagree");
  }
  if (!(eps > T(0))) throw ContractError("cosine_sim_matrix: eps must be positive");
  const std::size_t p = a.shape()[0], q = b.shape()[0], d = a.shape()[1];
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> na(p), nb(q);
  std::vector<std::uint8_t> ca(p), cb(q);  // 1 when the norm is clamped at eps
  for (std::size_t i = 0; i < p; ++i) {
    T s = T(0);
    for (std::size_t t = 0; t < d; ++t) s += av[i * d + t] * av[i * d + t];
    const T norm = std::sqrt(s);
    ca[i] = norm <= eps;
    na[i] = std::max(norm, eps);
  }
  for (std::size_t j = 0; j < q; ++j) {
    T s = T(0);
    for (std::size_t t = 0; t < d; ++t) s += bv[j * d + t] * bv[j * d + t];
    const T norm = std::sqrt(s);
    cb[j] = norm <= eps;
    nb[j] = std::max(norm, eps);
  }
  std::vector<T> out(p * q);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) {
      T dot = T(0);
      for (std::size_t t = 0; t < d; ++t) dot += av[i * d + t] * bv[j * d + t];
      out[i * q + j] = dot / (na[i] * nb[j]);
    }
  return Tensor<T>::make(
      {p, q}, std::move(out), {a, b},
      [p, q, d, na = std::move(na), nb = std::move(nb), ca = std::move(ca),
       cb = std::move(cb)](typename Tensor<T>::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (std::size_t i = 0; i < p; ++i) {
          for (std::size_t j = 0; j < q; ++j) {
            const T g = self.grad[i * q + j];
            if (g == T(0)) continue;
            const T c = self.data[i * q + j];
            const T inv = T(1) / (na[i] * nb[j]);
            if (pa.requires_grad) {
              for (std::size_t t = 0; t < d; ++t) {
                T term = pb.data[j * d + t] * inv;
                if (!ca[i]) term -= c * pa.data[i * d + t] / (na[i] * na[i]);
                pa.grad[i * d + t] += g * term;
              }
            }
            if (pb.requires_grad) {
              for (std::size_t t = 0; t < d; ++t) {
                T term = pa.data[i * d + t] * inv;
                if (!cb[j]) term -= c * pb.data[j * d + t] / (nb[j] * nb[j]);
                pb.grad[j * d + t] += g * term;
              }
            }
          }
        }
      },
      "cosine_sim_matrix");
}

/// Per-channel mean of feat (C×H×W) over the pixels selected by a binary
/// mask (1×H×W). The mask never receives gradient.
template <typename T>
Tensor<T> masked_average_pool(const Tensor<T>& feat, const Tensor<T>& mask) {
  if (feat.rank() != 3) throw ShapeError("masked_average_pool: feat must be C×H×W");
  if (mask.rank() != 3 || mask.shape()[0] != 1 || mask.shape()[1] != feat.shape()[1] ||
      mask.shape()[2] != feat.shape()[2]) {
    throw ShapeError("masked_average_pool: mask must be 1×H×W matching feat");
  }
  const std::size_t c = feat.shape()[0];
  const std::size_t hw = feat.shape()[1] * feat.shape()[2];
  const auto& mv = mask.values();
  std::size_t count = 0;
  for (const T v : mv) {
    if (v != T(0) && v != T(1)) throw ContractError("masked_average_pool: mask must be binary");
    count += v == T(1);
  }
  if (count == 0) throw ContractError("masked_average_pool: empty region, mask selects no pixels");
  const auto& fv = feat.values();
  std::vector<T> out(c, T(0));
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < hw; ++i)
      if (mv[i] == T(1)) out[ch] += fv[ch * hw + i];
    out[ch] /= static_cast<T>(count);
  }
  return Tensor<T>::make(
      {c}, std::move(out), {feat, mask},
      [c, hw, count](typename Tensor<T>::Node& self) {
        auto& pf = *self.parents[0];
        auto& pm = *self.parents[1];
        if (!pf.requires_grad) return;
        const T inv = T(1) / static_cast<T>(count);
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T g = self.grad[ch] * inv;
          for (std::size_t i = 0; i < hw; ++i)
            if (pm.data[i] == T(1)) pf.grad[ch * hw + i] += g;
        }
      },
      "masked_average_pool");
}

/// Row-wise layer normalization with learned scale and shift.
template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          T eps = T(1e-5)) {
  detail::check_2d(x, "layer_norm_rows");
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  if (gamma.rank() != 1 || gamma.shape()[0] != c || beta.rank() != 1 || beta.shape()[0] != c) {
    throw ShapeError("layer_norm_rows: scale/shift must be rank-1 of length " + std::to_string(c));
  }
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  std::vector<T> out(n * c), mean(n), rstd(n);
  for (std::size_t r = 0; r < n; ++r) {
    T mu = T(0);
    for (std::size_t j = 0; j < c; ++j) mu += xv[r * c + j];
    mu /= static_cast<T>(c);
    T var = T(0);
    for (std::size_t j = 0; j < c; ++j) {
      const T d = xv[r * c + j] - mu;
      var += d * d;
    }
    var /= static_cast<T>(c);
    const T rs = T(1) / std::sqrt(var + eps);
    mean[r] = mu;
    rstd[r] = rs;
    for (std::size_t j = 0; j < c; ++j)
      out[r * c + j] = gv[j] * (xv[r * c + j] - mu) * rs + bv[j];
  }
  return Tensor<T>::make(
      {n, c}, std::move(out), {x, gamma, beta},
      [n, c, mean = std::move(mean), rstd = std::move(rstd)](typename Tensor<T>::Node& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        std::vector<T> xhat(c), gh(c);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t j = 0; j < c; ++j)
            xhat[j] = (px.data[r * c + j] - mean[r]) * rstd[r];
          const T* g = self.grad.data() + r * c;
          if (pg.requires_grad)
            for (std::size_t j = 0; j < c; ++j) pg.grad[j] += g[j] * xhat[j];
          if (pb.requires_grad)
            for (std::size_t j = 0; j < c; ++j) pb.grad[j] += g[j];
          if (px.requires_grad) {
            T s1 = T(0), s2 = T(0);
            for (std::size_t j = 0; j < c; ++j) {
              gh[j] = g[j] * pg.data[j];
              s1 += gh[j];
              s2 += gh[j] * xhat[j];
            }
            const T invc = T(1) / static_cast<T>(c);
            for (std::size_t j = 0; j < c; ++j)
              px.grad[r * c + j] += rstd[r] * (gh[j] - s1 * invc - xhat[j] * s2 * invc);
          }
        }
      },
      "layer_norm_rows");
}

// ---------------------------------------------------------------------------
// Layout helpers between C×H×W maps and pixel-row matrices
// ---------------------------------------------------------------------------

/// C×H×W map viewed as an HW×C matrix (one row per pixel).
template <typename T>
Tensor<T> to_rows(const Tensor<T>& feat) {
  if (feat.rank() != 3) throw ShapeError("to_rows: expected a C×H×W tensor");
  const std::size_t c = feat.shape()[0];
  const std::size_t hw = feat.shape()[1] * feat.shape()[2];
  return transpose2(reshape(feat, {c, hw}));
}

template <typename T>
Tensor<T> from_rows(const Tensor<T>& rows, std::size_t c, std::size_t h, std::size_t w) {
  detail::check_2d(rows, "from_rows");
  if (rows.shape()[0] != h * w || rows.shape()[1] != c) {
    throw ShapeError("from_rows: shape " + shape_str(rows.shape()) + " does not match " +
                     std::to_string(c) + "×" + std::to_string(h) + "×" + std::to_string(w));
  }
  return reshape(transpose2(rows), {c, h, w});
}

/// y = x·Wᵀ (+ bias). W is C_out×C_in, x is rows×C_in.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight) {
  return matmul(x, transpose2(weight));
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  return add_row_vector(matmul(x, transpose2(weight)), bias);
}

}  // namespace scca
