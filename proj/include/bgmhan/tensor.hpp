#pragma once

// Dense row-major tensors with a per-forward-pass gradient tape.
//
// A Tensor is a shared handle to a node: copying a Tensor aliases the same
// storage, use clone() for a deep copy. Ops record themselves on the tape that
// is active on the current thread (see TapeScope) whenever at least one input
// requires a gradient; with no active tape nothing is recorded, which is the
// inference mode.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bgmhan/error.hpp"
#include "bgmhan/random.hpp"

namespace bgmhan {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

template <class T>
class Tensor;
template <class T>
class GradTape;

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <class T>
inline thread_local GradTape<T>* active_tape = nullptr;

}  // namespace detail

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<detail::Node<T>>()) {
    check_shape(shape);
    node_->value.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<detail::Node<T>>()) {
    check_shape(shape);
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor: shape " + shape_str(shape) + " does not hold " +
                           std::to_string(values.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> v;
    v.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("matrix: ragged rows");
      v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(v));
  }

  static Tensor from_node(std::shared_ptr<detail::Node<T>> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<T> data() { return node_->value; }
  std::span<const T> data() const { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }

  T& operator[](std::size_t i) { return node_->value[i]; }
  T operator[](std::size_t i) const { return node_->value[i]; }
  T at(std::size_t r, std::size_t c) const { return node_->value[r * node_->shape.back() + c]; }

  T item() const {
    if (numel() != 1) throw DimensionError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  Tensor clone() const {
    Tensor t(node_->shape, node_->value);
    t.node_->requires_grad = node_->requires_grad;
    return t;
  }

  detail::Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node<T>>& shared() const { return node_; }

 private:
  static void check_shape(const Shape& s) {
    if (s.empty()) throw DimensionError("tensor: shape must have at least one extent");
    for (auto e : s)
      if (e == 0) throw DimensionError("tensor: zero extent in shape " + shape_str(s));
  }

  std::shared_ptr<detail::Node<T>> node_;
};

// Ordered record of the ops executed in one forward pass.
template <class T>
class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;
  ~GradTape() { release(); }

  void record(std::shared_ptr<detail::Node<T>> n) { ops_.push_back(std::move(n)); }
  std::size_t size() const noexcept { return ops_.size(); }

  // Seeds d(loss)/d(loss) = 1 and replays every recorded op once, newest first.
  // The tape is empty afterwards; leaf gradients accumulate across calls.
  void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw UsageError("backward: loss must be a scalar tensor");
    }
    std::size_t end = ops_.size();
    while (end > 0 && ops_[end - 1].get() != loss.node()) --end;
    if (end == 0) throw UsageError("backward: loss was not produced on this tape");

    ops_[end - 1]->ensure_grad()[0] += T(1);
    for (std::size_t i = end; i-- > 0;) {
      auto& n = *ops_[i];
      if (!n.grad.empty() && n.backward) n.backward(n);
    }
    release();
  }

 private:
  void release() {
    for (auto& n : ops_) {
      n->backward = nullptr;
      n->parents.clear();
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
    ops_.clear();
  }

  std::vector<std::shared_ptr<detail::Node<T>>> ops_;
};

// Makes `tape` the recording target for ops of scalar type T on this thread.
template <class T>
class TapeScope {
 public:
  explicit TapeScope(GradTape<T>& tape) : previous_(detail::active_tape<T>) { detail::active_tape<T> = &tape; }
  ~TapeScope() { detail::active_tape<T> = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape<T>* previous_;
};

template <class T>
class NoGradScope {
 public:
  NoGradScope() : previous_(detail::active_tape<T>) { detail::active_tape<T> = nullptr; }
  ~NoGradScope() { detail::active_tape<T> = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  GradTape<T>* previous_;
};

template <class T>
inline bool recording() {
  return detail::active_tape<T> != nullptr;
}

namespace detail {

template <class T>
void check_finite(const std::vector<T>& v, const char* op) {
  for (const T x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": produced a non-finite value");
  }
}

// Builds the output node of an op and records it when any input needs a gradient.
// `backward` receives the output node; its parents are the inputs, in order.
template <class T, class Backward>
Tensor<T> make_op(const char* name, Shape shape, std::vector<T> value,
                  std::initializer_list<const Tensor<T>*> inputs, Backward&& backward) {
  check_finite(value, name);
  auto out = std::make_shared<Node<T>>();
  out->shape = std::move(shape);
  out->value = std::move(value);
  GradTape<T>* tape = active_tape<T>;
  if (tape != nullptr) {
    bool any = false;
    for (const auto* in : inputs) any = any || in->requires_grad();
    if (any) {
      out->requires_grad = true;
      out->leaf = false;
      for (const auto* in : inputs) out->parents.push_back(in->shared());
      out->backward = std::forward<Backward>(backward);
      tape->record(out);
    }
  }
  return Tensor<T>::from_node(std::move(out));
}

template <class T>
std::vector<T>* grad_of(const std::shared_ptr<Node<T>>& p) {
  return p->requires_grad ? &p->ensure_grad() : nullptr;
}

// C[m x n] += A[m x k] * B[k x n]
template <class T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[k x n] += A^T * B for A[m x k], B[m x n]
template <class T>
void gemm_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
std::vector<T> transpose(const T* a, std::size_t rows, std::size_t cols) {
  std::vector<T> t(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = a[i * cols + j];
  return t;
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <class T>
std::size_t last_extent(const Tensor<T>& t) {
  return t.shape().back();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> c(m * n, T(0));
  detail::gemm_acc(a.data().data(), b.data().data(), c.data(), m, k, n);
  return detail::make_op<T>("matmul", Shape{m, n}, std::move(c), {&a, &b}, [m, k, n](detail::Node<T>& out) {
    const auto& pa = out.parents[0];
    const auto& pb = out.parents[1];
    if (auto* ga = detail::grad_of(pa)) {
      const auto bt = detail::transpose(pb->value.data(), k, n);
      detail::gemm_acc(out.grad.data(), bt.data(), ga->data(), m, n, k);
    }
    if (auto* gb = detail::grad_of(pb)) {
      detail::gemm_tn_acc(pa->value.data(), out.grad.data(), gb->data(), m, k, n);
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
  return detail::make_op<T>("add", a.shape(), std::move(v), {&a, &b}, [](detail::Node<T>& out) {
    for (auto& p : out.parents)
      if (auto* g = detail::grad_of(p))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i];
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] - b[i];
  return detail::make_op<T>("sub", a.shape(), std::move(v), {&a, &b}, [](detail::Node<T>& out) {
    if (auto* g = detail::grad_of(out.parents[0]))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i];
    if (auto* g = detail::grad_of(out.parents[1]))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= out.grad[i];
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
  return detail::make_op<T>("mul", a.shape(), std::move(v), {&a, &b}, [](detail::Node<T>& out) {
    const auto& pa = out.parents[0];
    const auto& pb = out.parents[1];
    if (auto* g = detail::grad_of(pa))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i] * pb->value[i];
    if (auto* g = detail::grad_of(pb))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i] * pa->value[i];
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * c;
  return detail::make_op<T>("scale", a.shape(), std::move(v), {&a}, [c](detail::Node<T>& out) {
    if (auto* g = detail::grad_of(out.parents[0]))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i] * c;
  });
}

// x[..., n] + b[n], broadcast over leading axes.
template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
  const std::size_t n = detail::last_extent(x);
  if (b.numel() != n) throw DimensionError("add_bias: bias " + shape_str(b.shape()) + " vs input " + shape_str(x.shape()));
  std::vector<T> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] + b[i % n];
  return detail::make_op<T>("add_bias", x.shape(), std::move(v), {&x, &b}, [n](detail::Node<T>& out) {
    if (auto* g = detail::grad_of(out.parents[0]))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i];
    if (auto* g = detail::grad_of(out.parents[1]))
      for (std::size_t i = 0; i < out.grad.size(); ++i) (*g)[i % n] += out.grad[i];
  });
}

// x[..., n] * g[n], broadcast over leading axes.
template <class T>
Tensor<T> mul_bias(const Tensor<T>& x, const Tensor<T>& gate) {
  const std::size_t n = detail::last_extent(x);
  if (gate.numel() != n) throw DimensionError("mul_bias: gate " + shape_str(gate.shape()) + " vs input " + shape_str(x.shape()));
  std::vector<T> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] * gate[i % n];
  return detail::make_op<T>("mul_bias", x.shape(), std::move(v), {&x, &gate}, [n](detail::Node<T>& out) {
    const auto& px = out.parents[0];
    const auto& pg = out.parents[1];
    if (auto* g = detail::grad_of(px))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i] * pg->value[i % n];
    if (auto* g = detail::grad_of(pg))
      for (std::size_t i = 0; i < out.grad.size(); ++i) (*g)[i % n] += out.grad[i] * px->value[i];
  });
}

// Exact GELU: x * Phi(x).
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  std::vector<T> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double xi = x[i];
    v[i] = static_cast<T>(0.5 * xi * (1.0 + std::erf(xi * kInvSqrt2)));
  }
  return detail::make_op<T>("gelu", x.shape(), std::move(v), {&x}, [](detail::Node<T>& out) {
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    const auto& px = out.parents[0];
    if (auto* g = detail::grad_of(px)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double xi = px->value[i];
        const double cdf = 0.5 * (1.0 + std::erf(xi * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xi * xi);
        (*g)[i] += static_cast<T>(out.grad[i] * (cdf + xi * pdf));
      }
    }
  });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double xi = x[i];
    v[i] = static_cast<T>(xi >= 0 ? 1.0 / (1.0 + std::exp(-xi)) : std::exp(xi) / (1.0 + std::exp(xi)));
  }
  return detail::make_op<T>("sigmoid", x.shape(), std::move(v), {&x}, [](detail::Node<T>& out) {
    if (auto* g = detail::grad_of(out.parents[0]))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i] * out.value[i] * (T(1) - out.value[i]);
  });
}

// Inverted dropout; identity when rate == 0.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw UsageError("dropout: rate must be in [0, 1)");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = bernoulli(rng, rate) ? T(0) : keep_scale;
  std::vector<T> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] * mask[i];
  return detail::make_op<T>("dropout", x.shape(), std::move(v), {&x}, [mask = std::move(mask)](detail::Node<T>& out) {
    if (auto* g = detail::grad_of(out.parents[0]))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i] * mask[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions and shape

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  double s = 0;
  for (const T v : x.data()) s += v;
  return detail::make_op<T>("sum", Shape{1}, {static_cast<T>(s)}, {&x}, [](detail::Node<T>& out) {
    if (auto* g = detail::grad_of(out.parents[0]))
      for (auto& gi : *g) gi += out.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), static_cast<T>(1.0 / static_cast<double>(x.numel())));
}

template <class T>
Tensor<T> sum_squares(const Tensor<T>& x) {
  double s = 0;
  for (const T v : x.data()) s += static_cast<double>(v) * v;
  return detail::make_op<T>("sum_squares", Shape{1}, {static_cast<T>(s)}, {&x}, [](detail::Node<T>& out) {
    const auto& px = out.parents[0];
    if (auto* g = detail::grad_of(px))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += T(2) * px->value[i] * out.grad[0];
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return detail::make_op<T>("reshape", std::move(shape), x.values(), {&x}, [](detail::Node<T>& out) {
    if (auto* g = detail::grad_of(out.parents[0]))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i];
  });
}

// Numerically stable softmax along `axis`.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("softmax: axis out of range for " + shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);
  std::vector<T> v(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < len; ++j) mx = std::max<double>(mx, x[base + j * inner]);
      double z = 0;
      for (std::size_t j = 0; j < len; ++j) z += std::exp(static_cast<double>(x[base + j * inner]) - mx);
      for (std::size_t j = 0; j < len; ++j)
        v[base + j * inner] = static_cast<T>(std::exp(static_cast<double>(x[base + j * inner]) - mx) / z);
    }
  }
  return detail::make_op<T>("softmax", x.shape(), std::move(v), {&x}, [outer, inner, len](detail::Node<T>& out) {
    auto* g = detail::grad_of(out.parents[0]);
    if (!g) return;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0;
        for (std::size_t j = 0; j < len; ++j) dot += out.grad[base + j * inner] * out.value[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t idx = base + j * inner;
          (*g)[idx] += static_cast<T>(out.value[idx] * (out.grad[idx] - dot));
        }
      }
    }
  });
}

// Per-row normalization over the last axis followed by gain/bias.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, double eps = 1e-5) {
  const std::size_t d = detail::last_extent(x);
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias length must equal last extent of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  std::vector<T> v(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * d;
    double mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = static_cast<T>(is);
    for (std::size_t j = 0; j < d; ++j) {
      const T h = static_cast<T>((xr[j] - mu) * is);
      xhat[r * d + j] = h;
      v[r * d + j] = gain[j] * h + bias[j];
    }
  }
  return detail::make_op<T>(
      "layer_norm", x.shape(), std::move(v), {&x, &gain, &bias},
      [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node<T>& out) {
        const auto& pg = out.parents[1];
        if (auto* gx = detail::grad_of(out.parents[0])) {
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0, m2 = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = static_cast<double>(out.grad[r * d + j]) * pg->value[j];
              m1 += dh;
              m2 += dh * xhat[r * d + j];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = static_cast<double>(out.grad[r * d + j]) * pg->value[j];
              (*gx)[r * d + j] += static_cast<T>(inv_std[r] * (dh - m1 - xhat[r * d + j] * m2));
            }
          }
        }
        if (auto* gg = detail::grad_of(pg))
          for (std::size_t i = 0; i < out.grad.size(); ++i) (*gg)[i % d] += out.grad[i] * xhat[i];
        if (auto* gb = detail::grad_of(out.parents[2]))
          for (std::size_t i = 0; i < out.grad.size(); ++i) (*gb)[i % d] += out.grad[i];
      });
}

// ---------------------------------------------------------------------------
// Row indexing and segmented sequence ops

// Rows of `table` selected by `ids`; an id of -1 yields a zero row.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::int64_t> ids) {
  if (table.rank() != 2) throw DimensionError("gather_rows: table must be 2-D");
  if (ids.empty()) throw DimensionError("gather_rows: no rows requested");
  const std::size_t n = table.dim(0), d = table.dim(1);
  std::vector<T> v(ids.size() * d, T(0));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto id = ids[i];
    if (id < -1 || id >= static_cast<std::int64_t>(n)) throw UsageError("gather_rows: row id out of range");
    if (id >= 0) std::copy_n(table.data().data() + id * d, d, v.data() + i * d);
  }
  std::vector<std::int64_t> idx(ids.begin(), ids.end());
  return detail::make_op<T>("gather_rows", Shape{ids.size(), d}, std::move(v), {&table},
                            [d, idx = std::move(idx)](detail::Node<T>& out) {
                              if (auto* g = detail::grad_of(out.parents[0]))
                                for (std::size_t i = 0; i < idx.size(); ++i) {
                                  if (idx[i] < 0) continue;
                                  T* dst = g->data() + idx[i] * d;
                                  const T* src = out.grad.data() + i * d;
                                  for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                                }
                            });
}

// A contiguous run of rows forming one sequence.
struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
};

// Mean of each segment's rows; empty segments give zero rows. When `extent` is
// nonzero the sum is divided by it instead of the segment length.
template <class T>
Tensor<T> segment_mean(const Tensor<T>& x, std::span<const Segment> segs, std::size_t extent = 0) {
  if (x.rank() != 2) throw DimensionError("segment_mean: input must be 2-D");
  if (segs.empty()) throw DimensionError("segment_mean: no segments");
  const std::size_t d = x.dim(1);
  std::vector<T> v(segs.size() * d, T(0));
  std::vector<Segment> s(segs.begin(), segs.end());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i].offset + s[i].length > x.dim(0)) throw DimensionError("segment_mean: segment out of range");
    if (s[i].length == 0) continue;
    const double div = extent ? static_cast<double>(extent) : static_cast<double>(s[i].length);
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0;
      for (std::size_t r = 0; r < s[i].length; ++r) acc += x[(s[i].offset + r) * d + j];
      v[i * d + j] = static_cast<T>(acc / div);
    }
  }
  return detail::make_op<T>("segment_mean", Shape{segs.size(), d}, std::move(v), {&x},
                            [d, extent, s = std::move(s)](detail::Node<T>& out) {
                              auto* g = detail::grad_of(out.parents[0]);
                              if (!g) return;
                              for (std::size_t i = 0; i < s.size(); ++i) {
                                if (s[i].length == 0) continue;
                                const T w = static_cast<T>(1.0 / (extent ? extent : s[i].length));
                                for (std::size_t r = 0; r < s[i].length; ++r)
                                  for (std::size_t j = 0; j < d; ++j)
                                    (*g)[(s[i].offset + r) * d + j] += out.grad[i * d + j] * w;
                              }
                            });
}

// Multi-head scaled dot-product attention restricted to each segment:
// rows only attend to rows of their own segment. q, k, v are [N x heads*d_k]
// with head i occupying columns [i*d_k, (i+1)*d_k). Rows outside every
// segment produce zeros.
template <class T>
Tensor<T> segment_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                            std::span<const Segment> segs, std::size_t heads) {
  detail::require_same_shape(q, k, "segment_attention");
  detail::require_same_shape(q, v, "segment_attention");
  if (q.rank() != 2 || heads == 0 || q.dim(1) % heads != 0) {
    throw DimensionError("segment_attention: width " + shape_str(q.shape()) + " not divisible into heads");
  }
  const std::size_t width = q.dim(1), dk = width / heads;
  const double scale_f = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Segment> s(segs.begin(), segs.end());
  std::vector<std::size_t> prob_offset(s.size() + 1, 0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i].offset + s[i].length > q.dim(0)) throw DimensionError("segment_attention: segment out of range");
    prob_offset[i + 1] = prob_offset[i] + heads * s[i].length * s[i].length;
  }
  std::vector<T> probs(prob_offset.back());
  std::vector<T> out_v(q.numel(), T(0));

  auto head_block = [width, dk](const T* base, std::size_t row0, std::size_t len, std::size_t h) {
    std::vector<T> blk(len * dk);
    for (std::size_t r = 0; r < len; ++r)
      std::copy_n(base + (row0 + r) * width + h * dk, dk, blk.data() + r * dk);
    return blk;
  };

  for (std::size_t si = 0; si < s.size(); ++si) {
    const std::size_t len = s[si].length, row0 = s[si].offset;
    if (len == 0) continue;
    for (std::size_t h = 0; h < heads; ++h) {
      const auto qh = head_block(q.data().data(), row0, len, h);
      const auto kh = head_block(k.data().data(), row0, len, h);
      const auto vh = head_block(v.data().data(), row0, len, h);
      const auto kt = detail::transpose(kh.data(), len, dk);
      T* p = probs.data() + prob_offset[si] + h * len * len;
      std::fill_n(p, len * len, T(0));
      detail::gemm_acc(qh.data(), kt.data(), p, len, dk, len);
      for (std::size_t r = 0; r < len; ++r) {
        T* row = p + r * len;
        double mx = -INFINITY;
        for (std::size_t c = 0; c < len; ++c) mx = std::max<double>(mx, row[c] * scale_f);
        double z = 0;
        for (std::size_t c = 0; c < len; ++c) z += std::exp(row[c] * scale_f - mx);
        for (std::size_t c = 0; c < len; ++c) row[c] = static_cast<T>(std::exp(row[c] * scale_f - mx) / z);
      }
      std::vector<T> oh(len * dk, T(0));
      detail::gemm_acc(p, vh.data(), oh.data(), len, len, dk);
      for (std::size_t r = 0; r < len; ++r)
        std::copy_n(oh.data() + r * dk, dk, out_v.data() + (row0 + r) * width + h * dk);
    }
  }

  return detail::make_op<T>(
      "segment_attention", q.shape(), std::move(out_v), {&q, &k, &v},
      [s = std::move(s), prob_offset = std::move(prob_offset), probs = std::move(probs), heads, dk, width, scale_f,
       head_block](detail::Node<T>& out) {
        const auto& pq = out.parents[0];
        const auto& pk = out.parents[1];
        const auto& pv = out.parents[2];
        auto* gq = detail::grad_of(pq);
        auto* gk = detail::grad_of(pk);
        auto* gv = detail::grad_of(pv);
        for (std::size_t si = 0; si < s.size(); ++si) {
          const std::size_t len = s[si].length, row0 = s[si].offset;
          if (len == 0) continue;
          for (std::size_t h = 0; h < heads; ++h) {
            const T* p = probs.data() + prob_offset[si] + h * len * len;
            const auto dout = head_block(out.grad.data(), row0, len, h);
            const auto vh = head_block(pv->value.data(), row0, len, h);
            if (gv) {
              std::vector<T> dv(len * dk, T(0));
              detail::gemm_tn_acc(p, dout.data(), dv.data(), len, len, dk);
              for (std::size_t r = 0; r < len; ++r)
                for (std::size_t c = 0; c < dk; ++c) (*gv)[(row0 + r) * width + h * dk + c] += dv[r * dk + c];
            }
            if (!gq && !gk) continue;
            // dP = dO V^T, then dS = P * (dP - rowsum(dP * P)) * scale
            const auto vt = detail::transpose(vh.data(), len, dk);
            std::vector<T> ds(len * len, T(0));
            detail::gemm_acc(dout.data(), vt.data(), ds.data(), len, dk, len);
            for (std::size_t r = 0; r < len; ++r) {
              double dot = 0;
              for (std::size_t c = 0; c < len; ++c) dot += ds[r * len + c] * p[r * len + c];
              for (std::size_t c = 0; c < len; ++c)
                ds[r * len + c] = static_cast<T>(p[r * len + c] * (ds[r * len + c] - dot) * scale_f);
            }
            if (gq) {
              const auto kh = head_block(pk->value.data(), row0, len, h);
              std::vector<T> dq(len * dk, T(0));
              detail::gemm_acc(ds.data(), kh.data(), dq.data(), len, len, dk);
              for (std::size_t r = 0; r < len; ++r)
                for (std::size_t c = 0; c < dk; ++c) (*gq)[(row0 + r) * width + h * dk + c] += dq[r * dk + c];
            }
            if (gk) {
              const auto qh = head_block(pq->value.data(), row0, len, h);
              std::vector<T> dkm(len * dk, T(0));
              detail::gemm_tn_acc(ds.data(), qh.data(), dkm.data(), len, len, dk);
              for (std::size_t r = 0; r < len; ++r)
                for (std::size_t c = 0; c < dk; ++c) (*gk)[(row0 + r) * width + h * dk + c] += dkm[r * dk + c];
            }
          }
        }
      });
}

// Rows of x selected by index (all indices valid).
template <class T>
Tensor<T> select_rows(const Tensor<T>& x, std::span<const std::int64_t> rows) {
  for (auto r : rows)
    if (r < 0) throw UsageError("select_rows: negative row index");
  return gather_rows(x, rows);
}

}  // namespace bgmhan
