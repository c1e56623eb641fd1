#pragma once

// Dense f64 tensors (rank 1 and 2) with eager reverse-mode differentiation.
// Every forward op validates shapes, rejects non-finite results, and records
// a backward rule on the thread-local GradTape when gradients are requested.

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mtsjepa {

using Shape = std::vector<std::size_t>;

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public TensorError {
 public:
  using TensorError::TensorError;
};

// Raised when a forward op produces NaN/Inf or a gradient turns non-finite.
class NumericError : public TensorError {
 public:
  using TensorError::TensorError;
};

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // allocated on first use
  bool requires_grad = false;

  std::vector<double>& ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    return grad;
  }
};

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return s.empty() ? 0 : n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + "]";
}

inline void check_finite(const char* op, const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(op) + ": non-finite value in result");
    }
  }
}

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    return from_values(std::move(shape), {}, false, true);
  }

  static Tensor full(Shape shape, double v) {
    auto t = zeros(std::move(shape));
    for (double& x : t.impl_->values) x = v;
    return t;
  }

  static Tensor scalar(double v) { return from_values({1}, {v}); }

  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false, bool zero_fill = false) {
    if (shape.empty() || shape.size() > 2) {
      throw ShapeError("tensor rank must be 1 or 2");
    }
    std::size_t n = detail::shape_size(shape);
    if (n == 0) throw ShapeError("tensor dimensions must be positive");
    if (zero_fill) values.assign(n, 0.0);
    if (values.size() != n) {
      throw ShapeError("value count does not match shape " +
                       detail::shape_str(shape));
    }
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorImpl>();
    t.impl_->shape = std::move(shape);
    t.impl_->values = std::move(values);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  // Trainable leaf.
  static Tensor param(Shape shape, std::vector<double> values) {
    return from_values(std::move(shape), std::move(values), true);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->values.size(); }
  std::size_t rows() const { return impl_->shape[0]; }
  std::size_t cols() const {
    return impl_->shape.size() == 2 ? impl_->shape[1] : 1;
  }

  const std::vector<double>& values() const { return impl_->values; }

  // Raw access for the optimizer / EMA update; never use inside a recorded
  // forward pass (tensors are immutable once an op has consumed them).
  std::vector<double>& mutable_values() { return impl_->values; }

  double at(std::size_t i) const { return impl_->values[i]; }
  double at(std::size_t i, std::size_t j) const {
    return impl_->values[i * impl_->shape[1] + j];
  }

  double scalar_value() const {
    if (size() != 1) throw ShapeError("scalar_value: tensor is not a scalar");
    return impl_->values[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }

  std::vector<double> grad_values() const {
    if (impl_->grad.size() != impl_->values.size()) {
      return std::vector<double>(impl_->values.size(), 0.0);
    }
    return impl_->grad;
  }

  std::vector<double>& grad_buffer() { return impl_->ensure_grad(); }

  void zero_grad() {
    if (!impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
  }

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Thread-local record of forward ops in execution (= topological) order.
// backward() replays it once in reverse; a second call without clear() is an
// error so stale graphs cannot be differentiated silently.
class GradTape {
 public:
  static GradTape& active() {
    thread_local GradTape tape;
    return tape;
  }

  bool recording() const { return pause_ == 0; }

  void push(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

  std::size_t node_count() const { return nodes_.size(); }

  void backward(const Tensor& loss) {
    if (consumed_) {
      throw TensorError("backward: tape already consumed; clear() first");
    }
    if (loss.size() != 1) throw TensorError("backward: loss must be scalar");
    if (!loss.requires_grad()) {
      throw TensorError("backward: loss does not depend on any parameter");
    }
    consumed_ = true;
    loss.impl()->ensure_grad()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void clear() {
    nodes_.clear();
    consumed_ = false;
  }

 private:
  friend class NoGradGuard;
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
  int pause_ = 0;
};

// Suspends recording (EMA targets, evaluation, finite-difference probes).
class NoGradGuard {
 public:
  NoGradGuard() { ++GradTape::active().pause_; }
  ~NoGradGuard() { --GradTape::active().pause_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

namespace detail {

inline bool track(std::initializer_list<const Tensor*> ins) {
  if (!GradTape::active().recording()) return false;
  for (const Tensor* t : ins) {
    if (t->requires_grad()) return true;
  }
  return false;
}

inline Tensor make_result(const char* op, Shape shape,
                          std::vector<double> values, bool tracked) {
  check_finite(op, values);
  return Tensor::from_values(std::move(shape), std::move(values), tracked);
}

// Broadcast element mapping: output flat index -> operand flat index.
// kind 0: same shape, 1: scalar, 2: row vector over [N,M], 3: column vector.
struct BcMap {
  int kind = 0;
  std::size_t m = 1;
  std::size_t operator()(std::size_t i) const {
    switch (kind) {
      case 1: return 0;
      case 2: return i % m;
      case 3: return i / m;
      default: return i;
    }
  }
};

struct BcPlan {
  Shape shape;
  BcMap a, b;
};

inline BcPlan broadcast_plan(const char* op, const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  auto fail = [&]() -> BcPlan {
    throw ShapeError(std::string(op) + ": incompatible shapes " +
                     shape_str(sa) + " and " + shape_str(sb));
  };
  if (sa == sb) return {sa, {0, 0}, {0, 0}};
  if (b.size() == 1) return {sa, {0, 0}, {1, 0}};
  if (a.size() == 1) return {sb, {1, 0}, {0, 0}};
  if (sa.size() == 2) {
    std::size_t n = sa[0], m = sa[1];
    bool b_row = (sb.size() == 1 && sb[0] == m) ||
                 (sb.size() == 2 && sb[0] == 1 && sb[1] == m);
    if (b_row) return {sa, {0, 0}, {2, m}};
    if (sb.size() == 2 && sb[0] == n && sb[1] == 1) return {sa, {0, 0}, {3, m}};
  }
  if (sb.size() == 2 && sa.size() == 1 && sa[0] == sb[1]) {
    return {sb, {2, sb[1]}, {0, 0}};
  }
  return fail();
}

template <typename Fwd, typename DA, typename DB>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, Fwd fwd,
                 DA da, DB db) {
  BcPlan plan = broadcast_plan(op, a, b);
  std::size_t n = shape_size(plan.shape);
  std::vector<double> out(n);
  const auto& va = a.values();
  const auto& vb = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = fwd(va[plan.a(i)], vb[plan.b(i)]);
  }
  bool tracked = track({&a, &b});
  Tensor r = make_result(op, plan.shape, std::move(out), tracked);
  if (tracked) {
    GradTape::active().push([A = a.impl(), B = b.impl(), O = r.impl(),
                             ma = plan.a, mb = plan.b, da, db, n]() {
      const auto& g = O->ensure_grad();
      const bool ga = A->requires_grad, gb = B->requires_grad;
      auto& grad_a = ga ? A->ensure_grad() : O->grad;
      auto& grad_b = gb ? B->ensure_grad() : O->grad;
      for (std::size_t i = 0; i < n; ++i) {
        double av = A->values[ma(i)], bv = B->values[mb(i)];
        if (ga) grad_a[ma(i)] += da(av, bv) * g[i];
        if (gb) grad_b[mb(i)] += db(av, bv) * g[i];
      }
    });
  }
  return r;
}

template <typename Fwd, typename Bwd>
Tensor unary_op(const char* op, const Tensor& a, Fwd fwd, Bwd bwd) {
  std::size_t n = a.size();
  std::vector<double> out(n);
  const auto& va = a.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(va[i]);
  bool tracked = track({&a});
  Tensor r = make_result(op, a.shape(), std::move(out), tracked);
  if (tracked) {
    GradTape::active().push([A = a.impl(), O = r.impl(), bwd, n]() {
      const auto& g = O->ensure_grad();
      auto& ga = A->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        ga[i] += bwd(A->values[i], O->values[i]) * g[i];
      }
    });
  }
  return r;
}

// c[n,m] += a[n,k] * b[k,m]
inline void matmul_acc(const double* a, const double* b, double* c,
                       std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      double av = arow[p];
      const double* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

inline Tensor neg(const Tensor& a) {
  return detail::unary_op(
      "neg", a, [](double x) { return -x; },
      [](double, double) { return -1.0; });
}

inline Tensor scale(const Tensor& a, double c) {
  return detail::unary_op(
      "scale", a, [c](double x) { return c * x; },
      [c](double, double) { return c; });
}

inline Tensor add_const(const Tensor& a, double c) {
  return detail::unary_op(
      "add_const", a, [c](double x) { return x + c; },
      [](double, double) { return 1.0; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary_op(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  return detail::unary_op(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

inline Tensor sqrt(const Tensor& a) {
  return detail::unary_op(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

inline Tensor square(const Tensor& a) {
  return detail::unary_op(
      "square", a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

// max(x, c); the subgradient at the kink is 0 on the clamped side.
inline Tensor clamp_min(const Tensor& a, double c) {
  return detail::unary_op(
      "clamp_min", a, [c](double x) { return x > c ? x : c; },
      [c](double x, double) { return x > c ? 1.0 : 0.0; });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary_op(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return detail::unary_op(
      "gelu", a,
      [=](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [=](double x, double) {
        double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        return cdf + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary_op(
      "sigmoid", a,
      [](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                        : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor stop_gradient(const Tensor& a) {
  return Tensor::from_values(a.shape(), a.values(), false);
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: incompatible shapes " +
                     detail::shape_str(a.shape()) + " and " +
                     detail::shape_str(b.shape()));
  }
  std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  std::vector<double> out(n * m, 0.0);
  detail::matmul_acc(a.values().data(), b.values().data(), out.data(), n, k, m);
  bool tracked = detail::track({&a, &b});
  Tensor r = detail::make_result("matmul", {n, m}, std::move(out), tracked);
  if (tracked) {
    GradTape::active().push([A = a.impl(), B = b.impl(), O = r.impl(), n, k,
                             m]() {
      const auto& g = O->ensure_grad();
      if (A->requires_grad) {
        auto& ga = A->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            const double* grow = g.data() + i * m;
            const double* brow = B->values.data() + p * m;
            for (std::size_t j = 0; j < m; ++j) s += grow[j] * brow[j];
            ga[i * k + p] += s;
          }
        }
      }
      if (B->requires_grad) {
        auto& gb = B->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const double* arow = A->values.data() + i * k;
          const double* grow = g.data() + i * m;
          for (std::size_t p = 0; p < k; ++p) {
            double av = arow[p];
            double* brow = gb.data() + p * m;
            for (std::size_t j = 0; j < m; ++j) brow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return r;
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: rank-2 tensor required");
  std::size_t n = a.shape()[0], m = a.shape()[1];
  std::vector<double> out(n * m);
  const auto& va = a.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = va[i * m + j];
  }
  bool tracked = detail::track({&a});
  Tensor r = detail::make_result("transpose", {m, n}, std::move(out), tracked);
  if (tracked) {
    GradTape::active().push([A = a.impl(), O = r.impl(), n, m]() {
      const auto& g = O->ensure_grad();
      auto& ga = A->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[j * n + i];
      }
    });
  }
  return r;
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (detail::shape_size(shape) != a.size() || shape.empty() ||
      shape.size() > 2) {
    throw ShapeError("reshape: element count mismatch for " +
                     detail::shape_str(shape));
  }
  bool tracked = detail::track({&a});
  Tensor r =
      detail::make_result("reshape", std::move(shape), a.values(), tracked);
  if (tracked) {
    GradTape::active().push([A = a.impl(), O = r.impl()]() {
      const auto& g = O->ensure_grad();
      auto& ga = A->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return r;
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  std::size_t rank = parts[0].rank();
  if (axis >= rank) throw ShapeError("concat: axis out of range");
  for (const Tensor& t : parts) {
    if (t.rank() != rank) throw ShapeError("concat: mixed ranks");
    for (std::size_t d = 0; d < rank; ++d) {
      if (d != axis && t.shape()[d] != parts[0].shape()[d]) {
        throw ShapeError("concat: shapes differ off the concat axis");
      }
    }
  }
  Shape shape = parts[0].shape();
  shape[axis] = 0;
  for (const Tensor& t : parts) shape[axis] += t.shape()[axis];
  std::size_t cols = rank == 2 ? shape[1] : shape[0];
  std::vector<double> out(detail::shape_size(shape));
  std::vector<std::size_t> offsets;  // column or row offsets per part
  if (rank == 1 || axis == 1) {
    std::size_t off = 0;
    for (const Tensor& t : parts) {
      offsets.push_back(off);
      std::size_t tc = rank == 1 ? t.shape()[0] : t.shape()[1];
      std::size_t tr = rank == 1 ? 1 : t.shape()[0];
      for (std::size_t i = 0; i < tr; ++i) {
        for (std::size_t j = 0; j < tc; ++j) {
          out[i * cols + off + j] = t.values()[i * tc + j];
        }
      }
      off += tc;
    }
  } else {  // axis == 0, rank 2 (or rank-1 handled above)
    std::size_t off = 0;
    for (const Tensor& t : parts) {
      offsets.push_back(off);
      std::copy(t.values().begin(), t.values().end(),
                out.begin() + static_cast<std::ptrdiff_t>(off * cols));
      off += t.shape()[0];
    }
  }
  bool tracked = false;
  for (const Tensor& t : parts) {
    tracked = tracked || detail::track({&t});
  }
  Tensor r = detail::make_result("concat", shape, std::move(out), tracked);
  if (tracked) {
    std::vector<std::shared_ptr<detail::TensorImpl>> impls;
    for (const Tensor& t : parts) impls.push_back(t.impl());
    GradTape::active().push([impls, offsets, O = r.impl(), rank, axis,
                             cols]() {
      const auto& g = O->ensure_grad();
      for (std::size_t pi = 0; pi < impls.size(); ++pi) {
        auto& part = impls[pi];
        if (!part->requires_grad) continue;
        auto& gp = part->ensure_grad();
        if (rank == 1 || axis == 1) {
          std::size_t tc = rank == 1 ? part->shape[0] : part->shape[1];
          std::size_t tr = rank == 1 ? 1 : part->shape[0];
          for (std::size_t i = 0; i < tr; ++i) {
            for (std::size_t j = 0; j < tc; ++j) {
              gp[i * tc + j] += g[i * cols + offsets[pi] + j];
            }
          }
        } else {
          std::size_t start = offsets[pi] * cols;
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[start + i];
        }
      }
    });
  }
  return r;
}

inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t start,
                    std::size_t len) {
  if (axis >= a.rank()) throw ShapeError("slice: axis out of range");
  if (len == 0 || start + len > a.shape()[axis]) {
    throw ShapeError("slice: range out of bounds");
  }
  Shape shape = a.shape();
  shape[axis] = len;
  std::size_t cols_in = a.rank() == 2 ? a.shape()[1] : a.shape()[0];
  std::vector<double> out(detail::shape_size(shape));
  if (a.rank() == 1 || (a.rank() == 2 && axis == 0)) {
    std::size_t row_len = a.rank() == 1 ? 1 : a.shape()[1];
    std::size_t begin = a.rank() == 1 ? start : start * row_len;
    std::copy(a.values().begin() + static_cast<std::ptrdiff_t>(begin),
              a.values().begin() + static_cast<std::ptrdiff_t>(
                                       begin + (a.rank() == 1 ? len : len * row_len)),
              out.begin());
  } else {
    std::size_t n = a.shape()[0];
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < len; ++j) {
        out[i * len + j] = a.values()[i * cols_in + start + j];
      }
    }
  }
  bool tracked = detail::track({&a});
  Tensor r = detail::make_result("slice", shape, std::move(out), tracked);
  if (tracked) {
    GradTape::active().push([A = a.impl(), O = r.impl(), axis, start, len]() {
      const auto& g = O->ensure_grad();
      auto& ga = A->ensure_grad();
      if (A->shape.size() == 1 || axis == 0) {
        std::size_t row_len = A->shape.size() == 1 ? 1 : A->shape[1];
        std::size_t begin = start * row_len;
        for (std::size_t i = 0; i < g.size(); ++i) ga[begin + i] += g[i];
      } else {
        std::size_t n = A->shape[0], cols_in = A->shape[1];
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < len; ++j) {
            ga[i * cols_in + start + j] += g[i * len + j];
          }
        }
      }
    });
  }
  return r;
}

inline Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  bool tracked = detail::track({&a});
  Tensor r = detail::make_result("sum_all", {1}, {s}, tracked);
  if (tracked) {
    GradTape::active().push([A = a.impl(), O = r.impl()]() {
      double g = O->ensure_grad()[0];
      auto& ga = A->ensure_grad();
      for (double& x : ga) x += g;
    });
  }
  return r;
}

inline Tensor mean_all(const Tensor& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

// axis 0 collapses rows -> [cols]; axis 1 collapses columns -> [rows].
inline Tensor sum_axis(const Tensor& a, std::size_t axis) {
  if (a.rank() != 2) throw ShapeError("sum_axis: rank-2 tensor required");
  if (axis > 1) throw ShapeError("sum_axis: axis out of range");
  std::size_t n = a.shape()[0], m = a.shape()[1];
  std::size_t out_n = axis == 0 ? m : n;
  std::vector<double> out(out_n, 0.0);
  const auto& va = a.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      out[axis == 0 ? j : i] += va[i * m + j];
    }
  }
  bool tracked = detail::track({&a});
  Tensor r = detail::make_result("sum_axis", {out_n}, std::move(out), tracked);
  if (tracked) {
    GradTape::active().push([A = a.impl(), O = r.impl(), n, m, axis]() {
      const auto& g = O->ensure_grad();
      auto& ga = A->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          ga[i * m + j] += g[axis == 0 ? j : i];
        }
      }
    });
  }
  return r;
}

inline Tensor mean_axis(const Tensor& a, std::size_t axis) {
  double denom = static_cast<double>(axis == 0 ? a.shape()[0] : a.shape()[1]);
  return scale(sum_axis(a, axis), 1.0 / denom);
}

// Rowwise softmax of x / temperature (rank-1 tensors are a single row).
inline Tensor softmax(const Tensor& a, std::size_t axis = 1,
                      double temperature = 1.0) {
  if (temperature <= 0.0) throw TensorError("softmax: temperature must be > 0");
  if (a.rank() == 2 && axis == 0) return transpose(softmax(transpose(a), 1, temperature));
  std::size_t n = a.rank() == 2 ? a.shape()[0] : 1;
  std::size_t m = a.rank() == 2 ? a.shape()[1] : a.shape()[0];
  std::vector<double> out(n * m);
  const auto& va = a.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = va.data() + i * m;
    double mx = row[0];
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      double e = std::exp((row[j] - mx) / temperature);
      out[i * m + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= z;
  }
  bool tracked = detail::track({&a});
  Tensor r = detail::make_result("softmax", a.shape(), std::move(out), tracked);
  if (tracked) {
    GradTape::active().push([A = a.impl(), O = r.impl(), n, m, temperature]() {
      const auto& g = O->ensure_grad();
      auto& ga = A->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double* y = O->values.data() + i * m;
        const double* gy = g.data() + i * m;
        double dot = 0.0;
        for (std::size_t j = 0; j < m; ++j) dot += gy[j] * y[j];
        for (std::size_t j = 0; j < m; ++j) {
          ga[i * m + j] += y[j] * (gy[j] - dot) / temperature;
        }
      }
    });
  }
  return r;
}

// Rowwise normalization to zero mean / unit variance (no affine part).
inline Tensor layer_norm(const Tensor& a, double eps = 1e-5) {
  std::size_t n = a.rank() == 2 ? a.shape()[0] : 1;
  std::size_t m = a.rank() == 2 ? a.shape()[1] : a.shape()[0];
  std::vector<double> out(n * m);
  std::vector<double> inv_std(n);
  const auto& va = a.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = va.data() + i * m;
    double mean = 0.0;
    for (std::size_t j = 0; j < m; ++j) mean += row[j];
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(m);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = (row[j] - mean) * is;
  }
  bool tracked = detail::track({&a});
  Tensor r =
      detail::make_result("layer_norm", a.shape(), std::move(out), tracked);
  if (tracked) {
    GradTape::active().push(
        [A = a.impl(), O = r.impl(), inv_std = std::move(inv_std), n, m]() {
          const auto& g = O->ensure_grad();
          auto& ga = A->ensure_grad();
          double inv_m = 1.0 / static_cast<double>(m);
          for (std::size_t i = 0; i < n; ++i) {
            const double* y = O->values.data() + i * m;
            const double* gy = g.data() + i * m;
            double mean_g = 0.0, mean_gy = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
              mean_g += gy[j];
              mean_gy += gy[j] * y[j];
            }
            mean_g *= inv_m;
            mean_gy *= inv_m;
            for (std::size_t j = 0; j < m; ++j) {
              ga[i * m + j] += inv_std[i] * (gy[j] - mean_g - y[j] * mean_gy);
            }
          }
        });
  }
  return r;
}

// Rows scaled to unit Euclidean norm; the epsilon keeps zero rows finite.
inline Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-12) {
  if (a.rank() != 2) throw ShapeError("l2_normalize_rows: rank-2 required");
  Tensor norms = sqrt(sum_axis(square(a), 1));                  // [n]
  Tensor denom = add_const(reshape(norms, {a.shape()[0], 1}), eps);  // [n,1]
  return div(a, denom);
}

// softmax(q k^T / sqrt(d) + mask) v composed from primitive ops.
inline Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k,
                                           const Tensor& v,
                                           const Tensor* mask = nullptr) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 ||
      q.shape()[1] != k.shape()[1] || k.shape()[0] != v.shape()[0]) {
    throw ShapeError("scaled_dot_product_attention: incompatible shapes");
  }
  double inv = 1.0 / std::sqrt(static_cast<double>(q.shape()[1]));
  Tensor scores = scale(matmul(q, transpose(k)), inv);
  if (mask != nullptr) scores = add(scores, *mask);
  return matmul(softmax(scores, 1, 1.0), v);
}

}  // namespace mtsjepa
