#pragma once

// Reverse-mode automatic differentiation over Tensor<T>.
//
// A Tape records every operation in creation order. Var is a cheap handle
// (tape pointer + node index). Parameters live outside any tape; entering
// one with Tape::param() links the node to the parameter's own value and
// gradient storage, so backward() accumulates straight into Parameter::grad.
//
// Broadcasting is limited to a size-1 operand against a tensor; the only
// row-wise broadcast is the explicit add_row().

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include "ctxnmt/error.hpp"
#include "ctxnmt/tensor.hpp"

namespace ctxnmt {

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  void zero_grad() {
    if (grad.empty() || !grad.same_shape(value))
      grad = Tensor<T>(value.shape());
    else
      grad.fill(T{0});
  }
};

template <class T>
class Tape;

template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  /// Gradient after backward(); an all-zero tensor if nothing reached it.
  const Tensor<T>& grad() const { return tape_->grad(id_); }

 private:
  Tape<T>* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::uint32_t)>;

  /// With record_grad == false the tape only evaluates (inference mode).
  explicit Tape(bool record_grad = true) : record_(record_grad) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }
  std::size_t last_backward_visits() const { return visits_; }

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

  Var<T> leaf(Tensor<T> value, bool requires_grad = true) {
    return push(std::move(value), requires_grad && record_, nullptr);
  }

  /// Enters a parameter once per tape; later calls return the cached node.
  Var<T> param(Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var<T>(this, it->second);
    Node n;
    n.ext_value = &p.value;
    n.requires_grad = record_;
    if (record_) {
      if (p.grad.empty() || !p.grad.same_shape(p.value)) p.grad = Tensor<T>(p.value.shape());
      n.ext_grad = &p.grad;
    }
    nodes_.push_back(std::move(n));
    const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
    param_nodes_.emplace(&p, id);
    return Var<T>(this, id);
  }

  Var<T> push(Tensor<T> value, bool requires_grad, Backward fn) {
    Node n;
    n.own_value = std::move(value);
    n.requires_grad = requires_grad && record_;
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  const Tensor<T>& value(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.ext_value ? *n.ext_value : n.own_value;
  }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

  const Tensor<T>& grad(std::uint32_t id) { return grad_ref(id); }

  /// Gradient storage for accumulation; allocated zero on first touch.
  Tensor<T>& grad_ref(std::uint32_t id) {
    Node& n = nodes_[id];
    if (n.ext_grad) return *n.ext_grad;
    if (n.own_grad.empty()) n.own_grad = Tensor<T>(value(id).shape());
    return n.own_grad;
  }

  /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Gradients of
  /// intermediate nodes are reset first; leaves and parameters accumulate
  /// across calls.
  void backward(Var<T> loss) {
    if (loss.valid() && &loss.tape() != this)
      throw ContractError("backward: loss belongs to a different tape");
    if (value(loss.id()).size() != 1)
      throw ContractError("backward: loss must be a scalar, got shape " +
                          shape_str(value(loss.id()).shape()));
    if (!record_) throw ContractError("backward: tape was created in inference mode");
    for (std::uint32_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].backward && !nodes_[i].own_grad.empty()) nodes_[i].own_grad.fill(T{0});
    visits_ = 0;
    if (!nodes_[loss.id()].requires_grad) return;
    grad_ref(loss.id())[0] += T{1};
    for (std::int64_t i = loss.id(); i >= 0; --i) {
      auto id = static_cast<std::uint32_t>(i);
      Node& n = nodes_[id];
      if (!n.requires_grad) continue;
      ++visits_;
      if (!n.backward || n.own_grad.empty()) continue;
      n.backward(*this, id);
    }
  }

 private:
  struct Node {
    Tensor<T> own_value;
    Tensor<T> own_grad;
    Tensor<T>* ext_value = nullptr;
    Tensor<T>* ext_grad = nullptr;
    bool requires_grad = false;
    Backward backward;
  };

  bool record_;
  std::deque<Node> nodes_;  // stable references across push
  std::unordered_map<const Parameter<T>*, std::uint32_t> param_nodes_;
  std::size_t visits_ = 0;
};

namespace detail {

template <class T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
  return a.tape();
}

template <class T>
bool any_grad(std::initializer_list<Var<T>> vs) {
  for (const auto& v : vs)
    if (v.requires_grad()) return true;
  return false;
}

inline void require_matrix(const Shape& s, const char* op) {
  if (s.size() > 2) throw DimensionError(std::string(op) + ": expected rank <= 2, got " + shape_str(s));
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor<T> t = Tensor<T>::matrix(n, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t(j, i) = a(i, j);
  return t;
}

template <class T>
struct Strip64;
template <>
struct Strip64<float> {
  typedef float type __attribute__((vector_size(64)));
};
template <>
struct Strip64<double> {
  typedef double type __attribute__((vector_size(64)));
};

// out[m x n] += a[m x k] * b[k x n]; each out element sums over k in order.
// a(i, p) is read at a[i * ars + p * acs], so a transposed left operand needs no copy.
// Register-blocked over 8 rows x one 64-byte column strip; the remainder takes the plain
// loop, which accumulates in the same order.
template <class T>
void gemm_acc_strided(const T* __restrict a, std::size_t ars, std::size_t acs, const T* __restrict b,
                      T* __restrict out, std::size_t m, std::size_t k, std::size_t n) {
  constexpr std::size_t kRows = 8;
  constexpr std::size_t kCols = 64 / sizeof(T);
  using Strip = typename Strip64<T>::type;
  const std::size_t mb = m - m % kRows, nb = n - n % kCols;
  for (std::size_t i = 0; i < mb; i += kRows) {
    for (std::size_t j = 0; j < nb; j += kCols) {
      Strip acc[kRows];
      for (std::size_t r = 0; r < kRows; ++r) std::memcpy(&acc[r], out + (i + r) * n + j, sizeof(Strip));
      for (std::size_t p = 0; p < k; ++p) {
        Strip bv;
        std::memcpy(&bv, b + p * n + j, sizeof(Strip));
        for (std::size_t r = 0; r < kRows; ++r) acc[r] += a[(i + r) * ars + p * acs] * bv;
      }
      for (std::size_t r = 0; r < kRows; ++r) std::memcpy(out + (i + r) * n + j, &acc[r], sizeof(Strip));
    }
  }
  auto plain = [&](std::size_t i0, std::size_t i1, std::size_t j0, std::size_t j1) {
    for (std::size_t i = i0; i < i1; ++i) {
      T* o = out + i * n;
      const T* ar = a + i * ars;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = ar[p * acs];
        const T* br = b + p * n;
        for (std::size_t j = j0; j < j1; ++j) o[j] += av * br[j];
      }
    }
  };
  if (nb < n) plain(0, mb, nb, n);
  if (mb < m) plain(mb, m, 0, n);
}

template <class T>
void gemm_acc(const T* __restrict a, const T* __restrict b, T* __restrict out, std::size_t m, std::size_t k,
              std::size_t n) {
  gemm_acc_strided(a, k, 1, b, out, m, k, n);
}

// Single-precision exp/tanh/sigmoid written branch-free so loops over them
// vectorize; double precision (gradient checks) uses the standard library.
inline float exp_f32(float x) {
  x = std::min(88.3762626647949f, std::max(-87.3365478515625f, x));
  const float n = std::floor(x * 1.44269504088896341f + 0.5f);
  float r = x - n * 0.693359375f;
  r = r - n * -2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  p = p * r * r + r + 1.0f;
  const auto bits = static_cast<std::uint32_t>(static_cast<std::int32_t>(n) + 127) << 23;
  return p * std::bit_cast<float>(bits);
}

inline float tanh_f32(float x) {
  const float ax = std::abs(x);
  const float z = x * x;
  float small = -5.70498872745e-3f;
  small = small * z + 2.06390887954e-2f;
  small = small * z - 5.37397155531e-2f;
  small = small * z + 1.33314422036e-1f;
  small = small * z - 3.33332819422e-1f;
  small = small * z * x + x;
  const float large = std::copysign(1.0f - 2.0f / (exp_f32(2.0f * ax) + 1.0f), x);
  return ax < 0.625f ? small : large;
}

template <class T>
T exp_t(T x) {
  if constexpr (std::is_same_v<T, float>) return exp_f32(x);
  else return std::exp(x);
}

template <class T>
T tanh_t(T x) {
  if constexpr (std::is_same_v<T, float>) return tanh_f32(x);
  else return std::tanh(x);
}

template <class T>
T sigmoid_scalar(T x) {
  if constexpr (std::is_same_v<T, float>) {
    return 1.0f / (1.0f + exp_f32(-x));
  } else {
    if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
    const T e = std::exp(x);
    return e / (T{1} + e);
  }
}

enum class Binary { add, sub, mul };

template <class T>
Var<T> binary(Var<T> a, Var<T> b, Binary kind, const char* name) {
  Tape<T>& tape = same_tape(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const bool a_scalar = av.size() == 1 && bv.size() != 1;
  const bool b_scalar = bv.size() == 1 && !a_scalar && !av.same_shape(bv);
  if (!a_scalar && !b_scalar && !av.same_shape(bv))
    throw DimensionError(std::string(name) + ": shape mismatch " + shape_str(av.shape()) + " vs " +
                         shape_str(bv.shape()));
  const Tensor<T>& big = a_scalar ? bv : av;
  Tensor<T> out(big.shape());
  const std::size_t n = out.size();
  {
    const T* x = av.data();
    const T* y = bv.data();
    T* o = out.data();
    auto run = [&](auto f) {
      if (a_scalar)
        for (std::size_t i = 0; i < n; ++i) o[i] = f(x[0], y[i]);
      else if (b_scalar)
        for (std::size_t i = 0; i < n; ++i) o[i] = f(x[i], y[0]);
      else
        for (std::size_t i = 0; i < n; ++i) o[i] = f(x[i], y[i]);
    };
    switch (kind) {
      case Binary::add: run([](T p, T q) { return p + q; }); break;
      case Binary::sub: run([](T p, T q) { return p - q; }); break;
      case Binary::mul: run([](T p, T q) { return p * q; }); break;
    }
  }
  const auto ia = a.id(), ib = b.id();
  return tape.push(std::move(out), any_grad({a, b}),
                   [ia, ib, a_scalar, b_scalar, kind](Tape<T>& t, std::uint32_t self) {
                     const Tensor<T>& g = t.grad_ref(self);
                     const std::size_t n = g.size();
                     const T* gp = g.data();
                     // d(out)/d(operand) is 1, -1 or the other operand.
                     auto acc = [&](std::uint32_t id, bool scalar, T sign, const T* other, bool other_scalar) {
                       T* gd = t.grad_ref(id).data();
                       if (scalar) {
                         T s = 0;
                         for (std::size_t i = 0; i < n; ++i) s += gp[i] * (other ? other[other_scalar ? 0 : i] : sign);
                         gd[0] += s;
                       } else if (!other) {
                         for (std::size_t i = 0; i < n; ++i) gd[i] += sign * gp[i];
                       } else if (other_scalar) {
                         const T o = other[0];
                         for (std::size_t i = 0; i < n; ++i) gd[i] += gp[i] * o;
                       } else {
                         for (std::size_t i = 0; i < n; ++i) gd[i] += gp[i] * other[i];
                       }
                     };
                     const bool is_mul = kind == Binary::mul;
                     if (t.requires_grad(ia)) acc(ia, a_scalar, T{1}, is_mul ? t.value(ib).data() : nullptr, b_scalar);
                     if (t.requires_grad(ib))
                       acc(ib, b_scalar, kind == Binary::sub ? T{-1} : T{1}, is_mul ? t.value(ia).data() : nullptr, a_scalar);
                   });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// a[m x k] * b[k x n]. Rank-1 operands are treated as a single row.
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  detail::require_matrix(av.shape(), "matmul");
  detail::require_matrix(bv.shape(), "matmul");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k)
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
  Tensor<T> out = Tensor<T>::matrix(m, n);
  detail::gemm_acc(av.data(), bv.data(), out.data(), m, k, n);
  const auto ia = a.id(), ib = b.id();
  return tape.push(std::move(out), detail::any_grad({a, b}),
                   [ia, ib, m, k, n](Tape<T>& t, std::uint32_t self) {
                     const Tensor<T>& g = t.grad_ref(self);
                     if (t.requires_grad(ia)) {
                       // dA += dC * B^T
                       const Tensor<T> bt = detail::transpose(t.value(ib));
                       detail::gemm_acc(g.data(), bt.data(), t.grad_ref(ia).data(), m, n, k);
                     }
                     if (t.requires_grad(ib)) {
                       // dB += A^T * dC
                       detail::gemm_acc_strided(t.value(ia).data(), 1, k, g.data(), t.grad_ref(ib).data(), k, m, n);
                     }
                   });
}

/// a[m x k] * b[n x k]^T without materializing a transposed copy on the tape.
template <class T>
Var<T> matmul_bt(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  detail::require_matrix(av.shape(), "matmul_bt");
  detail::require_matrix(bv.shape(), "matmul_bt");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  if (bv.cols() != k)
    throw DimensionError("matmul_bt: inner dimensions disagree, " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()) + "^T");
  const Tensor<T> bt = detail::transpose(bv);
  Tensor<T> out = Tensor<T>::matrix(m, n);
  detail::gemm_acc(av.data(), bt.data(), out.data(), m, k, n);
  const auto ia = a.id(), ib = b.id();
  return tape.push(std::move(out), detail::any_grad({a, b}),
                   [ia, ib, m, k, n](Tape<T>& t, std::uint32_t self) {
                     const Tensor<T>& g = t.grad_ref(self);
                     if (t.requires_grad(ia))  // dA += dC * B
                       detail::gemm_acc(g.data(), t.value(ib).data(), t.grad_ref(ia).data(), m, n, k);
                     if (t.requires_grad(ib))  // dB += dC^T * A
                       detail::gemm_acc_strided(g.data(), 1, n, t.value(ia).data(), t.grad_ref(ib).data(), n, m, k);
                   });
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  return detail::binary(a, b, detail::Binary::add, "add");
}
template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  return detail::binary(a, b, detail::Binary::sub, "sub");
}
template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  return detail::binary(a, b, detail::Binary::mul, "mul");
}

/// alpha * x + beta, elementwise.
template <class T>
Var<T> affine(Var<T> x, T alpha, T beta) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * xv[i] + beta;
  const auto ix = x.id();
  return x.tape().push(std::move(out), x.requires_grad(), [ix, alpha](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    Tensor<T>& gx = t.grad_ref(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += alpha * g[i];
  });
}

template <class T>
Var<T> scale(Var<T> x, T s) {
  return affine(x, s, T{0});
}

template <class T>
Var<T> one_minus(Var<T> x) {
  return affine(x, T{-1}, T{1});
}

template <class T>
Var<T> tanh(Var<T> x) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::tanh_t(xv[i]);
  const auto ix = x.id();
  return x.tape().push(std::move(out), x.requires_grad(), [ix](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    const Tensor<T>& y = t.value(self);
    Tensor<T>& gx = t.grad_ref(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (T{1} - y[i] * y[i]);
  });
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid_scalar(xv[i]);
  const auto ix = x.id();
  return x.tape().push(std::move(out), x.requires_grad(), [ix](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    const Tensor<T>& y = t.value(self);
    Tensor<T>& gx = t.grad_ref(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (T{1} - y[i]);
  });
}

/// x[m x n] + b[n] added to every row.
template <class T>
Var<T> add_row(Var<T> x, Var<T> b) {
  Tape<T>& tape = detail::same_tape(x, b);
  const Tensor<T>& xv = x.value();
  const Tensor<T>& bv = b.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (bv.size() != n)
    throw DimensionError("add_row: bias " + shape_str(bv.shape()) + " does not match rows of " +
                         shape_str(xv.shape()));
  Tensor<T> out = xv;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += bv[j];
  const auto ix = x.id(), ib = b.id();
  return tape.push(std::move(out), detail::any_grad({x, b}), [ix, ib, m, n](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    if (t.requires_grad(ix)) {
      Tensor<T>& gx = t.grad_ref(ix);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor<T>& gb = t.grad_ref(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g(i, j);
    }
  });
}

/// Per-row blend m[r] * a + (1 - m[r]) * b. Used to freeze recurrent state on
/// padded positions; the weights are constants.
template <class T>
Var<T> row_blend(Var<T> a, Var<T> b, std::span<const T> m) {
  Tape<T>& tape = detail::same_tape(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (!av.same_shape(bv) || m.size() != av.rows())
    throw DimensionError("row_blend: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  const std::size_t rows = av.rows(), n = av.cols();
  Tensor<T> out(av.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out(r, j) = m[r] * av(r, j) + (T{1} - m[r]) * bv(r, j);
  std::vector<T> w(m.begin(), m.end());
  const auto ia = a.id(), ib = b.id();
  return tape.push(std::move(out), detail::any_grad({a, b}),
                   [ia, ib, w = std::move(w), n](Tape<T>& t, std::uint32_t self) {
                     const Tensor<T>& g = t.grad_ref(self);
                     const bool ga_on = t.requires_grad(ia), gb_on = t.requires_grad(ib);
                     for (std::size_t r = 0; r < w.size(); ++r)
                       for (std::size_t j = 0; j < n; ++j) {
                         if (ga_on) t.grad_ref(ia)(r, j) += w[r] * g(r, j);
                         if (gb_on) t.grad_ref(ib)(r, j) += (T{1} - w[r]) * g(r, j);
                       }
                   });
}

// ---------------------------------------------------------------------------
// Structural

template <class T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  Tape<T>& tape = parts[0].tape();
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  bool grad = false;
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    detail::same_tape(parts[0], p);
    if (p.rows() != m)
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    n += p.cols();
    grad = grad || p.requires_grad();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  Tensor<T> out = Tensor<T>::matrix(m, n);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor<T>& v = p.value();
    for (std::size_t i = 0; i < m; ++i) std::copy(v.row(i), v.row(i) + v.cols(), out.row(i) + off);
    off += v.cols();
  }
  return tape.push(std::move(out), grad, [ids, widths, m](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) {
        Tensor<T>& gk = t.grad_ref(ids[k]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) gk(i, j) += g(i, off + j);
      }
      off += widths[k];
    }
  });
}

template <class T>
Var<T> concat_cols(std::initializer_list<Var<T>> parts) {
  std::vector<Var<T>> v(parts);
  return concat_cols(std::span<const Var<T>>(v));
}

template <class T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t count) {
  const Tensor<T>& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (count == 0 || begin + count > n)
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + shape_str(xv.shape()));
  Tensor<T> out = Tensor<T>::matrix(m, count);
  for (std::size_t i = 0; i < m; ++i) std::copy(xv.row(i) + begin, xv.row(i) + begin + count, out.row(i));
  const auto ix = x.id();
  return x.tape().push(std::move(out), x.requires_grad(), [ix, begin, count, m](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    Tensor<T>& gx = t.grad_ref(ix);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) gx(i, begin + j) += g(i, j);
  });
}

/// Row gather: out[i] = table[ids[i]]. Embedding lookup and beam reordering.
template <class T>
Var<T> gather_rows(Var<T> table, std::span<const int> ids) {
  const Tensor<T>& tv = table.value();
  const std::size_t v = tv.rows(), n = tv.cols();
  Tensor<T> out = Tensor<T>::matrix(ids.size(), n);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v)
      throw ContractError("gather_rows: id " + std::to_string(ids[i]) + " outside [0, " + std::to_string(v) + ")");
    std::copy(tv.row(ids[i]), tv.row(ids[i]) + n, out.row(i));
  }
  std::vector<int> idv(ids.begin(), ids.end());
  const auto it = table.id();
  return table.tape().push(std::move(out), table.requires_grad(),
                           [it, idv = std::move(idv), n](Tape<T>& t, std::uint32_t self) {
                             const Tensor<T>& g = t.grad_ref(self);
                             Tensor<T>& gt = t.grad_ref(it);
                             for (std::size_t i = 0; i < idv.size(); ++i) {
                               T* dst = gt.row(idv[i]);
                               const T* src = g.row(i);
                               for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
                             }
                           });
}

// ---------------------------------------------------------------------------
// Normalization and reductions

/// Row-wise layer normalization with learned gain and bias.
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
  Tape<T>& tape = detail::same_tape(x, gain);
  detail::same_tape(x, bias);
  const Tensor<T>& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (gain.value().size() != n || bias.value().size() != n)
    throw DimensionError("layer_norm: gain/bias width does not match " + shape_str(xv.shape()));
  const Tensor<T>& gv = gain.value();
  const Tensor<T>& bv = bias.value();
  Tensor<T> out(xv.shape());
  Tensor<T> xhat(xv.shape());
  std::vector<T> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* r = xv.row(i);
    T* xh = xhat.row(i);
    T* o = out.row(i);
    const T* gp = gv.data();
    const T* bp = bv.data();
    T mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += r[j];
    mean /= static_cast<T>(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (r[j] - mean) * (r[j] - mean);
    var /= static_cast<T>(n);
    const T is = T{1} / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      xh[j] = (r[j] - mean) * is;
      o[j] = gp[j] * xh[j] + bp[j];
    }
  }
  const auto ix = x.id(), ig = gain.id(), ib = bias.id();
  return tape.push(std::move(out), detail::any_grad({x, gain, bias}),
                   [ix, ig, ib, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t,
                                                                                         std::uint32_t self) {
                     const Tensor<T>& g = t.grad_ref(self);
                     const Tensor<T>& gv = t.value(ig);
                     if (t.requires_grad(ig)) {
                       T* gg = t.grad_ref(ig).data();
                       for (std::size_t i = 0; i < m; ++i) {
                         const T* gr = g.row(i);
                         const T* xh = xhat.row(i);
                         for (std::size_t j = 0; j < n; ++j) gg[j] += gr[j] * xh[j];
                       }
                     }
                     if (t.requires_grad(ib)) {
                       T* gb = t.grad_ref(ib).data();
                       for (std::size_t i = 0; i < m; ++i) {
                         const T* gr = g.row(i);
                         for (std::size_t j = 0; j < n; ++j) gb[j] += gr[j];
                       }
                     }
                     if (t.requires_grad(ix)) {
                       Tensor<T>& gxt = t.grad_ref(ix);
                       const T* gp = gv.data();
                       std::vector<T> dxhat(n);
                       for (std::size_t i = 0; i < m; ++i) {
                         const T* gr = g.row(i);
                         const T* xh = xhat.row(i);
                         T* gx = gxt.row(i);
                         T mean_d = 0, mean_dx = 0;
                         for (std::size_t j = 0; j < n; ++j) {
                           dxhat[j] = gr[j] * gp[j];
                           mean_d += dxhat[j];
                           mean_dx += dxhat[j] * xh[j];
                         }
                         mean_d /= static_cast<T>(n);
                         mean_dx /= static_cast<T>(n);
                         const T is = inv_std[i];
                         for (std::size_t j = 0; j < n; ++j) gx[j] += is * (dxhat[j] - mean_d - xh[j] * mean_dx);
                       }
                     }
                   });
}

/// Row-wise softmax. Max-subtracted; masked entries (mask[r*n+j] == 0) are
/// exactly zero. A row with no unmasked entry is a contract error.
template <class T>
Var<T> softmax_rows(Var<T> x, std::span<const std::uint8_t> mask = {}) {
  const Tensor<T>& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (!mask.empty() && mask.size() != m * n)
    throw DimensionError("softmax: mask size " + std::to_string(mask.size()) + " does not match " +
                         shape_str(xv.shape()));
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const T* r = xv.row(i);
    T* o = out.row(i);
    auto on = [&](std::size_t j) { return mask.empty() || mask[i * n + j] != 0; };
    T mx = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j)
      if (on(j)) {
        mx = std::max(mx, r[j]);
        any = true;
      }
    if (!any) throw ContractError("softmax: every position of row " + std::to_string(i) + " is masked (empty support)");
    T z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = on(j) ? detail::exp_t(r[j] - mx) : T{0};
      z += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  const auto ix = x.id();
  return x.tape().push(std::move(out), x.requires_grad(), [ix, m, n](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    const Tensor<T>& y = t.value(self);
    Tensor<T>& gx = t.grad_ref(ix);
    for (std::size_t i = 0; i < m; ++i) {
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += y(i, j) * g(i, j);
      for (std::size_t j = 0; j < n; ++j) gx(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

template <class T>
Var<T> log_softmax_rows(Var<T> x) {
  const Tensor<T>& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const T* r = xv.row(i);
    const T mx = *std::max_element(r, r + n);
    T z = 0;
    for (std::size_t j = 0; j < n; ++j) z += detail::exp_t(r[j] - mx);
    const T lz = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out(i, j) = r[j] - lz;
  }
  const auto ix = x.id();
  return x.tape().push(std::move(out), x.requires_grad(), [ix, m, n](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    const Tensor<T>& y = t.value(self);
    Tensor<T>& gx = t.grad_ref(ix);
    for (std::size_t i = 0; i < m; ++i) {
      T s = 0;
      for (std::size_t j = 0; j < n; ++j) s += g(i, j);
      for (std::size_t j = 0; j < n; ++j) gx(i, j) += g(i, j) - detail::exp_t(y(i, j)) * s;
    }
  });
}

/// out[b] = sum_j w[b, j] * states[j][b]; weights [B x L], states L x [B x D].
template <class T>
Var<T> weighted_sum(Var<T> w, std::span<const Var<T>> states) {
  const Tensor<T>& wv = w.value();
  const std::size_t b = wv.rows(), l = wv.cols();
  if (states.size() != l)
    throw DimensionError("weighted_sum: " + std::to_string(l) + " weights per row but " +
                         std::to_string(states.size()) + " states");
  const std::size_t d = states[0].cols();
  bool grad = w.requires_grad();
  std::vector<std::uint32_t> ids;
  for (const auto& s : states) {
    detail::same_tape(w, s);
    if (s.rows() != b || s.cols() != d)
      throw DimensionError("weighted_sum: state shape " + shape_str(s.shape()) + " inconsistent with weights " +
                           shape_str(wv.shape()));
    grad = grad || s.requires_grad();
    ids.push_back(s.id());
  }
  Tensor<T> out = Tensor<T>::matrix(b, d);
  for (std::size_t j = 0; j < l; ++j) {
    const Tensor<T>& sv = states[j].value();
    for (std::size_t r = 0; r < b; ++r) {
      const T a = wv(r, j);
      if (a == T{0}) continue;
      const T* src = sv.row(r);
      T* dst = out.row(r);
      for (std::size_t k = 0; k < d; ++k) dst[k] += a * src[k];
    }
  }
  const auto iw = w.id();
  return w.tape().push(std::move(out), grad, [iw, ids, b, l, d](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    const Tensor<T>& wv = t.value(iw);
    const bool gw = t.requires_grad(iw);
    for (std::size_t j = 0; j < l; ++j) {
      const Tensor<T>& sv = t.value(ids[j]);
      const bool gs = t.requires_grad(ids[j]);
      for (std::size_t r = 0; r < b; ++r) {
        if (gw) {
          T dot = 0;
          for (std::size_t k = 0; k < d; ++k) dot += g(r, k) * sv(r, k);
          t.grad_ref(iw)(r, j) += dot;
        }
        if (gs) {
          const T a = wv(r, j);
          Tensor<T>& gsv = t.grad_ref(ids[j]);
          for (std::size_t k = 0; k < d; ++k) gsv(r, k) += a * g(r, k);
        }
      }
    }
  });
}

/// Row-wise dot with a vector: x[B x n] . v[n] -> [B x 1].
template <class T>
Var<T> rowdot(Var<T> x, Var<T> v) {
  Tape<T>& tape = detail::same_tape(x, v);
  const Tensor<T>& xv = x.value();
  const Tensor<T>& vv = v.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (vv.size() != n)
    throw DimensionError("rowdot: " + shape_str(xv.shape()) + " . " + shape_str(vv.shape()));
  Tensor<T> out = Tensor<T>::matrix(m, 1);
  for (std::size_t i = 0; i < m; ++i) {
    T s = 0;
    for (std::size_t j = 0; j < n; ++j) s += xv(i, j) * vv[j];
    out[i] = s;
  }
  const auto ix = x.id(), iv = v.id();
  return tape.push(std::move(out), detail::any_grad({x, v}), [ix, iv, m, n](Tape<T>& t, std::uint32_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    const Tensor<T>& xv = t.value(ix);
    const Tensor<T>& vv = t.value(iv);
    if (t.requires_grad(ix)) {
      Tensor<T>& gx = t.grad_ref(ix);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx(i, j) += g[i] * vv[j];
    }
    if (t.requires_grad(iv)) {
      Tensor<T>& gv = t.grad_ref(iv);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gv[j] += g[i] * xv(i, j);
    }
  });
}

template <class T>
Var<T> sum(Var<T> x) {
  const Tensor<T>& xv = x.value();
  T s = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i];
  const auto ix = x.id();
  return x.tape().push(Tensor<T>::scalar(s), x.requires_grad(), [ix](Tape<T>& t, std::uint32_t self) {
    const T g = t.grad_ref(self)[0];
    Tensor<T>& gx = t.grad_ref(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

/// sum_r w[r] * x[r, targets[r]] as a scalar.
template <class T>
Var<T> pick_sum(Var<T> x, std::span<const int> targets, std::span<const T> weights) {
  const Tensor<T>& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (targets.size() != m || weights.size() != m)
    throw DimensionError("pick_sum: " + std::to_string(targets.size()) + " targets for " + shape_str(xv.shape()));
  T s = 0;
  for (std::size_t r = 0; r < m; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= n)
      throw ContractError("pick_sum: target id " + std::to_string(targets[r]) + " out of range");
    if (weights[r] != T{0}) s += weights[r] * xv(r, targets[r]);
  }
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<T> w(weights.begin(), weights.end());
  const auto ix = x.id();
  return x.tape().push(Tensor<T>::scalar(s), x.requires_grad(),
                       [ix, tg = std::move(tg), w = std::move(w)](Tape<T>& t, std::uint32_t self) {
                         const T g = t.grad_ref(self)[0];
                         Tensor<T>& gx = t.grad_ref(ix);
                         for (std::size_t r = 0; r < tg.size(); ++r) gx(r, tg[r]) += g * w[r];
                       });
}

}  // namespace ctxnmt
