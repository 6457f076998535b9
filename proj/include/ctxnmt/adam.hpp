#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ctxnmt/error.hpp"
#include "ctxnmt/params.hpp"

namespace ctxnmt {

template <class T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m, v;  // parallel to the parameter store

  void init(const ParameterStore<T>& ps) {
    m.clear();
    v.clear();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      m.emplace_back(ps[i].value.shape());
      v.emplace_back(ps[i].value.shape());
    }
    step = 0;
  }
};

/// Throws naming the first parameter with a NaN or infinite gradient.
template <class T>
void check_finite_gradients(const ParameterStore<T>& ps) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& g = ps[i].grad;
    for (std::size_t j = 0; j < g.size(); ++j)
      if (!std::isfinite(static_cast<double>(g[j])))
        throw DataError("non-finite gradient in parameter " + ps[i].name + " at index " + std::to_string(j));
  }
}

/// Scales all gradients so their global L2 norm is at most max_norm. Returns
/// the norm before clipping.
template <class T>
double clip_global_norm(ParameterStore<T>& ps, double max_norm) {
  double sq = 0;
  for (std::size_t i = 0; i < ps.size(); ++i)
    for (auto g : ps[i].grad.values()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (std::size_t i = 0; i < ps.size(); ++i)
      for (auto& g : ps[i].grad.values()) g *= s;
  }
  return norm;
}

/// Bias-corrected Adam update in place; increments the step counter.
template <class T>
void adam_step(ParameterStore<T>& ps, AdamState<T>& st, double lr) {
  if (st.m.size() != ps.size()) st.init(ps);
  check_finite_gradients(ps);
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& p = ps[i];
    if (p.grad.empty()) continue;
    if (!st.m[i].same_shape(p.value)) throw ContractError("adam: moment shape mismatch for " + p.name);
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      m[j] = static_cast<T>(st.beta1 * m[j] + (1 - st.beta1) * g);
      v[j] = static_cast<T>(st.beta2 * v[j] + (1 - st.beta2) * g * g);
      const double mh = m[j] / c1;
      const double vh = v[j] / c2;
      p.value[j] = static_cast<T>(p.value[j] - lr * mh / (std::sqrt(vh) + st.eps));
    }
  }
}

}  // namespace ctxnmt
