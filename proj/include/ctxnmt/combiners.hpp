#pragma once

// Multi-encoder context combination. Each combiner maps the per-encoder
// context vectors c^(1..K) (rows of width 2*hidden) to one context vector.
// Row-vector convention: a linear map W is applied as c * W.

#include <span>
#include <vector>

#include "ctxnmt/autodiff.hpp"
#include "ctxnmt/error.hpp"

namespace ctxnmt {

template <class T>
struct ConcatCombinerParams {
  Var<T> W_c;  // [(2H*K) x 2H]
  Var<T> b_c;  // [2H]
};

template <class T>
struct GateCombinerParams {
  Var<T> W_r, W_s, W_t, W_u;  // [2H x 2H]
  Var<T> b_r;                 // [2H]
};

template <class T>
struct HierCombinerParams {
  std::vector<Var<T>> U_b;  // per encoder, [2H x 2H]
  std::vector<Var<T>> U_c;  // per encoder, [2H x 2H]
  Var<T> W_b;               // [H x 2H]
  Var<T> v_b;               // [2H]
  Var<T> b_e;               // [1]
};

template <class T>
struct HierAttentionTrace {
  Var<T> energies;  // [B x K]
  Var<T> weights;   // [B x K], rows sum to 1
};

/// c = W_c [c1; c2] + b_c
template <class T>
Var<T> combine_concat(std::span<const Var<T>> cs, const ConcatCombinerParams<T>& p) {
  if (cs.size() != 2)
    throw ConfigError("combine_concat: exactly two context vectors required, got " + std::to_string(cs.size()));
  return add_row(matmul(concat_cols(cs), p.W_c), p.b_c);
}

/// r = tanh(W_r c1 + W_s c2) + b_r
/// c = r * (W_t c1) + (1 - r) * (W_u c2)
///
/// With use_sigmoid the gate is sigmoid(W_r c1 + W_s c2 + b_r) instead.
template <class T>
Var<T> combine_gate(Var<T> c1, Var<T> c2, const GateCombinerParams<T>& p, bool use_sigmoid = false) {
  auto pre = add(matmul(c1, p.W_r), matmul(c2, p.W_s));
  Var<T> r = use_sigmoid ? sigmoid(add_row(pre, p.b_r)) : add_row(tanh(pre), p.b_r);
  return add(mul(r, matmul(c1, p.W_t)), mul(one_minus(r), matmul(c2, p.W_u)));
}

/// e^(k) = v_b . tanh(W_b z + U_b^(k) c^(k)) + b_e
/// beta  = softmax_k(e)
/// c     = sum_k beta^(k) U_c^(k) c^(k)
template <class T>
std::pair<Var<T>, HierAttentionTrace<T>> combine_hier(std::span<const Var<T>> cs, Var<T> z_prev,
                                                      const HierCombinerParams<T>& p) {
  const std::size_t K = cs.size();
  if (K == 0) throw ConfigError("combine_hier: at least one context vector required");
  if (p.U_b.size() != K || p.U_c.size() != K)
    throw ConfigError("combine_hier: " + std::to_string(K) + " context vectors but " + std::to_string(p.U_b.size()) +
                      " encoder projections");
  auto query = matmul(z_prev, p.W_b);
  std::vector<Var<T>> energies, projected;
  for (std::size_t k = 0; k < K; ++k) {
    energies.push_back(add(rowdot(tanh(add(query, matmul(cs[k], p.U_b[k]))), p.v_b), p.b_e));
    projected.push_back(matmul(cs[k], p.U_c[k]));
  }
  auto e = concat_cols(std::span<const Var<T>>(energies));
  auto beta = softmax_rows(e);
  auto c = weighted_sum(beta, std::span<const Var<T>>(projected));
  return {c, {e, beta}};
}

}  // namespace ctxnmt
