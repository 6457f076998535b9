#pragma once

// Building blocks of the attentional encoder-decoder: layer-normalized GRU
// cells, the bidirectional encoder, additive attention and the deep output.
// Everything is batched row-wise: a [B x n] operand holds one row per
// sentence in the batch.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ctxnmt/autodiff.hpp"
#include "ctxnmt/params.hpp"
#include "ctxnmt/vocab.hpp"

namespace ctxnmt {

/// Padded batch of id sequences, stored time-major: ids[t * batch + b].
struct SeqBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;

  static SeqBatch from(const std::vector<std::vector<int>>& seqs) {
    if (seqs.empty()) throw ContractError("SeqBatch: empty batch");
    SeqBatch b;
    b.batch = seqs.size();
    for (const auto& s : seqs) {
      if (s.empty()) throw ContractError("SeqBatch: empty sequence");
      b.length = std::max(b.length, s.size());
    }
    b.ids.assign(b.batch * b.length, kPad);
    b.mask.assign(b.batch * b.length, 0);
    for (std::size_t r = 0; r < b.batch; ++r)
      for (std::size_t t = 0; t < seqs[r].size(); ++t) {
        b.ids[t * b.batch + r] = seqs[r][t];
        b.mask[t * b.batch + r] = 1;
      }
    return b;
  }

  std::span<const int> step_ids(std::size_t t) const { return {ids.data() + t * batch, batch}; }

  template <class T>
  std::vector<T> step_mask(std::size_t t) const {
    return std::vector<T>(mask.begin() + static_cast<std::ptrdiff_t>(t * batch),
                          mask.begin() + static_cast<std::ptrdiff_t>((t + 1) * batch));
  }

  /// Batch-major [B x L] mask, the layout softmax_rows expects.
  std::vector<std::uint8_t> row_mask() const {
    std::vector<std::uint8_t> m(batch * length);
    for (std::size_t t = 0; t < length; ++t)
      for (std::size_t r = 0; r < batch; ++r) m[r * length + t] = mask[t * batch + r];
    return m;
  }

  std::size_t row_length(std::size_t r) const {
    std::size_t n = 0;
    for (std::size_t t = 0; t < length; ++t) n += mask[t * batch + r];
    return n;
  }
};

// ---------------------------------------------------------------------------
// GRU with layer normalization on the input and recurrent gate
// pre-activations:
//   [r; u] = sigmoid(LN(x W) + LN(h U))
//   h~     = tanh(LN(x Wx) + r * LN(h Ux))
//   h'     = u * h + (1 - u) * h~

template <class T>
struct GruParams {
  std::size_t input = 0, hidden = 0;
  Parameter<T>* W = nullptr;
  Parameter<T>* U = nullptr;
  Parameter<T>* Wx = nullptr;
  Parameter<T>* Ux = nullptr;
  Parameter<T>* ln_w_g = nullptr;
  Parameter<T>* ln_w_b = nullptr;
  Parameter<T>* ln_u_g = nullptr;
  Parameter<T>* ln_u_b = nullptr;
  Parameter<T>* ln_wx_g = nullptr;
  Parameter<T>* ln_wx_b = nullptr;
  Parameter<T>* ln_ux_g = nullptr;
  Parameter<T>* ln_ux_b = nullptr;

  static GruParams create(ParameterStore<T>& ps, const std::string& prefix, std::size_t input, std::size_t hidden,
                          Rng& rng) {
    GruParams g;
    g.input = input;
    g.hidden = hidden;
    g.W = &ps.add(prefix + ".W", glorot<T>(input, 2 * hidden, rng));
    g.U = &ps.add(prefix + ".U", glorot<T>(hidden, 2 * hidden, rng));
    g.Wx = &ps.add(prefix + ".Wx", glorot<T>(input, hidden, rng));
    g.Ux = &ps.add(prefix + ".Ux", glorot<T>(hidden, hidden, rng));
    g.ln_w_g = &ps.add(prefix + ".ln_w.g", Tensor<T>({2 * hidden}, T{1}));
    g.ln_w_b = &ps.add(prefix + ".ln_w.b", Tensor<T>({2 * hidden}));
    g.ln_u_g = &ps.add(prefix + ".ln_u.g", Tensor<T>({2 * hidden}, T{1}));
    g.ln_u_b = &ps.add(prefix + ".ln_u.b", Tensor<T>({2 * hidden}));
    g.ln_wx_g = &ps.add(prefix + ".ln_wx.g", Tensor<T>({hidden}, T{1}));
    g.ln_wx_b = &ps.add(prefix + ".ln_wx.b", Tensor<T>({hidden}));
    g.ln_ux_g = &ps.add(prefix + ".ln_ux.g", Tensor<T>({hidden}, T{1}));
    g.ln_ux_b = &ps.add(prefix + ".ln_ux.b", Tensor<T>({hidden}));
    return g;
  }
};

template <class T>
Var<T> gru_step(Tape<T>& tape, const GruParams<T>& p, Var<T> x, Var<T> h) {
  auto P = [&](Parameter<T>* q) { return tape.param(*q); };
  const std::size_t H = p.hidden;
  auto gx = layer_norm(matmul(x, P(p.W)), P(p.ln_w_g), P(p.ln_w_b));
  auto gh = layer_norm(matmul(h, P(p.U)), P(p.ln_u_g), P(p.ln_u_b));
  auto gates = sigmoid(add(gx, gh));
  auto r = slice_cols(gates, 0, H);
  auto u = slice_cols(gates, H, H);
  auto cx = layer_norm(matmul(x, P(p.Wx)), P(p.ln_wx_g), P(p.ln_wx_b));
  auto ch = layer_norm(matmul(h, P(p.Ux)), P(p.ln_ux_g), P(p.ln_ux_b));
  auto cand = tanh(add(cx, mul(r, ch)));
  return add(mul(u, h), mul(one_minus(u), cand));
}

// ---------------------------------------------------------------------------
// Encoder

template <class T>
struct EncoderParams {
  GruParams<T> fwd, bwd;

  static EncoderParams create(ParameterStore<T>& ps, const std::string& prefix, std::size_t emb, std::size_t hidden,
                              Rng& rng) {
    return {GruParams<T>::create(ps, prefix + ".fwd", emb, hidden, rng),
            GruParams<T>::create(ps, prefix + ".bwd", emb, hidden, rng)};
  }
};

/// Per-position encoder outputs; states[j] is [B x 2*hidden], the forward and
/// backward cell states side by side. keys[j] caches the attention
/// projection of states[j].
template <class T>
struct EncoderTrace {
  std::size_t batch = 0, length = 0;
  std::vector<Var<T>> embeddings;
  std::vector<Var<T>> states;
  std::vector<Var<T>> keys;
  std::vector<std::uint8_t> mask;  // [B x L]
};

template <class T>
EncoderTrace<T> encode(Tape<T>& tape, const EncoderParams<T>& p, Parameter<T>& embedding, const SeqBatch& input) {
  const std::size_t B = input.batch, L = input.length, H = p.fwd.hidden;
  if (L == 0) throw ContractError("encode: empty input");
  EncoderTrace<T> tr;
  tr.batch = B;
  tr.length = L;
  tr.mask = input.row_mask();
  auto E = tape.param(embedding);
  for (std::size_t t = 0; t < L; ++t) tr.embeddings.push_back(gather_rows(E, input.step_ids(t)));

  std::vector<Var<T>> fw(L), bw(L);
  Var<T> h = tape.constant(Tensor<T>::matrix(B, H));
  for (std::size_t t = 0; t < L; ++t) {
    auto m = input.template step_mask<T>(t);
    h = row_blend(gru_step(tape, p.fwd, tr.embeddings[t], h), h, std::span<const T>(m));
    fw[t] = h;
  }
  h = tape.constant(Tensor<T>::matrix(B, H));
  for (std::size_t t = L; t-- > 0;) {
    auto m = input.template step_mask<T>(t);
    h = row_blend(gru_step(tape, p.bwd, tr.embeddings[t], h), h, std::span<const T>(m));
    bw[t] = h;
  }
  for (std::size_t t = 0; t < L; ++t) tr.states.push_back(concat_cols({fw[t], bw[t]}));
  return tr;
}

// ---------------------------------------------------------------------------
// Additive attention: e_j = v . tanh(q W_q + h_j U + b); alpha = softmax(e).

template <class T>
struct AttentionParams {
  Parameter<T>* W_q = nullptr;
  Parameter<T>* U = nullptr;
  Parameter<T>* b = nullptr;
  Parameter<T>* v = nullptr;

  static AttentionParams create(ParameterStore<T>& ps, const std::string& prefix, std::size_t hidden, Rng& rng) {
    const std::size_t ctx = 2 * hidden;
    AttentionParams a;
    a.W_q = &ps.add(prefix + ".W_q", glorot<T>(hidden, ctx, rng));
    a.U = &ps.add(prefix + ".U", glorot<T>(ctx, ctx, rng));
    a.b = &ps.add(prefix + ".b", Tensor<T>({ctx}));
    a.v = &ps.add(prefix + ".v", uniform_tensor<T>({ctx}, std::sqrt(3.0 / static_cast<double>(ctx)), rng));
    return a;
  }
};

template <class T>
void prepare_keys(Tape<T>& tape, const AttentionParams<T>& p, EncoderTrace<T>& trace) {
  auto U = tape.param(*p.U);
  auto b = tape.param(*p.b);
  trace.keys.clear();
  for (const auto& s : trace.states) trace.keys.push_back(add_row(matmul(s, U), b));
}

template <class T>
struct AttentionResult {
  Var<T> context;  // [B x 2H]
  Var<T> weights;  // [B x L]
};

template <class T>
AttentionResult<T> attend(Tape<T>& tape, const AttentionParams<T>& p, Var<T> query, const EncoderTrace<T>& trace) {
  if (trace.states.empty()) throw ContractError("attend: empty encoder trace");
  if (trace.keys.size() != trace.states.size()) throw ContractError("attend: attention keys not prepared");
  auto q = matmul(query, tape.param(*p.W_q));
  auto v = tape.param(*p.v);
  std::vector<Var<T>> scores;
  scores.reserve(trace.length);
  for (const auto& k : trace.keys) scores.push_back(rowdot(tanh(add(q, k)), v));
  auto alpha = softmax_rows(concat_cols(std::span<const Var<T>>(scores)), std::span<const std::uint8_t>(trace.mask));
  auto c = weighted_sum(alpha, std::span<const Var<T>>(trace.states));
  return {c, alpha};
}

/// Masked mean of the encoder states, [B x 2H].
template <class T>
Var<T> mean_state(Tape<T>& tape, const EncoderTrace<T>& trace) {
  Tensor<T> w = Tensor<T>::matrix(trace.batch, trace.length);
  for (std::size_t r = 0; r < trace.batch; ++r) {
    std::size_t n = 0;
    for (std::size_t j = 0; j < trace.length; ++j) n += trace.mask[r * trace.length + j];
    for (std::size_t j = 0; j < trace.length; ++j)
      w(r, j) = trace.mask[r * trace.length + j] ? T{1} / static_cast<T>(n) : T{0};
  }
  return weighted_sum(tape.constant(std::move(w)), std::span<const Var<T>>(trace.states));
}

}  // namespace ctxnmt
