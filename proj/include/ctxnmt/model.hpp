#pragma once

// The contextual encoder-decoder. Every strategy shares the same conditional
// GRU decoder; strategies differ in how many encoders feed it and in how the
// per-encoder attention contexts are combined.
//
// Decoder step i (conditional GRU):
//   z'  = GRU_1(y_{i-1}, z_{i-1})
//   c_i = context(z', z_{i-1})        per-encoder attention + combiner
//   z_i = GRU_2(c_i, z')
//   u_i = tanh(LN(z_i W_z + y_{i-1} W_y + c_i W_c))
//   p_i = softmax(u_i E_trg^T)        output projection tied to embeddings

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctxnmt/autodiff.hpp"
#include "ctxnmt/combiners.hpp"
#include "ctxnmt/nmt.hpp"
#include "ctxnmt/params.hpp"
#include "ctxnmt/strategy.hpp"

namespace ctxnmt {

struct ModelDims {
  std::size_t emb_dim = 512;
  std::size_t hidden_dim = 1024;
  std::size_t src_vocab = 0;
  std::size_t trg_vocab = 0;
};

struct ModelConfig {
  StrategyId strategy = StrategyId::baseline;
  ModelDims dims;
  bool gate_sigmoid = false;
  std::uint64_t seed = 1;
};

/// Padded model inputs for a batch of built examples.
struct BuiltBatch {
  std::vector<SeqBatch> inputs;
  SeqBatch target;

  static BuiltBatch from(std::span<const BuiltExample> examples) {
    if (examples.empty()) throw ContractError("BuiltBatch: empty batch");
    BuiltBatch b;
    const std::size_t k = examples[0].inputs.size();
    for (std::size_t e = 0; e < k; ++e) {
      std::vector<std::vector<int>> seqs;
      for (const auto& ex : examples) {
        if (ex.inputs.size() != k) throw ContractError("BuiltBatch: examples disagree on encoder count");
        seqs.push_back(ex.inputs[e]);
      }
      b.inputs.push_back(SeqBatch::from(seqs));
    }
    std::vector<std::vector<int>> trg;
    for (const auto& ex : examples) trg.push_back(ex.target);
    b.target = SeqBatch::from(trg);
    return b;
  }

  std::size_t size() const { return target.batch; }
};

template <class T>
struct DecoderState {
  Var<T> z;               // [B x H]
  std::size_t step = 0;
};

template <class T>
struct ContextResult {
  Var<T> context;                 // [B x 2H]
  std::vector<Var<T>> alphas;     // per encoder, [B x L_k]
  std::optional<Var<T>> beta;     // hierarchical weights [B x K]
};

template <class T>
struct DecoderStep {
  DecoderState<T> state;
  ContextResult<T> ctx;
  Var<T> u;       // deep output [B x E]
  Var<T> logits;  // [B x V]
};

template <class T>
struct Encoded {
  std::vector<EncoderTrace<T>> traces;
  std::size_t batch() const { return traces.front().batch; }
};

template <class T>
class ContextModel {
 public:
  explicit ContextModel(const ModelConfig& cfg) : cfg_(cfg), strategy_(&ctxnmt::strategy(cfg.strategy)) {
    const auto& d = cfg_.dims;
    if (d.emb_dim == 0 || d.hidden_dim == 0 || d.src_vocab == 0 || d.trg_vocab == 0)
      throw ConfigError("model dimensions must all be positive");
    if (d.src_vocab < kNumReserved || d.trg_vocab < kNumReserved)
      throw ConfigError("vocabularies must include the reserved tokens");
    Rng rng(cfg_.seed);
    const std::size_t E = d.emb_dim, H = d.hidden_dim, C = 2 * H;
    emb_src_ = &ps_.add("emb.src", uniform_tensor<T>({d.src_vocab, E}, 0.1, rng));
    emb_trg_ = &ps_.add("emb.trg", uniform_tensor<T>({d.trg_vocab, E}, 0.1, rng));
    const auto inputs = strategy_->encoder_inputs();
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      encoders_.push_back(EncoderParams<T>::create(ps_, "enc" + std::to_string(k), E, H, rng));
      attention_.push_back(AttentionParams<T>::create(ps_, "att" + std::to_string(k), H, rng));
      encoder_tables_.push_back(inputs[k] == EncoderInput::previous_trg ? emb_trg_ : emb_src_);
    }
    init_W_ = &ps_.add("dec.init.W", glorot<T>(C, H, rng));
    init_b_ = &ps_.add("dec.init.b", Tensor<T>({H}));
    gru1_ = GruParams<T>::create(ps_, "dec.gru1", E, H, rng);
    gru2_ = GruParams<T>::create(ps_, "dec.gru2", C, H, rng);
    out_Wz_ = &ps_.add("out.W_z", glorot<T>(H, E, rng));
    out_Wy_ = &ps_.add("out.W_y", glorot<T>(E, E, rng));
    out_Wc_ = &ps_.add("out.W_c", glorot<T>(C, E, rng));
    out_ln_g_ = &ps_.add("out.ln.g", Tensor<T>({E}, T{1}));
    out_ln_b_ = &ps_.add("out.ln.b", Tensor<T>({E}));

    const std::size_t K = inputs.size();
    switch (strategy_->combiner) {
      case Combiner::none: break;
      case Combiner::concat:
        if (K != 2) throw ConfigError("concat combiner requires exactly two encoders");
        comb_.push_back(&ps_.add("comb.W_c", glorot<T>(C * K, C, rng)));
        comb_.push_back(&ps_.add("comb.b_c", Tensor<T>({C})));
        break;
      case Combiner::gate:
        if (K != 2) throw ConfigError("gate combiner requires exactly two encoders");
        for (const char* n : {"comb.W_r", "comb.W_s", "comb.W_t", "comb.W_u"}) comb_.push_back(&ps_.add(n, glorot<T>(C, C, rng)));
        comb_.push_back(&ps_.add("comb.b_r", Tensor<T>({C})));
        break;
      case Combiner::hier:
        for (std::size_t k = 0; k < K; ++k) comb_.push_back(&ps_.add("comb.U_b" + std::to_string(k), glorot<T>(C, C, rng)));
        for (std::size_t k = 0; k < K; ++k) comb_.push_back(&ps_.add("comb.U_c" + std::to_string(k), glorot<T>(C, C, rng)));
        comb_.push_back(&ps_.add("comb.W_b", glorot<T>(H, C, rng)));
        comb_.push_back(&ps_.add("comb.v_b", uniform_tensor<T>({C}, std::sqrt(3.0 / static_cast<double>(C)), rng)));
        comb_.push_back(&ps_.add("comb.b_e", Tensor<T>({1})));
        break;
    }
  }

  ContextModel(const ContextModel&) = delete;
  ContextModel& operator=(const ContextModel&) = delete;
  ContextModel(ContextModel&&) noexcept = default;
  ContextModel& operator=(ContextModel&&) noexcept = default;

  const ModelConfig& config() const { return cfg_; }
  const StrategyConfig& strategy() const { return *strategy_; }
  std::size_t num_encoders() const { return encoders_.size(); }
  ParameterStore<T>& params() { return ps_; }
  const ParameterStore<T>& params() const { return ps_; }

  /// The output projection; identical storage to the target embedding table.
  const Parameter<T>& output_projection() const { return *emb_trg_; }
  const Parameter<T>& target_embedding() const { return *emb_trg_; }
  const Parameter<T>& encoder_embedding(std::size_t k) const { return *encoder_tables_.at(k); }

  EncoderTrace<T> encode(Tape<T>& tape, std::size_t k, const SeqBatch& input) const {
    for (int id : input.ids)
      if (id < 0 || static_cast<std::size_t>(id) >= encoder_tables_[k]->value.rows())
        throw ContractError("encode: token id " + std::to_string(id) + " outside the vocabulary");
    auto tr = ctxnmt::encode(tape, encoders_[k], *encoder_tables_[k], input);
    prepare_keys(tape, attention_[k], tr);
    return tr;
  }

  Encoded<T> encode_all(Tape<T>& tape, const std::vector<SeqBatch>& inputs) const {
    if (inputs.size() != encoders_.size())
      throw ConfigError("strategy " + std::string(strategy_->name) + " expects " + std::to_string(encoders_.size()) +
                        " encoder inputs, got " + std::to_string(inputs.size()));
    Encoded<T> enc;
    for (std::size_t k = 0; k < inputs.size(); ++k) enc.traces.push_back(encode(tape, k, inputs[k]));
    return enc;
  }

  /// z_0 = tanh(mean_j(h_j) W_init + b_init) over the current-sentence
  /// encoder only.
  DecoderState<T> init_decoder(Tape<T>& tape, const Encoded<T>& enc) const {
    if (enc.traces.empty()) throw ContractError("init_decoder: no encoder traces");
    auto m = mean_state(tape, enc.traces[0]);
    return {tanh(add_row(matmul(m, tape.param(*init_W_)), tape.param(*init_b_))), 0};
  }

  /// Per-encoder attention with the intermediate decoder state as query,
  /// then the strategy's combiner.
  ContextResult<T> context_provider(Tape<T>& tape, Var<T> query, Var<T> z_prev, const Encoded<T>& enc) const {
    if (enc.traces.size() != encoders_.size())
      throw ConfigError("context_provider: " + std::to_string(enc.traces.size()) + " traces for " +
                        std::to_string(encoders_.size()) + " encoders");
    ContextResult<T> out;
    std::vector<Var<T>> cs;
    for (std::size_t k = 0; k < enc.traces.size(); ++k) {
      auto a = attend(tape, attention_[k], query, enc.traces[k]);
      cs.push_back(a.context);
      out.alphas.push_back(a.weights);
    }
    auto P = [&](std::size_t i) { return tape.param(*comb_[i]); };
    std::span<const Var<T>> span(cs);
    switch (strategy_->combiner) {
      case Combiner::none: out.context = cs[0]; break;
      case Combiner::concat: out.context = combine_concat(span, ConcatCombinerParams<T>{P(0), P(1)}); break;
      case Combiner::gate:
        out.context = combine_gate(cs[0], cs[1], GateCombinerParams<T>{P(0), P(1), P(2), P(3), P(4)}, cfg_.gate_sigmoid);
        break;
      case Combiner::hier: {
        const std::size_t K = cs.size();
        HierCombinerParams<T> hp;
        for (std::size_t k = 0; k < K; ++k) hp.U_b.push_back(P(k));
        for (std::size_t k = 0; k < K; ++k) hp.U_c.push_back(P(K + k));
        hp.W_b = P(2 * K);
        hp.v_b = P(2 * K + 1);
        hp.b_e = P(2 * K + 2);
        auto [c, trace] = combine_hier(span, z_prev, hp);
        out.context = c;
        out.beta = trace.weights;
        break;
      }
    }
    return out;
  }

  /// prev_tokens is empty at step 0 (the previous-output embedding is zero).
  DecoderStep<T> decode_step(Tape<T>& tape, const DecoderState<T>& state, std::span<const int> prev_tokens,
                             const Encoded<T>& enc) const {
    const std::size_t B = state.z.rows();
    Var<T> y = prev_tokens.empty() ? tape.constant(Tensor<T>::matrix(B, cfg_.dims.emb_dim))
                                   : gather_rows(tape.param(*emb_trg_), prev_tokens);
    if (!prev_tokens.empty() && prev_tokens.size() != B)
      throw DimensionError("decode_step: " + std::to_string(prev_tokens.size()) + " tokens for " + std::to_string(B) +
                           " states");
    auto z1 = gru_step(tape, gru1_, y, state.z);
    auto ctx = context_provider(tape, z1, state.z, enc);
    auto z = gru_step(tape, gru2_, ctx.context, z1);
    auto pre = add(add(matmul(z, tape.param(*out_Wz_)), matmul(y, tape.param(*out_Wy_))),
                   matmul(ctx.context, tape.param(*out_Wc_)));
    auto u = tanh(layer_norm(pre, tape.param(*out_ln_g_), tape.param(*out_ln_b_)));
    auto logits = matmul_bt(u, tape.param(*emb_trg_));
    return {{z, state.step + 1}, std::move(ctx), u, logits};
  }

  /// Teacher-forced pass over the whole target.
  std::vector<DecoderStep<T>> forward(Tape<T>& tape, const BuiltBatch& batch) const {
    auto enc = encode_all(tape, batch.inputs);
    auto state = init_decoder(tape, enc);
    std::vector<DecoderStep<T>> steps;
    steps.reserve(batch.target.length);
    for (std::size_t t = 0; t < batch.target.length; ++t) {
      auto step = decode_step(tape, state, t == 0 ? std::span<const int>{} : batch.target.step_ids(t - 1), enc);
      state = step.state;
      steps.push_back(std::move(step));
    }
    return steps;
  }

  /// Sum over non-pad target positions of log p(token), as a scalar.
  Var<T> log_likelihood(Tape<T>& tape, const BuiltBatch& batch) const {
    auto steps = forward(tape, batch);
    Var<T> total;
    for (std::size_t t = 0; t < steps.size(); ++t) {
      auto lp = log_softmax_rows(steps[t].logits);
      auto m = batch.target.template step_mask<T>(t);
      auto term = pick_sum(lp, batch.target.step_ids(t), std::span<const T>(m));
      total = total.valid() ? add(total, term) : term;
    }
    return total;
  }

  /// Mean negative log-likelihood per non-pad target token.
  Var<T> loss(Tape<T>& tape, const BuiltBatch& batch) const {
    std::size_t count = 0;
    for (auto m : batch.target.mask) count += m;
    return scale(log_likelihood(tape, batch), T{-1} / static_cast<T>(count));
  }

  /// Per-row log-probabilities of each target token, [B][t] (pads get 0).
  std::vector<std::vector<double>> token_logprobs(const BuiltBatch& batch) const {
    Tape<T> tape(false);
    auto steps = forward(tape, batch);
    std::vector<std::vector<double>> out(batch.size());
    for (std::size_t t = 0; t < steps.size(); ++t) {
      auto lp = log_softmax_rows(steps[t].logits);
      const auto& v = lp.value();
      for (std::size_t r = 0; r < batch.size(); ++r)
        if (batch.target.mask[t * batch.size() + r])
          out[r].push_back(static_cast<double>(v(r, batch.target.ids[t * batch.size() + r])));
    }
    return out;
  }

 private:
  ModelConfig cfg_;
  const StrategyConfig* strategy_;
  ParameterStore<T> ps_;
  Parameter<T>* emb_src_ = nullptr;
  Parameter<T>* emb_trg_ = nullptr;
  std::vector<EncoderParams<T>> encoders_;
  std::vector<AttentionParams<T>> attention_;
  std::vector<Parameter<T>*> encoder_tables_;
  Parameter<T>* init_W_ = nullptr;
  Parameter<T>* init_b_ = nullptr;
  GruParams<T> gru1_, gru2_;
  Parameter<T>* out_Wz_ = nullptr;
  Parameter<T>* out_Wy_ = nullptr;
  Parameter<T>* out_Wc_ = nullptr;
  Parameter<T>* out_ln_g_ = nullptr;
  Parameter<T>* out_ln_b_ = nullptr;
  std::vector<Parameter<T>*> comb_;
};

/// Gathers rows of every trace (beam reordering / expansion).
template <class T>
Encoded<T> select_rows(const Encoded<T>& enc, std::span<const int> rows) {
  Encoded<T> out;
  for (const auto& tr : enc.traces) {
    EncoderTrace<T> s;
    s.batch = rows.size();
    s.length = tr.length;
    for (const auto& v : tr.embeddings) s.embeddings.push_back(gather_rows(v, rows));
    for (const auto& v : tr.states) s.states.push_back(gather_rows(v, rows));
    for (const auto& v : tr.keys) s.keys.push_back(gather_rows(v, rows));
    s.mask.resize(rows.size() * tr.length);
    for (std::size_t r = 0; r < rows.size(); ++r)
      std::copy_n(tr.mask.begin() + static_cast<std::ptrdiff_t>(rows[r] * tr.length), tr.length,
                  s.mask.begin() + static_cast<std::ptrdiff_t>(r * tr.length));
    out.traces.push_back(std::move(s));
  }
  return out;
}

}  // namespace ctxnmt
