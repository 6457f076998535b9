#pragma once

// Greedy and beam-search translation for single models and checkpoint
// ensembles, to-2 output extraction, document-order translation for
// strategies that read the previous target sentence, and attention export.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <deque>
#include <exception>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "ctxnmt/ensemble.hpp"
#include "ctxnmt/model.hpp"
#include "ctxnmt/strategy.hpp"
#include "ctxnmt/vocab.hpp"

namespace ctxnmt {

/// Attention weights of one output step: one row per encoder, plus the
/// hierarchical weights over encoders when the model has them.
struct StepAttention {
  std::vector<std::vector<double>> alphas;
  std::vector<double> beta;
};

struct Hypothesis {
  std::vector<int> tokens;
  double logprob = 0;
  std::vector<double> step_logprobs;
  std::vector<StepAttention> attention;  // from the first ensemble member

  double normalized() const { return tokens.empty() ? logprob : logprob / static_cast<double>(tokens.size()); }
  bool finished() const { return !tokens.empty() && tokens.back() == kEos; }
};

struct DecodeOptions {
  std::size_t beam_size = 12;
  std::size_t max_out_len = 0;  // 0: 3 x input length + 5
  bool keep_attention = false;
};

/// Tokens after the first CONCAT, or the whole sequence when there is none.
inline std::vector<int> extract_current(const std::vector<int>& seq) { return split_at_concat(seq).second; }

/// Input length used for the default output cap. For to-2 strategies the
/// output also covers the previous sentence, so every input counts.
inline std::size_t decode_input_length(const StrategyConfig& s, const BuiltExample& ex) {
  if (!s.concatenated_output() || ex.inputs.size() == 1) return ex.inputs.front().size();
  std::size_t n = 0;
  for (const auto& in : ex.inputs) n += in.size();
  return n;
}

namespace detail {

/// Incremental decoding state of one model over a set of live hypotheses.
template <class T>
struct MemberState {
  const ContextModel<T>* model;
  Tape<T> tape{false};
  Encoded<T> base;           // batch 1
  DecoderState<T> state;     // one row per live hypothesis
};

}  // namespace detail

/// Beam search over an ensemble. Each step expands every live hypothesis by
/// every vocabulary item; the best beam_size - |finished| candidates survive
/// (ties: lower token id, then earlier parent). A hypothesis finishes with EOS
/// or at max_out_len. The result maximizes logprob / length over finished
/// hypotheses (ties: lexicographically smaller tokens).
template <class T>
Hypothesis beam_search(std::span<const ContextModel<T>> models, const BuiltExample& input, const DecodeOptions& opt) {
  require_compatible(models);
  if (opt.beam_size == 0) throw ContractError("beam_search: beam_size must be >= 1");
  const auto& strat = models.front().strategy();
  const std::size_t max_len = opt.max_out_len ? opt.max_out_len : 3 * decode_input_length(strat, input) + 5;
  const std::size_t V = models.front().config().dims.trg_vocab;

  std::deque<detail::MemberState<T>> members;  // tapes are pinned in place
  for (const auto& m : models) {
    members.emplace_back();
    auto& st = members.back();
    st.model = &m;
    std::vector<SeqBatch> ins;
    for (const auto& seq : input.inputs) ins.push_back(SeqBatch::from({seq}));
    st.base = m.encode_all(st.tape, ins);
    st.state = m.init_decoder(st.tape, st.base);
  }

  std::vector<Hypothesis> live(1), finished;
  std::vector<int> parents{0};
  for (std::size_t t = 0; t < max_len && !live.empty(); ++t) {
    const std::size_t n = live.size();
    std::vector<int> zero(n, 0), prev;
    if (t > 0)
      for (const auto& h : live) prev.push_back(h.tokens.back());
    // Mean of member distributions, in log space.
    std::vector<double> logp(n * V, 0.0);
    std::vector<StepAttention> att(n);
    std::vector<std::vector<double>> member_lp(members.size());
    for (std::size_t k = 0; k < members.size(); ++k) {
      auto& st = members[k];
      auto enc = select_rows(st.base, zero);
      DecoderState<T> state{gather_rows(st.state.z, parents), st.state.step};
      auto step = st.model->decode_step(st.tape, state, prev, enc);
      st.state = step.state;
      const auto& lp = log_softmax_rows(step.logits).value();
      member_lp[k].assign(lp.values().begin(), lp.values().end());
      if (k == 0 && opt.keep_attention) {
        for (std::size_t r = 0; r < n; ++r) {
          for (const auto& a : step.ctx.alphas) {
            const auto& av = a.value();
            std::vector<double> row(av.cols());
            for (std::size_t j = 0; j < av.cols(); ++j) row[j] = av(r, j);
            att[r].alphas.push_back(std::move(row));
          }
          if (step.ctx.beta) {
            const auto& bv = step.ctx.beta->value();
            for (std::size_t j = 0; j < bv.cols(); ++j) att[r].beta.push_back(bv(r, j));
          }
        }
      }
    }
    if (members.size() == 1) {
      for (std::size_t i = 0; i < n * V; ++i) logp[i] = member_lp[0][i];
    } else {
      std::vector<double> terms(members.size());
      for (std::size_t i = 0; i < n * V; ++i) {
        for (std::size_t k = 0; k < members.size(); ++k) terms[k] = member_lp[k][i];
        logp[i] = log_mean_exp(terms);
      }
      for (std::size_t r = 0; r < n; ++r) {  // renormalize each row
        std::span<const double> row(logp.data() + r * V, V);
        const double z = log_mean_exp(row) + std::log(static_cast<double>(V));
        for (std::size_t v = 0; v < V; ++v) logp[r * V + v] -= z;
      }
    }

    struct Cand {
      double score;
      int token;
      std::size_t parent;
    };
    std::vector<Cand> cands;
    cands.reserve(n * V);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t v = 0; v < V; ++v) cands.push_back({live[r].logprob + logp[r * V + v], static_cast<int>(v), r});
    const std::size_t keep = std::min(cands.size(), opt.beam_size - finished.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Cand& a, const Cand& b) {
                        return std::tie(b.score, a.token, a.parent) < std::tie(a.score, b.token, b.parent);
                      });
    std::vector<Hypothesis> next;
    std::vector<int> next_parents;
    for (std::size_t c = 0; c < keep; ++c) {
      const auto& cd = cands[c];
      Hypothesis h = live[cd.parent];
      h.tokens.push_back(cd.token);
      h.step_logprobs.push_back(logp[cd.parent * V + static_cast<std::size_t>(cd.token)]);
      h.logprob = cd.score;
      if (opt.keep_attention) h.attention.push_back(att[cd.parent]);
      if (cd.token == kEos || t + 1 == max_len) {
        finished.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
        next_parents.push_back(static_cast<int>(cd.parent));
      }
    }
    live = std::move(next);
    parents = std::move(next_parents);
    if (finished.size() >= opt.beam_size) break;
  }
  if (finished.empty()) throw ContractError("beam_search: no finished hypothesis");
  return *std::min_element(finished.begin(), finished.end(), [](const Hypothesis& a, const Hypothesis& b) {
    const double na = a.normalized(), nb = b.normalized();
    if (na != nb) return na > nb;
    return a.tokens < b.tokens;
  });
}

template <class T>
Hypothesis beam_search(const ContextModel<T>& model, const BuiltExample& input, const DecodeOptions& opt) {
  return beam_search(std::span<const ContextModel<T>>(&model, 1), input, opt);
}

/// Argmax decoding (lowest token id on ties).
template <class T>
Hypothesis greedy_decode(std::span<const ContextModel<T>> models, const BuiltExample& input, DecodeOptions opt = {}) {
  opt.beam_size = 1;
  return beam_search(models, input, opt);
}

template <class T>
Hypothesis greedy_decode(const ContextModel<T>& model, const BuiltExample& input, DecodeOptions opt = {}) {
  return greedy_decode(std::span<const ContextModel<T>>(&model, 1), input, opt);
}

/// Model inputs for an example whose reference target may be unknown.
inline BuiltExample inference_input(const StrategyConfig& s, ContextualExample raw) {
  if (raw.aux_src.empty()) raw.aux_src = empty_context();
  if (raw.aux_trg.empty()) raw.aux_trg = empty_context();
  auto b = build_example(s, raw);
  b.target.clear();
  return b;
}

/// Where the previous-target input of t-* strategies comes from at
/// translation time.
enum class TargetHistory {
  stream,  // the system's own translation of the previous sentence
  given,   // the aux_trg already present in the examples (e.g. precomputed baseline output)
};

struct SentenceOutput {
  Hypothesis hyp;
  std::vector<int> current;  // extracted current-sentence tokens, without EOS
  std::vector<int> aux_trg;  // previous-target input actually used
};

/// Translates one document in order. In stream mode sentence i's previous
/// target input is sentence i-1's extracted output (EOS-terminated).
template <class T>
std::vector<SentenceOutput> translate_document(std::span<const ContextModel<T>> models,
                                               const std::vector<ContextualExample>& doc, const DecodeOptions& opt,
                                               TargetHistory history = TargetHistory::stream) {
  const auto& strat = models.front().strategy();
  std::vector<SentenceOutput> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    ContextualExample raw = doc[i];
    if (strat.uses_target_history() && history == TargetHistory::stream) {
      if (i == 0) {
        raw.aux_trg = empty_context();
      } else {
        raw.aux_trg = out.back().current;
        raw.aux_trg.push_back(kEos);
      }
    }
    SentenceOutput so;
    so.hyp = beam_search(models, inference_input(strat, raw), opt);
    so.current = extract_current(so.hyp.tokens);
    if (!so.current.empty() && so.current.back() == kEos) so.current.pop_back();
    so.aux_trg = raw.aux_trg.empty() ? empty_context() : raw.aux_trg;
    out.push_back(std::move(so));
  }
  return out;
}

/// Runs fn(i) for i in [0, n) on up to threads workers.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n && !failed;) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

/// Documents are independent; sentences within one are decoded in order.
template <class T>
std::vector<std::vector<SentenceOutput>> translate_corpus(std::span<const ContextModel<T>> models,
                                                          const std::vector<std::vector<ContextualExample>>& docs,
                                                          const DecodeOptions& opt, TargetHistory history,
                                                          std::size_t threads = 1) {
  std::vector<std::vector<SentenceOutput>> out(docs.size());
  parallel_for(docs.size(), threads, [&](std::size_t d) { out[d] = translate_document(models, docs[d], opt, history); });
  return out;
}

/// One JSON object per output step: sentence index, step, emitted token, the
/// per-encoder weights over input positions and, for hierarchical models, the
/// weights over encoders.
inline std::vector<nlohmann::json> export_attention(const Hypothesis& hyp, const Vocabulary& trg_vocab,
                                                    std::size_t sentence = 0) {
  std::vector<nlohmann::json> out;
  for (std::size_t t = 0; t < hyp.attention.size(); ++t) {
    nlohmann::json r;
    r["sentence"] = sentence;
    r["step"] = t;
    r["token"] = t < hyp.tokens.size() ? trg_vocab.token(hyp.tokens[t]) : "";
    r["alphas"] = hyp.attention[t].alphas;
    if (!hyp.attention[t].beta.empty()) r["beta"] = hyp.attention[t].beta;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace ctxnmt
