#pragma once

// Teacher-forced contrastive scoring with a model or checkpoint ensemble.

#include <algorithm>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ctxnmt/contrastive.hpp"
#include "ctxnmt/decode.hpp"
#include "ctxnmt/ensemble.hpp"
#include "ctxnmt/pipeline.hpp"

namespace ctxnmt {

struct ScoreOptions {
  std::size_t batch_size = 32;
  std::size_t threads = 1;
  /// For to-2 strategies: leave the shared context_trg prefix out of the sum.
  bool exclude_prefix = false;
};

/// The raw example for one side of a pair; the target is the candidate.
inline ContextualExample pair_example(const Pipeline& p, const ContrastivePair& pair, Side side) {
  ContextualExample ex;
  ex.aux_src = p.encode_src(pair.context_src);
  ex.aux_trg = p.encode_trg(pair.context_trg);
  ex.src = p.encode_src(pair.src);
  ex.trg = p.encode_trg(side == Side::correct ? pair.trg_correct : pair.trg_incorrect);
  return ex;
}

/// Sum of the candidate's token log-probabilities (EOS included). For to-2
/// strategies the scored target is context_trg CONCAT candidate; its prefix
/// (context tokens and CONCAT) counts unless exclude_prefix is set.
template <class T>
std::vector<double> score_examples(std::span<const ContextModel<T>> models, const std::vector<ContextualExample>& raw,
                                   const ScoreOptions& opt = {}) {
  require_compatible(models);
  const auto& s = models.front().strategy();
  std::vector<BuiltExample> built;
  std::vector<std::size_t> prefix(raw.size(), 0);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    built.push_back(build_example(s, raw[i]));
    if (s.concatenated_output()) prefix[i] = built.back().target.size() - raw[i].trg.size();
  }
  std::vector<double> out(raw.size(), 0.0);
  const std::size_t bs = std::max<std::size_t>(1, opt.batch_size);
  const std::size_t chunks = (built.size() + bs - 1) / bs;
  parallel_for(chunks, opt.threads, [&](std::size_t c) {
    const std::size_t lo = c * bs, hi = std::min(built.size(), lo + bs);
    auto batch = BuiltBatch::from(std::span<const BuiltExample>(built.data() + lo, hi - lo));
    auto lps = ensemble_token_logprobs(models, batch);
    for (std::size_t r = 0; r < lps.size(); ++r) {
      const std::size_t skip = opt.exclude_prefix ? prefix[lo + r] : 0;
      out[lo + r] = std::accumulate(lps[r].begin() + static_cast<std::ptrdiff_t>(skip), lps[r].end(), 0.0);
    }
  });
  return out;
}

template <class T>
double score_candidate(std::span<const ContextModel<T>> models, const Pipeline& p, const ContrastivePair& pair,
                       Side side, const ScoreOptions& opt = {}) {
  return score_examples(models, {pair_example(p, pair, side)}, opt).front();
}

/// Scores both sides of every pair and applies the strict ranking rule.
template <class T>
EvalReport evaluate_model(std::span<const ContextModel<T>> models, const Pipeline& p,
                          const std::vector<ContrastiveBlock>& blocks, const ScoreOptions& opt = {}) {
  std::vector<ContextualExample> raw;
  for (const auto& b : blocks)
    for (const auto& pair : b.pairs) {
      raw.push_back(pair_example(p, pair, Side::correct));
      raw.push_back(pair_example(p, pair, Side::incorrect));
    }
  const auto scores = score_examples(models, raw, opt);
  std::vector<double> sc, si;
  for (std::size_t i = 0; i < scores.size(); i += 2) {
    sc.push_back(scores[i]);
    si.push_back(scores[i + 1]);
  }
  return evaluate_scores(blocks, sc, si);
}

}  // namespace ctxnmt
