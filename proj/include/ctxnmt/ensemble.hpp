#pragma once

// Checkpoint ensembles: per-step output distributions of the member models are
// averaged (arithmetic mean of probabilities) and renormalized.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ctxnmt/checkpoint.hpp"
#include "ctxnmt/error.hpp"
#include "ctxnmt/model.hpp"

namespace ctxnmt {

/// log(mean_k exp(lp_k)), computed stably.
inline double log_mean_exp(std::span<const double> lps) {
  if (lps.empty()) throw ContractError("log_mean_exp: no terms");
  const double m = *std::max_element(lps.begin(), lps.end());
  if (!std::isfinite(m)) return m;
  double s = 0;
  for (double v : lps) s += std::exp(v - m);
  return m + std::log(s / static_cast<double>(lps.size()));
}

template <class T>
void require_compatible(std::span<const ContextModel<T>> models) {
  if (models.empty()) throw ConfigError("ensemble: no models");
  const auto& a = models.front().config();
  for (const auto& m : models) {
    const auto& b = m.config();
    if (b.strategy != a.strategy)
      throw ConfigError("ensemble: strategy " + std::string(strategy(b.strategy).name) + " differs from " +
                        std::string(strategy(a.strategy).name));
    if (b.dims.src_vocab != a.dims.src_vocab || b.dims.trg_vocab != a.dims.trg_vocab)
      throw ConfigError("ensemble: vocabulary sizes differ between members");
  }
}

/// Teacher-forced per-token log-probabilities under the averaged distribution.
template <class T>
std::vector<std::vector<double>> ensemble_token_logprobs(std::span<const ContextModel<T>> models,
                                                         const BuiltBatch& batch) {
  require_compatible(models);
  if (models.size() == 1) return models.front().token_logprobs(batch);
  std::vector<std::vector<std::vector<double>>> per;
  for (const auto& m : models) per.push_back(m.token_logprobs(batch));
  std::vector<std::vector<double>> out(batch.size());
  std::vector<double> terms(models.size());
  for (std::size_t r = 0; r < batch.size(); ++r) {
    out[r].resize(per[0][r].size());
    for (std::size_t t = 0; t < out[r].size(); ++t) {
      for (std::size_t k = 0; k < models.size(); ++k) terms[k] = per[k][r][t];
      out[r][t] = log_mean_exp(terms);
    }
  }
  return out;
}

/// Models restored from checkpoint files, in the given order.
inline std::vector<ContextModel<float>> load_ensemble(const std::vector<std::string>& paths) {
  std::vector<ContextModel<float>> models;
  for (const auto& p : paths) models.push_back(model_from_checkpoint(Checkpoint::load(p)));
  require_compatible(std::span<const ContextModel<float>>(models));
  return models;
}

/// The last n checkpoints of a training directory.
inline std::vector<std::string> last_checkpoints(const std::string& dir, std::size_t n) {
  auto all = list_checkpoints(dir);
  if (all.empty()) throw DataError("no checkpoints in " + dir);
  if (n == 0 || n >= all.size()) return all;
  return {all.end() - static_cast<std::ptrdiff_t>(n), all.end()};
}

}  // namespace ctxnmt
