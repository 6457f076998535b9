#pragma once

// Corpus-level BLEU on whitespace tokens, case-sensitive.
//   BLEU = BP * exp(mean_n log p_n),  p_n = clipped n-gram matches / hypothesis n-grams
//   BP = 1 if c > r, else exp(1 - r / c)   (c, r: total hypothesis / reference length)

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ctxnmt/error.hpp"

namespace ctxnmt {

struct BleuResult {
  double score = 0;  // in [0, 100]
  std::vector<double> precisions;
  std::vector<std::size_t> matches, totals;
  double brevity_penalty = 0;
  std::size_t hyp_length = 0, ref_length = 0;
};

inline std::vector<std::string> whitespace_tokens(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string t; in >> t;) out.push_back(t);
  return out;
}

inline BleuResult bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs, int max_n = 4) {
  if (hyps.size() != refs.size())
    throw ContractError("bleu: " + std::to_string(hyps.size()) + " hypotheses for " + std::to_string(refs.size()) +
                        " references");
  if (max_n < 1) throw ContractError("bleu: max_n must be >= 1");
  BleuResult r;
  r.matches.assign(static_cast<std::size_t>(max_n), 0);
  r.totals.assign(static_cast<std::size_t>(max_n), 0);
  using Gram = std::vector<std::string>;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto h = whitespace_tokens(hyps[s]);
    const auto f = whitespace_tokens(refs[s]);
    r.hyp_length += h.size();
    r.ref_length += f.size();
    for (int n = 1; n <= max_n; ++n) {
      const auto un = static_cast<std::size_t>(n);
      std::map<Gram, std::size_t> ref_counts, hyp_counts;
      for (std::size_t i = 0; i + un <= f.size(); ++i) ++ref_counts[Gram(f.begin() + i, f.begin() + i + un)];
      for (std::size_t i = 0; i + un <= h.size(); ++i) ++hyp_counts[Gram(h.begin() + i, h.begin() + i + un)];
      for (const auto& [g, c] : hyp_counts) {
        auto it = ref_counts.find(g);
        r.matches[un - 1] += std::min(c, it == ref_counts.end() ? 0 : it->second);
        r.totals[un - 1] += c;
      }
    }
  }
  double log_sum = 0;
  bool zero = false;
  for (int n = 0; n < max_n; ++n) {
    const auto un = static_cast<std::size_t>(n);
    const double p = r.totals[un] ? static_cast<double>(r.matches[un]) / static_cast<double>(r.totals[un]) : 0.0;
    r.precisions.push_back(p);
    if (p == 0)
      zero = true;
    else
      log_sum += std::log(p);
  }
  if (r.hyp_length == 0) {
    r.brevity_penalty = 0;
    return r;
  }
  r.brevity_penalty = r.hyp_length > r.ref_length
                          ? 1.0
                          : std::exp(1.0 - static_cast<double>(r.ref_length) / static_cast<double>(r.hyp_length));
  if (!zero) r.score = 100.0 * r.brevity_penalty * std::exp(log_sum / max_n);
  return r;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) {
    if (!l.empty() && l.back() == '\r') l.pop_back();
    out.push_back(l);
  }
  return out;
}

}  // namespace ctxnmt
