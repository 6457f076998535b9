#pragma once

// Byte-pair encoding with an end-of-word suffix marker: the last symbol of a
// word carries "</w>", so "cat" starts as c a t</w>.

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ctxnmt/error.hpp"
#include "ctxnmt/text.hpp"

namespace ctxnmt {

inline constexpr std::string_view kEndOfWord = "</w>";
inline constexpr int kBpeFormatVersion = 1;

using SymbolPair = std::pair<std::string, std::string>;

inline std::vector<std::string> initial_symbols(std::string_view word) {
  auto syms = utf8_chars(word);
  if (!syms.empty()) syms.back() += kEndOfWord;
  return syms;
}

class SubwordModel {
 public:
  SubwordModel() = default;
  SubwordModel(std::vector<SymbolPair> merges, std::size_t threshold)
      : merges_(std::move(merges)), threshold_(threshold) {
    index();
  }

  const std::vector<SymbolPair>& merges() const { return merges_; }
  std::size_t threshold() const { return threshold_; }

  /// Lowest-rank pair first, every occurrence merged left to right, until no
  /// learned pair remains.
  std::vector<std::string> apply(std::string_view token) const {
    auto syms = initial_symbols(token);
    if (ranks_.empty()) return syms;
    while (syms.size() > 1) {
      std::size_t best_rank = std::numeric_limits<std::size_t>::max();
      std::size_t best_at = 0;
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
        auto it = ranks_.find(key(syms[i], syms[i + 1]));
        if (it != ranks_.end() && it->second < best_rank) {
          best_rank = it->second;
          best_at = i;
        }
      }
      if (best_rank == std::numeric_limits<std::size_t>::max()) break;
      const std::string a = syms[best_at], b = syms[best_at + 1];
      std::vector<std::string> next;
      next.reserve(syms.size());
      for (std::size_t i = 0; i < syms.size(); ++i) {
        if (i + 1 < syms.size() && syms[i] == a && syms[i + 1] == b) {
          next.push_back(a + b);
          ++i;
        } else {
          next.push_back(syms[i]);
        }
      }
      syms = std::move(next);
    }
    return syms;
  }

  std::vector<std::string> apply_sentence(const std::vector<std::string>& tokens) const {
    std::vector<std::string> out;
    for (const auto& t : tokens) {
      auto segs = apply(t);
      out.insert(out.end(), segs.begin(), segs.end());
    }
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write BPE model: " + path);
    out << "ctxnmt-bpe v" << kBpeFormatVersion << " threshold " << threshold_ << '\n';
    for (const auto& [a, b] : merges_) out << a << ' ' << b << '\n';
  }

  static SubwordModel load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read BPE model: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty BPE model file: " + path);
    std::istringstream hdr(line);
    std::string magic, version, kw;
    std::size_t threshold = 0;
    hdr >> magic >> version >> kw >> threshold;
    if (magic != "ctxnmt-bpe" || version != "v" + std::to_string(kBpeFormatVersion) || kw != "threshold")
      throw DataError("unrecognized BPE header: " + line);
    std::vector<SymbolPair> merges;
    while (std::getline(in, line)) {
      auto sp = line.find(' ');
      if (sp == std::string::npos || sp == 0 || sp + 1 >= line.size())
        throw DataError("malformed BPE merge line: " + line);
      merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
    }
    return SubwordModel(std::move(merges), threshold);
  }

 private:
  static std::string key(const std::string& a, const std::string& b) {
    std::string k;
    k.reserve(a.size() + b.size() + 1);
    k += a;
    k += ' ';
    k += b;
    return k;
  }

  void index() {
    ranks_.clear();
    for (std::size_t i = 0; i < merges_.size(); ++i) ranks_.emplace(key(merges_[i].first, merges_[i].second), i);
  }

  std::vector<SymbolPair> merges_;
  std::size_t threshold_ = 0;
  std::unordered_map<std::string, std::size_t> ranks_;
};

/// Greedy merge learning. Each round merges the most frequent adjacent pair;
/// ties go to the lexicographically smallest pair. Learning stops after
/// num_merges rounds or once the best pair occurs fewer than threshold times.
inline SubwordModel learn_bpe(const std::map<std::string, std::size_t>& word_counts, std::size_t num_merges,
                              std::size_t threshold) {
  struct Word {
    std::vector<std::string> syms;
    long long freq;
  };
  std::vector<Word> words;
  for (const auto& [w, c] : word_counts)
    if (!w.empty() && c > 0) words.push_back({initial_symbols(w), static_cast<long long>(c)});

  std::map<SymbolPair, long long> stats;
  std::map<SymbolPair, std::set<std::size_t>> where;
  auto add_pairs = [&](std::size_t wi, long long sign) {
    const auto& s = words[wi].syms;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      SymbolPair p{s[i], s[i + 1]};
      auto& st = stats[p];
      st += sign * words[wi].freq;
      if (sign > 0) where[p].insert(wi);
      if (st == 0) stats.erase(p);
    }
  };
  for (std::size_t wi = 0; wi < words.size(); ++wi) add_pairs(wi, +1);

  std::vector<SymbolPair> merges;
  while (merges.size() < num_merges && !stats.empty()) {
    auto best = stats.begin();
    for (auto it = stats.begin(); it != stats.end(); ++it)
      if (it->second > best->second) best = it;  // map order gives the lexicographic tie-break
    if (best->second <= 0 || static_cast<std::size_t>(best->second) < threshold) break;
    const SymbolPair pair = best->first;
    merges.push_back(pair);
    const std::set<std::size_t> touched = where[pair];
    for (std::size_t wi : touched) {
      auto& s = words[wi].syms;
      bool has = false;
      for (std::size_t i = 0; i + 1 < s.size(); ++i)
        if (s[i] == pair.first && s[i + 1] == pair.second) has = true;
      if (!has) continue;
      add_pairs(wi, -1);
      std::vector<std::string> next;
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (i + 1 < s.size() && s[i] == pair.first && s[i + 1] == pair.second) {
          next.push_back(pair.first + pair.second);
          ++i;
        } else {
          next.push_back(s[i]);
        }
      }
      s = std::move(next);
      add_pairs(wi, +1);
    }
    where.erase(pair);
  }
  return SubwordModel(std::move(merges), threshold);
}

/// Inverse of segmentation: concatenates subwords, turning end-of-word markers
/// into spaces. Subwords without a marker glue to the next one.
inline std::vector<std::string> merge_subwords(const std::vector<std::string>& subwords) {
  std::vector<std::string> words;
  std::string cur;
  for (const auto& s : subwords) {
    if (s.size() >= kEndOfWord.size() && s.compare(s.size() - kEndOfWord.size(), kEndOfWord.size(), kEndOfWord) == 0) {
      cur += s.substr(0, s.size() - kEndOfWord.size());
      words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += s;
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

}  // namespace ctxnmt
