#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctxnmt/error.hpp"

namespace ctxnmt {

/// Fixed ids shared by every vocabulary.
enum Reserved : int { kPad = 0, kUnk = 1, kEos = 2, kConcat = 3, kEmptyContext = 4 };
inline constexpr int kNumReserved = 5;
inline constexpr std::array<std::string_view, kNumReserved> kReservedTokens = {"<pad>", "<unk>", "</s>", "<concat>",
                                                                               "<empty>"};

inline bool is_reserved(int id) { return id >= 0 && id < kNumReserved; }

class Vocabulary {
 public:
  Vocabulary() {
    for (auto t : kReservedTokens) add(std::string(t));
  }

  /// Tokens ordered by descending count, then lexicographically.
  static Vocabulary build(const std::map<std::string, std::size_t>& counts, std::size_t min_count = 1,
                          std::size_t max_size = 0) {
    std::vector<std::pair<std::string, std::size_t>> items(counts.begin(), counts.end());
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocabulary v;
    for (const auto& [tok, c] : items) {
      if (c < min_count) continue;
      if (max_size && v.size() >= max_size) break;
      if (!v.contains(tok)) v.add(tok);
    }
    return v;
  }

  std::size_t size() const { return id_to_token_.size(); }
  bool contains(const std::string& t) const { return token_to_id_.count(t) != 0; }

  int id(const std::string& t) const {
    auto it = token_to_id_.find(t);
    return it == token_to_id_.end() ? kUnk : it->second;
  }

  const std::string& token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= size())
      throw ContractError("vocabulary id " + std::to_string(id) + " out of range");
    return id_to_token_[id];
  }

  std::vector<int> encode(const std::vector<std::string>& toks, bool append_eos = true) const {
    std::vector<int> ids;
    ids.reserve(toks.size() + 1);
    for (const auto& t : toks) ids.push_back(id(t));
    if (append_eos) ids.push_back(kEos);
    return ids;
  }

  /// Drops PAD and EOS; other reserved tokens are rendered by name.
  std::vector<std::string> decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    for (int i : ids) {
      if (i == kPad || i == kEos) continue;
      out.push_back(token(i));
    }
    return out;
  }

  /// One non-reserved token per line; line n holds id kNumReserved + n.
  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write vocabulary: " + path);
    for (std::size_t i = kNumReserved; i < size(); ++i) out << id_to_token_[i] << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read vocabulary: " + path);
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) throw DataError("empty token line in vocabulary " + path);
      if (v.contains(line)) throw DataError("duplicate vocabulary token '" + line + "' in " + path);
      v.add(line);
    }
    return v;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.id_to_token_ == b.id_to_token_; }

 private:
  void add(std::string t) {
    token_to_id_.emplace(t, static_cast<int>(id_to_token_.size()));
    id_to_token_.push_back(std::move(t));
  }

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

}  // namespace ctxnmt
