#pragma once

#include <cctype>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ctxnmt/error.hpp"

namespace ctxnmt {

inline bool is_punct_byte(unsigned char c) { return c < 0x80 && std::ispunct(c); }

/// Whitespace split, then leading and trailing ASCII punctuation peeled off
/// one character per token. Internal punctuation ("c'est") is kept.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) {
      std::string_view w = text.substr(i, j - i);
      std::size_t b = 0, e = w.size();
      while (b < e && is_punct_byte(w[b])) ++b;
      while (e > b && is_punct_byte(w[e - 1])) --e;
      for (std::size_t k = 0; k < b; ++k) out.emplace_back(1, w[k]);
      if (e > b) out.emplace_back(w.substr(b, e - b));
      for (std::size_t k = e; k < w.size(); ++k) out.emplace_back(1, w[k]);
    }
    i = j;
  }
  return out;
}

inline std::string join(const std::vector<std::string>& toks, std::string_view sep = " ") {
  std::string s;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) s += sep;
    s += toks[i];
  }
  return s;
}

inline std::string ascii_lower(std::string s) {
  for (auto& c : s)
    if (static_cast<unsigned char>(c) < 0x80) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

/// Splits a UTF-8 string into code points; invalid bytes become single units.
inline std::vector<std::string> utf8_chars(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if (c >= 0xF0) len = 4;
    else if (c >= 0xE0) len = 3;
    else if (c >= 0xC0) len = 2;
    if (i + len > s.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k)
      if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    out.emplace_back(s.substr(i, len));
    i += len;
  }
  return out;
}

/// Sentence-initial casing: the first token is lowercased iff its lowercase
/// form is more frequent than the form as written.
class CaseModel {
 public:
  void observe(const std::vector<std::string>& sentence) {
    for (const auto& t : sentence) ++counts_[t];
  }

  std::vector<std::string> apply(std::vector<std::string> sentence) const {
    if (sentence.empty()) return sentence;
    std::string lower = ascii_lower(sentence[0]);
    if (lower != sentence[0] && count(lower) > count(sentence[0])) sentence[0] = std::move(lower);
    return sentence;
  }

  std::size_t count(const std::string& t) const {
    auto it = counts_.find(t);
    return it == counts_.end() ? 0 : it->second;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write case model: " + path);
    for (const auto& [t, c] : counts_) out << t << '\t' << c << '\n';
  }

  static CaseModel load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read case model: " + path);
    CaseModel m;
    std::string line;
    while (std::getline(in, line)) {
      auto tab = line.rfind('\t');
      if (tab == std::string::npos) throw DataError("malformed case model line: " + line);
      m.counts_[line.substr(0, tab)] = std::stoull(line.substr(tab + 1));
    }
    return m;
  }

 private:
  std::map<std::string, std::size_t> counts_;
};

}  // namespace ctxnmt
