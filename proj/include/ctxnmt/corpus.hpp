#pragma once

// Document-level parallel corpora. On disk: two line-aligned UTF-8 files, one
// sentence per line, documents separated by a blank line in both files.

#include <cctype>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "ctxnmt/error.hpp"
#include "ctxnmt/text.hpp"
#include "ctxnmt/vocab.hpp"

namespace ctxnmt {

struct SentencePair {
  std::vector<std::string> src;
  std::vector<std::string> trg;

  friend bool operator==(const SentencePair&, const SentencePair&) = default;
};

struct Document {
  std::string id;
  std::vector<SentencePair> pairs;

  friend bool operator==(const Document&, const Document&) = default;
};

/// One training/inference instance. Every sequence is EOS-terminated; the
/// auxiliary sequences are [EMPTY, EOS] when there is no predecessor.
struct ContextualExample {
  std::vector<int> aux_src;
  std::vector<int> aux_trg;
  std::vector<int> src;
  std::vector<int> trg;

  friend bool operator==(const ContextualExample&, const ContextualExample&) = default;
};

inline const std::vector<int>& empty_context() {
  static const std::vector<int> kEmpty{kEmptyContext, kEos};
  return kEmpty;
}

/// Split on whitespace only (for files that are already tokenized).
inline std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

/// Reads a parallel corpus, tokenizing each line (or only splitting on
/// whitespace when tokenize_lines is false).
inline std::vector<Document> read_parallel_corpus(const std::string& src_path, const std::string& trg_path,
                                                  bool tokenize_lines = true) {
  std::ifstream fs(src_path), ft(trg_path);
  if (!fs) throw DataError("cannot read corpus file: " + src_path);
  if (!ft) throw DataError("cannot read corpus file: " + trg_path);
  std::vector<Document> docs;
  Document cur;
  std::string ls, lt;
  std::size_t line = 0;
  auto flush = [&] {
    if (!cur.pairs.empty()) {
      cur.id = "doc" + std::to_string(docs.size());
      docs.push_back(std::move(cur));
    }
    cur = Document{};
  };
  while (true) {
    const bool gs = static_cast<bool>(std::getline(fs, ls));
    const bool gt = static_cast<bool>(std::getline(ft, lt));
    if (!gs && !gt) break;
    ++line;
    if (gs != gt) throw DataError("corpus files have different line counts (" + src_path + ", " + trg_path + ")");
    const auto ts = tokenize_lines ? tokenize(ls) : split_whitespace(ls);
    const auto tt = tokenize_lines ? tokenize(lt) : split_whitespace(lt);
    if (ts.empty() != tt.empty())
      throw DataError("document boundary on line " + std::to_string(line) + " is blank in only one file");
    if (ts.empty()) {
      flush();
      continue;
    }
    cur.pairs.push_back({ts, tt});
  }
  flush();
  return docs;
}

inline void write_parallel_corpus(const std::vector<Document>& docs, const std::string& src_path,
                                  const std::string& trg_path) {
  std::ofstream fs(src_path), ft(trg_path);
  if (!fs || !ft) throw DataError("cannot write corpus files " + src_path + ", " + trg_path);
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (d) {
      fs << '\n';
      ft << '\n';
    }
    for (const auto& p : docs[d].pairs) {
      fs << join(p.src) << '\n';
      ft << join(p.trg) << '\n';
    }
  }
}

/// Drops pairs where either side exceeds max_len tokens. A dropped pair
/// splits its document so the next sentence starts a new context chain.
inline std::vector<Document> clean_corpus(const std::vector<Document>& docs, std::size_t max_len = 80) {
  if (max_len == 0) throw ContractError("clean_corpus: max_len must be >= 1");
  std::vector<Document> out;
  for (const auto& doc : docs) {
    Document cur{doc.id, {}};
    int part = 0;
    bool split = false;
    auto flush = [&] {
      if (cur.pairs.empty()) return;
      if (split || part > 0) cur.id = doc.id + "#" + std::to_string(part);
      out.push_back(std::move(cur));
      cur = Document{doc.id, {}};
      ++part;
    };
    for (const auto& p : doc.pairs) {
      if (p.src.size() > max_len || p.trg.size() > max_len) {
        split = true;
        flush();
        continue;
      }
      cur.pairs.push_back(p);
    }
    if (cur.pairs.empty() && doc.pairs.empty()) {
      out.push_back(cur);  // empty documents pass through unchanged
      continue;
    }
    flush();
  }
  return out;
}

/// One example per sentence pair; the auxiliary fields hold the previous
/// pair's sentences.
inline std::vector<ContextualExample> extract_context_pairs(const Document& doc, const Vocabulary& src_vocab,
                                                            const Vocabulary& trg_vocab) {
  std::vector<ContextualExample> out;
  out.reserve(doc.pairs.size());
  for (std::size_t i = 0; i < doc.pairs.size(); ++i) {
    ContextualExample ex;
    ex.src = src_vocab.encode(doc.pairs[i].src);
    ex.trg = trg_vocab.encode(doc.pairs[i].trg);
    if (i == 0) {
      ex.aux_src = empty_context();
      ex.aux_trg = empty_context();
    } else {
      ex.aux_src = out.back().src;
      ex.aux_trg = out.back().trg;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace ctxnmt
