#pragma once

// Learned preprocessing shared by training, translation and scoring:
// tokenize -> sentence-initial casing -> BPE -> vocabulary ids, per language.
//
// Prepared directory layout:
//   case.src case.trg    casing counts
//   bpe.src bpe.trg      merge lists
//   vocab.src vocab.trg  vocabularies
//   train.src train.trg  segmented training corpus (blank line between documents)
//   dev.src dev.trg      optional segmented validation corpus
//   prepare.cfg          options used

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ctxnmt/bpe.hpp"
#include "ctxnmt/config.hpp"
#include "ctxnmt/corpus.hpp"
#include "ctxnmt/text.hpp"
#include "ctxnmt/vocab.hpp"

namespace ctxnmt {

struct PrepareOptions {
  std::size_t max_len = 80;
  std::size_t merges = 90000;
  std::size_t bpe_threshold = 50;
  std::size_t vocab_min_count = 1;

  KeyValues to_kv() const {
    KeyValues kv;
    kv.set("max_len", std::to_string(max_len));
    kv.set("merges", std::to_string(merges));
    kv.set("bpe_threshold", std::to_string(bpe_threshold));
    kv.set("vocab_min_count", std::to_string(vocab_min_count));
    return kv;
  }
};

class Pipeline {
 public:
  CaseModel case_src, case_trg;
  SubwordModel bpe_src, bpe_trg;
  Vocabulary vocab_src, vocab_trg;

  /// Learns casing, BPE and vocabularies from tokenized, cleaned documents.
  static Pipeline learn(const std::vector<Document>& docs, const PrepareOptions& opt) {
    Pipeline p;
    for (const auto& d : docs)
      for (const auto& s : d.pairs) {
        p.case_src.observe(s.src);
        p.case_trg.observe(s.trg);
      }
    std::map<std::string, std::size_t> wsrc, wtrg;
    for (const auto& d : docs)
      for (const auto& s : d.pairs) {
        for (const auto& t : p.case_src.apply(s.src)) ++wsrc[t];
        for (const auto& t : p.case_trg.apply(s.trg)) ++wtrg[t];
      }
    p.bpe_src = learn_bpe(wsrc, opt.merges, opt.bpe_threshold);
    p.bpe_trg = learn_bpe(wtrg, opt.merges, opt.bpe_threshold);
    std::map<std::string, std::size_t> vs, vt;
    for (const auto& [w, c] : wsrc)
      for (const auto& s : p.bpe_src.apply(w)) vs[s] += c;
    for (const auto& [w, c] : wtrg)
      for (const auto& s : p.bpe_trg.apply(w)) vt[s] += c;
    p.vocab_src = Vocabulary::build(vs, opt.vocab_min_count);
    p.vocab_trg = Vocabulary::build(vt, opt.vocab_min_count);
    return p;
  }

  std::vector<std::string> segment_src(const std::vector<std::string>& toks) const {
    return bpe_src.apply_sentence(case_src.apply(toks));
  }
  std::vector<std::string> segment_trg(const std::vector<std::string>& toks) const {
    return bpe_trg.apply_sentence(case_trg.apply(toks));
  }

  Document segment(const Document& d) const {
    Document out{d.id, {}};
    for (const auto& s : d.pairs) out.pairs.push_back({segment_src(s.src), segment_trg(s.trg)});
    return out;
  }

  /// Raw text to EOS-terminated ids.
  std::vector<int> encode_src(const std::string& line) const { return vocab_src.encode(segment_src(tokenize(line))); }
  std::vector<int> encode_trg(const std::string& line) const { return vocab_trg.encode(segment_trg(tokenize(line))); }

  /// Ids to text: subwords merged, tokens space-joined, first letter upper-cased.
  std::string decode_trg(const std::vector<int>& ids) const {
    std::vector<std::string> subwords;
    for (int i : ids) {
      if (i == kPad || i == kEos) continue;
      subwords.push_back(vocab_trg.token(i));
    }
    auto s = join(merge_subwords(subwords));
    if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
    return s;
  }

  /// Context examples for an already segmented document.
  std::vector<ContextualExample> examples(const Document& segmented) const {
    return extract_context_pairs(segmented, vocab_src, vocab_trg);
  }

  void save(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    const std::filesystem::path d(dir);
    case_src.save((d / "case.src").string());
    case_trg.save((d / "case.trg").string());
    bpe_src.save((d / "bpe.src").string());
    bpe_trg.save((d / "bpe.trg").string());
    vocab_src.save((d / "vocab.src").string());
    vocab_trg.save((d / "vocab.trg").string());
  }

  static Pipeline load(const std::string& dir) {
    const std::filesystem::path d(dir);
    Pipeline p;
    p.case_src = CaseModel::load((d / "case.src").string());
    p.case_trg = CaseModel::load((d / "case.trg").string());
    p.bpe_src = SubwordModel::load((d / "bpe.src").string());
    p.bpe_trg = SubwordModel::load((d / "bpe.trg").string());
    p.vocab_src = Vocabulary::load((d / "vocab.src").string());
    p.vocab_trg = Vocabulary::load((d / "vocab.trg").string());
    return p;
  }
};

/// Reads already-tokenized lines (space separated) without re-tokenizing.
inline std::vector<Document> read_segmented_corpus(const std::string& src_path, const std::string& trg_path) {
  return read_parallel_corpus(src_path, trg_path, false);
}

/// Single-language documents: one sentence per line, blank line between documents.
inline std::vector<std::vector<std::string>> read_documents(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::vector<std::vector<std::string>> docs(1);
  for (std::string l; std::getline(in, l);) {
    if (!l.empty() && l.back() == '\r') l.pop_back();
    if (l.find_first_not_of(" \t") == std::string::npos) {
      if (!docs.back().empty()) docs.emplace_back();
      continue;
    }
    docs.back().push_back(l);
  }
  if (docs.back().empty()) docs.pop_back();
  return docs;
}

inline void write_documents(const std::vector<std::vector<std::string>>& docs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (d) out << "\n";
    for (const auto& l : docs[d]) out << l << "\n";
  }
}

/// Context pairs for inspection, one per line: aux_src ||| aux_trg ||| src ||| trg.
inline void write_context_pairs(const Pipeline& p, const std::vector<Document>& segmented, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  auto side = [](const Vocabulary& v, const std::vector<int>& ids) { return join(v.decode(ids)); };
  for (const auto& d : segmented)
    for (const auto& e : p.examples(d))
      out << side(p.vocab_src, e.aux_src) << " ||| " << side(p.vocab_trg, e.aux_trg) << " ||| "
          << side(p.vocab_src, e.src) << " ||| " << side(p.vocab_trg, e.trg) << "\n";
}

struct PreparedData {
  Pipeline pipeline;
  std::vector<Document> train, dev;  // segmented
};

/// Tokenizes, cleans, learns the pipeline on train, segments train and dev,
/// and writes everything to out_dir.
inline PreparedData prepare(const std::string& train_src, const std::string& train_trg, const std::string& dev_src,
                            const std::string& dev_trg, const std::string& out_dir, const PrepareOptions& opt) {
  PreparedData pd;
  auto train = clean_corpus(read_parallel_corpus(train_src, train_trg), opt.max_len);
  pd.pipeline = Pipeline::learn(train, opt);
  for (const auto& d : train) pd.train.push_back(pd.pipeline.segment(d));
  if (!dev_src.empty())
    for (const auto& d : clean_corpus(read_parallel_corpus(dev_src, dev_trg), opt.max_len))
      pd.dev.push_back(pd.pipeline.segment(d));
  pd.pipeline.save(out_dir);
  const std::filesystem::path d(out_dir);
  write_parallel_corpus(pd.train, (d / "train.src").string(), (d / "train.trg").string());
  if (!dev_src.empty()) write_parallel_corpus(pd.dev, (d / "dev.src").string(), (d / "dev.trg").string());
  std::ofstream((d / "prepare.cfg").string()) << opt.to_kv().dump();
  write_context_pairs(pd.pipeline, pd.train, (d / "train.pairs").string());
  return pd;
}

/// The segmented corpora of a prepared directory.
inline PreparedData load_prepared(const std::string& dir) {
  PreparedData pd;
  pd.pipeline = Pipeline::load(dir);
  const std::filesystem::path d(dir);
  pd.train = read_segmented_corpus((d / "train.src").string(), (d / "train.trg").string());
  if (std::filesystem::exists(d / "dev.src"))
    pd.dev = read_segmented_corpus((d / "dev.src").string(), (d / "dev.trg").string());
  return pd;
}

inline std::vector<ContextualExample> corpus_examples(const Pipeline& p, const std::vector<Document>& segmented) {
  std::vector<ContextualExample> out;
  for (const auto& d : segmented)
    for (auto& e : p.examples(d)) out.push_back(std::move(e));
  return out;
}

}  // namespace ctxnmt
