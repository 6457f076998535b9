#pragma once

// Contrastive discourse test sets: storage, structural validation, scoring
// and reporting.
//
// File format: JSON lines, one block per line:
//   {"block_id": "...", "kind": "coreference"|"coherence",
//    "pairs": [{"context_src", "context_trg", "src", "trg_correct",
//               "trg_incorrect", "tags": {"pronoun_class", "correctness"}}]}
// Strings hold detokenized sentences; tags are only used by coreference sets.

#include <algorithm>
#include <array>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ctxnmt/error.hpp"

namespace ctxnmt {

enum class SetKind { coreference, coherence };

inline std::string kind_name(SetKind k) { return k == SetKind::coreference ? "coreference" : "coherence"; }

inline SetKind parse_kind(const std::string& s) {
  if (s == "coreference") return SetKind::coreference;
  if (s == "coherence") return SetKind::coherence;
  throw DataError("unknown test set kind '" + s + "'");
}

inline constexpr std::array<const char*, 4> kPronounClasses = {"m.sg", "f.sg", "m.pl", "f.pl"};

struct ContrastivePair {
  std::string context_src, context_trg, src;
  std::string trg_correct, trg_incorrect;
  std::map<std::string, std::string> tags;

  friend bool operator==(const ContrastivePair&, const ContrastivePair&) = default;
};

struct ContrastiveBlock {
  std::string block_id;
  SetKind kind = SetKind::coreference;
  std::vector<ContrastivePair> pairs;

  friend bool operator==(const ContrastiveBlock&, const ContrastiveBlock&) = default;
};

inline nlohmann::json to_json(const ContrastiveBlock& b) {
  nlohmann::json j;
  j["block_id"] = b.block_id;
  j["kind"] = kind_name(b.kind);
  j["pairs"] = nlohmann::json::array();
  for (const auto& p : b.pairs) {
    nlohmann::json q;
    q["context_src"] = p.context_src;
    q["context_trg"] = p.context_trg;
    q["src"] = p.src;
    q["trg_correct"] = p.trg_correct;
    q["trg_incorrect"] = p.trg_incorrect;
    q["tags"] = p.tags;
    j["pairs"].push_back(std::move(q));
  }
  return j;
}

inline ContrastiveBlock block_from_json(const nlohmann::json& j) {
  try {
    ContrastiveBlock b;
    b.block_id = j.at("block_id").get<std::string>();
    b.kind = parse_kind(j.at("kind").get<std::string>());
    for (const auto& q : j.at("pairs")) {
      ContrastivePair p;
      p.context_src = q.at("context_src").get<std::string>();
      p.context_trg = q.at("context_trg").get<std::string>();
      p.src = q.at("src").get<std::string>();
      p.trg_correct = q.at("trg_correct").get<std::string>();
      p.trg_incorrect = q.at("trg_incorrect").get<std::string>();
      if (q.contains("tags")) p.tags = q.at("tags").get<std::map<std::string, std::string>>();
      b.pairs.push_back(std::move(p));
    }
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed test set block: ") + e.what());
  }
}

inline std::vector<ContrastiveBlock> parse_testset(std::istream& in, const std::string& origin = "test set") {
  std::vector<ContrastiveBlock> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
    try {
      out.push_back(block_from_json(j));
    } catch (const DataError& e) {
      throw DataError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<ContrastiveBlock> read_testset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read test set " + path);
  return parse_testset(in, path);
}

inline void write_testset(const std::vector<ContrastiveBlock>& blocks, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write test set " + path);
  for (const auto& b : blocks) out << to_json(b).dump() << "\n";
}

struct Violation {
  std::string block_id;
  std::string message;
};

/// Every structural rule a block must satisfy; empty iff well-formed.
inline std::vector<Violation> validate_testset(const std::vector<ContrastiveBlock>& blocks) {
  std::vector<Violation> out;
  std::set<std::string> ids;
  for (const auto& b : blocks) {
    auto bad = [&](const std::string& m) { out.push_back({b.block_id, m}); };
    if (b.block_id.empty()) bad("empty block_id");
    if (!ids.insert(b.block_id).second) bad("duplicate block_id");
    for (std::size_t i = 0; i < b.pairs.size(); ++i) {
      const auto& p = b.pairs[i];
      const std::string at = "pair " + std::to_string(i) + ": ";
      if (p.context_src.empty() || p.context_trg.empty() || p.src.empty() || p.trg_correct.empty() ||
          p.trg_incorrect.empty())
        bad(at + "empty field");
      if (p.trg_correct == p.trg_incorrect) bad(at + "correct and incorrect translations are identical");
      if (i > 0 && p.src != b.pairs[0].src) bad(at + "source sentence differs within the block");
    }
    if (b.kind == SetKind::coherence) {
      if (b.pairs.size() != 2) {
        bad("coherence block has " + std::to_string(b.pairs.size()) + " pairs, expected 2");
        continue;
      }
      const auto &a = b.pairs[0], &c = b.pairs[1];
      if (a.trg_incorrect != c.trg_correct || c.trg_incorrect != a.trg_correct)
        bad("coherence pairs do not swap correct and incorrect translations");
      continue;
    }
    if (b.pairs.size() != 4) {
      bad("coreference block has " + std::to_string(b.pairs.size()) + " pairs, expected 4");
      continue;
    }
    int masc = 0, fem = 0, semi = 0;
    bool tags_ok = true;
    for (std::size_t i = 0; i < b.pairs.size(); ++i) {
      const auto& t = b.pairs[i].tags;
      auto pc = t.find("pronoun_class");
      auto co = t.find("correctness");
      if (pc == t.end() || std::find_if(kPronounClasses.begin(), kPronounClasses.end(),
                                        [&](const char* c) { return pc->second == c; }) == kPronounClasses.end()) {
        bad("pair " + std::to_string(i) + ": missing or invalid pronoun_class tag");
        tags_ok = false;
        continue;
      }
      if (co == t.end() || (co->second != "correct" && co->second != "semi-correct")) {
        bad("pair " + std::to_string(i) + ": missing or invalid correctness tag");
        tags_ok = false;
        continue;
      }
      (pc->second[0] == 'm' ? masc : fem) += 1;
      semi += co->second == "semi-correct";
    }
    if (tags_ok) {
      if (masc != 2 || fem != 2) bad("coreference block needs two pairs per antecedent gender");
      if (semi != 2) bad("coreference block needs exactly 2 semi-correct pairs, found " + std::to_string(semi));
    }
    std::map<std::string, std::pair<int, int>> uses;  // candidate -> (as correct, as incorrect)
    for (const auto& p : b.pairs) {
      ++uses[p.trg_correct].first;
      ++uses[p.trg_incorrect].second;
    }
    if (uses.size() != 2) {
      bad("coreference block has " + std::to_string(uses.size()) +
          " distinct current-sentence translations, expected 2");
    } else {
      for (const auto& [cand, n] : uses)
        if (n.first != n.second) bad("translation '" + cand + "' is not equally often correct and incorrect");
    }
  }
  return out;
}

enum class Side { correct, incorrect };

/// Any function producing a score for one side of a pair; higher is better.
using PairScorer = std::function<double(const ContrastivePair&, Side)>;

struct PairResult {
  std::string block_id;
  std::size_t pair_index = 0;
  double score_correct = 0, score_incorrect = 0;
  bool correct = false;
  std::map<std::string, std::string> tags;
};

struct Accuracy {
  std::size_t right = 0, total = 0;
  double percent() const { return total ? 100.0 * static_cast<double>(right) / static_cast<double>(total) : 0.0; }
  void add(bool ok) {
    right += ok;
    ++total;
  }
};

struct EvalReport {
  SetKind kind = SetKind::coreference;
  Accuracy overall;
  std::map<std::string, Accuracy> by_class;        // pronoun classes
  std::map<std::string, Accuracy> by_correctness;  // correct / semi-correct
  std::vector<PairResult> pairs;
};

/// Strict rule: a pair is right iff score(correct) > score(incorrect).
inline PairResult judge(const ContrastiveBlock& b, std::size_t i, double sc, double si) {
  PairResult r;
  r.block_id = b.block_id;
  r.pair_index = i;
  r.score_correct = sc;
  r.score_incorrect = si;
  r.correct = sc > si;
  r.tags = b.pairs[i].tags;
  return r;
}

inline EvalReport aggregate(SetKind kind, std::vector<PairResult> results) {
  EvalReport rep;
  rep.kind = kind;
  for (const auto& r : results) {
    rep.overall.add(r.correct);
    if (kind != SetKind::coreference) continue;
    if (auto it = r.tags.find("pronoun_class"); it != r.tags.end()) rep.by_class[it->second].add(r.correct);
    if (auto it = r.tags.find("correctness"); it != r.tags.end()) rep.by_correctness[it->second].add(r.correct);
  }
  rep.pairs = std::move(results);
  return rep;
}

inline SetKind common_kind(const std::vector<ContrastiveBlock>& blocks) {
  if (blocks.empty()) return SetKind::coreference;
  for (const auto& b : blocks)
    if (b.kind != blocks.front().kind) throw DataError("test set mixes coreference and coherence blocks");
  return blocks.front().kind;
}

inline EvalReport evaluate(const std::vector<ContrastiveBlock>& blocks, const PairScorer& score) {
  std::vector<PairResult> results;
  for (const auto& b : blocks)
    for (std::size_t i = 0; i < b.pairs.size(); ++i)
      results.push_back(judge(b, i, score(b.pairs[i], Side::correct), score(b.pairs[i], Side::incorrect)));
  return aggregate(common_kind(blocks), std::move(results));
}

/// Evaluation from precomputed scores, parallel to the pairs in block order.
inline EvalReport evaluate_scores(const std::vector<ContrastiveBlock>& blocks, const std::vector<double>& correct,
                                  const std::vector<double>& incorrect) {
  std::vector<PairResult> results;
  std::size_t k = 0;
  for (const auto& b : blocks)
    for (std::size_t i = 0; i < b.pairs.size(); ++i, ++k) {
      if (k >= correct.size() || k >= incorrect.size()) throw ContractError("evaluate_scores: too few scores");
      results.push_back(judge(b, i, correct[k], incorrect[k]));
    }
  if (k != correct.size() || k != incorrect.size()) throw ContractError("evaluate_scores: too many scores");
  return aggregate(common_kind(blocks), std::move(results));
}

inline nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json j;
  j["kind"] = kind_name(r.kind);
  j["all"] = r.overall.percent();
  j["pairs_total"] = r.overall.total;
  j["pairs_correct"] = r.overall.right;
  if (r.kind == SetKind::coreference) {
    for (const char* c : kPronounClasses) {
      auto it = r.by_class.find(c);
      j["by_pronoun_class"][c] = it == r.by_class.end() ? 0.0 : it->second.percent();
    }
    for (const char* c : {"correct", "semi-correct"}) {
      auto it = r.by_correctness.find(c);
      j["by_correctness"][c] = it == r.by_correctness.end() ? 0.0 : it->second.percent();
    }
  }
  j["pairs"] = nlohmann::json::array();
  for (const auto& p : r.pairs)
    j["pairs"].push_back({{"block_id", p.block_id},
                          {"pair", p.pair_index},
                          {"score_correct", p.score_correct},
                          {"score_incorrect", p.score_incorrect},
                          {"correct", p.correct}});
  return j;
}

/// Table with the columns all | m.sg f.sg m.pl f.pl | corr. semi (as % correct).
inline std::string report_table(const EvalReport& r, const std::string& label = "") {
  std::ostringstream o;
  o << std::fixed << std::setprecision(1);
  auto cell = [&](const std::map<std::string, Accuracy>& m, const char* k) {
    auto it = m.find(k);
    std::ostringstream c;
    c << std::fixed << std::setprecision(1);
    if (it == m.end() || it->second.total == 0)
      c << "-";
    else
      c << it->second.percent();
    return c.str();
  };
  o << std::left << std::setw(14) << "system" << std::right;
  for (const char* h : {"all", "m.sg", "f.sg", "m.pl", "f.pl", "corr.", "semi"}) o << std::setw(8) << h;
  o << "\n" << std::left << std::setw(14) << (label.empty() ? kind_name(r.kind) : label) << std::right;
  o << std::setw(8) << r.overall.percent();
  for (const char* c : kPronounClasses) o << std::setw(8) << cell(r.by_class, c);
  o << std::setw(8) << cell(r.by_correctness, "correct") << std::setw(8) << cell(r.by_correctness, "semi-correct");
  o << "\n";
  return o.str();
}

}  // namespace ctxnmt
