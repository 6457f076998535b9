#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "ctxnmt/bleu.hpp"
#include "ctxnmt/contrastive.hpp"
#include "ctxnmt/scoring.hpp"
#include "ctxnmt/synth.hpp"
#include "test_support.hpp"

using namespace ctxnmt;
using namespace ctxnmt::testing;

namespace {

std::string word(Rng& rng) {
  std::string w;
  const std::size_t n = 1 + rng.below(6);
  for (std::size_t i = 0; i < n; ++i) w += static_cast<char>('a' + rng.below(5));
  return w;
}

std::string phrase(Rng& rng) {
  std::string s = word(rng);
  for (std::size_t i = 0, n = rng.below(4); i < n; ++i) s += " " + word(rng);
  return s;
}

std::pair<std::string, std::string> two_distinct(Rng& rng) {
  auto a = phrase(rng), b = phrase(rng);
  while (b == a) b = phrase(rng);
  return {a, b};
}

/// Any well-formed block: random strings, random pair order, random pronoun numbers.
ContrastiveBlock random_block(Rng& rng, SetKind kind, std::size_t id) {
  ContrastiveBlock b;
  b.block_id = "b" + std::to_string(id);
  b.kind = kind;
  const auto src = phrase(rng);
  const auto [x, y] = two_distinct(rng);
  auto pair = [&](const std::string& c, const std::string& i) {
    return ContrastivePair{phrase(rng), phrase(rng), src, c, i, {}};
  };
  if (kind == SetKind::coherence) {
    b.pairs = {pair(x, y), pair(y, x)};
  } else {
    const char* num = rng.coin() ? "sg" : "pl";
    // Each gender half has one pair per orientation of the two candidates.
    for (const char* g : {"m", "f"}) {
      const bool flip = rng.coin();
      auto p = pair(flip ? y : x, flip ? x : y), q = pair(flip ? x : y, flip ? y : x);
      const bool semi_first = rng.coin();
      p.tags = {{"pronoun_class", std::string(g) + "." + num}, {"correctness", semi_first ? "semi-correct" : "correct"}};
      q.tags = {{"pronoun_class", std::string(g) + "." + num}, {"correctness", semi_first ? "correct" : "semi-correct"}};
      b.pairs.push_back(p);
      b.pairs.push_back(q);
    }
  }
  rng.shuffle(b.pairs.begin(), b.pairs.end());
  return b;
}

std::vector<ContrastiveBlock> random_set(Rng& rng, SetKind kind, std::size_t n) {
  std::vector<ContrastiveBlock> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_block(rng, kind, i));
  return out;
}

/// A fixed, injective-in-practice function of the source and the candidate.
double blind_score(const ContrastivePair& p, Side s, std::uint64_t salt) {
  const auto& cand = s == Side::correct ? p.trg_correct : p.trg_incorrect;
  const auto h = std::hash<std::string>{}(p.src + '\x1f' + cand + std::to_string(salt));
  return static_cast<double>(h >> 12);
}

ContrastiveBlock coherence_block() {
  return {"c0",
          SetKind::coherence,
          {{"ctx a", "kta a", "cur", "A", "B", {}}, {"ctx b", "kta b", "cur", "B", "A", {}}}};
}

ContrastiveBlock coreference_block() {
  ContrastiveBlock b{"r0", SetKind::coreference, {}};
  b.pairs.push_back({"c", "le x", "s", "il", "elle", {{"pronoun_class", "m.sg"}, {"correctness", "correct"}}});
  b.pairs.push_back({"c", "la x", "s", "elle", "il", {{"pronoun_class", "f.sg"}, {"correctness", "correct"}}});
  b.pairs.push_back({"c", "le y", "s", "il", "elle", {{"pronoun_class", "m.sg"}, {"correctness", "semi-correct"}}});
  b.pairs.push_back({"c", "la y", "s", "elle", "il", {{"pronoun_class", "f.sg"}, {"correctness", "semi-correct"}}});
  return b;
}

template <class T>
std::vector<ContextModel<T>> single(ContextModel<T> m) {
  std::vector<ContextModel<T>> v;
  v.push_back(std::move(m));
  return v;
}

SynthConfig small_synth() {
  SynthConfig c;
  c.documents = 300;
  return c;
}

}  // namespace

TEST(Validate, WellFormedBlocksHaveNoViolations) {
  EXPECT_TRUE(validate_testset({coherence_block()}).empty());
  EXPECT_TRUE(validate_testset({coreference_block()}).empty());
}

TEST(Validate, CoherenceWithoutSwapIsOneViolation) {
  auto b = coherence_block();
  b.pairs[1].trg_incorrect = "C";
  EXPECT_EQ(validate_testset({b}).size(), 1u);
}

TEST(Validate, CoreferenceWithThreePairsIsCardinalityViolation) {
  auto b = coreference_block();
  b.pairs.pop_back();
  const auto v = validate_testset({b});
  ASSERT_EQ(v.size(), 1u);
  EXPECT_NE(v[0].message.find("3 pairs"), std::string::npos);
}

TEST(Validate, EachStructuralRuleIsChecked) {
  auto count = [](const ContrastiveBlock& b) { return validate_testset({b}).size(); };
  auto b = coreference_block();
  b.pairs[0].trg_incorrect = b.pairs[0].trg_correct;
  EXPECT_GE(count(b), 1u);
  b = coreference_block();
  b.pairs[2].tags["correctness"] = "correct";
  EXPECT_GE(count(b), 1u);
  b = coreference_block();
  b.pairs[1].tags["pronoun_class"] = "m.sg";
  EXPECT_GE(count(b), 1u);
  b = coreference_block();
  b.pairs[3].tags.erase("pronoun_class");
  EXPECT_GE(count(b), 1u);
  b = coreference_block();
  b.pairs[3].src = "other";
  EXPECT_GE(count(b), 1u);
  b = coreference_block();
  b.pairs[1] = b.pairs[0];
  b.pairs[1].tags = {{"pronoun_class", "f.sg"}, {"correctness", "correct"}};
  EXPECT_GE(count(b), 1u);  // candidates no longer balanced
  b = coreference_block();
  b.pairs[0].context_trg.clear();
  EXPECT_GE(count(b), 1u);
  EXPECT_EQ(validate_testset({coherence_block(), coherence_block()}).size(), 1u);  // duplicate id
}

TEST(FiftyPercent, HoldsOnGeneratedSets) {
  const auto cfg = small_synth();
  const auto coref = generate_testset(cfg, SetKind::coreference, 50);
  const auto coh = generate_testset(cfg, SetKind::coherence, 100);
  ASSERT_TRUE(validate_testset(coref).empty());
  ASSERT_TRUE(validate_testset(coh).empty());
  for (std::uint64_t salt = 0; salt < 20; ++salt) {
    auto f = [&](const ContrastivePair& p, Side s) { return blind_score(p, s, salt); };
    const auto r1 = evaluate(coref, f);
    EXPECT_EQ(r1.overall.percent(), 50.0);
    EXPECT_EQ(r1.overall.total, 200u);
    for (const char* c : kPronounClasses) EXPECT_EQ(r1.by_class.at(c).total, 50u);
    EXPECT_EQ(r1.by_correctness.at("correct").total, 100u);
    EXPECT_EQ(evaluate(coh, f).overall.percent(), 50.0);
  }
}

TEST(FiftyPercent, HoldsOnThousandRandomWellFormedSets) {
  Rng rng(2024);
  for (int t = 0; t < 1000; ++t) {
    const auto kind = t % 2 ? SetKind::coherence : SetKind::coreference;
    const auto set = random_set(rng, kind, 1 + rng.below(12));
    ASSERT_TRUE(validate_testset(set).empty()) << "set " << t;
    const std::uint64_t salt = t;
    const auto r = evaluate(set, [&](const ContrastivePair& p, Side s) { return blind_score(p, s, salt); });
    ASSERT_EQ(r.overall.percent(), 50.0) << "set " << t;
  }
}

TEST(FiftyPercent, HoldsForContextBlindModel) {
  const auto cfg = small_synth();
  PrepareOptions po;
  po.bpe_threshold = 5;
  const auto pipe = Pipeline::learn(generate_corpus(cfg), po);
  const auto m =
      single(toy_model<float>(StrategyId::baseline, 6, 5, pipe.vocab_src.size(), pipe.vocab_trg.size(), 3, 0.7));
  for (auto kind : {SetKind::coreference, SetKind::coherence}) {
    const auto set = generate_testset(cfg, kind, kind == SetKind::coreference ? 50 : 100);
    const auto r = evaluate_model(std::span<const ContextModel<float>>(m), pipe, set);
    EXPECT_EQ(r.overall.percent(), 50.0) << kind_name(kind);
  }
}

TEST(Evaluate, OracleIsPerfectAndTiesScoreZero) {
  Rng rng(3);
  const auto set = random_set(rng, SetKind::coreference, 10);
  const auto oracle = evaluate(set, [](const ContrastivePair&, Side s) { return s == Side::correct ? 1.0 : 0.0; });
  EXPECT_EQ(oracle.overall.percent(), 100.0);
  const auto ties = evaluate(set, [](const ContrastivePair&, Side) { return -2.5; });
  EXPECT_EQ(ties.overall.percent(), 0.0);
}

TEST(Evaluate, InvariantUnderBlockAndPairPermutations) {
  Rng rng(4);
  for (auto kind : {SetKind::coreference, SetKind::coherence}) {
    auto set = random_set(rng, kind, 15);
    // Context-sensitive so that the outcome varies per pair.
    auto f = [](const ContrastivePair& p, Side s) {
      return static_cast<double>(std::hash<std::string>{}(p.context_trg + (s == Side::correct ? p.trg_correct
                                                                                              : p.trg_incorrect)) >>
                                 12);
    };
    const auto base = evaluate(set, f);
    for (int t = 0; t < 10; ++t) {
      rng.shuffle(set.begin(), set.end());
      for (auto& b : set) rng.shuffle(b.pairs.begin(), b.pairs.end());
      const auto r = evaluate(set, f);
      EXPECT_EQ(r.overall.right, base.overall.right);
      for (const auto& [k, a] : base.by_class) EXPECT_EQ(r.by_class.at(k).right, a.right);
      for (const auto& [k, a] : base.by_correctness) EXPECT_EQ(r.by_correctness.at(k).right, a.right);
    }
  }
}

TEST(Evaluate, BreakdownsPartitionPairs) {
  Rng rng(5);
  const auto set = random_set(rng, SetKind::coreference, 30);
  const auto r = evaluate(set, [](const ContrastivePair& p, Side s) {
    return static_cast<double>((s == Side::correct ? p.trg_correct : p.trg_incorrect).size() + p.context_src.size());
  });
  std::size_t right = 0, total = 0;
  for (const auto& [k, a] : r.by_class) right += a.right, total += a.total;
  EXPECT_EQ(right, r.overall.right);
  EXPECT_EQ(total, r.overall.total);
  right = total = 0;
  for (const auto& [k, a] : r.by_correctness) right += a.right, total += a.total;
  EXPECT_EQ(right, r.overall.right);
  EXPECT_EQ(total, 120u);
}

TEST(Evaluate, PrecomputedScoresMustMatchPairCount) {
  const std::vector<ContrastiveBlock> set{coherence_block()};
  EXPECT_EQ(evaluate_scores(set, {1, 0}, {0, 1}).overall.right, 1u);
  EXPECT_THROW(evaluate_scores(set, {1}, {0}), ContractError);
  EXPECT_THROW(evaluate_scores(set, {1, 0, 2}, {0, 1, 2}), ContractError);
  EXPECT_THROW(evaluate({coherence_block(), coreference_block()}, [](const ContrastivePair&, Side) { return 0.0; }),
               DataError);
}

TEST(Score, UniformModelGivesMinusNLogV) {
  auto m = toy_model<double>(StrategyId::s_hier, 4, 3, 9, 11, 1);
  for (std::size_t i = 0; i < m.params().size(); ++i) m.params()[i].value.fill(0.0);
  const auto ms = single(std::move(m));
  Rng rng(6);
  std::vector<ContextualExample> raw;
  for (int i = 0; i < 5; ++i) raw.push_back(random_example(rng, 9, 11, 6));
  const auto s = score_examples(std::span<const ContextModel<double>>(ms), raw);
  for (std::size_t i = 0; i < raw.size(); ++i)
    EXPECT_NEAR(s[i], -static_cast<double>(raw[i].trg.size()) * std::log(11.0), 1e-10);
}

TEST(Score, HandParameterizedTwoTokenCandidate) {
  // Only the output layer bias and the target embeddings are non-zero, so
  // every step has logits E * tanh(b) regardless of history.
  auto m = toy_model<double>(StrategyId::baseline, 2, 3, 9, 6, 1);
  auto& ps = m.params();
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i].value.fill(0.0);
  ps.get("out.ln.b").value = Tensor<double>({2}, {std::atanh(0.5), 0.0});
  auto& e = ps.get("emb.trg").value;
  for (std::size_t v = 0; v < 6; ++v) {
    e[v * 2] = 0.4 * static_cast<double>(v);
    e[v * 2 + 1] = 1.0;
  }
  double lse = 0;
  for (int v = 0; v < 6; ++v) lse += std::exp(0.2 * v);
  lse = std::log(lse);
  const double expect = (0.2 * 5 - lse) + (0.2 * static_cast<double>(kEos) - lse);
  const auto ms = single(std::move(m));
  ContextualExample ex{{}, {}, {7, 8, kEos}, {5, kEos}};
  EXPECT_NEAR(score_examples(std::span<const ContextModel<double>>(ms), {ex}).front(), expect, 1e-12);
}

TEST(Score, IdenticalCandidatesScoreEqually) {
  const auto ms = single(toy_model<double>(StrategyId::s_t_hier, 4, 3, 9, 11, 2, 0.8));
  Rng rng(7);
  const auto ex = random_example(rng, 9, 11);
  const auto s = score_examples(std::span<const ContextModel<double>>(ms), {ex, ex});
  EXPECT_EQ(s[0], s[1]);
}

TEST(Score, PrefixCancelsForToTwoStrategies) {
  for (auto id : {StrategyId::s_hier_to_two, StrategyId::s_t_hier_to_two, StrategyId::two_to_two}) {
    const auto ms = single(toy_model<double>(id, 4, 3, 9, 11, 3, 1.0));
    const std::span<const ContextModel<double>> span(ms);
    Rng rng(8);
    for (int t = 0; t < 20; ++t) {
      auto a = random_example(rng, 9, 11);
      a.aux_trg = random_sentence(rng, 1 + rng.below(4), 11);
      auto b = a;
      b.trg = random_sentence(rng, 1 + rng.below(4), 11);
      ScoreOptions excl;
      excl.exclude_prefix = true;
      const auto full = score_examples(span, {a, b});
      const auto part = score_examples(span, {a, b}, excl);
      EXPECT_NEAR(full[0] - full[1], part[0] - part[1], 1e-10);
      EXPECT_EQ(full[0] > full[1], part[0] > part[1]);
      EXPECT_LT(full[0], part[0]);
    }
  }
}

TEST(Score, PipelineMapsUnknownWordsToUnk) {
  const auto cfg = small_synth();
  PrepareOptions po;
  po.bpe_threshold = 5;
  const auto pipe = Pipeline::learn(generate_corpus(cfg), po);
  const auto m =
      single(toy_model<float>(StrategyId::s_hier_to_two, 4, 3, pipe.vocab_src.size(), pipe.vocab_trg.size(), 3));
  ContrastivePair p{"The qqq zzz .", "Le qqq .", "Xyz is w .", "Il est w .", "Elle est w .", {}};
  const double s = score_candidate(std::span<const ContextModel<float>>(m), pipe, p, Side::correct);
  EXPECT_TRUE(std::isfinite(s));
  EXPECT_LT(s, 0.0);
}

TEST(TestSetFile, RoundTripsAndReportsLineNumbers) {
  const auto dir = scratch_dir("testset_io");
  Rng rng(9);
  auto set = random_set(rng, SetKind::coreference, 5);
  const auto path = (dir / "s.jsonl").string();
  write_testset(set, path);
  EXPECT_EQ(read_testset(path), set);

  std::istringstream bad(to_json(set[0]).dump() + "\n\n{not json\n");
  try {
    parse_testset(bad, "bad.jsonl");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.jsonl:3"), std::string::npos);
  }
  std::istringstream kind(R"({"block_id":"x","kind":"other","pairs":[]})");
  EXPECT_THROW(parse_testset(kind), DataError);
  std::istringstream missing(R"({"block_id":"x","kind":"coherence","pairs":[{"src":"a"}]})");
  EXPECT_THROW(parse_testset(missing), DataError);
  EXPECT_THROW(read_testset((dir / "none.jsonl").string()), DataError);
}

TEST(Report, TableAndJsonCarryBreakdowns) {
  const std::vector<ContrastiveBlock> set{coreference_block()};
  const auto r = evaluate(set, [](const ContrastivePair& p, Side s) {
    return (s == Side::correct ? p.trg_correct : p.trg_incorrect) == "il" ? 1.0 : 0.0;
  });
  EXPECT_EQ(r.overall.percent(), 50.0);
  const auto table = report_table(r, "sys");
  for (const char* h : {"all", "m.sg", "f.sg", "m.pl", "f.pl", "corr.", "semi"})
    EXPECT_NE(table.find(h), std::string::npos) << h;
  EXPECT_NE(table.find("100.0"), std::string::npos);
  const auto j = report_json(r);
  EXPECT_EQ(j["all"].get<double>(), 50.0);
  EXPECT_EQ(j["by_pronoun_class"]["m.sg"].get<double>(), 100.0);
  EXPECT_EQ(j["by_pronoun_class"]["f.sg"].get<double>(), 0.0);
  EXPECT_EQ(j["pairs"].size(), 4u);
}

TEST(Bleu, IdenticalCorporaScoreHundred) {
  const std::vector<std::string> c{"the cat sat on the mat .", "a b c d e", "Hello World !"};
  EXPECT_NEAR(bleu(c, c).score, 100.0, 1e-9);
}

TEST(Bleu, RepeatedUnigramCase) {
  const auto r = bleu({"the the the"}, {"the cat"});
  EXPECT_NEAR(r.precisions[0], 1.0 / 3.0, 1e-12);
  EXPECT_EQ(r.precisions[1], 0.0);
  EXPECT_EQ(r.brevity_penalty, 1.0);  // hypothesis longer than reference
  EXPECT_EQ(r.score, 0.0);
  EXPECT_NEAR(bleu({"the the the"}, {"the cat"}, 1).score, 100.0 / 3.0, 0.01);
}

TEST(Bleu, HandComputedCases) {
  // Precisions 5/6, 3/5, 2/4, 1/3; no brevity penalty.
  EXPECT_NEAR(bleu({"the cat sat on the mat"}, {"the cat sat on a mat"}).score,
              100.0 * std::pow(5.0 / 6 * 3.0 / 5 * 2.0 / 4 * 1.0 / 3, 0.25), 1e-9);
  EXPECT_NEAR(bleu({"the cat sat on the mat"}, {"the cat sat on a mat"}).score, 53.73, 0.01);
  // All precisions 1; brevity penalty exp(1 - 6/4).
  EXPECT_NEAR(bleu({"the cat sat on"}, {"the cat sat on the mat"}).score, 100.0 * std::exp(-0.5), 1e-9);
  EXPECT_NEAR(bleu({"the cat sat on"}, {"the cat sat on the mat"}).score, 60.65, 0.01);
  // Corpus level: counts are pooled before the geometric mean.
  const auto r = bleu({"a b c d", "x y"}, {"a b c d", "x z"});
  EXPECT_NEAR(r.precisions[0], 5.0 / 6, 1e-12);
  EXPECT_NEAR(r.precisions[1], 3.0 / 4, 1e-12);
  EXPECT_NEAR(r.precisions[2], 2.0 / 2, 1e-12);
  EXPECT_NEAR(r.precisions[3], 1.0 / 1, 1e-12);
  EXPECT_NEAR(r.score, 100.0 * std::pow(5.0 / 6 * 3.0 / 4, 0.25), 1e-9);
}

TEST(Bleu, ZeroFourGramMatchesGiveZero) {
  EXPECT_EQ(bleu({"a b c d e"}, {"a b c x d e"}).score, 0.0);
  EXPECT_EQ(bleu({""}, {"a b"}).score, 0.0);
}

TEST(Bleu, CaseSensitive) {
  EXPECT_LT(bleu({"The Cat sat on the mat"}, {"the cat sat on the mat"}).score, 100.0);
  EXPECT_NEAR(bleu({"The Cat sat on the mat"}, {"The Cat sat on the mat"}).score, 100.0, 1e-9);
}

TEST(Bleu, HundredIffTokenIdentical) {
  Rng rng(10);
  for (int t = 0; t < 200; ++t) {
    std::vector<std::string> h, r;
    for (int i = 0; i < 3; ++i) {
      std::string s;
      for (int k = 0; k < 5; ++k) s += word(rng) + " ";
      h.push_back(s);
      r.push_back(rng.below(4) ? s : s + word(rng));
    }
    const bool same = h == r;
    EXPECT_EQ(std::abs(bleu(h, r).score - 100.0) < 1e-9, same);
  }
  EXPECT_NEAR(bleu({"a  b   c d"}, {" a b c d "}).score, 100.0, 1e-9);
}

TEST(Bleu, LengthMismatchIsContractError) {
  EXPECT_THROW(bleu({"a"}, {"a", "b"}), ContractError);
}
