#pragma once

// Synthetic parallel language with controlled discourse phenomena.
//
// Every document has two sentences. Linked documents are of three kinds:
//   coreference   "The N verb ." / "It is A ."     N has a masculine and a feminine
//                 translation picked 50/50; the pronoun and the adjective agree with
//                 the picked translation, so only the previous target sentence tells.
//   cohesion      "The W verb ." / "The W is A ."  W has two synonymous translations
//                 picked 50/50; the second sentence repeats the first one's choice.
//   disambiguation "The T verb ." / "The M is A ." the topic noun T selects the sense
//                 (and translation) of the ambiguous noun M.
// Linked documents split 40/40/20 across the three kinds.
// Unlinked documents pair two independent sentences.

#include <array>
#include <set>
#include <string>
#include <vector>

#include "ctxnmt/contrastive.hpp"
#include "ctxnmt/corpus.hpp"
#include "ctxnmt/error.hpp"
#include "ctxnmt/params.hpp"

namespace ctxnmt {

enum class Gender { masc = 0, fem = 1 };

struct SynthConfig {
  std::uint64_t seed = 1;
  std::size_t documents = 20000;
  std::size_t min_fillers = 0;  // sentence-length range: filler adverbs per sentence
  std::size_t max_fillers = 1;
  std::size_t nouns = 24;
  std::size_t verbs = 6;
  std::size_t adjectives = 8;
  std::size_t fillers = 4;
  std::size_t synonyms = 8;
  std::size_t ambiguous = 4;
  double linked_proportion = 0.5;

  void validate() const {
    if (documents == 0 || nouns < 2 || verbs == 0 || adjectives == 0 || fillers == 0 || synonyms == 0 ||
        ambiguous == 0)
      throw ConfigError("synth: corpus and lexicon sizes must be positive (and at least 2 nouns)");
    if (min_fillers > max_fillers) throw ConfigError("synth: min_fillers exceeds max_fillers");
    if (!(linked_proportion >= 0 && linked_proportion <= 1))
      throw ConfigError("synth: linked_proportion must lie in [0, 1]");
  }
};

struct SynthNoun {
  std::string src;
  std::array<std::string, 2> trg;  // indexed by Gender
};

struct SynthSynonym {
  std::string src;
  std::array<std::string, 2> trg;  // interchangeable translations
  Gender gender;
};

struct SynthTopic {
  std::string src, trg;
  Gender gender;
};

struct SynthAmbiguous {
  std::string src;
  std::array<std::string, 2> sense_trg;
  std::array<std::array<SynthTopic, 2>, 2> topics;  // [sense][i]
  Gender gender;
};

struct SynthWord {
  std::string src, trg;
};

class SynthLexicon {
 public:
  std::vector<SynthNoun> nouns;
  std::vector<SynthSynonym> synonyms;
  std::vector<SynthAmbiguous> ambiguous;
  std::vector<SynthWord> verbs, adjectives, fillers;  // adjectives: trg holds the stem

  static SynthLexicon generate(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, 0));
    SynthLexicon lx;
    std::set<std::string> used_src{"the", "it", "they", "is", "are", "."};
    std::set<std::string> used_trg{"le", "la", "les", "il", "elle", "ils", "elles", "est", "sont", "."};
    auto fresh = [&](std::set<std::string>& used, const char* cons, const char* vows, int syll, bool final_cons,
                     std::vector<std::string> suffixes) {
      const std::string c(cons), v(vows);
      for (;;) {
        std::string w;
        for (int s = 0; s < syll; ++s) {
          w += c[rng.below(c.size())];
          w += v[rng.below(v.size())];
        }
        if (final_cons) w += c[rng.below(c.size())];
        bool ok = true;
        for (const auto& suf : suffixes) ok = ok && !used.count(w + suf);
        if (!ok) continue;
        for (const auto& suf : suffixes) used.insert(w + suf);
        return w;
      }
    };
    const char* sc = "bdfgklmnprstvz";
    const char* sv = "aeiou";
    const char* tc = "bcdfjlmnprstv";
    const char* tv = "aeiouy";
    for (std::size_t i = 0; i < cfg.nouns; ++i) {
      SynthNoun n;
      n.src = fresh(used_src, sc, sv, 2, true, {"", "s"});
      n.trg[0] = fresh(used_trg, tc, tv, 2, false, {"", "s"});
      n.trg[1] = fresh(used_trg, tc, tv, 2, false, {"", "s"});
      lx.nouns.push_back(n);
    }
    for (std::size_t i = 0; i < cfg.synonyms; ++i) {
      SynthSynonym s;
      s.src = fresh(used_src, sc, sv, 2, true, {""});
      s.trg[0] = fresh(used_trg, tc, tv, 2, false, {""});
      s.trg[1] = fresh(used_trg, tc, tv, 2, false, {""});
      s.gender = rng.coin() ? Gender::fem : Gender::masc;
      lx.synonyms.push_back(s);
    }
    for (std::size_t i = 0; i < cfg.ambiguous; ++i) {
      SynthAmbiguous a;
      a.src = fresh(used_src, sc, sv, 2, true, {""});
      a.gender = rng.coin() ? Gender::fem : Gender::masc;
      for (int s = 0; s < 2; ++s) {
        a.sense_trg[s] = fresh(used_trg, tc, tv, 2, false, {""});
        for (int t = 0; t < 2; ++t) {
          a.topics[s][t].src = fresh(used_src, sc, sv, 2, true, {""});
          a.topics[s][t].trg = fresh(used_trg, tc, tv, 2, false, {""});
          a.topics[s][t].gender = rng.coin() ? Gender::fem : Gender::masc;
        }
      }
      lx.ambiguous.push_back(a);
    }
    for (std::size_t i = 0; i < cfg.verbs; ++i)
      lx.verbs.push_back({fresh(used_src, sc, sv, 2, true, {""}), fresh(used_trg, tc, tv, 2, true, {""})});
    for (std::size_t i = 0; i < cfg.adjectives; ++i)
      lx.adjectives.push_back({fresh(used_src, sc, sv, 2, true, {""}), fresh(used_trg, tc, tv, 2, true, {"", "e", "s", "es"})});
    for (std::size_t i = 0; i < cfg.fillers; ++i)
      lx.fillers.push_back({fresh(used_src, sc, sv, 3, false, {""}), fresh(used_trg, tc, tv, 3, false, {""})});
    return lx;
  }

  static std::string adjective_form(const std::string& stem, Gender g, bool plural) {
    return stem + (g == Gender::fem ? "e" : "") + (plural ? "s" : "");
  }
  static std::string determiner(Gender g, bool plural) { return plural ? "les" : (g == Gender::fem ? "la" : "le"); }
  static std::string pronoun_src(bool plural) { return plural ? "they" : "it"; }
  static std::string pronoun_trg(Gender g, bool plural) {
    return std::string(g == Gender::fem ? "elle" : "il") + (plural ? "s" : "");
  }
  static std::string pronoun_class(Gender g, bool plural) {
    return std::string(g == Gender::fem ? "f" : "m") + (plural ? ".pl" : ".sg");
  }

  /// Gender of a target noun form (singular or plural); throws if unknown.
  Gender noun_gender(const std::string& trg) const {
    for (const auto& n : nouns)
      for (int g = 0; g < 2; ++g)
        if (trg == n.trg[g] || trg == n.trg[g] + "s") return static_cast<Gender>(g);
    throw ContractError("not a target noun: " + trg);
  }

  /// Every source and target surface form the generator can emit.
  std::pair<std::set<std::string>, std::set<std::string>> inventory() const {
    std::set<std::string> s{"the", "it", "they", "is", "are", "."}, t{"le", "la", "les", "il", "elle", "ils", "elles",
                                                                    "est", "sont", "."};
    for (const auto& n : nouns) {
      s.insert({n.src, n.src + "s"});
      for (const auto& x : n.trg) t.insert({x, x + "s"});
    }
    for (const auto& y : synonyms) {
      s.insert(y.src);
      t.insert(y.trg.begin(), y.trg.end());
    }
    for (const auto& a : ambiguous) {
      s.insert(a.src);
      t.insert(a.sense_trg.begin(), a.sense_trg.end());
      for (const auto& sense : a.topics)
        for (const auto& tp : sense) {
          s.insert(tp.src);
          t.insert(tp.trg);
        }
    }
    for (const auto& v : verbs) {
      s.insert(v.src);
      t.insert(v.trg);
    }
    for (const auto& a : adjectives) {
      s.insert(a.src);
      for (int g = 0; g < 2; ++g)
        for (bool pl : {false, true}) t.insert(adjective_form(a.trg, static_cast<Gender>(g), pl));
    }
    for (const auto& f : fillers) {
      s.insert(f.src);
      t.insert(f.trg);
    }
    return {s, t};
  }
};

/// Construction record of one generated document.
struct SynthDocument {
  Document doc;
  std::string kind;  // coreference | cohesion | disambiguation | unlinked
  // coreference: gender of the picked antecedent translation and of the pronoun
  int antecedent_gender = -1;
  int pronoun_gender = -1;
};

namespace detail {

inline std::string capitalize(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

inline std::string sentence_text(const std::vector<std::string>& toks) {
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) out += (i ? " " : "") + toks[i];
  return out;
}

/// Source and target token sequences built side by side.
struct Bitext {
  std::vector<std::string> src, trg;
  void both(const std::string& s, const std::string& t) {
    src.push_back(s);
    trg.push_back(t);
  }
  SentencePair finish() const {
    SentencePair p{src, trg};
    if (!p.src.empty()) p.src[0] = capitalize(p.src[0]);
    if (!p.trg.empty()) p.trg[0] = capitalize(p.trg[0]);
    return p;
  }
};

class SynthWriter {
 public:
  SynthWriter(const SynthLexicon& lx, const SynthConfig& cfg) : lx_(lx), cfg_(cfg) {}

  void fillers(Bitext& b, Rng& rng) const {
    const std::size_t n = cfg_.min_fillers + rng.below(cfg_.max_fillers - cfg_.min_fillers + 1);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& f = lx_.fillers[rng.below(lx_.fillers.size())];
      b.both(f.src, f.trg);
    }
  }

  /// "the <noun> <verb> [fillers] ."
  SentencePair intro(const std::string& src_noun, const std::string& trg_noun, Gender g, bool plural,
                     const SynthWord& verb, Rng* rng) const {
    Bitext b;
    b.both("the", SynthLexicon::determiner(g, plural));
    b.both(src_noun, trg_noun);
    b.both(verb.src, verb.trg);
    if (rng) fillers(b, *rng);
    b.both(".", ".");
    return b.finish();
  }

  /// "<subject> is|are <adjective> [fillers] ."; the subject is a pronoun when src_noun is empty.
  SentencePair predicate(const std::string& src_noun, const std::string& trg_noun, Gender g, bool plural,
                         const SynthWord& adj, Rng* rng) const {
    Bitext b;
    if (src_noun.empty()) {
      b.both(SynthLexicon::pronoun_src(plural), SynthLexicon::pronoun_trg(g, plural));
    } else {
      b.both("the", SynthLexicon::determiner(g, plural));
      b.both(src_noun, trg_noun);
    }
    b.both(plural ? "are" : "is", plural ? "sont" : "est");
    b.both(adj.src, SynthLexicon::adjective_form(adj.trg, g, plural));
    if (rng) fillers(b, *rng);
    b.both(".", ".");
    return b.finish();
  }

 private:
  const SynthLexicon& lx_;
  const SynthConfig& cfg_;
};

inline std::string plural_form(const std::string& w, bool plural) { return plural ? w + "s" : w; }

}  // namespace detail

/// Seeded corpus; document d draws from its own derived stream. Documents
/// [first, first + count) are produced (count 0: cfg.documents), so disjoint
/// ranges give independent held-out data over the same lexicon.
inline std::vector<SynthDocument> generate_synth_documents(const SynthConfig& cfg, const SynthLexicon& lx,
                                                           std::size_t first = 0, std::size_t count = 0) {
  cfg.validate();
  detail::SynthWriter w(lx, cfg);
  if (count == 0) count = cfg.documents;
  std::vector<SynthDocument> out;
  out.reserve(count);
  for (std::size_t d = first; d < first + count; ++d) {
    Rng rng(derive_seed(cfg.seed, 1000 + d));
    SynthDocument sd;
    const auto& verb = lx.verbs[rng.below(lx.verbs.size())];
    const auto& adj = lx.adjectives[rng.below(lx.adjectives.size())];
    const bool linked = rng.uniform() < cfg.linked_proportion;
    if (!linked) {
      sd.kind = "unlinked";
      for (int s = 0; s < 2; ++s) {
        const auto& n = lx.nouns[rng.below(lx.nouns.size())];
        const bool pl = rng.coin();
        const auto g = rng.coin() ? Gender::fem : Gender::masc;
        const auto sn = detail::plural_form(n.src, pl), tn = detail::plural_form(n.trg[static_cast<int>(g)], pl);
        sd.doc.pairs.push_back(s == 0 ? w.intro(sn, tn, g, pl, verb, &rng) : w.predicate(sn, tn, g, pl, adj, &rng));
      }
    } else {
      const double u = rng.uniform();
      if (u < 0.4) {
        sd.kind = "coreference";
        const auto& n = lx.nouns[rng.below(lx.nouns.size())];
        const bool pl = rng.coin();
        const auto g = rng.coin() ? Gender::fem : Gender::masc;
        sd.doc.pairs.push_back(w.intro(detail::plural_form(n.src, pl),
                                       detail::plural_form(n.trg[static_cast<int>(g)], pl), g, pl, verb, &rng));
        sd.doc.pairs.push_back(w.predicate("", "", g, pl, adj, &rng));
        sd.antecedent_gender = sd.pronoun_gender = static_cast<int>(g);
      } else if (u < 0.8) {
        sd.kind = "cohesion";
        const auto& y = lx.synonyms[rng.below(lx.synonyms.size())];
        const auto& choice = y.trg[rng.below(2)];
        sd.doc.pairs.push_back(w.intro(y.src, choice, y.gender, false, verb, &rng));
        sd.doc.pairs.push_back(w.predicate(y.src, choice, y.gender, false, adj, &rng));
      } else {
        sd.kind = "disambiguation";
        const auto& a = lx.ambiguous[rng.below(lx.ambiguous.size())];
        const std::size_t sense = rng.below(2);
        const auto& tp = a.topics[sense][rng.below(2)];
        sd.doc.pairs.push_back(w.intro(tp.src, tp.trg, tp.gender, false, verb, &rng));
        sd.doc.pairs.push_back(w.predicate(a.src, a.sense_trg[sense], a.gender, false, adj, &rng));
      }
    }
    sd.doc.id = sd.kind + "-" + std::to_string(d);
    out.push_back(std::move(sd));
  }
  return out;
}

inline std::vector<Document> generate_corpus(const SynthConfig& cfg, std::size_t first = 0, std::size_t count = 0) {
  const auto lx = SynthLexicon::generate(cfg);
  std::vector<Document> out;
  for (auto& sd : generate_synth_documents(cfg, lx, first, count)) out.push_back(std::move(sd.doc));
  return out;
}

/// Contrastive blocks over the corpus lexicon. Coreference blocks alternate
/// singular and plural, giving balanced pronoun classes; coherence blocks
/// alternate cohesion and disambiguation items. Items are distinct within a set.
inline std::vector<ContrastiveBlock> generate_testset(const SynthConfig& cfg, SetKind kind, std::size_t blocks,
                                                      std::uint64_t set_seed = 0) {
  const auto lx = SynthLexicon::generate(cfg);
  SynthConfig plain = cfg;
  plain.min_fillers = plain.max_fillers = 0;
  detail::SynthWriter w(lx, plain);
  Rng rng(derive_seed(cfg.seed ^ set_seed, kind == SetKind::coreference ? 11 : 12));
  auto text = [](const std::vector<std::string>& t) { return detail::sentence_text(t); };
  std::vector<ContrastiveBlock> out;

  // Distinct items, shuffled, then taken in order.
  struct Item {
    std::size_t a, b, c;
  };
  auto take = [&](std::vector<Item> items, std::size_t n, const std::string& what) {
    if (items.size() < n)
      throw ConfigError("synth: lexicon too small for " + std::to_string(n) + " " + what + " blocks (" +
                        std::to_string(items.size()) + " distinct items)");
    rng.shuffle(items.begin(), items.end());
    items.resize(n);
    return items;
  };

  if (kind == SetKind::coreference) {
    const std::size_t n_pl = blocks / 2, n_sg = blocks - n_pl;
    std::vector<Item> all;
    for (std::size_t n = 0; n < lx.nouns.size(); ++n)
      for (std::size_t a = 0; a < lx.adjectives.size(); ++a) all.push_back({n, a, 0});
    const auto sg = take(all, n_sg, "singular coreference");
    const auto pl = take(all, n_pl, "plural coreference");
    for (std::size_t i = 0; i < blocks; ++i) {
      const bool plural = i % 2 == 1;
      const auto& it = plural ? pl[i / 2] : sg[i / 2];
      const auto& noun = lx.nouns[it.a];
      const auto& adj = lx.adjectives[it.b];
      const auto& verb = lx.verbs[rng.below(lx.verbs.size())];
      auto other_noun = [&]() -> const SynthNoun& {
        std::size_t z = rng.below(lx.nouns.size() - 1);
        if (z >= it.a) ++z;
        return lx.nouns[z];
      };
      const auto& z_m = other_noun();
      const auto& z_f = other_noun();
      const auto ctx = w.intro(detail::plural_form(noun.src, plural), "", Gender::masc, plural, verb, nullptr);
      const auto cur_m = w.predicate("", "", Gender::masc, plural, adj, nullptr);
      const auto cur_f = w.predicate("", "", Gender::fem, plural, adj, nullptr);
      ContrastiveBlock b;
      b.block_id = "coref-" + std::to_string(i);
      b.kind = SetKind::coreference;
      auto add = [&](const SynthNoun& antecedent, Gender g, const char* correctness) {
        ContrastivePair p;
        p.context_src = text(ctx.src);
        p.context_trg = text(w.intro("", detail::plural_form(antecedent.trg[static_cast<int>(g)], plural), g, plural,
                                     verb, nullptr)
                                 .trg);
        p.src = text(cur_m.src);
        p.trg_correct = text((g == Gender::masc ? cur_m : cur_f).trg);
        p.trg_incorrect = text((g == Gender::masc ? cur_f : cur_m).trg);
        p.tags = {{"pronoun_class", SynthLexicon::pronoun_class(g, plural)}, {"correctness", correctness}};
        b.pairs.push_back(std::move(p));
      };
      add(noun, Gender::masc, "correct");
      add(noun, Gender::fem, "correct");
      add(z_m, Gender::masc, "semi-correct");
      add(z_f, Gender::fem, "semi-correct");
      out.push_back(std::move(b));
    }
    return out;
  }

  const std::size_t n_dis = blocks / 2, n_coh = blocks - n_dis;
  std::vector<Item> coh_all, dis_all;
  for (std::size_t y = 0; y < lx.synonyms.size(); ++y)
    for (std::size_t a = 0; a < lx.adjectives.size(); ++a) coh_all.push_back({y, a, 0});
  for (std::size_t m = 0; m < lx.ambiguous.size(); ++m)
    for (std::size_t a = 0; a < lx.adjectives.size(); ++a)
      for (std::size_t t = 0; t < 4; ++t) dis_all.push_back({m, a, t});
  const auto coh = take(coh_all, n_coh, "cohesion");
  const auto dis = take(dis_all, n_dis, "disambiguation");
  for (std::size_t i = 0; i < blocks; ++i) {
    const bool cohesion = i % 2 == 0;
    const auto& verb = lx.verbs[rng.below(lx.verbs.size())];
    ContrastiveBlock b;
    b.block_id = "coherence-" + std::to_string(i);
    b.kind = SetKind::coherence;
    if (cohesion) {
      const auto& it = coh[i / 2];
      const auto& y = lx.synonyms[it.a];
      const auto& adj = lx.adjectives[it.b];
      std::array<SentencePair, 2> ctx, cur;
      for (int c = 0; c < 2; ++c) {
        ctx[c] = w.intro(y.src, y.trg[c], y.gender, false, verb, nullptr);
        cur[c] = w.predicate(y.src, y.trg[c], y.gender, false, adj, nullptr);
      }
      for (int c = 0; c < 2; ++c)
        b.pairs.push_back({text(ctx[c].src), text(ctx[c].trg), text(cur[c].src), text(cur[c].trg), text(cur[1 - c].trg),
                           {{"phenomenon", "cohesion"}}});
    } else {
      const auto& it = dis[i / 2];
      const auto& a = lx.ambiguous[it.a];
      const auto& adj = lx.adjectives[it.b];
      std::array<SentencePair, 2> ctx, cur;
      for (int s = 0; s < 2; ++s) {
        const auto& tp = a.topics[s][s == 0 ? it.c % 2 : it.c / 2];
        ctx[s] = w.intro(tp.src, tp.trg, tp.gender, false, verb, nullptr);
        cur[s] = w.predicate(a.src, a.sense_trg[s], a.gender, false, adj, nullptr);
      }
      for (int s = 0; s < 2; ++s)
        b.pairs.push_back({text(ctx[s].src), text(ctx[s].trg), text(cur[s].src), text(cur[s].trg), text(cur[1 - s].trg),
                           {{"phenomenon", "disambiguation"}}});
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace ctxnmt
