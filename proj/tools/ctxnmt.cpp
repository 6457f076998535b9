// ctxnmt: contextual NMT toolkit command line.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ctxnmt/bleu.hpp"
#include "ctxnmt/config.hpp"
#include "ctxnmt/contrastive.hpp"
#include "ctxnmt/decode.hpp"
#include "ctxnmt/ensemble.hpp"
#include "ctxnmt/pipeline.hpp"
#include "ctxnmt/scoring.hpp"
#include "ctxnmt/synth.hpp"
#include "ctxnmt/train.hpp"

namespace fs = std::filesystem;
using namespace ctxnmt;

namespace {

struct Common {
  std::string config;
};

/// Values from a key=value file fill options not given on the command line.
/// Keys are long option names; '_' and '-' are interchangeable.
void apply_config(CLI::App& app, const std::string& path) {
  if (path.empty()) return;
  const auto kv = KeyValues::load(path);
  for (const auto& [key, value] : kv.values()) {
    std::string name = key;
    for (auto& ch : name)
      if (ch == '_') ch = '-';
    CLI::Option* opt = nullptr;
    try {
      opt = app.get_option("--" + name);
    } catch (const CLI::OptionNotFound&) {
      throw UsageError(path + ": unknown option '" + key + "' for " + app.get_name());
    }
    if (name == "config") throw UsageError(path + ": config files cannot nest");
    if (opt->count() > 0) continue;
    if (opt->get_type_size() == 0) {
      if (value == "true" || value == "1") {
        opt->add_result("true");
      } else if (value == "false" || value == "0") {
        continue;
      } else {
        throw UsageError(path + ": flag '" + key + "' expects true or false");
      }
    } else {
      opt->add_result(value);
    }
    opt->run_callback();
  }
}

CLI::App* subcommand(CLI::App& app, const std::string& name, const std::string& desc, Common& common) {
  auto* sc = app.add_subcommand(name, desc);
  sc->add_option("--config", common.config, "key=value file; command-line flags take precedence");
  return sc;
}

std::vector<ContextModel<float>> load_models(const std::string& path, std::size_t ensemble) {
  if (fs::is_directory(path)) return load_ensemble(last_checkpoints(path, ensemble));
  return load_ensemble({path});
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << text;
}

std::string fmt2(double v) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(2) << v;
  return o.str();
}

// ---------------------------------------------------------------------------

struct BpeLearnArgs {
  std::string input, output;
  std::size_t merges = 90000, threshold = 50;
};

int bpe_learn(const BpeLearnArgs& a) {
  std::map<std::string, std::size_t> counts;
  for (const auto& line : read_lines(a.input))
    for (const auto& t : tokenize(line)) ++counts[t];
  auto model = learn_bpe(counts, a.merges, a.threshold);
  model.save(a.output);
  std::cout << model.merges().size() << " merges written to " << a.output << "\n";
  return 0;
}

struct BpeApplyArgs {
  std::string model, input, output;
};

int bpe_apply(const BpeApplyArgs& a) {
  const auto model = SubwordModel::load(a.model);
  std::ofstream out(a.output);
  if (!out) throw DataError("cannot write " + a.output);
  for (const auto& line : read_lines(a.input)) out << join(model.apply_sentence(tokenize(line))) << "\n";
  return 0;
}

struct PrepareArgs {
  std::string train_src, train_trg, dev_src, dev_trg, out;
  PrepareOptions opt;
};

int prepare_cmd(const PrepareArgs& a) {
  if (a.dev_src.empty() != a.dev_trg.empty()) throw UsageError("--dev-src and --dev-trg go together");
  auto pd = prepare(a.train_src, a.train_trg, a.dev_src, a.dev_trg, a.out, a.opt);
  std::size_t sentences = 0;
  for (const auto& d : pd.train) sentences += d.pairs.size();
  std::cout << "prepared " << pd.train.size() << " documents (" << sentences << " sentence pairs), vocab "
            << pd.pipeline.vocab_src.size() << "/" << pd.pipeline.vocab_trg.size() << " in " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string data, out, strategy = "baseline";
  TrainConfig cfg;
  bool quiet = false;
};

int train_cmd(TrainArgs a) {
  auto pd = load_prepared(a.data);
  a.cfg.strategy = strategy(a.strategy).id;
  a.cfg.out_dir = a.out;
  KeyValues extra;
  extra.set("data", fs::absolute(a.data).string());
  Trainer trainer(a.cfg, pd.pipeline.vocab_src.size(), pd.pipeline.vocab_trg.size(), extra);
  auto log = [&](const std::string& m) {
    if (!a.quiet) std::cerr << m << "\n";
  };
  auto res = trainer.train(corpus_examples(pd.pipeline, pd.train), corpus_examples(pd.pipeline, pd.dev), log);
  std::ofstream curve(fs::path(a.out) / "loss.tsv");
  for (std::size_t i = 0; i < res.loss_curve.size(); ++i)
    curve << i + 1 << "\t" << std::setprecision(9) << res.loss_curve[i] << "\n";
  nlohmann::json j;
  j["strategy"] = a.strategy;
  j["updates"] = res.updates;
  j["epochs"] = res.epochs;
  j["train_examples"] = res.train_examples;
  j["epoch_loss"] = res.epoch_loss;
  j["stop_reason"] = res.stop_reason;
  j["checkpoints"] = res.checkpoint_paths;
  write_text((fs::path(a.out) / "train.json").string(), j.dump(2) + "\n");
  std::cout << "trained " << a.strategy << ": " << res.updates << " updates, " << res.epochs << " epochs ("
            << res.stop_reason << ")\n";
  return 0;
}

struct TranslateArgs {
  std::string model, data, input, output, history = "stream", context_trg;
  std::size_t ensemble = 3, beam = 12, max_out_len = 0, threads = 1;
};

/// Source documents as context examples; aux_trg comes from --context-trg in given mode.
std::vector<std::vector<ContextualExample>> input_documents(const Pipeline& p, const TranslateArgs& a,
                                                            TargetHistory history) {
  const auto src = read_documents(a.input);
  std::vector<std::vector<std::string>> given;
  if (history == TargetHistory::given) {
    if (a.context_trg.empty()) throw UsageError("--history given needs --context-trg");
    given = read_documents(a.context_trg);
    if (given.size() != src.size()) throw DataError("--context-trg has a different document count than --input");
  }
  std::vector<std::vector<ContextualExample>> docs;
  for (std::size_t d = 0; d < src.size(); ++d) {
    if (history == TargetHistory::given && given[d].size() != src[d].size())
      throw DataError("--context-trg document " + std::to_string(d) + " has a different sentence count");
    std::vector<ContextualExample> doc;
    for (std::size_t i = 0; i < src[d].size(); ++i) {
      ContextualExample ex;
      ex.src = p.encode_src(src[d][i]);
      ex.aux_src = i ? p.encode_src(src[d][i - 1]) : empty_context();
      ex.aux_trg = (history == TargetHistory::given && i) ? p.encode_trg(given[d][i - 1]) : empty_context();
      doc.push_back(std::move(ex));
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

TargetHistory parse_history(const std::string& h) {
  if (h == "stream") return TargetHistory::stream;
  if (h == "given") return TargetHistory::given;
  throw UsageError("--history must be stream or given");
}

int translate_cmd(const TranslateArgs& a, bool attention) {
  const auto history = parse_history(a.history);
  const auto pipeline = Pipeline::load(a.data);
  const auto models = load_models(a.model, a.ensemble);
  const auto docs = input_documents(pipeline, a, history);
  DecodeOptions opt;
  opt.beam_size = a.beam;
  opt.max_out_len = a.max_out_len;
  opt.keep_attention = attention;
  const auto outs = translate_corpus(std::span<const ContextModel<float>>(models), docs, opt, history, a.threads);
  std::ofstream out(a.output);
  if (!out) throw DataError("cannot write " + a.output);
  std::size_t sentence = 0;
  for (std::size_t d = 0; d < outs.size(); ++d) {
    if (!attention && d) out << "\n";
    for (const auto& so : outs[d]) {
      if (attention) {
        for (const auto& rec : export_attention(so.hyp, pipeline.vocab_trg, sentence)) out << rec.dump() << "\n";
      } else {
        out << pipeline.decode_trg(so.current) << "\n";
      }
      ++sentence;
    }
  }
  std::cout << (attention ? "attention for " : "translated ") << sentence << " sentences into " << a.output << "\n";
  return 0;
}

struct ScoreArgs {
  std::string model, data, testset, report, table;
  std::size_t ensemble = 3, threads = 1, batch = 32;
  bool exclude_prefix = false;
};

int score_cmd(const ScoreArgs& a) {
  const auto blocks = read_testset(a.testset);
  const auto violations = validate_testset(blocks);
  if (!violations.empty()) {
    for (const auto& v : violations) std::cerr << v.block_id << ": " << v.message << "\n";
    throw DataError(a.testset + ": " + std::to_string(violations.size()) + " violations");
  }
  const auto pipeline = Pipeline::load(a.data);
  const auto models = load_models(a.model, a.ensemble);
  ScoreOptions opt;
  opt.threads = a.threads;
  opt.batch_size = a.batch;
  opt.exclude_prefix = a.exclude_prefix;
  const auto rep = evaluate_model(std::span<const ContextModel<float>>(models), pipeline, blocks, opt);
  const auto table = report_table(rep, std::string(models.front().strategy().name));
  std::cout << table;
  if (!a.table.empty()) write_text(a.table, table);
  auto j = report_json(rep);
  j["strategy"] = models.front().strategy().name;
  j["models"] = models.size();
  write_text(a.report, j.dump(2) + "\n");
  return 0;
}

struct ValidateArgs {
  std::string testset;
};

int validate_cmd(const ValidateArgs& a) {
  const auto blocks = read_testset(a.testset);
  const auto violations = validate_testset(blocks);
  for (const auto& v : violations) std::cout << v.block_id << ": " << v.message << "\n";
  std::cout << blocks.size() << " blocks, " << violations.size() << " violations\n";
  return violations.empty() ? 0 : 1;
}

struct BleuArgs {
  std::string hyp, ref;
  int max_n = 4;
};

int bleu_cmd(const BleuArgs& a) {
  const auto r = bleu(read_lines(a.hyp), read_lines(a.ref), a.max_n);
  std::cout << "BLEU = " << fmt2(r.score) << " (";
  for (std::size_t i = 0; i < r.precisions.size(); ++i) std::cout << (i ? "/" : "") << fmt2(100 * r.precisions[i]);
  std::cout << ", BP = " << std::fixed << std::setprecision(4) << r.brevity_penalty << ", hyp_len = " << r.hyp_length
            << ", ref_len = " << r.ref_length << ")\n";
  return 0;
}

struct SynthArgs {
  std::string out;
  SynthConfig cfg;
  std::size_t dev_documents = 500, coref_blocks = 50, coherence_blocks = 100;
};

int synth_cmd(const SynthArgs& a) {
  fs::create_directories(a.out);
  const fs::path d(a.out);
  write_parallel_corpus(generate_corpus(a.cfg), (d / "train.src").string(), (d / "train.trg").string());
  if (a.dev_documents)
    write_parallel_corpus(generate_corpus(a.cfg, a.cfg.documents, a.dev_documents), (d / "dev.src").string(),
                          (d / "dev.trg").string());
  write_testset(generate_testset(a.cfg, SetKind::coreference, a.coref_blocks), (d / "coreference.jsonl").string());
  write_testset(generate_testset(a.cfg, SetKind::coherence, a.coherence_blocks), (d / "coherence.jsonl").string());
  std::cout << "wrote " << a.cfg.documents << " training documents, " << a.dev_documents << " dev documents, "
            << a.coref_blocks << " coreference and " << a.coherence_blocks << " coherence blocks to " << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contextual neural machine translation toolkit", "ctxnmt"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  std::map<std::string, Common> common;
  std::function<int()> action;

  BpeLearnArgs bl;
  {
    auto* c = subcommand(app, "bpe-learn", "Learn BPE merges from a text file", common["bpe-learn"]);
    c->add_option("--input", bl.input, "Training text, one sentence per line")->required();
    c->add_option("--output", bl.output, "Merge file to write")->required();
    c->add_option("--merges", bl.merges, "Maximum number of merges");
    c->add_option("--threshold", bl.threshold, "Minimum pair frequency for a merge");
    c->callback([&] { action = [&] { return bpe_learn(bl); }; });
  }
  BpeApplyArgs ba;
  {
    auto* c = subcommand(app, "bpe-apply", "Segment a text file with learned merges", common["bpe-apply"]);
    c->add_option("--model", ba.model, "Merge file")->required();
    c->add_option("--input", ba.input, "Text to segment")->required();
    c->add_option("--output", ba.output, "Segmented text to write")->required();
    c->callback([&] { action = [&] { return bpe_apply(ba); }; });
  }
  PrepareArgs pa;
  {
    auto* c = subcommand(app, "prepare", "Clean, tokenize, case, segment and index a parallel corpus",
                         common["prepare"]);
    c->add_option("--train-src", pa.train_src, "Source side, blank line between documents")->required();
    c->add_option("--train-trg", pa.train_trg, "Target side, line-aligned with the source")->required();
    c->add_option("--dev-src", pa.dev_src, "Optional validation source");
    c->add_option("--dev-trg", pa.dev_trg, "Optional validation target");
    c->add_option("--out", pa.out, "Prepared directory to write")->required();
    c->add_option("--max-len", pa.opt.max_len, "Drop sentence pairs longer than this (tokens)");
    c->add_option("--merges", pa.opt.merges, "BPE merges per language");
    c->add_option("--bpe-threshold", pa.opt.bpe_threshold, "Minimum pair frequency for a merge");
    c->add_option("--vocab-min-count", pa.opt.vocab_min_count, "Minimum subword count for the vocabulary");
    c->callback([&] { action = [&] { return prepare_cmd(pa); }; });
  }
  TrainArgs ta;
  {
    auto& k = ta.cfg;
    auto* c = subcommand(app, "train", "Train a model; checkpoints go to --out", common["train"]);
    c->add_option("--data", ta.data, "Prepared directory")->required();
    c->add_option("--out", ta.out, "Model directory")->required();
    c->add_option("--strategy", ta.strategy, "Context strategy");
    c->add_option("--emb-dim", k.dims.emb_dim, "Embedding size");
    c->add_option("--hidden-dim", k.dims.hidden_dim, "Recurrent state size");
    c->add_flag("--gate-sigmoid", k.gate_sigmoid, "Sigmoid instead of tanh in the gate combiner");
    c->add_option("--learning-rate", k.learning_rate, "Adam learning rate");
    c->add_option("--batch-size", k.batch_size, "Sentences per update");
    c->add_option("--max-len", k.max_len, "Longest training sequence; 0 picks 50, or 76 for concatenated inputs");
    c->add_option("--checkpoint-interval", k.checkpoint_interval, "Updates between checkpoints");
    c->add_option("--valid-interval", k.valid_interval, "Updates between validations; 0 uses the checkpoint interval");
    c->add_option("--patience", k.patience, "Validations without improvement before stopping");
    c->add_option("--max-epochs", k.max_epochs, "Epoch limit");
    c->add_option("--max-updates", k.max_updates, "Update limit; 0 for none");
    c->add_option("--stop-train-loss", k.stop_train_loss, "Stop once an epoch's mean loss reaches this; 0 for never");
    c->add_option("--clip-norm", k.clip_norm, "Global gradient norm limit");
    c->add_option("--ensemble-size", k.ensemble_size, "Checkpoints kept for ensembling");
    c->add_option("--bucket-batches", k.bucket_batches, "Batches per length-sorting window");
    c->add_option("--seed", k.seed, "Random seed");
    c->add_flag("--quiet", ta.quiet, "No progress output");
    c->callback([&] { action = [&] { return train_cmd(ta); }; });
  }
  TranslateArgs tr, at;
  auto translate_opts = [](CLI::App* c, TranslateArgs& t) {
    c->add_option("--model", t.model, "Checkpoint file or model directory")->required();
    c->add_option("--data", t.data, "Prepared directory (pipeline)")->required();
    c->add_option("--input", t.input, "Source documents, blank line between documents")->required();
    c->add_option("--output", t.output, "File to write")->required();
    c->add_option("--ensemble", t.ensemble, "Last N checkpoints of a model directory");
    c->add_option("--beam", t.beam, "Beam size");
    c->add_option("--max-out-len", t.max_out_len, "Output length cap; 0 for 3 x input + 5");
    c->add_option("--history", t.history, "Previous-target input: stream (own output) or given");
    c->add_option("--context-trg", t.context_trg, "Translations supplying the previous target in given mode");
    c->add_option("--threads", t.threads, "Documents decoded in parallel");
  };
  {
    auto* c = subcommand(app, "translate", "Translate documents", common["translate"]);
    translate_opts(c, tr);
    c->callback([&] { action = [&] { return translate_cmd(tr, false); }; });
  }
  {
    auto* c = subcommand(app, "attn-dump", "Translate and write attention weights as JSON lines",
                         common["attn-dump"]);
    translate_opts(c, at);
    c->callback([&] { action = [&] { return translate_cmd(at, true); }; });
  }
  ScoreArgs sa;
  {
    auto* c = subcommand(app, "score-contrastive", "Score a contrastive test set", common["score-contrastive"]);
    c->add_option("--model", sa.model, "Checkpoint file or model directory")->required();
    c->add_option("--data", sa.data, "Prepared directory (pipeline)")->required();
    c->add_option("--testset", sa.testset, "Test set (JSON lines)")->required();
    c->add_option("--report", sa.report, "JSON report to write")->required();
    c->add_option("--table", sa.table, "Also write the table here");
    c->add_option("--ensemble", sa.ensemble, "Last N checkpoints of a model directory");
    c->add_option("--batch", sa.batch, "Candidates per scoring batch");
    c->add_option("--threads", sa.threads, "Scoring threads");
    c->add_flag("--exclude-prefix", sa.exclude_prefix, "Do not count the context prefix of to-2 targets");
    c->callback([&] { action = [&] { return score_cmd(sa); }; });
  }
  ValidateArgs va;
  {
    auto* c = subcommand(app, "validate-testset", "Check the structure of a contrastive test set",
                         common["validate-testset"]);
    c->add_option("--testset", va.testset, "Test set (JSON lines)")->required();
    c->callback([&] { action = [&] { return validate_cmd(va); }; });
  }
  BleuArgs bg;
  {
    auto* c = subcommand(app, "bleu", "Corpus BLEU of line-aligned files", common["bleu"]);
    c->add_option("--hyp", bg.hyp, "System output")->required();
    c->add_option("--ref", bg.ref, "Reference")->required();
    c->add_option("--max-n", bg.max_n, "Longest n-gram");
    c->callback([&] { action = [&] { return bleu_cmd(bg); }; });
  }
  SynthArgs sy;
  {
    auto& k = sy.cfg;
    auto* c = subcommand(app, "synth", "Generate a synthetic corpus and contrastive test sets", common["synth"]);
    c->add_option("--out", sy.out, "Output directory")->required();
    c->add_option("--seed", k.seed, "Random seed");
    c->add_option("--documents", k.documents, "Training documents");
    c->add_option("--dev-documents", sy.dev_documents, "Validation documents");
    c->add_option("--min-fillers", k.min_fillers, "Fewest filler words per sentence");
    c->add_option("--max-fillers", k.max_fillers, "Most filler words per sentence");
    c->add_option("--nouns", k.nouns, "Nouns with two gendered translations");
    c->add_option("--verbs", k.verbs, "Verbs");
    c->add_option("--adjectives", k.adjectives, "Adjectives");
    c->add_option("--fillers", k.fillers, "Filler words");
    c->add_option("--synonyms", k.synonyms, "Words with two synonymous translations");
    c->add_option("--ambiguous", k.ambiguous, "Words with two senses");
    c->add_option("--linked-proportion", k.linked_proportion, "Share of discourse-linked documents");
    c->add_option("--coref-blocks", sy.coref_blocks, "Coreference test blocks");
    c->add_option("--coherence-blocks", sy.coherence_blocks, "Coherence test blocks");
    c->callback([&] { action = [&] { return synth_cmd(sy); }; });
  }

  try {
    app.parse(argc, argv);
    for (auto* sc : app.get_subcommands()) apply_config(*sc, common[sc->get_name()].config);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  try {
    return action ? action() : 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
