#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "ctxnmt/adam.hpp"
#include "ctxnmt/checkpoint.hpp"
#include "ctxnmt/decode.hpp"
#include "ctxnmt/ensemble.hpp"
#include "ctxnmt/train.hpp"
#include "test_support.hpp"

using namespace ctxnmt;
using namespace ctxnmt::testing;

namespace {

ParameterStore<double> scalar_store(double value, double grad) {
  ParameterStore<double> ps;
  auto& p = ps.add("x", Tensor<double>({1}, {value}));
  p.grad = Tensor<double>({1}, {grad});
  return ps;
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<ContextualExample> random_corpus(std::uint64_t seed, std::size_t n, std::size_t sv, std::size_t tv) {
  Rng rng(seed);
  std::vector<ContextualExample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_example(rng, sv, tv, 5));
  return out;
}

TrainConfig small_config(StrategyId id) {
  TrainConfig c;
  c.strategy = id;
  c.dims.emb_dim = 8;
  c.dims.hidden_dim = 8;
  c.learning_rate = 0.01;
  c.batch_size = 4;
  c.checkpoint_interval = 5;
  c.max_epochs = 3;
  c.ensemble_size = 2;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  auto ps = scalar_store(0.7, 0.0);
  AdamState<double> st;
  for (int i = 0; i < 5; ++i) adam_step(ps, st, 0.1);
  EXPECT_EQ(ps[0].value[0], 0.7);
  EXPECT_EQ(st.step, 5u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // Bias correction makes the first step lr * g / (|g| + eps).
  for (double g : {1.0, -3.0, 0.25}) {
    auto ps = scalar_store(2.0, g);
    AdamState<double> st;
    adam_step(ps, st, 0.01);
    const double expect = 2.0 - 0.01 * g / (std::abs(g) + 1e-8);
    EXPECT_NEAR(ps[0].value[0], expect, 1e-12);
  }
}

TEST(Adam, MatchesReferenceRecurrence) {
  auto ps = scalar_store(1.0, 0);
  AdamState<double> st;
  double x = 1.0, m = 0, v = 0;
  for (int t = 1; t <= 20; ++t) {
    const double g = 2 * x - std::sin(t);
    ps[0].grad[0] = g;
    adam_step(ps, st, 0.05);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(ps[0].value[0], x, 1e-12) << "step " << t;
  }
}

TEST(Adam, MinimizesQuadratic) {
  auto ps = scalar_store(3.0, 0);
  AdamState<double> st;
  for (int i = 0; i < 2000; ++i) {
    ps[0].grad[0] = 2 * (ps[0].value[0] - 1.5);
    adam_step(ps, st, 0.01);
  }
  EXPECT_NEAR(ps[0].value[0], 1.5, 1e-2);
}

TEST(Adam, NonFiniteGradientIsDataErrorNamingParameter) {
  for (double g : {std::nan(""), double(INFINITY)}) {
    auto ps = scalar_store(1.0, g);
    AdamState<double> st;
    try {
      adam_step(ps, st, 0.1);
      FAIL() << "expected DataError";
    } catch (const DataError& e) {
      EXPECT_NE(std::string(e.what()).find("x"), std::string::npos);
    }
    EXPECT_EQ(ps[0].value[0], 1.0);
  }
}

TEST(Clipping, ScalesToMaxNorm) {
  ParameterStore<double> ps;
  auto& a = ps.add("a", Tensor<double>({2}, {0, 0}));
  a.grad = Tensor<double>({2}, {3, 0});
  auto& b = ps.add("b", Tensor<double>({1}, {0}));
  b.grad = Tensor<double>({1}, {4});
  EXPECT_DOUBLE_EQ(clip_global_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(ps[0].grad[0], 0.6, 1e-15);
  EXPECT_NEAR(ps[1].grad[0], 0.8, 1e-15);
  EXPECT_NEAR(clip_global_norm(ps, 1.0), 1.0, 1e-15);
}

TEST(Clipping, SmallGradientsUntouched) {
  ParameterStore<double> ps;
  auto& a = ps.add("a", Tensor<double>({2}, {0, 0}));
  a.grad = Tensor<double>({2}, {0.3, -0.4});
  EXPECT_NEAR(clip_global_norm(ps, 1.0), 0.5, 1e-15);
  EXPECT_EQ(ps[0].grad[0], 0.3);
  EXPECT_EQ(ps[0].grad[1], -0.4);
}

TEST(Loss, UniformModelGivesLogVocab) {
  auto m = toy_model<double>(StrategyId::baseline, 4, 3, 9, 11, 1);
  for (std::size_t i = 0; i < m.params().size(); ++i) m.params()[i].value.fill(0.0);
  Rng rng(2);
  std::vector<BuiltExample> rows;
  for (int i = 0; i < 3; ++i) rows.push_back(build_example(m.strategy(), random_example(rng, 9, 11)));
  Tape<double> tape(false);
  EXPECT_NEAR(m.loss(tape, BuiltBatch::from(rows)).value()[0], std::log(11.0), 1e-12);
}

TEST(Loss, EqualsMeanOfTokenLogprobs) {
  auto m = toy_model<double>(StrategyId::s_hier, 4, 3, 9, 11, 3, 0.8);
  Rng rng(4);
  std::vector<BuiltExample> rows;
  for (int i = 0; i < 4; ++i) rows.push_back(build_example(m.strategy(), random_example(rng, 9, 11)));
  const auto batch = BuiltBatch::from(rows);
  double sum = 0;
  std::size_t n = 0;
  for (const auto& r : m.token_logprobs(batch))
    for (double v : r) sum += v, ++n;
  Tape<double> tape(false);
  EXPECT_NEAR(m.loss(tape, batch).value()[0], -sum / static_cast<double>(n), 1e-12);
}

TEST(Loss, PaddingDoesNotChangeRowScores) {
  auto m = toy_model<double>(StrategyId::s_concat, 4, 3, 9, 11, 5, 0.8);
  Rng rng(6);
  const auto a = build_example(m.strategy(), random_example(rng, 9, 11, 2));
  auto longer = random_example(rng, 9, 11, 2);
  longer.src = random_sentence(rng, 9, 9);
  longer.trg = random_sentence(rng, 9, 11);
  const auto b = build_example(m.strategy(), longer);
  const auto alone = m.token_logprobs(BuiltBatch::from(std::vector<BuiltExample>{a}));
  const auto padded = m.token_logprobs(BuiltBatch::from(std::vector<BuiltExample>{a, b}));
  ASSERT_EQ(alone[0].size(), padded[0].size());
  for (std::size_t t = 0; t < alone[0].size(); ++t) EXPECT_NEAR(alone[0][t], padded[0][t], 1e-12);
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  const auto dir = scratch_dir("ckpt_rt");
  auto m = toy_model<float>(StrategyId::s_t_hier, 4, 3, 9, 11, 7);
  AdamState<float> st;
  st.init(m.params());
  st.m[0].fill(0.25f);
  KeyValues extra;
  extra.set("note", "x y");
  const auto c = make_checkpoint(m, &st, 42, extra);
  const auto p1 = (dir / "a.bin").string(), p2 = (dir / "b.bin").string();
  c.save(p1);
  const auto loaded = Checkpoint::load(p1);
  loaded.save(p2);
  EXPECT_EQ(read_bytes(p1), read_bytes(p2));
  EXPECT_EQ(loaded.updates, 42u);
  EXPECT_EQ(loaded.arrays, c.arrays);

  const auto restored = model_from_checkpoint(loaded);
  EXPECT_EQ(restored.config().strategy, StrategyId::s_t_hier);
  make_checkpoint(restored, nullptr, 42, extra).save((dir / "c.bin").string());
  make_checkpoint(m, nullptr, 42, extra).save((dir / "d.bin").string());
  EXPECT_EQ(read_bytes((dir / "c.bin").string()), read_bytes((dir / "d.bin").string()));

  Rng rng(8);
  const auto in = build_example(m.strategy(), random_example(rng, 9, 11));
  const std::vector<BuiltExample> rows{in};
  EXPECT_EQ(m.token_logprobs(BuiltBatch::from(rows)), restored.token_logprobs(BuiltBatch::from(rows)));

  AdamState<float> st2;
  ASSERT_TRUE(restore_adam(loaded, restored, st2));
  EXPECT_EQ(st2.step, 42u);
  EXPECT_EQ(st2.m[0].values(), st.m[0].values());
}

TEST(Checkpoint, CorruptFilesAreDataErrors) {
  auto m = toy_model<float>(StrategyId::baseline, 4, 3, 9, 11, 7);
  const auto bytes = make_checkpoint(m, nullptr, 1).serialize();
  EXPECT_THROW(Checkpoint::deserialize(bytes.substr(0, bytes.size() - 3)), DataError);
  EXPECT_THROW(Checkpoint::deserialize(bytes + "x"), DataError);
  EXPECT_THROW(Checkpoint::deserialize("not a checkpoint\n"), DataError);
  EXPECT_THROW(Checkpoint::load("/nonexistent/ckpt.bin"), DataError);
}

TEST(Checkpoint, MissingAdamMomentsReported) {
  auto m = toy_model<float>(StrategyId::baseline, 4, 3, 9, 11, 7);
  AdamState<float> st;
  EXPECT_FALSE(restore_adam(make_checkpoint(m, nullptr, 3), m, st));
  EXPECT_EQ(st.step, 0u);
}

TEST(Trainer, SameSeedGivesIdenticalCurvesAndCheckpoints) {
  const auto train = random_corpus(1, 24, 12, 13);
  const auto valid = random_corpus(2, 6, 12, 13);
  auto run = [&](const std::string& name) {
    auto c = small_config(StrategyId::s_hier_to_two);
    c.out_dir = scratch_dir(name).string();
    Trainer t(c, 12, 13);
    return t.train(train, valid);
  };
  const auto a = run("same_a"), b = run("same_b");
  EXPECT_EQ(a.loss_curve, b.loss_curve);
  EXPECT_EQ(a.valid_curve, b.valid_curve);
  ASSERT_EQ(a.checkpoint_paths.size(), b.checkpoint_paths.size());
  for (std::size_t i = 0; i < a.checkpoint_paths.size(); ++i)
    EXPECT_EQ(read_bytes(a.checkpoint_paths[i]), read_bytes(b.checkpoint_paths[i]));
  EXPECT_EQ(a.updates, 18u);
  EXPECT_EQ(a.checkpoints.size(), 2u);
  EXPECT_EQ(a.checkpoints.back().updates, 18u);

  auto c = small_config(StrategyId::s_hier_to_two);
  c.seed = 6;
  Trainer other(c, 12, 13);
  EXPECT_NE(other.train(train, valid).loss_curve, a.loss_curve);
}

TEST(Trainer, StopsOnMaxUpdatesAndPatience) {
  const auto train = random_corpus(3, 24, 12, 13);
  auto c = small_config(StrategyId::baseline);
  c.max_updates = 7;
  c.max_epochs = 50;
  Trainer t(c, 12, 13);
  const auto r = t.train(train, {});
  EXPECT_EQ(r.updates, 7u);
  EXPECT_EQ(r.stop_reason, "reached max_updates");

  auto p = small_config(StrategyId::baseline);
  p.learning_rate = 0.5;
  p.max_epochs = 200;
  p.valid_interval = 1;
  p.checkpoint_interval = 1000;
  p.patience = 2;
  Trainer tp(p, 12, 13);
  const auto rp = tp.train(train, random_corpus(4, 6, 12, 13));
  EXPECT_NE(rp.stop_reason.find("did not improve"), std::string::npos);
  EXPECT_LT(rp.updates, 200u * 6u);
}

TEST(Trainer, EmptyCorpusIsConfigError) {
  Trainer t(small_config(StrategyId::baseline), 12, 13);
  EXPECT_THROW(t.train({}, {}), ConfigError);
  auto c = small_config(StrategyId::baseline);
  c.max_len = 1;
  Trainer tl(c, 12, 13);
  EXPECT_THROW(tl.train(random_corpus(5, 4, 12, 13), {}), ConfigError);
}

TEST(Trainer, InvalidConfigRejected) {
  auto c = small_config(StrategyId::baseline);
  c.learning_rate = 0;
  EXPECT_THROW(Trainer(c, 12, 13), ConfigError);
  c = small_config(StrategyId::baseline);
  c.dims.hidden_dim = 0;
  EXPECT_THROW(Trainer(c, 12, 13), ConfigError);
}

TEST(Trainer, ConfigRoundTripsThroughKeyValues) {
  auto c = small_config(StrategyId::s_t_hier);
  c.gate_sigmoid = true;
  c.clip_norm = 2.5;
  const auto back = train_config_from_kv(c.to_kv());
  EXPECT_EQ(back.strategy, c.strategy);
  EXPECT_EQ(back.gate_sigmoid, true);
  EXPECT_EQ(back.clip_norm, 2.5);
  EXPECT_EQ(back.batch_size, c.batch_size);
  EXPECT_EQ(back.learning_rate, c.learning_rate);
}

TEST(Trainer, OverfitsTenPairs) {
  const auto data = random_corpus(11, 10, 14, 14);
  auto c = small_config(StrategyId::baseline);
  c.dims.emb_dim = 16;
  c.dims.hidden_dim = 32;
  c.batch_size = 10;
  c.max_epochs = 600;
  c.stop_train_loss = 0.02;
  c.checkpoint_interval = 100000;
  Trainer t(c, 14, 14);
  const auto r = t.train(data, {});
  EXPECT_LT(r.epoch_loss.back(), 0.05);
  const auto& m = t.model();
  for (const auto& ex : data) {
    const auto in = build_example(m.strategy(), ex);
    DecodeOptions opt;
    opt.beam_size = 1;
    EXPECT_EQ(greedy_decode(m, in, opt).tokens, ex.trg);
  }
}

TEST(Ensemble, AveragesProbabilities) {
  const std::vector<double> a{0.0, -INFINITY};
  EXPECT_NEAR(log_mean_exp(std::span<const double>(a)), std::log(0.5), 1e-15);
  const std::vector<double> b{std::log(0.2), std::log(0.6)};
  EXPECT_NEAR(log_mean_exp(std::span<const double>(b)), std::log(0.4), 1e-15);
  const std::vector<double> big{-1000.0, -1000.0};
  EXPECT_NEAR(log_mean_exp(std::span<const double>(big)), -1000.0, 1e-12);
  EXPECT_THROW(log_mean_exp({}), ContractError);
}

TEST(Ensemble, TokenDistributionsSumToOne) {
  std::vector<ContextModel<double>> ms;
  for (std::uint64_t s = 1; s <= 3; ++s) ms.push_back(toy_model<double>(StrategyId::baseline, 4, 3, 9, 5, s, 1.0));
  Rng rng(9);
  const auto ex = random_example(rng, 9, 5);
  // Scoring every vocabulary item at position 0 and summing the averaged
  // probabilities must give 1.
  std::vector<BuiltExample> rows;
  for (int v = 0; v < 5; ++v) rows.push_back({build_example(ms[0].strategy(), ex).inputs, {v}});
  const auto lps = ensemble_token_logprobs(std::span<const ContextModel<double>>(ms), BuiltBatch::from(rows));
  double total = 0;
  for (const auto& r : lps) total += std::exp(r[0]);
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Ensemble, LastCheckpointsAndLoad) {
  const auto dir = scratch_dir("ens_load");
  auto c = small_config(StrategyId::baseline);
  c.out_dir = dir.string();
  c.checkpoint_interval = 2;
  c.max_updates = 6;
  c.max_epochs = 10;
  Trainer t(c, 12, 13);
  t.train(random_corpus(7, 8, 12, 13), {});
  const auto last = last_checkpoints(dir.string(), 2);
  ASSERT_EQ(last.size(), 2u);
  EXPECT_NE(last[1].find(checkpoint_filename(6)), std::string::npos);
  EXPECT_EQ(load_ensemble(last).size(), 2u);
  EXPECT_THROW(last_checkpoints(scratch_dir("ens_empty").string(), 2), DataError);
}
