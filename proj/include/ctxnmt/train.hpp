#pragma once

// Teacher-forced cross-entropy training with Adam, length bucketing,
// periodic checkpoints and early stopping on validation loss.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "ctxnmt/adam.hpp"
#include "ctxnmt/checkpoint.hpp"
#include "ctxnmt/config.hpp"
#include "ctxnmt/model.hpp"

namespace ctxnmt {

struct TrainConfig {
  StrategyId strategy = StrategyId::baseline;
  ModelDims dims;  // vocabulary sizes are filled in from the data
  bool gate_sigmoid = false;
  double learning_rate = 0.0001;
  std::size_t batch_size = 80;
  std::size_t max_len = 0;  // 0: 50, or 76 when sentences are concatenated
  std::size_t checkpoint_interval = 30000;
  std::size_t valid_interval = 0;  // 0: same as checkpoint_interval
  std::size_t patience = 5;
  std::size_t max_epochs = 100;
  std::size_t max_updates = 0;  // 0: unlimited
  double stop_train_loss = 0;   // stop once an epoch's mean loss is at or below this
  double clip_norm = 1.0;
  std::size_t ensemble_size = 3;
  std::size_t bucket_batches = 20;
  std::uint64_t seed = 1;
  std::string out_dir;  // empty: checkpoints are kept in memory only

  std::size_t effective_max_len() const {
    if (max_len) return max_len;
    const auto& s = ctxnmt::strategy(strategy);
    return (s.concatenated_input() || s.concatenated_output()) ? 76 : 50;
  }
  std::size_t effective_valid_interval() const { return valid_interval ? valid_interval : checkpoint_interval; }

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (checkpoint_interval == 0) throw ConfigError("checkpoint_interval must be positive");
    if (dims.emb_dim == 0 || dims.hidden_dim == 0) throw ConfigError("emb_dim and hidden_dim must be positive");
    if (ensemble_size == 0) throw ConfigError("ensemble_size must be positive");
    if (patience == 0) throw ConfigError("patience must be positive");
    if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  }

  KeyValues to_kv() const {
    KeyValues kv;
    kv.set("strategy", std::string(ctxnmt::strategy(strategy).name));
    kv.set("emb_dim", std::to_string(dims.emb_dim));
    kv.set("hidden_dim", std::to_string(dims.hidden_dim));
    kv.set("gate_sigmoid", gate_sigmoid ? "true" : "false");
    std::ostringstream lr;
    lr << std::setprecision(17) << learning_rate;
    kv.set("learning_rate", lr.str());
    kv.set("batch_size", std::to_string(batch_size));
    kv.set("max_len", std::to_string(effective_max_len()));
    kv.set("checkpoint_interval", std::to_string(checkpoint_interval));
    kv.set("valid_interval", std::to_string(effective_valid_interval()));
    kv.set("patience", std::to_string(patience));
    kv.set("max_epochs", std::to_string(max_epochs));
    kv.set("max_updates", std::to_string(max_updates));
    std::ostringstream sl;
    sl << std::setprecision(17) << stop_train_loss;
    kv.set("stop_train_loss", sl.str());
    std::ostringstream cn;
    cn << std::setprecision(17) << clip_norm;
    kv.set("clip_norm", cn.str());
    kv.set("ensemble_size", std::to_string(ensemble_size));
    kv.set("bucket_batches", std::to_string(bucket_batches));
    kv.set("seed", std::to_string(seed));
    return kv;
  }
};

/// Missing keys keep their defaults.
inline TrainConfig train_config_from_kv(const KeyValues& kv, TrainConfig c = TrainConfig()) {
  c.strategy = ctxnmt::strategy(kv.str("strategy", std::string(ctxnmt::strategy(c.strategy).name))).id;
  c.dims.emb_dim = kv.num("emb_dim", c.dims.emb_dim);
  c.dims.hidden_dim = kv.num("hidden_dim", c.dims.hidden_dim);
  c.gate_sigmoid = kv.flag("gate_sigmoid", c.gate_sigmoid);
  c.learning_rate = std::stod(kv.str("learning_rate", std::to_string(c.learning_rate)));
  c.batch_size = kv.num("batch_size", c.batch_size);
  c.max_len = kv.num("max_len", c.max_len);
  c.checkpoint_interval = kv.num("checkpoint_interval", c.checkpoint_interval);
  c.valid_interval = kv.num("valid_interval", c.valid_interval);
  c.patience = kv.num("patience", c.patience);
  c.max_epochs = kv.num("max_epochs", c.max_epochs);
  c.max_updates = kv.num("max_updates", c.max_updates);
  c.stop_train_loss = std::stod(kv.str("stop_train_loss", std::to_string(c.stop_train_loss)));
  c.clip_norm = std::stod(kv.str("clip_norm", std::to_string(c.clip_norm)));
  c.ensemble_size = kv.num("ensemble_size", c.ensemble_size);
  c.bucket_batches = kv.num("bucket_batches", c.bucket_batches);
  c.seed = kv.num("seed", c.seed);
  c.out_dir = kv.str("out_dir", c.out_dir);
  return c;
}

/// Built examples whose sequences (excluding EOS) all fit within max_len.
inline std::vector<BuiltExample> build_and_filter(const StrategyConfig& s, const std::vector<ContextualExample>& raw,
                                                  std::size_t max_len) {
  std::vector<BuiltExample> out;
  for (const auto& ex : raw) {
    auto b = build_example(s, ex);
    bool ok = b.target.size() <= max_len + 1;
    for (const auto& in : b.inputs) ok = ok && in.size() <= max_len + 1;
    if (ok) out.push_back(std::move(b));
  }
  return out;
}

/// Mean per-token NLL over a set of examples (inference mode).
template <class T>
double corpus_loss(const ContextModel<T>& model, const std::vector<BuiltExample>& data, std::size_t batch_size) {
  double nll = 0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < data.size(); i += batch_size) {
    const std::size_t n = std::min(batch_size, data.size() - i);
    auto batch = BuiltBatch::from(std::span<const BuiltExample>(data.data() + i, n));
    Tape<T> tape(false);
    nll -= static_cast<double>(model.log_likelihood(tape, batch).value()[0]);
    for (auto m : batch.target.mask) tokens += m;
  }
  return tokens ? nll / static_cast<double>(tokens) : 0.0;
}

/// Batches for one epoch: shuffle, sort windows of bucket_batches batches by
/// length, cut, then shuffle the batch order.
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<BuiltExample>& data, std::size_t batch_size,
                                                          std::size_t bucket_batches, Rng& rng) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.begin(), order.end());
  const std::size_t window = batch_size * std::max<std::size_t>(1, bucket_batches);
  auto len = [&](std::size_t i) {
    std::size_t l = data[i].target.size();
    for (const auto& in : data[i].inputs) l = std::max(l, in.size());
    return l;
  };
  for (std::size_t w = 0; w < order.size(); w += window) {
    auto b = order.begin() + static_cast<std::ptrdiff_t>(w);
    auto e = order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), w + window));
    std::stable_sort(b, e, [&](std::size_t x, std::size_t y) { return len(x) < len(y); });
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
  rng.shuffle(batches.begin(), batches.end());
  return batches;
}

struct TrainResult {
  std::vector<double> loss_curve;                        // per update
  std::vector<std::pair<std::size_t, double>> valid_curve;  // (update, loss)
  std::vector<double> epoch_loss;                        // mean token NLL per epoch
  std::vector<Checkpoint> checkpoints;                   // the last ensemble_size
  std::vector<std::string> checkpoint_paths;             // every file written
  std::size_t updates = 0;
  std::size_t epochs = 0;
  std::size_t train_examples = 0;
  std::string stop_reason;
};

class Trainer {
 public:
  using Log = std::function<void(const std::string&)>;

  Trainer(TrainConfig cfg, std::size_t src_vocab, std::size_t trg_vocab, KeyValues extra = {})
      : cfg_(std::move(cfg)), extra_(std::move(extra)), model_(make_model_config(cfg_, src_vocab, trg_vocab)) {
    cfg_.validate();
    adam_.init(model_.params());
    const auto tkv = cfg_.to_kv();
    for (const auto& [k, v] : tkv.values()) extra_.set("train." + k, v);
  }

  ContextModel<float>& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  AdamState<float>& adam() { return adam_; }

  /// One Adam update on a batch; returns the batch's mean token loss.
  double update(const BuiltBatch& batch) {
    auto& ps = model_.params();
    ps.zero_grad();
    Tape<float> tape;
    auto loss = model_.loss(tape, batch);
    tape.backward(loss);
    check_finite_gradients(ps);
    clip_global_norm(ps, cfg_.clip_norm);
    adam_step(ps, adam_, cfg_.learning_rate);
    return static_cast<double>(loss.value()[0]);
  }

  TrainResult train(const std::vector<ContextualExample>& train_raw, const std::vector<ContextualExample>& valid_raw,
                    const Log& log = {}) {
    const auto& s = model_.strategy();
    const std::size_t max_len = cfg_.effective_max_len();
    auto data = build_and_filter(s, train_raw, max_len);
    if (data.empty()) throw ConfigError("training corpus is empty after length filtering (max_len " +
                                        std::to_string(max_len) + ")");
    auto valid = build_and_filter(s, valid_raw, max_len);
    if (!cfg_.out_dir.empty()) std::filesystem::create_directories(cfg_.out_dir);

    TrainResult res;
    res.train_examples = data.size();
    Rng rng(derive_seed(cfg_.seed, 1));
    double best_valid = std::numeric_limits<double>::infinity();
    std::size_t bad_validations = 0;
    std::size_t last_ckpt = 0;
    auto say = [&](const std::string& m) {
      if (log) log(m);
    };
    auto checkpoint = [&] {
      auto c = make_checkpoint(model_, &adam_, res.updates, extra_);
      if (!cfg_.out_dir.empty()) {
        auto path = (std::filesystem::path(cfg_.out_dir) / checkpoint_filename(res.updates)).string();
        c.save(path);
        res.checkpoint_paths.push_back(path);
        say("checkpoint " + path);
      }
      res.checkpoints.push_back(std::move(c));
      if (res.checkpoints.size() > cfg_.ensemble_size) res.checkpoints.erase(res.checkpoints.begin());
      last_ckpt = res.updates;
    };

    bool stop = false;
    for (std::size_t epoch = 0; epoch < cfg_.max_epochs && !stop; ++epoch) {
      auto batches = make_batches(data, cfg_.batch_size, cfg_.bucket_batches, rng);
      double epoch_nll = 0;
      std::size_t epoch_tokens = 0;
      for (const auto& idx : batches) {
        std::vector<BuiltExample> rows;
        rows.reserve(idx.size());
        for (auto i : idx) rows.push_back(data[i]);
        auto batch = BuiltBatch::from(rows);
        const double l = update(batch);
        std::size_t tokens = 0;
        for (auto m : batch.target.mask) tokens += m;
        epoch_nll += l * static_cast<double>(tokens);
        epoch_tokens += tokens;
        res.loss_curve.push_back(l);
        ++res.updates;
        if (res.updates % cfg_.checkpoint_interval == 0) checkpoint();
        if (!valid.empty() && res.updates % cfg_.effective_valid_interval() == 0) {
          const double v = corpus_loss(model_, valid, cfg_.batch_size);
          res.valid_curve.emplace_back(res.updates, v);
          say("update " + std::to_string(res.updates) + " valid loss " + std::to_string(v));
          if (v < best_valid) {
            best_valid = v;
            bad_validations = 0;
          } else if (++bad_validations >= cfg_.patience) {
            res.stop_reason = "validation loss did not improve for " + std::to_string(cfg_.patience) + " validations";
            stop = true;
            break;
          }
        }
        if (cfg_.max_updates && res.updates >= cfg_.max_updates) {
          res.stop_reason = "reached max_updates";
          stop = true;
          break;
        }
      }
      ++res.epochs;
      const double mean = epoch_tokens ? epoch_nll / static_cast<double>(epoch_tokens) : 0.0;
      res.epoch_loss.push_back(mean);
      say("epoch " + std::to_string(res.epochs) + " train loss " + std::to_string(mean));
      if (!stop && cfg_.stop_train_loss > 0 && mean <= cfg_.stop_train_loss) {
        res.stop_reason = "training loss reached target";
        stop = true;
      }
    }
    if (res.stop_reason.empty()) res.stop_reason = "reached max_epochs";
    if (last_ckpt != res.updates || res.checkpoints.empty()) checkpoint();
    return res;
  }

 private:
  static ModelConfig make_model_config(const TrainConfig& c, std::size_t src_vocab, std::size_t trg_vocab) {
    ModelConfig m;
    m.strategy = c.strategy;
    m.dims = c.dims;
    m.dims.src_vocab = src_vocab;
    m.dims.trg_vocab = trg_vocab;
    m.gate_sigmoid = c.gate_sigmoid;
    m.seed = derive_seed(c.seed, 0);
    return m;
  }

  TrainConfig cfg_;
  KeyValues extra_;
  ContextModel<float> model_;
  AdamState<float> adam_;
};

}  // namespace ctxnmt
