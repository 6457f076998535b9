#pragma once

// Checkpoint container:
//   ctxnmt-checkpoint <version>\n
//   updates <n>\n
//   config <bytes>\n<key=value text>
//   arrays <count>\n
//   then per array: "array <name> <rank> <d1> ... <dr>\n" followed by the
//   row-major values as little-endian 32-bit floats.
// Optimizer moments are stored as arrays named adam.m/<param> and
// adam.v/<param>; the Adam step counter is the update counter.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "ctxnmt/adam.hpp"
#include "ctxnmt/config.hpp"
#include "ctxnmt/model.hpp"

namespace ctxnmt {

inline constexpr int kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> data;
  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

struct Checkpoint {
  int version = kCheckpointVersion;
  std::uint64_t updates = 0;
  std::string config;  // key=value text
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }

  std::string serialize() const {
    std::string out = "ctxnmt-checkpoint " + std::to_string(version) + "\n";
    out += "updates " + std::to_string(updates) + "\n";
    out += "config " + std::to_string(config.size()) + "\n" + config;
    out += "arrays " + std::to_string(arrays.size()) + "\n";
    for (const auto& a : arrays) {
      out += "array " + a.name + " " + std::to_string(a.shape.size());
      for (auto d : a.shape) out += " " + std::to_string(d);
      out += "\n";
      const std::size_t off = out.size();
      out.resize(off + a.data.size() * 4);
      for (std::size_t i = 0; i < a.data.size(); ++i) {
        auto bits = std::bit_cast<std::uint32_t>(a.data[i]);
        for (int b = 0; b < 4; ++b) out[off + i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
      }
    }
    return out;
  }

  static Checkpoint deserialize(const std::string& bytes, const std::string& origin = "checkpoint") {
    std::size_t pos = 0;
    auto fail = [&](const std::string& what) -> DataError { return DataError(origin + ": " + what); };
    auto line = [&]() {
      auto nl = bytes.find('\n', pos);
      if (nl == std::string::npos) throw fail("truncated header");
      std::string l = bytes.substr(pos, nl - pos);
      pos = nl + 1;
      return l;
    };
    auto expect = [&](std::istringstream& ss, const std::string& tag) {
      std::string t;
      ss >> t;
      if (t != tag) throw fail("expected '" + tag + "', found '" + t + "'");
    };
    Checkpoint c;
    {
      std::istringstream ss(line());
      expect(ss, "ctxnmt-checkpoint");
      ss >> c.version;
      if (c.version != kCheckpointVersion) throw fail("unsupported format version " + std::to_string(c.version));
    }
    {
      std::istringstream ss(line());
      expect(ss, "updates");
      ss >> c.updates;
    }
    {
      std::istringstream ss(line());
      expect(ss, "config");
      std::size_t n = 0;
      ss >> n;
      if (pos + n > bytes.size()) throw fail("truncated config");
      c.config = bytes.substr(pos, n);
      pos += n;
    }
    std::size_t count = 0;
    {
      std::istringstream ss(line());
      expect(ss, "arrays");
      ss >> count;
    }
    for (std::size_t k = 0; k < count; ++k) {
      std::istringstream ss(line());
      expect(ss, "array");
      NamedArray a;
      std::size_t rank = 0;
      ss >> a.name >> rank;
      if (!ss || rank == 0) throw fail("malformed array header");
      a.shape.resize(rank);
      for (auto& d : a.shape) ss >> d;
      if (!ss) throw fail("malformed shape for " + a.name);
      const std::size_t n = shape_size(a.shape);
      if (pos + n * 4 > bytes.size()) throw fail("truncated data for " + a.name);
      a.data.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
          bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i * 4 + b])) << (8 * b);
        a.data[i] = std::bit_cast<float>(bits);
      }
      pos += n * 4;
      c.arrays.push_back(std::move(a));
    }
    if (pos != bytes.size()) throw fail("trailing bytes");
    return c;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path);
    const auto s = serialize();
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read checkpoint " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str(), path);
  }
};

inline std::string checkpoint_filename(std::uint64_t updates) {
  std::ostringstream ss;
  ss << "ckpt-" << std::setw(8) << std::setfill('0') << updates << ".bin";
  return ss.str();
}

inline KeyValues model_config_kv(const ModelConfig& m) {
  KeyValues kv;
  kv.set("strategy", std::string(strategy(m.strategy).name));
  kv.set("emb_dim", std::to_string(m.dims.emb_dim));
  kv.set("hidden_dim", std::to_string(m.dims.hidden_dim));
  kv.set("src_vocab", std::to_string(m.dims.src_vocab));
  kv.set("trg_vocab", std::to_string(m.dims.trg_vocab));
  kv.set("gate_sigmoid", m.gate_sigmoid ? "true" : "false");
  kv.set("seed", std::to_string(m.seed));
  return kv;
}

inline ModelConfig model_config_from_kv(const KeyValues& kv) {
  ModelConfig m;
  m.strategy = strategy(kv.str("strategy", "baseline")).id;
  m.dims.emb_dim = kv.num<std::size_t>("emb_dim", m.dims.emb_dim);
  m.dims.hidden_dim = kv.num<std::size_t>("hidden_dim", m.dims.hidden_dim);
  m.dims.src_vocab = kv.num<std::size_t>("src_vocab", 0);
  m.dims.trg_vocab = kv.num<std::size_t>("trg_vocab", 0);
  m.gate_sigmoid = kv.flag("gate_sigmoid", false);
  m.seed = kv.num<std::uint64_t>("seed", 1);
  return m;
}

/// Snapshot of the model (and optimizer, when given). extra carries
/// non-architectural settings such as the training config and vocabulary
/// fingerprints; architectural keys always come from the model.
inline Checkpoint make_checkpoint(const ContextModel<float>& model, const AdamState<float>* adam,
                                  std::uint64_t updates, const KeyValues& extra = {}) {
  KeyValues kv = extra;
  const auto mkv = model_config_kv(model.config());
  for (const auto& [k, v] : mkv.values()) kv.set(k, v);
  Checkpoint c;
  c.updates = updates;
  c.config = kv.dump();
  const auto& ps = model.params();
  for (std::size_t i = 0; i < ps.size(); ++i) c.arrays.push_back({ps[i].name, ps[i].value.shape(), ps[i].value.values()});
  if (adam && adam->m.size() == ps.size()) {
    for (std::size_t i = 0; i < ps.size(); ++i)
      c.arrays.push_back({"adam.m/" + ps[i].name, adam->m[i].shape(), adam->m[i].values()});
    for (std::size_t i = 0; i < ps.size(); ++i)
      c.arrays.push_back({"adam.v/" + ps[i].name, adam->v[i].shape(), adam->v[i].values()});
  }
  return c;
}

inline ContextModel<float> model_from_checkpoint(const Checkpoint& c) {
  ContextModel<float> model(model_config_from_kv(KeyValues::parse(c.config, "checkpoint config")));
  auto& ps = model.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto* a = c.find(ps[i].name);
    if (!a) throw DataError("checkpoint lacks parameter " + ps[i].name);
    if (a->shape != ps[i].value.shape())
      throw DataError("checkpoint parameter " + ps[i].name + " has shape " + shape_str(a->shape) + ", model expects " +
                      shape_str(ps[i].value.shape()));
    ps[i].value = Tensor<float>(a->shape, a->data);
  }
  return model;
}

/// Restores optimizer moments; returns false if the checkpoint has none.
inline bool restore_adam(const Checkpoint& c, const ContextModel<float>& model, AdamState<float>& st) {
  const auto& ps = model.params();
  st.init(ps);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto* m = c.find("adam.m/" + ps[i].name);
    const auto* v = c.find("adam.v/" + ps[i].name);
    if (!m || !v) {
      st.init(ps);
      return false;
    }
    st.m[i] = Tensor<float>(m->shape, m->data);
    st.v[i] = Tensor<float>(v->shape, v->data);
  }
  st.step = c.updates;
  return true;
}

/// Checkpoint files in dir, ordered by update counter.
inline std::vector<std::string> list_checkpoints(const std::string& dir) {
  std::vector<std::string> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto n = e.path().filename().string();
    if (n.rfind("ckpt-", 0) == 0 && e.path().extension() == ".bin") out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace ctxnmt
