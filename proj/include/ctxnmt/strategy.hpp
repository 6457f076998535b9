#pragma once

// Context-integration strategies: how the previous sentence reaches the model
// (concatenated into the single input, or through extra encoders) and whether
// the decoder also produces the previous target sentence.

#include <algorithm>
#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "ctxnmt/corpus.hpp"
#include "ctxnmt/error.hpp"
#include "ctxnmt/vocab.hpp"

namespace ctxnmt {

enum class StrategyId {
  baseline,
  two_to_two,
  two_to_one,
  s_concat,
  s_gate,
  s_hier,
  t_concat,
  t_gate,
  t_hier,
  s_t_hier,
  s_hier_to_two,
  s_t_hier_to_two,
};

enum class AuxKind { none, src, trg, src_trg };
enum class Combiner { none, concat, gate, hier };

/// What an encoder reads.
enum class EncoderInput { current, previous_src, previous_trg };

struct StrategyConfig {
  StrategyId id;
  std::string_view name;
  AuxKind aux;
  int num_inputs;
  int num_outputs;
  int num_encoders;
  Combiner combiner;

  bool concatenated_input() const { return num_inputs > 1 && num_encoders == 1; }
  bool concatenated_output() const { return num_outputs == 2; }
  bool needs_aux_trg() const { return aux == AuxKind::trg || aux == AuxKind::src_trg || concatenated_output(); }
  bool uses_target_history() const { return aux == AuxKind::trg || aux == AuxKind::src_trg; }

  /// Encoder 0 always reads the (possibly concatenated) current input.
  std::vector<EncoderInput> encoder_inputs() const {
    std::vector<EncoderInput> e{EncoderInput::current};
    if (num_encoders == 1) return e;
    if (aux == AuxKind::src || aux == AuxKind::src_trg) e.push_back(EncoderInput::previous_src);
    if (aux == AuxKind::trg || aux == AuxKind::src_trg) e.push_back(EncoderInput::previous_trg);
    return e;
  }
};

inline constexpr std::array<StrategyConfig, 12> kStrategies = {{
    {StrategyId::baseline, "baseline", AuxKind::none, 1, 1, 1, Combiner::none},
    {StrategyId::two_to_two, "2-to-2", AuxKind::src, 2, 2, 1, Combiner::none},
    {StrategyId::two_to_one, "2-to-1", AuxKind::src, 2, 1, 1, Combiner::none},
    {StrategyId::s_concat, "s-concat", AuxKind::src, 2, 1, 2, Combiner::concat},
    {StrategyId::s_gate, "s-gate", AuxKind::src, 2, 1, 2, Combiner::gate},
    {StrategyId::s_hier, "s-hier", AuxKind::src, 2, 1, 2, Combiner::hier},
    {StrategyId::t_concat, "t-concat", AuxKind::trg, 2, 1, 2, Combiner::concat},
    {StrategyId::t_gate, "t-gate", AuxKind::trg, 2, 1, 2, Combiner::gate},
    {StrategyId::t_hier, "t-hier", AuxKind::trg, 2, 1, 2, Combiner::hier},
    {StrategyId::s_t_hier, "s-t-hier", AuxKind::src_trg, 3, 1, 3, Combiner::hier},
    {StrategyId::s_hier_to_two, "s-hier-to-2", AuxKind::src, 2, 2, 2, Combiner::hier},
    {StrategyId::s_t_hier_to_two, "s-t-hier-to-2", AuxKind::src_trg, 3, 2, 3, Combiner::hier},
}};

inline const StrategyConfig& strategy(StrategyId id) {
  for (const auto& s : kStrategies)
    if (s.id == id) return s;
  throw ConfigError("unknown strategy id");
}

inline const StrategyConfig& strategy(std::string_view name) {
  for (const auto& s : kStrategies)
    if (s.name == name) return s;
  throw ConfigError("unknown strategy '" + std::string(name) + "'");
}

inline std::string_view aux_name(AuxKind a) {
  switch (a) {
    case AuxKind::none: return "none";
    case AuxKind::src: return "src";
    case AuxKind::trg: return "trg";
    case AuxKind::src_trg: return "src,trg";
  }
  return "?";
}

/// Model-ready sequences: one input per encoder plus the decoder target.
struct BuiltExample {
  std::vector<std::vector<int>> inputs;
  std::vector<int> target;

  friend bool operator==(const BuiltExample&, const BuiltExample&) = default;
};

/// a without its trailing EOS, then CONCAT, then b (which keeps its EOS).
inline std::vector<int> concat_with_marker(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> out(a.begin(), a.end());
  if (!out.empty() && out.back() == kEos) out.pop_back();
  out.push_back(kConcat);
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

/// Splits at the first CONCAT; returns {prefix, rest}. Without CONCAT the
/// prefix is empty and rest is the whole sequence.
inline std::pair<std::vector<int>, std::vector<int>> split_at_concat(const std::vector<int>& seq) {
  auto it = std::find(seq.begin(), seq.end(), static_cast<int>(kConcat));
  if (it == seq.end()) return {{}, seq};
  return {std::vector<int>(seq.begin(), it), std::vector<int>(it + 1, seq.end())};
}

inline BuiltExample build_example(const StrategyConfig& s, const ContextualExample& raw) {
  if (raw.src.empty()) throw ContractError("build_example: empty source");
  if (s.aux == AuxKind::src || s.aux == AuxKind::src_trg)
    if (raw.aux_src.empty()) throw ContractError("build_example: strategy " + std::string(s.name) + " needs aux_src");
  if (s.needs_aux_trg() && raw.aux_trg.empty())
    throw ContractError("build_example: strategy " + std::string(s.name) + " needs aux_trg");

  BuiltExample b;
  for (auto in : s.encoder_inputs()) {
    switch (in) {
      case EncoderInput::current:
        b.inputs.push_back(s.concatenated_input() ? concat_with_marker(raw.aux_src, raw.src) : raw.src);
        break;
      case EncoderInput::previous_src: b.inputs.push_back(raw.aux_src); break;
      case EncoderInput::previous_trg: b.inputs.push_back(raw.aux_trg); break;
    }
  }
  b.target = s.concatenated_output() ? concat_with_marker(raw.aux_trg, raw.trg) : raw.trg;
  return b;
}

}  // namespace ctxnmt
