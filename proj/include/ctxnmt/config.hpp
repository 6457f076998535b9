#pragma once

// Flat key=value text used for config files and checkpoint config snapshots.
// '#' starts a comment; blank lines are ignored; keys are unique.

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "ctxnmt/error.hpp"

namespace ctxnmt {

class KeyValues {
 public:
  static KeyValues parse(const std::string& text, const std::string& origin = "config") {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
      auto key = trim(line.substr(0, eq));
      if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
      if (kv.values_.count(key)) throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key " + key);
      kv.values_[key] = trim(line.substr(eq + 1));
    }
    return kv;
  }

  static KeyValues load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  bool has(const std::string& k) const { return values_.count(k) != 0; }
  void set(const std::string& k, const std::string& v) { values_[k] = v; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string str(const std::string& k, const std::string& fallback) const {
    auto it = values_.find(k);
    return it == values_.end() ? fallback : it->second;
  }

  template <class N>
  N num(const std::string& k, N fallback) const {
    auto it = values_.find(k);
    if (it == values_.end()) return fallback;
    N v{};
    const auto& s = it->second;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw ConfigError("config key " + k + ": invalid number '" + s + "'");
    return v;
  }

  bool flag(const std::string& k, bool fallback) const {
    auto it = values_.find(k);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("config key " + k + ": expected true/false, got '" + it->second + "'");
  }

  /// Sorted key=value lines.
  std::string dump() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace ctxnmt
