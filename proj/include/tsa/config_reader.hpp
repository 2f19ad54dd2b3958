#pragma once

#include <set>
#include <string>

#include <json.hpp>

#include "tsa/error.hpp"

namespace tsa {

/// Strict reader over one JSON config section. Type mismatches and unknown
/// keys raise ConfigError naming the dotted field path.
class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& section, std::string prefix) : doc_(section), prefix_(std::move(prefix)) {
    if (!doc_.is_object()) throw ConfigError(prefix_, "must be a JSON object");
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = doc_.find(key);
    if (it == doc_.end()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError(field(key), "expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw ConfigError(field(key), "expected an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError(field(key), "expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw ConfigError(field(key), "expected a string");
      }
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(field(key), e.what());
    }
  }

  bool has(const std::string& key) const { return doc_.contains(key); }
  const nlohmann::json& raw(const std::string& key) {
    seen_.insert(key);
    return doc_.at(key);
  }
  std::string field(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

  /// Rejects keys that were never read.
  void finish() const {
    for (auto it = doc_.begin(); it != doc_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(field(it.key()), "unknown field");
    }
  }

 private:
  const nlohmann::json& doc_;
  std::string prefix_;
  std::set<std::string> seen_;
};

}  // namespace tsa
