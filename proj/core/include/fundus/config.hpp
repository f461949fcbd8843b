#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace fundus {

/// One configuration key. The table returned by config_keys() is the only
/// place defaults are defined; help output is generated from it.
struct ConfigKey {
  std::string key;
  nlohmann::ordered_json default_value;
  std::string help;
};

const std::vector<ConfigKey>& config_keys();

/// Flat dotted-key configuration. Values keep the JSON type of their
/// default; unknown keys and type mismatches raise ConfigError.
class Config {
 public:
  Config();

  /// Merges a JSON object of dotted keys from a file.
  void load_file(const std::filesystem::path& path);
  void merge(const nlohmann::ordered_json& object);
  /// Applies "key=value", parsing value with the key's type.
  void apply_override(const std::string& assignment);
  void set(const std::string& key, nlohmann::ordered_json value);

  bool get_bool(const std::string& key) const;
  long long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  /// Comma-separated integers, e.g. "64,128,256".
  std::vector<int> get_int_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;

  const nlohmann::ordered_json& values() const { return values_; }

 private:
  const nlohmann::ordered_json& raw(const std::string& key) const;
  nlohmann::ordered_json values_;
};

/// Column-aligned listing of every key, its default and description.
std::string config_help();

}  // namespace fundus
