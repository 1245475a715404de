#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "oprl/env_id.hpp"

// Flat key = value run settings. Every key has a default; "auto" defaults are
// resolved from the environment once all sources are merged.
namespace oprl::config {

struct KeyInfo {
  std::string name;
  std::string default_value;
  std::string help;
};

/// All known keys in display order.
const std::vector<KeyInfo>& known_keys();
bool is_known_key(const std::string& key);

class RunConfig {
 public:
  /// All keys at their defaults.
  RunConfig();

  /// Throws InvalidConfig for unknown keys.
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool is_auto(const std::string& key) const { return get(key) == "auto"; }
  bool is_empty(const std::string& key) const { return get(key).empty(); }

  double real(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  bool flag(const std::string& key) const;
  /// Comma separated counts, e.g. "64,64".
  std::vector<std::size_t> counts(const std::string& key) const;
  std::vector<std::string> list(const std::string& key) const;
  std::optional<double> optional_real(const std::string& key) const;

  EnvId env() const;

  /// Replaces every "auto" value with its environment-dependent default.
  void resolve();

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Parses `key = value` lines; '#' starts a comment. Errors carry line numbers.
std::map<std::string, std::string> parse_config_text(const std::string& text);
std::map<std::string, std::string> load_config_file(const std::filesystem::path& path);

/// defaults < file < overrides, then resolve().
RunConfig merge(const std::map<std::string, std::string>& file,
                const std::map<std::string, std::string>& overrides);

/// Flat key = value text accepted by load_config_file.
std::string to_config_text(const RunConfig& cfg);

struct Manifest {
  std::string command;
  RunConfig config;
  std::vector<std::uint64_t> seeds;
};

nlohmann::json manifest_to_json(const Manifest& m);
/// Writes manifest.json and the equivalent config file manifest.cfg.
void write_manifest(const Manifest& m, const std::filesystem::path& dir);

}  // namespace oprl::config
