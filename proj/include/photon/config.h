#pragma once

// Plain-text key=value configuration with dotted keys. '#' starts a comment.
// Unknown keys are rejected with the offending key named.

#include <map>
#include <string>
#include <vector>

#include "photon/flat.h"
#include "photon/hierarchy.h"
#include "photon/model.h"

namespace photon {

class ConfigFile {
 public:
  static ConfigFile parse(const std::string& text, const std::string& origin = "<text>");
  static ConfigFile load(const std::string& path);

  // "key=value"; later values win.
  void apply_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::string require_string(const std::string& key) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::size_t require_size(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  real get_real(const std::string& key, real fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Throws ConfigError for the first key outside the known schema.
  void validate_keys() const;
  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
};

struct ModelSpec {
  std::string kind = "photon";  // photon | flat
  HierarchyConfig photon;
  FlatConfig flat;
};

ModelSpec parse_model(const ConfigFile& cfg);
// Serializes the model section so that parse_model(model_config(spec))
// reproduces `spec`.
ConfigFile model_config(const ModelSpec& spec);

Dissimilarity parse_dissimilarity(const std::string& s);

}  // namespace photon
