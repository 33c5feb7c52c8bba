#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "retsim/error.hpp"
#include "retsim/sim.hpp"

namespace retsim {

inline constexpr int kConfigSchemaVersion = 1;

// Bad run-config document; the message starts with the offending key path.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : Error(key + ": " + what), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

// Complete document with every key at its default. Physical quantities carry
// their unit in the key name.
nlohmann::json default_config_json();

// Overlays a user document on the defaults. Unknown keys, wrong types and
// invalid values are rejected with ConfigError.
nlohmann::json resolve_config(const nlohmann::json& user);
nlohmann::json load_config_file(const std::filesystem::path& path);
std::string serialize_config(const nlohmann::json& resolved);

// Converts a resolved document to SI units. Throws ConfigError.
SimConfig to_sim_config(const nlohmann::json& resolved);

}  // namespace retsim
