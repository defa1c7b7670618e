#pragma once

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "tubetrack/errors.hpp"

namespace tubetrack {

// Rejects keys outside `allowed` so that typos in config files fail loudly.
inline void require_known_keys(const nlohmann::json& j,
                               std::initializer_list<const char*> allowed,
                               const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(section + ": unknown key '" + key + "'");
  }
}

// Reads j[key] into out when present; type errors become ConfigError.
template <typename T>
void read_optional(const nlohmann::json& j, const char* key, T& out,
                   const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(section + "." + key + ": " + e.what());
  }
}

}  // namespace tubetrack
