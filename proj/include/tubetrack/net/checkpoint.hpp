#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "tubetrack/net/adam.hpp"
#include "tubetrack/net/network.hpp"

namespace tubetrack {

struct Checkpoint {
  int update = 0;
  NetworkSpec actor_spec, critic_spec;
  std::vector<double> actor_params, critic_params;
  AdamState actor_opt, critic_opt;
  nlohmann::json extra = nlohmann::json::object();  // e.g. the resolved run config
};

// `path` names the JSON manifest; float64 arrays go to the same stem with a
// .bin extension, in manifest order: actor params, critic params, then the
// Adam moments (actor m, v, critic m, v).
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
// Throws DataError on missing files, malformed manifests or size mismatches.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int update);

// Builds a network with the stored spec and copies the parameters in.
Network actor_from_checkpoint(const Checkpoint& ck);
Network critic_from_checkpoint(const Checkpoint& ck);

}  // namespace tubetrack
