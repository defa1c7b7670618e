#include "tubetrack/net/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <fstream>

#include "tubetrack/errors.hpp"

namespace tubetrack {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

struct Block {
  const char* name;
  std::vector<double>* data;
};

std::vector<Block> blocks(Checkpoint& ck) {
  return {{"actor.params", &ck.actor_params}, {"critic.params", &ck.critic_params},
          {"actor.adam.m", &ck.actor_opt.m},  {"actor.adam.v", &ck.actor_opt.v},
          {"critic.adam.m", &ck.critic_opt.m}, {"critic.adam.v", &ck.critic_opt.v}};
}

nlohmann::ordered_json tensor_list(const NetworkSpec& spec) {
  Network net(spec);
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& p : net.parameter_info()) {
    out.push_back({{"name", p.name}, {"shape", p.shape}, {"offset", p.offset}, {"size", p.size}});
  }
  return out;
}

Network from_params(const NetworkSpec& spec, const std::vector<double>& params) {
  Network net(spec);
  if (net.parameter_count() != params.size()) {
    throw DataError("checkpoint: parameter count does not match the stored network spec");
  }
  std::copy(params.begin(), params.end(), net.parameters().begin());
  return net;
}

}  // namespace

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int update) {
  return dir / ("checkpoint_" + std::to_string(update) + ".json");
}

void save_checkpoint(const Checkpoint& ck_in, const std::filesystem::path& path) {
  Checkpoint ck = ck_in;
  std::filesystem::path bin = path;
  bin.replace_extension(".bin");

  nlohmann::ordered_json manifest;
  manifest["format"] = "tubetrack-checkpoint-1";
  manifest["update"] = ck.update;
  manifest["binary"] = bin.filename().string();
  manifest["actor"] = {{"spec", to_json(ck.actor_spec)},
                       {"adam_step", ck.actor_opt.step},
                       {"tensors", tensor_list(ck.actor_spec)}};
  manifest["critic"] = {{"spec", to_json(ck.critic_spec)},
                        {"adam_step", ck.critic_opt.step},
                        {"tensors", tensor_list(ck.critic_spec)}};
  nlohmann::ordered_json arrays = nlohmann::ordered_json::array();
  for (const auto& b : blocks(ck)) arrays.push_back({{"name", b.name}, {"count", b.data->size()}});
  manifest["arrays"] = arrays;
  manifest["extra"] = ck.extra;

  std::ofstream bout(bin, std::ios::binary);
  if (!bout) throw DataError("cannot write " + bin.string());
  for (const auto& b : blocks(ck)) {
    bout.write(reinterpret_cast<const char*>(b.data->data()),
               static_cast<std::streamsize>(b.data->size() * sizeof(double)));
  }
  if (!bout) throw DataError("write failed: " + bin.string());
  std::ofstream jout(path);
  if (!jout) throw DataError("cannot write " + path.string());
  jout << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream jin(path);
  if (!jin) throw DataError("cannot open checkpoint " + path.string());
  Checkpoint ck;
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(jin);
    if (m.at("format") != "tubetrack-checkpoint-1") throw DataError("unknown checkpoint format");
    ck.update = m.at("update").get<int>();
    ck.actor_spec = network_spec_from_json(m.at("actor").at("spec"), NetworkSpec{});
    ck.critic_spec = network_spec_from_json(m.at("critic").at("spec"), NetworkSpec{});
    ck.actor_opt.step = m.at("actor").at("adam_step").get<std::int64_t>();
    ck.critic_opt.step = m.at("critic").at("adam_step").get<std::int64_t>();
    ck.extra = m.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint manifest " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw DataError("checkpoint " + path.string() + " has an invalid network spec: " + e.what());
  }
  const std::size_t na = Network(ck.actor_spec).parameter_count();
  const std::size_t nc = Network(ck.critic_spec).parameter_count();
  ck.actor_params.resize(na);
  ck.critic_params.resize(nc);
  ck.actor_opt.m.resize(na);
  ck.actor_opt.v.resize(na);
  ck.critic_opt.m.resize(nc);
  ck.critic_opt.v.resize(nc);

  std::filesystem::path bin = path.parent_path() / m.value("binary", "");
  std::ifstream bin_in(bin, std::ios::binary | std::ios::ate);
  if (!bin_in) throw DataError("cannot open checkpoint data " + bin.string());
  const auto bytes = static_cast<std::size_t>(bin_in.tellg());
  if (bytes != 3 * (na + nc) * sizeof(double)) {
    throw DataError("checkpoint data " + bin.string() + " has " + std::to_string(bytes) +
                    " bytes, expected " + std::to_string(3 * (na + nc) * sizeof(double)));
  }
  bin_in.seekg(0);
  for (const auto& b : blocks(ck)) {
    bin_in.read(reinterpret_cast<char*>(b.data->data()),
                static_cast<std::streamsize>(b.data->size() * sizeof(double)));
  }
  if (!bin_in) throw DataError("short read from " + bin.string());
  return ck;
}

Network actor_from_checkpoint(const Checkpoint& ck) {
  return from_params(ck.actor_spec, ck.actor_params);
}

Network critic_from_checkpoint(const Checkpoint& ck) {
  return from_params(ck.critic_spec, ck.critic_params);
}

}  // namespace tubetrack
