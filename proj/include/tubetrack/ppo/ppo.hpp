#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include <json.hpp>

#include "tubetrack/env/environment.hpp"
#include "tubetrack/net/adam.hpp"
#include "tubetrack/net/beta.hpp"
#include "tubetrack/net/network.hpp"

namespace tubetrack {

struct TrainConfig {
  int n_path_episodes = 2;
  int n_segm_episodes = 2;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_epsilon = 0.2;
  double entropy_coef = 0.001;
  double value_coef = 0.5;
  // The critic predicts V / value_scale; keeps its output near unit scale
  // when returns are in the hundreds.
  double value_scale = 1.0;
  double lr = 3e-4;
  int minibatch = 32;
  int epochs_per_update = 5;
  int total_updates = 10;
  std::uint64_t seed = 0;
  int checkpoint_interval = 10;
  int eval_interval = 10;  // validation tracking every n updates; 0 = never

  void validate() const;
};

// Architecture shared by actor and critic; input channels, outputs, patch
// side and head gain are filled in per network.
struct ArchitectureConfig {
  std::vector<ConvStage> conv_stages = NetworkSpec{}.conv_stages;
  std::vector<int> fc_widths = NetworkSpec{}.fc_widths;
  int groups = NetworkSpec{}.groups;
};

struct RunConfig {
  TrainConfig train;
  EnvConfig env;
  RewardConfig reward;
  WallConfig wall;
  ArchitectureConfig network;

  NetworkSpec actor_spec(int patch_side) const;
  NetworkSpec critic_spec(int patch_side) const;
};

nlohmann::json to_json(const RunConfig& c);
// Sections: train, env, reward, wall, network. Unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);

struct Transition {
  std::vector<float> obs;  // critic layout; the actor reads the first 3 channels
  Unit3 action{};
  double log_prob = 0.0;
  double reward = 0.0;
  double value = 0.0;
  bool terminal = false;  // true end of episode (bootstrap 0)
  double advantage = 0.0;
  double ret = 0.0;
};

struct EpisodeRecord {
  Annotation annotation = Annotation::SegmOnly;
  std::size_t case_index = 0;
  StartMode start = StartMode::Pylorus;
  std::vector<Transition> steps;
  std::optional<DoneCause> cause;
  double bootstrap_value = 0.0;  // critic value after the last step when truncated
  double total_reward = 0.0;
  double coverage = 0.0;
};

struct RolloutBuffer {
  std::vector<EpisodeRecord> episodes;
  std::size_t transitions() const;
};

struct CaseSets {
  std::vector<std::shared_ptr<const PreparedCase>> path;
  std::vector<std::shared_ptr<const PreparedCase>> segm;
};

// Runs n_path episodes on path-annotated cases then n_segm on segmentation
// only cases, each with its own Rng derived from (seed, update, episode).
RolloutBuffer collect(const CaseSets& cases, const Network& actor, const Network& critic,
                      const RunConfig& cfg, std::uint64_t update, int threads);

struct GaeResult {
  std::vector<double> advantages, returns;
};
// delta_t = r_t + gamma V_{t+1} (1 - terminal_t) - V_t, with V_n = bootstrap;
// A_t = delta_t + gamma lambda (1 - terminal_t) A_{t+1}; returns = A + V.
GaeResult compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                      const std::vector<bool>& terminal, double gamma, double lambda,
                      double bootstrap = 0.0);

// Fills advantages and returns per episode, then normalises advantages over
// the whole buffer (when it holds more than one transition).
void compute_advantages(RolloutBuffer& buf, const TrainConfig& cfg);

struct LossReport {
  double actor_loss = 0.0;   // clipped surrogate + entropy term
  double critic_loss = 0.0;
  double entropy = 0.0;      // mean
  double ratio_mean = 0.0;
  double ratio_max_dev = 0.0;  // max |ratio - 1|
  double clip_fraction = 0.0;
  std::size_t count = 0;
};

// Mean loss over `batch` and its gradients, accumulated into actor_grad and
// critic_grad (either may be null). Samples are processed in fixed chunks and
// summed in order, so the result does not depend on `threads`.
LossReport minibatch_loss(const std::vector<const Transition*>& batch, const Network& actor,
                          const Network& critic, const TrainConfig& cfg,
                          std::vector<double>* actor_grad, std::vector<double>* critic_grad,
                          int threads = 1);

struct UpdateReport {
  LossReport mean;             // averaged over minibatches
  double first_ratio_max_dev = 0.0;
  int minibatches = 0;
};

UpdateReport ppo_update(const RolloutBuffer& buf, Network& actor, Network& critic,
                        AdamState& actor_opt, AdamState& critic_opt, const TrainConfig& cfg,
                        std::uint64_t update, int threads);

// Deterministic test-time episode: mode actions, zero-move termination.
Environment run_deterministic_episode(const std::shared_ptr<const PreparedCase>& pc,
                                      const Network& actor, const EnvConfig& env,
                                      const RewardConfig& reward, StartMode start);
// Uniform actions in the unit cube, test-time termination rules.
Environment run_random_episode(const std::shared_ptr<const PreparedCase>& pc,
                               const EnvConfig& env, const RewardConfig& reward, StartMode start,
                               Rng& rng);

struct TrainOptions {
  std::filesystem::path out_dir;
  bool resume = false;
  int threads = 1;
  std::function<void(const nlohmann::ordered_json&)> on_update;  // receives each metrics line
};

struct TrainResult {
  int first_update = 0;  // > 0 when resumed
  int last_checkpoint = 0;
};

// collect -> GAE -> ppo_update for total_updates. Writes resolved_config.json,
// checkpoint_<n>.json/.bin (0, every checkpoint_interval, and the last), and
// one metrics.jsonl line per update. Validation tracks every case in
// `validation` from its pylorus end.
TrainResult train(const RunConfig& cfg, const CaseSets& cases,
                  const std::vector<std::shared_ptr<const PreparedCase>>& validation,
                  const TrainOptions& opts);

}  // namespace tubetrack
