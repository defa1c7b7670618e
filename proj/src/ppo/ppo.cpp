#include "tubetrack/ppo/ppo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "tubetrack/config_json.hpp"
#include "tubetrack/errors.hpp"
#include "tubetrack/eval/metrics.hpp"
#include "tubetrack/grid/patch.hpp"
#include "tubetrack/net/checkpoint.hpp"
#include "tubetrack/parallel.hpp"

namespace tubetrack {

namespace {

constexpr std::size_t kGradChunk = 4;
constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;
constexpr std::uint64_t kActorInitStream = 0xAC7025ULL;
constexpr std::uint64_t kCriticInitStream = 0xC217C5ULL;

}  // namespace

void TrainConfig::validate() const {
  if (n_path_episodes < 0 || n_segm_episodes < 0 || n_path_episodes + n_segm_episodes < 1) {
    throw ConfigError("train: episode counts must be >= 0 with at least one episode per update");
  }
  if (!(gamma > 0.0 && gamma <= 1.0) || !(gae_lambda > 0.0 && gae_lambda <= 1.0)) {
    throw ConfigError("train: gamma and gae_lambda must lie in (0, 1]");
  }
  if (!(clip_epsilon > 0.0)) throw ConfigError("train: clip_epsilon must be positive");
  if (!(entropy_coef >= 0.0) || !(value_coef >= 0.0)) {
    throw ConfigError("train: entropy_coef and value_coef must be non-negative");
  }
  if (!(value_scale > 0.0) || !std::isfinite(value_scale)) {
    throw ConfigError("train: value_scale must be positive and finite");
  }
  if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
  if (minibatch < 1 || epochs_per_update < 1) {
    throw ConfigError("train: minibatch and epochs_per_update must be >= 1");
  }
  if (total_updates < 0) throw ConfigError("train: total_updates must be >= 0");
  if (checkpoint_interval < 1) throw ConfigError("train: checkpoint_interval must be >= 1");
  if (eval_interval < 0) throw ConfigError("train: eval_interval must be >= 0");
}

NetworkSpec RunConfig::actor_spec(int patch_side) const {
  NetworkSpec s = NetworkSpec::actor(patch_side);
  s.conv_stages = network.conv_stages;
  s.fc_widths = network.fc_widths;
  s.groups = network.groups;
  s.validate();
  return s;
}

NetworkSpec RunConfig::critic_spec(int patch_side) const {
  NetworkSpec s = NetworkSpec::critic(patch_side);
  s.conv_stages = network.conv_stages;
  s.fc_widths = network.fc_widths;
  s.groups = network.groups;
  s.validate();
  return s;
}

nlohmann::json to_json(const RunConfig& c) {
  const TrainConfig& t = c.train;
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : c.network.conv_stages) {
    stages.push_back({{"channels", s.channels}, {"stride", s.stride}});
  }
  return {{"train",
           {{"n_path_episodes", t.n_path_episodes},
            {"n_segm_episodes", t.n_segm_episodes},
            {"gamma", t.gamma},
            {"gae_lambda", t.gae_lambda},
            {"clip_epsilon", t.clip_epsilon},
            {"entropy_coef", t.entropy_coef},
            {"value_coef", t.value_coef},
            {"value_scale", t.value_scale},
            {"lr", t.lr},
            {"minibatch", t.minibatch},
            {"epochs_per_update", t.epochs_per_update},
            {"total_updates", t.total_updates},
            {"seed", t.seed},
            {"checkpoint_interval", t.checkpoint_interval},
            {"eval_interval", t.eval_interval}}},
          {"env", to_json(c.env)},
          {"reward", to_json(c.reward)},
          {"wall", {{"sigma_mm", c.wall.sigma_mm}, {"normalize", c.wall.normalize}}},
          {"network",
           {{"conv_stages", stages}, {"fc_widths", c.network.fc_widths},
            {"groups", c.network.groups}}}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  require_known_keys(j, {"train", "env", "reward", "wall", "network"}, "config");
  RunConfig c;
  if (j.contains("train")) {
    const auto& t = j["train"];
    const std::string sec = "train";
    require_known_keys(t, {"n_path_episodes", "n_segm_episodes", "gamma", "gae_lambda",
                           "clip_epsilon", "entropy_coef", "value_coef", "value_scale", "lr",
                           "minibatch",
                           "epochs_per_update", "total_updates", "seed", "checkpoint_interval",
                           "eval_interval"},
                       sec);
    TrainConfig& o = c.train;
    read_optional(t, "n_path_episodes", o.n_path_episodes, sec);
    read_optional(t, "n_segm_episodes", o.n_segm_episodes, sec);
    read_optional(t, "gamma", o.gamma, sec);
    read_optional(t, "gae_lambda", o.gae_lambda, sec);
    read_optional(t, "clip_epsilon", o.clip_epsilon, sec);
    read_optional(t, "entropy_coef", o.entropy_coef, sec);
    read_optional(t, "value_coef", o.value_coef, sec);
    read_optional(t, "value_scale", o.value_scale, sec);
    read_optional(t, "lr", o.lr, sec);
    read_optional(t, "minibatch", o.minibatch, sec);
    read_optional(t, "epochs_per_update", o.epochs_per_update, sec);
    read_optional(t, "total_updates", o.total_updates, sec);
    read_optional(t, "seed", o.seed, sec);
    read_optional(t, "checkpoint_interval", o.checkpoint_interval, sec);
    read_optional(t, "eval_interval", o.eval_interval, sec);
  }
  c.train.validate();
  if (j.contains("env")) c.env = env_config_from_json(j["env"]);
  if (j.contains("reward")) c.reward = reward_config_from_json(j["reward"]);
  if (j.contains("wall")) {
    require_known_keys(j["wall"], {"sigma_mm", "normalize"}, "wall");
    read_optional(j["wall"], "sigma_mm", c.wall.sigma_mm, "wall");
    read_optional(j["wall"], "normalize", c.wall.normalize, "wall");
    c.wall.validate();
  }
  if (j.contains("network")) {
    const auto& n = j["network"];
    require_known_keys(n, {"conv_stages", "fc_widths", "groups"}, "network");
    NetworkSpec base;
    base.conv_stages = c.network.conv_stages;
    base.fc_widths = c.network.fc_widths;
    base.groups = c.network.groups;
    const NetworkSpec s = network_spec_from_json(n, base);
    c.network.conv_stages = s.conv_stages;
    c.network.fc_widths = s.fc_widths;
    c.network.groups = s.groups;
  }
  return c;
}

std::size_t RolloutBuffer::transitions() const {
  std::size_t n = 0;
  for (const auto& e : episodes) n += e.steps.size();
  return n;
}

RolloutBuffer collect(const CaseSets& cases, const Network& actor, const Network& critic,
                      const RunConfig& cfg, std::uint64_t update, int threads) {
  const int np = cfg.train.n_path_episodes, ns = cfg.train.n_segm_episodes;
  if (np > 0 && cases.path.empty()) {
    throw ConfigError("collect: path-annotated episodes requested but no such cases are loaded");
  }
  if (ns > 0 && cases.segm.empty()) {
    throw ConfigError("collect: segmentation-only episodes requested but no such cases are loaded");
  }
  RolloutBuffer buf;
  buf.episodes.resize(static_cast<std::size_t>(np + ns));
  parallel_for(buf.episodes.size(), threads, [&](std::size_t e) {
    const bool path = static_cast<int>(e) < np;
    const auto& set = path ? cases.path : cases.segm;
    Rng rng(derive_seed(cfg.train.seed, update, e));
    EpisodeRecord& rec = buf.episodes[e];
    rec.case_index = rng.below(set.size());
    const auto& pc = set[rec.case_index];
    rec.annotation = pc->tracking_case().annotation;
    Environment env(pc, cfg.env, cfg.reward, EpisodeKind::Train);
    env.reset_random(rng);
    rec.start = env.visited_positions().front() == pc->end_voxel[env.start_end()]
                    ? (env.start_end() == 0 ? StartMode::Pylorus : StartMode::End)
                    : StartMode::Middle;
    const double spacing = pc->tracking_case().spacing_mm();
    Tape ta, tc;
    while (!env.done()) {
      Transition tr;
      const auto raw = actor.forward(env.actor_observation(), ta);
      const BetaTriple bt = BetaTriple::from_raw(raw);
      tr.action = sample_unit(bt, rng);
      tr.log_prob = log_prob(bt, tr.action);
      tr.value = cfg.train.value_scale * critic.forward(env.critic_observation(), tc)[0];
      tr.obs.assign(env.critic_observation().begin(), env.critic_observation().end());
      const auto res = env.step(unit_to_displacement(tr.action, cfg.env.d_step_mm, spacing));
      tr.reward = res.reward;
      rec.total_reward += res.reward;
      if (res.done) {
        rec.cause = res.done;
        tr.terminal = *res.done != DoneCause::MaxSteps;
        if (!tr.terminal) {
          rec.bootstrap_value =
              cfg.train.value_scale * critic.forward(env.critic_observation(), tc)[0];
        }
      }
      rec.steps.push_back(std::move(tr));
    }
    rec.coverage = env.coverage();
  });
  return buf;
}

GaeResult compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                      const std::vector<bool>& terminal, double gamma, double lambda,
                      double bootstrap) {
  const std::size_t n = rewards.size();
  if (values.size() != n || terminal.size() != n) {
    throw ConfigError("compute_gae: rewards, values and terminal flags differ in length");
  }
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next_adv = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double next_value = t + 1 < n ? values[t + 1] : bootstrap;
    const double live = terminal[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * next_value * live - values[t];
    next_adv = delta + gamma * lambda * live * next_adv;
    out.advantages[t] = next_adv;
    out.returns[t] = next_adv + values[t];
  }
  return out;
}

void compute_advantages(RolloutBuffer& buf, const TrainConfig& cfg) {
  std::vector<double> all;
  for (auto& ep : buf.episodes) {
    std::vector<double> r, v;
    std::vector<bool> term;
    for (const auto& t : ep.steps) {
      r.push_back(t.reward);
      v.push_back(t.value);
      term.push_back(t.terminal);
    }
    const GaeResult g =
        compute_gae(r, v, term, cfg.gamma, cfg.gae_lambda, ep.bootstrap_value);
    for (std::size_t i = 0; i < ep.steps.size(); ++i) {
      ep.steps[i].advantage = g.advantages[i];
      ep.steps[i].ret = g.returns[i];
      all.push_back(g.advantages[i]);
    }
  }
  if (all.size() < 2) return;
  const double n = static_cast<double>(all.size());
  const double mean = std::accumulate(all.begin(), all.end(), 0.0) / n;
  double ss = 0.0;
  for (double a : all) ss += (a - mean) * (a - mean);
  const double sd = std::sqrt(ss / n);
  const double scale = sd > 0.0 ? 1.0 / sd : 1.0;
  for (auto& ep : buf.episodes) {
    for (auto& t : ep.steps) t.advantage = (t.advantage - mean) * scale;
  }
}

LossReport minibatch_loss(const std::vector<const Transition*>& batch, const Network& actor,
                          const Network& critic, const TrainConfig& cfg,
                          std::vector<double>* actor_grad, std::vector<double>* critic_grad,
                          int threads) {
  if (batch.empty()) throw ConfigError("minibatch_loss: empty batch");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const std::size_t chunks = (batch.size() + kGradChunk - 1) / kGradChunk;
  const std::size_t actor_in = actor.input_size();

  struct ChunkResult {
    LossReport sums;
    std::vector<double> ga, gc;
  };
  std::vector<ChunkResult> results(chunks);
  parallel_for(chunks, threads, [&](std::size_t c) {
    ChunkResult& cr = results[c];
    if (actor_grad) cr.ga.assign(actor.parameter_count(), 0.0);
    if (critic_grad) cr.gc.assign(critic.parameter_count(), 0.0);
    Tape ta, tc;
    const std::size_t end = std::min(batch.size(), (c + 1) * kGradChunk);
    for (std::size_t b = c * kGradChunk; b < end; ++b) {
      const Transition& t = *batch[b];
      if (t.obs.size() < actor_in) throw ConfigError("minibatch_loss: observation too small");
      const auto raw_span = actor.forward(std::span<const float>(t.obs.data(), actor_in), ta);
      const std::vector<double> raw(raw_span.begin(), raw_span.end());
      const BetaTriple bt = BetaTriple::from_raw(raw);
      const double lp = log_prob(bt, t.action);
      const double ratio = std::exp(lp - t.log_prob);
      const double a = t.advantage;
      const double clipped =
          std::clamp(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
      const bool unclipped_branch = ratio * a <= clipped * a;
      const double surrogate = unclipped_branch ? ratio * a : clipped * a;
      const double h = entropy(bt);

      cr.sums.actor_loss += -surrogate - cfg.entropy_coef * h;
      cr.sums.entropy += h;
      cr.sums.ratio_mean += ratio;
      cr.sums.ratio_max_dev = std::max(cr.sums.ratio_max_dev, std::abs(ratio - 1.0));
      cr.sums.clip_fraction += std::abs(ratio - 1.0) > cfg.clip_epsilon ? 1.0 : 0.0;

      const auto v_span = critic.forward(std::span<const float>(t.obs), tc);
      const double v = cfg.value_scale * v_span[0];
      cr.sums.critic_loss += cfg.value_coef * (v - t.ret) * (v - t.ret);

      if (actor_grad) {
        const double d_lp = unclipped_branch ? -ratio * a * inv_n : 0.0;
        const double d_h = -cfg.entropy_coef * inv_n;
        const BetaGrad lg = log_prob_grad(bt, t.action);
        const BetaGrad eg = entropy_grad(bt);
        BetaGrad g;
        for (int ax = 0; ax < 3; ++ax) {
          g.d_alpha[ax] = d_lp * lg.d_alpha[ax] + d_h * eg.d_alpha[ax];
          g.d_beta[ax] = d_lp * lg.d_beta[ax] + d_h * eg.d_beta[ax];
        }
        std::vector<double> d_raw(raw.size(), 0.0);
        beta_grad_to_raw(raw, g, d_raw);
        actor.backward(ta, d_raw, cr.ga);
      }
      if (critic_grad) {
        const double dv[1] = {2.0 * cfg.value_coef * (v - t.ret) * cfg.value_scale * inv_n};
        critic.backward(tc, dv, cr.gc);
      }
    }
  });

  LossReport rep;
  rep.count = batch.size();
  for (const auto& cr : results) {
    rep.actor_loss += cr.sums.actor_loss;
    rep.critic_loss += cr.sums.critic_loss;
    rep.entropy += cr.sums.entropy;
    rep.ratio_mean += cr.sums.ratio_mean;
    rep.clip_fraction += cr.sums.clip_fraction;
    rep.ratio_max_dev = std::max(rep.ratio_max_dev, cr.sums.ratio_max_dev);
    if (actor_grad) {
      for (std::size_t i = 0; i < cr.ga.size(); ++i) (*actor_grad)[i] += cr.ga[i];
    }
    if (critic_grad) {
      for (std::size_t i = 0; i < cr.gc.size(); ++i) (*critic_grad)[i] += cr.gc[i];
    }
  }
  rep.actor_loss *= inv_n;
  rep.critic_loss *= inv_n;
  rep.entropy *= inv_n;
  rep.ratio_mean *= inv_n;
  rep.clip_fraction *= inv_n;
  return rep;
}

UpdateReport ppo_update(const RolloutBuffer& buf, Network& actor, Network& critic,
                        AdamState& actor_opt, AdamState& critic_opt, const TrainConfig& cfg,
                        std::uint64_t update, int threads) {
  std::vector<const Transition*> all;
  for (const auto& ep : buf.episodes) {
    for (const auto& t : ep.steps) all.push_back(&t);
  }
  if (all.empty()) throw ConfigError("ppo_update: empty rollout buffer");
  Rng rng(derive_seed(cfg.seed, update, kShuffleStream));
  AdamConfig adam;
  adam.lr = cfg.lr;
  UpdateReport out;
  std::vector<double> ga(actor.parameter_count()), gc(critic.parameter_count());
  for (int epoch = 0; epoch < cfg.epochs_per_update; ++epoch) {
    for (std::size_t i = all.size(); i > 1; --i) std::swap(all[i - 1], all[rng.below(i)]);
    for (std::size_t start = 0; start < all.size(); start += static_cast<std::size_t>(cfg.minibatch)) {
      const std::size_t end = std::min(all.size(), start + static_cast<std::size_t>(cfg.minibatch));
      const std::vector<const Transition*> batch(all.begin() + static_cast<long>(start),
                                                 all.begin() + static_cast<long>(end));
      std::fill(ga.begin(), ga.end(), 0.0);
      std::fill(gc.begin(), gc.end(), 0.0);
      const LossReport rep = minibatch_loss(batch, actor, critic, cfg, &ga, &gc, threads);
      if (!std::isfinite(rep.actor_loss) || !std::isfinite(rep.critic_loss)) {
        std::ostringstream msg;
        msg << "ppo_update: non-finite loss at update " << update << ", epoch " << epoch
            << ", minibatch starting " << start << " (actor " << rep.actor_loss << ", critic "
            << rep.critic_loss << ", entropy " << rep.entropy << ", mean ratio "
            << rep.ratio_mean << ")";
        throw NumericError(msg.str());
      }
      if (out.minibatches == 0) out.first_ratio_max_dev = rep.ratio_max_dev;
      adam_step(actor.parameters(), ga, actor_opt, adam);
      adam_step(critic.parameters(), gc, critic_opt, adam);
      out.mean.actor_loss += rep.actor_loss;
      out.mean.critic_loss += rep.critic_loss;
      out.mean.entropy += rep.entropy;
      out.mean.ratio_mean += rep.ratio_mean;
      out.mean.clip_fraction += rep.clip_fraction;
      out.mean.ratio_max_dev = std::max(out.mean.ratio_max_dev, rep.ratio_max_dev);
      out.mean.count += rep.count;
      ++out.minibatches;
    }
  }
  const double m = static_cast<double>(out.minibatches);
  out.mean.actor_loss /= m;
  out.mean.critic_loss /= m;
  out.mean.entropy /= m;
  out.mean.ratio_mean /= m;
  out.mean.clip_fraction /= m;
  return out;
}

Environment run_deterministic_episode(const std::shared_ptr<const PreparedCase>& pc,
                                      const Network& actor, const EnvConfig& env_cfg,
                                      const RewardConfig& reward, StartMode start) {
  Environment env(pc, env_cfg, reward, EpisodeKind::Test);
  if (static_cast<std::size_t>(actor.spec().patch_side) != static_cast<std::size_t>(env.patch_side()) ||
      actor.spec().input_channels != 3) {
    throw ConfigError("actor network expects " + std::to_string(actor.spec().input_channels) +
                      " channels of side " + std::to_string(actor.spec().patch_side) +
                      ", the environment provides 3 of side " +
                      std::to_string(env.patch_side()));
  }
  Rng rng(0);
  env.reset(start, rng);
  const double spacing = pc->tracking_case().spacing_mm();
  Tape tape;
  while (!env.done()) {
    const BetaTriple bt = BetaTriple::from_raw(actor.forward(env.actor_observation(), tape));
    env.step(unit_to_displacement(mode_unit(bt), env_cfg.d_step_mm, spacing));
  }
  return env;
}

Environment run_random_episode(const std::shared_ptr<const PreparedCase>& pc,
                               const EnvConfig& env_cfg, const RewardConfig& reward,
                               StartMode start, Rng& rng) {
  Environment env(pc, env_cfg, reward, EpisodeKind::Test);
  env.reset(start, rng);
  const double spacing = pc->tracking_case().spacing_mm();
  while (!env.done()) {
    const Unit3 u{rng.uniform(), rng.uniform(), rng.uniform()};
    env.step(unit_to_displacement(u, env_cfg.d_step_mm, spacing));
  }
  return env;
}

namespace {

int common_patch_side(const RunConfig& cfg, const CaseSets& cases,
                      const std::vector<std::shared_ptr<const PreparedCase>>& validation) {
  std::optional<double> spacing;
  auto check = [&](const std::shared_ptr<const PreparedCase>& pc) {
    const double s = pc->tracking_case().spacing_mm();
    if (spacing && *spacing != s) {
      throw ConfigError("all cases must share one voxel spacing (found " +
                        std::to_string(*spacing) + " and " + std::to_string(s) + ")");
    }
    spacing = s;
  };
  for (const auto& pc : cases.path) check(pc);
  for (const auto& pc : cases.segm) check(pc);
  for (const auto& pc : validation) check(pc);
  if (!spacing) throw ConfigError("train: no cases loaded");
  return patch_side(cfg.env.patch_size_mm, *spacing);
}

void truncate_lines(const std::filesystem::path& path, std::size_t keep) {
  std::vector<std::string> lines;
  {
    std::ifstream in(path);
    std::string line;
    while (lines.size() < keep && std::getline(in, line)) lines.push_back(line);
  }
  if (lines.size() < keep) {
    throw DataError(path.string() + " has fewer lines than the resumed checkpoint's update count");
  }
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : lines) out << l << '\n';
}

std::optional<int> latest_checkpoint(const std::filesystem::path& dir) {
  std::optional<int> best;
  if (!std::filesystem::exists(dir)) return best;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("checkpoint_", 0) != 0 || entry.path().extension() != ".json") continue;
    const std::string num = name.substr(11, name.size() - 11 - 5);
    if (num.empty() || num.find_first_not_of("0123456789") != std::string::npos) continue;
    const int n = std::stoi(num);
    if (!best || n > *best) best = n;
  }
  return best;
}

}  // namespace

TrainResult train(const RunConfig& cfg, const CaseSets& cases,
                  const std::vector<std::shared_ptr<const PreparedCase>>& validation,
                  const TrainOptions& opts) {
  cfg.train.validate();
  cfg.env.validate();
  cfg.reward.validate();
  if (cfg.train.n_path_episodes > 0 && cases.path.empty()) {
    throw ConfigError("train: config requests path-annotated episodes but the case set has none");
  }
  if (cfg.train.n_segm_episodes > 0 && cases.segm.empty()) {
    throw ConfigError("train: config requests segmentation-only episodes but the case set has none");
  }
  const int side = common_patch_side(cfg, cases, validation);
  Network actor(cfg.actor_spec(side));
  Network critic(cfg.critic_spec(side));
  AdamState actor_opt(actor.parameter_count()), critic_opt(critic.parameter_count());

  std::filesystem::create_directories(opts.out_dir);
  const auto metrics_path = opts.out_dir / "metrics.jsonl";
  nlohmann::json resolved = to_json(cfg);
  resolved["derived"] = {{"patch_side", side},
                         {"actor", to_json(actor.spec())},
                         {"critic", to_json(critic.spec())}};
  {
    std::ofstream out(opts.out_dir / "resolved_config.json");
    if (!out) throw DataError("cannot write into " + opts.out_dir.string());
    out << resolved.dump(2) << '\n';
  }

  auto save = [&](int n) {
    Checkpoint ck;
    ck.update = n;
    ck.actor_spec = actor.spec();
    ck.critic_spec = critic.spec();
    ck.actor_params.assign(actor.parameters().begin(), actor.parameters().end());
    ck.critic_params.assign(critic.parameters().begin(), critic.parameters().end());
    ck.actor_opt = actor_opt;
    ck.critic_opt = critic_opt;
    ck.extra = resolved;
    save_checkpoint(ck, checkpoint_path(opts.out_dir, n));
  };

  TrainResult result;
  const std::optional<int> latest = opts.resume ? latest_checkpoint(opts.out_dir) : std::nullopt;
  if (latest) {
    const Checkpoint ck = load_checkpoint(checkpoint_path(opts.out_dir, *latest));
    if (ck.actor_spec != actor.spec() || ck.critic_spec != critic.spec()) {
      throw ConfigError("resume: checkpoint network specs differ from the current config");
    }
    std::copy(ck.actor_params.begin(), ck.actor_params.end(), actor.parameters().begin());
    std::copy(ck.critic_params.begin(), ck.critic_params.end(), critic.parameters().begin());
    actor_opt = ck.actor_opt;
    critic_opt = ck.critic_opt;
    result.first_update = ck.update;
    result.last_checkpoint = ck.update;
    truncate_lines(metrics_path, static_cast<std::size_t>(ck.update));
  } else {
    Rng ra(derive_seed(cfg.train.seed, kActorInitStream));
    Rng rc(derive_seed(cfg.train.seed, kCriticInitStream));
    actor.initialize(ra);
    critic.initialize(rc);
    std::ofstream(metrics_path, std::ios::trunc).flush();
    save(0);
  }

  std::ofstream metrics(metrics_path, std::ios::app);
  if (!metrics) throw DataError("cannot append to " + metrics_path.string());
  for (int u = result.first_update; u < cfg.train.total_updates; ++u) {
    const auto t0 = std::chrono::steady_clock::now();
    RolloutBuffer buf = collect(cases, actor, critic, cfg, static_cast<std::uint64_t>(u),
                                opts.threads);
    compute_advantages(buf, cfg.train);
    const UpdateReport rep = ppo_update(buf, actor, critic, actor_opt, critic_opt, cfg.train,
                                        static_cast<std::uint64_t>(u), opts.threads);
    const int done_updates = u + 1;

    double reward_sum = 0.0, cov_sum = 0.0, len_sum = 0.0;
    for (const auto& ep : buf.episodes) {
      reward_sum += ep.total_reward;
      cov_sum += ep.coverage;
      len_sum += static_cast<double>(ep.steps.size());
    }
    const double ne = static_cast<double>(buf.episodes.size());
    nlohmann::ordered_json line;
    line["update"] = done_updates;
    line["episodes"] = buf.episodes.size();
    line["transitions"] = buf.transitions();
    line["mean_episode_reward"] = reward_sum / ne;
    line["mean_coverage"] = cov_sum / ne;
    line["mean_episode_length"] = len_sum / ne;
    line["actor_loss"] = rep.mean.actor_loss;
    line["critic_loss"] = rep.mean.critic_loss;
    line["entropy"] = rep.mean.entropy;
    line["ratio_mean"] = rep.mean.ratio_mean;
    line["clip_fraction"] = rep.mean.clip_fraction;
    line["first_ratio_max_dev"] = rep.first_ratio_max_dev;

    const bool last = done_updates == cfg.train.total_updates;
    if (cfg.train.eval_interval > 0 && !validation.empty() &&
        (done_updates % cfg.train.eval_interval == 0 || last)) {
      std::vector<double> lengths(validation.size(), 0.0), covs(validation.size(), 0.0);
      parallel_for(validation.size(), opts.threads, [&](std::size_t i) {
        const Environment env = run_deterministic_episode(validation[i], actor, cfg.env,
                                                          cfg.reward, StartMode::Pylorus);
        covs[i] = env.coverage();
        const auto& gt = validation[i]->tracking_case().gt_path;
        if (gt && gt->valid()) lengths[i] = max_tracked_length(env.tracked_path(), *gt);
      });
      line["val_mean_max_tracked_length"] = summarize(lengths).mean;
      line["val_mean_coverage"] = summarize(covs).mean;
    }
    line["seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    metrics << line.dump() << '\n';
    metrics.flush();
    if (done_updates % cfg.train.checkpoint_interval == 0 || last) {
      save(done_updates);
      result.last_checkpoint = done_updates;
    }
    if (opts.on_update) opts.on_update(line);
  }
  return result;
}

}  // namespace tubetrack
