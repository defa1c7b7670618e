#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "../common/fixtures.hpp"
#include "tubetrack/grid/patch.hpp"
#include "tubetrack/net/checkpoint.hpp"
#include "tubetrack/ppo/ppo.hpp"

using namespace tubetrack;
namespace fs = std::filesystem;

namespace {

NetworkSpec tiny(int in_ch, int outputs, double gain) {
  NetworkSpec s;
  s.input_channels = in_ch;
  s.patch_side = 5;
  s.conv_stages = {{4, 2}};
  s.fc_widths = {8};
  s.groups = 2;
  s.outputs = outputs;
  s.head_init_gain = gain;
  return s;
}

struct TinyBatch {
  Network actor{tiny(3, 6, 1.0)};
  Network critic{tiny(4, 1, 1.0)};
  std::vector<Transition> data;

  // Stored log-probs are the current ones shifted by `offsets`, so the ratios
  // are exp(-offset).
  explicit TinyBatch(std::vector<double> offsets, std::uint64_t seed = 5) {
    Rng rng(seed);
    actor.initialize(rng);
    critic.initialize(rng);
    for (double& p : actor.parameters()) p += 0.05 * rng.normal();
    Tape tape;
    for (double off : offsets) {
      Transition t;
      t.obs.resize(critic.input_size());
      for (float& x : t.obs) x = static_cast<float>(rng.uniform(-1.0, 1.0));
      t.action = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
      const auto raw =
          actor.forward(std::span<const float>(t.obs.data(), actor.input_size()), tape);
      t.log_prob = log_prob(BetaTriple::from_raw(std::vector<double>(raw.begin(), raw.end())),
                            t.action) + off;
      t.advantage = rng.normal();
      t.ret = rng.normal();
      data.push_back(std::move(t));
    }
  }
  std::vector<const Transition*> ptrs() const {
    std::vector<const Transition*> out;
    for (const auto& t : data) out.push_back(&t);
    return out;
  }
};

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

TrainOptions into(const fs::path& dir) {
  TrainOptions o;
  o.out_dir = dir;
  return o;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "tubetrack_unit" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("GAE hand example, one-step reduction and length check") {
  const auto g = compute_gae({1, 1}, {0.5, 0.5}, {false, true}, 0.99, 0.95);
  CHECK(g.advantages[0] == doctest::Approx(1.46525).epsilon(1e-14));
  CHECK(g.advantages[1] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(g.returns[0] == doctest::Approx(1.96525).epsilon(1e-14));
  const auto one = compute_gae({3.0}, {1.25}, {true}, 0.99, 0.95, 100.0);
  CHECK(one.advantages[0] == 1.75);
  CHECK_THROWS_AS(compute_gae({1, 2}, {1}, {false, true}, 0.99, 0.95), ConfigError);
}

TEST_CASE("GAE with lambda 1 equals the discounted Monte-Carlo advantage") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(30);
    const bool truncated = rng.bernoulli(0.5);
    std::vector<double> r(n), v(n);
    std::vector<bool> term(n, false);
    for (std::size_t t = 0; t < n; ++t) r[t] = rng.normal() * 5, v[t] = rng.normal() * 3;
    term[n - 1] = !truncated;
    const double boot = truncated ? rng.normal() : 0.0;
    const auto g = compute_gae(r, v, term, 0.99, 1.0, boot);
    for (std::size_t t = 0; t < n; ++t) {
      double ret = 0.0, disc = 1.0;
      for (std::size_t k = t; k < n; ++k) ret += disc * r[k], disc *= 0.99;
      ret += disc * boot;
      CHECK(std::abs(g.advantages[t] - (ret - v[t])) <= 1e-12 * std::max(1.0, std::abs(ret)));
    }
  }
}

TEST_CASE("advantages are normalised over the whole buffer") {
  RolloutBuffer buf;
  Rng rng(3);
  for (int e = 0; e < 4; ++e) {
    EpisodeRecord ep;
    const int n = 3 + e * 5;
    for (int t = 0; t < n; ++t) {
      Transition tr;
      tr.reward = rng.normal() * 10;
      tr.value = rng.normal();
      tr.terminal = t == n - 1 && e != 2;
      ep.steps.push_back(tr);
    }
    ep.bootstrap_value = e == 2 ? 4.0 : 0.0;
    buf.episodes.push_back(ep);
  }
  compute_advantages(buf, TrainConfig{});
  std::vector<double> a;
  for (const auto& ep : buf.episodes)
    for (const auto& t : ep.steps) a.push_back(t.advantage);
  const double mean = std::accumulate(a.begin(), a.end(), 0.0) / a.size();
  double var = 0.0;
  for (double x : a) var += (x - mean) * (x - mean);
  CHECK(std::abs(mean) < 1e-10);
  CHECK(std::abs(std::sqrt(var / a.size()) - 1.0) < 1e-10);
  // Returns come from the raw advantages.
  const auto& ep0 = buf.episodes[0].steps;
  const auto raw = compute_gae({ep0[0].reward, ep0[1].reward, ep0[2].reward},
                               {ep0[0].value, ep0[1].value, ep0[2].value}, {false, false, true},
                               0.99, 0.95);
  CHECK(ep0[0].ret == doctest::Approx(raw.returns[0]).epsilon(1e-14));
}

TEST_CASE("minibatch loss gradients match finite differences") {
  TinyBatch tb({0.0, 0.1, -0.15, 0.6, -0.7});
  TrainConfig cfg;
  cfg.entropy_coef = 0.01;
  cfg.value_scale = 3.0;
  std::vector<double> ga(tb.actor.parameter_count(), 0.0), gc(tb.critic.parameter_count(), 0.0);
  const auto rep = minibatch_loss(tb.ptrs(), tb.actor, tb.critic, cfg, &ga, &gc);
  CHECK(rep.clip_fraction == doctest::Approx(0.4));

  auto check = [&](Network& net, const std::vector<double>& grad, bool actor_side) {
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t i = 0; i < net.parameter_count(); ++i) {
      const double saved = net.parameters()[i];
      net.parameters()[i] = saved + h;
      const auto up = minibatch_loss(tb.ptrs(), tb.actor, tb.critic, cfg, nullptr, nullptr);
      net.parameters()[i] = saved - h;
      const auto dn = minibatch_loss(tb.ptrs(), tb.actor, tb.critic, cfg, nullptr, nullptr);
      net.parameters()[i] = saved;
      const double fd = actor_side ? (up.actor_loss - dn.actor_loss) / (2 * h)
                                   : (up.critic_loss - dn.critic_loss) / (2 * h);
      const double err = std::abs(fd - grad[i]);
      if (err > 1e-8) worst = std::max(worst, err / (std::abs(fd) + std::abs(grad[i])));
    }
    return worst;
  };
  CHECK(check(tb.actor, ga, true) < 1e-4);
  CHECK(check(tb.critic, gc, false) < 1e-4);

  // Same result with threads.
  std::vector<double> ga2(ga.size(), 0.0);
  const auto rep2 = minibatch_loss(tb.ptrs(), tb.actor, tb.critic, cfg, &ga2, nullptr, 3);
  CHECK(rep2.actor_loss == rep.actor_loss);
  CHECK(ga2 == ga);
}

TEST_CASE("zero advantages leave only the entropy gradient") {
  TinyBatch tb({0.0, 0.3, -0.3, 0.05});
  for (auto& t : tb.data) t.advantage = 0.0;
  TrainConfig cfg;
  std::vector<double> ga(tb.actor.parameter_count(), 0.0);
  minibatch_loss(tb.ptrs(), tb.actor, tb.critic, cfg, &ga, nullptr);

  std::vector<double> expect(ga.size(), 0.0);
  Tape tape;
  for (const auto& t : tb.data) {
    const auto raw_span =
        tb.actor.forward(std::span<const float>(t.obs.data(), tb.actor.input_size()), tape);
    const std::vector<double> raw(raw_span.begin(), raw_span.end());
    BetaGrad eg = entropy_grad(BetaTriple::from_raw(raw));
    for (int ax = 0; ax < 3; ++ax) {
      eg.d_alpha[ax] *= -cfg.entropy_coef / tb.data.size();
      eg.d_beta[ax] *= -cfg.entropy_coef / tb.data.size();
    }
    std::vector<double> d_raw(6);
    beta_grad_to_raw(raw, eg, d_raw);
    tb.actor.backward(tape, d_raw, expect);
  }
  for (std::size_t i = 0; i < ga.size(); ++i) {
    CHECK(ga[i] == doctest::Approx(expect[i]).epsilon(1e-12).scale(1e-15));
  }
}

TEST_CASE("without clipping the surrogate is the importance-weighted policy gradient") {
  TinyBatch tb({0.0, 0.9, -0.8, 0.4});
  TrainConfig cfg;
  cfg.clip_epsilon = 1e12;
  const auto rep = minibatch_loss(tb.ptrs(), tb.actor, tb.critic, cfg, nullptr, nullptr);
  double expect = 0.0;
  Tape tape;
  for (const auto& t : tb.data) {
    const auto raw =
        tb.actor.forward(std::span<const float>(t.obs.data(), tb.actor.input_size()), tape);
    const BetaTriple bt = BetaTriple::from_raw(std::vector<double>(raw.begin(), raw.end()));
    expect += -std::exp(log_prob(bt, t.action) - t.log_prob) * t.advantage -
              cfg.entropy_coef * entropy(bt);
  }
  CHECK(rep.actor_loss == doctest::Approx(expect / tb.data.size()).epsilon(1e-12));
  CHECK(rep.clip_fraction == 0.0);
}

TEST_CASE("collect: counts, zero GT channel for segmentation cases, determinism") {
  RunConfig rc = testing::desk_run_config();
  rc.env.max_steps = 25;
  const CaseSets sets = testing::small_case_sets(40, 1, 1);
  const int side = patch_side(rc.env.patch_size_mm, 1.5);
  Network actor(rc.actor_spec(side)), critic(rc.critic_spec(side));
  Rng init(1);
  actor.initialize(init);
  critic.initialize(init);

  const RolloutBuffer a = collect(sets, actor, critic, rc, 0, 1);
  const RolloutBuffer b = collect(sets, actor, critic, rc, 0, 2);
  REQUIRE(a.episodes.size() == 4);
  const std::size_t n = static_cast<std::size_t>(side) * side * side;
  for (std::size_t e = 0; e < 4; ++e) {
    const auto& ep = a.episodes[e];
    CHECK(ep.annotation == (e < 2 ? Annotation::PathAnnotated : Annotation::SegmOnly));
    REQUIRE_FALSE(ep.steps.empty());
    CHECK(ep.cause.has_value());
    for (std::size_t t = 0; t + 1 < ep.steps.size(); ++t) CHECK_FALSE(ep.steps[t].terminal);
    CHECK(ep.steps.back().terminal == (*ep.cause != DoneCause::MaxSteps));
    if (ep.annotation == Annotation::SegmOnly) {
      for (const auto& t : ep.steps)
        CHECK(std::all_of(t.obs.begin() + 3 * n, t.obs.end(), [](float x) { return x == 0.0f; }));
    }
    REQUIRE(b.episodes[e].steps.size() == ep.steps.size());
    for (std::size_t t = 0; t < ep.steps.size(); ++t) {
      CHECK(b.episodes[e].steps[t].action == ep.steps[t].action);
      CHECK(b.episodes[e].steps[t].reward == ep.steps[t].reward);
      CHECK(b.episodes[e].steps[t].obs == ep.steps[t].obs);
    }
  }
  CHECK(a.transitions() == std::accumulate(a.episodes.begin(), a.episodes.end(), std::size_t{0},
                                           [](std::size_t s, const EpisodeRecord& e) {
                                             return s + e.steps.size();
                                           }));
  RunConfig bad = rc;
  CHECK_THROWS_AS(collect(CaseSets{}, actor, critic, bad, 0, 1), ConfigError);
}

TEST_CASE("first minibatch of an update sees unit ratios") {
  RunConfig rc = testing::desk_run_config();
  rc.env.max_steps = 20;
  const CaseSets sets = testing::small_case_sets(50, 1, 1);
  const int side = patch_side(rc.env.patch_size_mm, 1.5);
  Network actor(rc.actor_spec(side)), critic(rc.critic_spec(side));
  Rng init(2);
  actor.initialize(init);
  critic.initialize(init);
  RolloutBuffer buf = collect(sets, actor, critic, rc, 0, 1);
  compute_advantages(buf, rc.train);
  AdamState ao(actor.parameter_count()), co(critic.parameter_count());
  const std::vector<double> before(actor.parameters().begin(), actor.parameters().end());
  const UpdateReport rep = ppo_update(buf, actor, critic, ao, co, rc.train, 0, 1);
  CHECK(rep.first_ratio_max_dev < 1e-10);
  CHECK(rep.minibatches > 0);
  CHECK(ao.step == rep.minibatches);
  CHECK_FALSE(std::equal(before.begin(), before.end(), actor.parameters().begin()));
}

TEST_CASE("train: zero updates, checkpoints, metrics and resume") {
  RunConfig rc = testing::desk_run_config();
  rc.env.max_steps = 15;
  rc.train.n_path_episodes = 1;
  rc.train.n_segm_episodes = 1;
  rc.train.epochs_per_update = 2;
  rc.train.checkpoint_interval = 2;
  rc.train.eval_interval = 2;
  const CaseSets sets = testing::small_case_sets(60, 1, 1);
  const std::vector<std::shared_ptr<const PreparedCase>> val{sets.path[0]};

  rc.train.total_updates = 0;
  const auto d0 = scratch("train0");
  train(rc, sets, val, into(d0));
  CHECK(fs::exists(d0 / "checkpoint_0.json"));
  CHECK(fs::exists(d0 / "checkpoint_0.bin"));
  CHECK(fs::exists(d0 / "resolved_config.json"));
  CHECK_FALSE(fs::exists(d0 / "checkpoint_1.json"));
  CHECK(read_lines(d0 / "metrics.jsonl").empty());

  rc.train.total_updates = 5;
  const auto full = scratch("train_full");
  train(rc, sets, val, into(full));
  const auto lines = read_lines(full / "metrics.jsonl");
  REQUIRE(lines.size() == 5);
  for (int n : {0, 2, 4, 5}) CHECK(fs::exists(checkpoint_path(full, n)));
  CHECK_FALSE(fs::exists(checkpoint_path(full, 3)));
  const auto first = nlohmann::json::parse(lines[0]);
  CHECK(first["update"] == 1);
  CHECK(first["first_ratio_max_dev"].get<double>() < 1e-10);
  CHECK(nlohmann::json::parse(lines[1]).contains("val_mean_max_tracked_length"));

  // Stop after 3 updates, then resume to 5: same final parameters.
  const auto part = scratch("train_resume");
  rc.train.total_updates = 3;
  train(rc, sets, val, into(part));
  rc.train.total_updates = 5;
  TrainOptions opts = into(part);
  opts.resume = true;
  const TrainResult res = train(rc, sets, val, opts);
  CHECK(res.first_update == 3);
  CHECK(read_lines(part / "metrics.jsonl").size() == 5);
  const Checkpoint a = load_checkpoint(checkpoint_path(full, 5));
  const Checkpoint b = load_checkpoint(checkpoint_path(part, 5));
  CHECK(a.actor_params == b.actor_params);
  CHECK(a.critic_params == b.critic_params);
  CHECK(a.actor_opt.m == b.actor_opt.m);
}

TEST_CASE("single-stream training runs") {
  RunConfig rc = testing::desk_run_config();
  rc.env.max_steps = 10;
  rc.train.total_updates = 1;
  rc.train.epochs_per_update = 1;
  for (int path_only = 0; path_only < 2; ++path_only) {
    rc.train.n_path_episodes = path_only ? 2 : 0;
    rc.train.n_segm_episodes = path_only ? 0 : 2;
    const CaseSets sets = path_only ? testing::small_case_sets(70, 1, 0)
                                    : testing::small_case_sets(70, 0, 1);
    const auto dir = scratch("single" + std::to_string(path_only));
    train(rc, sets, {}, into(dir));
    CHECK(read_lines(dir / "metrics.jsonl").size() == 1);
  }
}

TEST_CASE("run config JSON") {
  const RunConfig rc = testing::desk_run_config();
  const auto j = to_json(rc);
  const RunConfig back = run_config_from_json(j);
  CHECK(back.env.patch_size_mm == 30.0);
  CHECK(back.network.conv_stages == rc.network.conv_stages);
  CHECK(back.train.lr == 3e-4);
  CHECK(back.train.value_scale == rc.train.value_scale);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"train", {{"value_scale", 0}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"train", {{"lrr", 1}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"bogus", {}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"train", {{"gamma", 1.5}}}}), ConfigError);
}
