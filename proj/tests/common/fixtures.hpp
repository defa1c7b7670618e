#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "tubetrack/env/environment.hpp"
#include "tubetrack/phantom/phantom.hpp"
#include "tubetrack/ppo/ppo.hpp"

namespace tubetrack::testing {

// 64^3 grid, 250 mm tube: small enough for unit tests.
inline PhantomConfig small_config(std::uint64_t seed) {
  PhantomConfig cfg;
  cfg.grid_size = {64, 64, 64};
  cfg.target_length_mm = 250.0;
  cfg.seed = seed;
  return cfg;
}

inline std::shared_ptr<const PreparedCase> small_prepared(std::uint64_t seed, Annotation a) {
  return prepare_case(std::make_shared<const TrackingCase>(generate_case(small_config(seed), a)));
}

// 30 mm patches (side 19 at 1.5 mm) and a two-stage network: fast enough to
// train for a few hundred updates on one core.
inline RunConfig desk_run_config() {
  RunConfig rc;
  rc.env.patch_size_mm = 30.0;
  rc.env.max_steps = 60;
  rc.network.conv_stages = {{8, 2}, {16, 2}};
  rc.network.fc_widths = {64};
  rc.network.groups = 4;
  return rc;
}

// Settings for the 300-update learning run on 64^3 phantoms. gamma 0.9
// keeps the (c - 1) * r_final terminal penalty from making an early exit
// through the nearby grid border the best policy; value_scale lets the critic
// reach the return scale at this lr.
inline RunConfig learning_run_config() {
  RunConfig rc = desk_run_config();
  rc.train.gamma = 0.9;
  rc.train.value_scale = 100.0;
  rc.train.n_path_episodes = 8;
  rc.train.n_segm_episodes = 8;
  rc.train.total_updates = 300;
  rc.train.checkpoint_interval = 50;
  rc.train.eval_interval = 0;
  return rc;
}

inline CaseSets small_case_sets(std::uint64_t seed, int n_path, int n_segm) {
  CaseSets sets;
  for (int i = 0; i < n_path; ++i) {
    sets.path.push_back(small_prepared(seed + i, Annotation::PathAnnotated));
  }
  for (int i = 0; i < n_segm; ++i) {
    sets.segm.push_back(small_prepared(seed + 100 + i, Annotation::SegmOnly));
  }
  return sets;
}

struct RewardRow {
  std::string name;
  double got = 0.0;
  double expected = 0.0;
};

// One row per reward branch and a few combinations. Line from (2,2,2) to
// (6,2,2) covers five voxels; expected values are worked by hand with
// r_val1 4, r_val2 6, theta sqrt(300).
inline std::vector<RewardRow> reward_branch_table() {
  const RewardConfig cfg;
  const double theta = std::sqrt(300.0);
  const GridSize n{12, 5, 5};
  const VoxelPoint p{2, 2, 2}, next{6, 2, 2};
  struct Fixture {
    RealVolume gdt, wall;
    MaskVolume revisit, seg;
  };
  auto fresh = [&] {
    return Fixture{RealVolume(n, 1.0, 0.0f), RealVolume(n, 1.0, 0.0f), MaskVolume(n, 1.0, 0),
                   MaskVolume(n, 1.0, 1)};
  };
  auto eval = [&](const Fixture& f, double v_max, VoxelPoint to = {6, 2, 2}) {
    return compute_reward(p, to, v_max, f.gdt, f.wall, f.revisit, f.seg, cfg);
  };
  // Stores a GDT value at `next` and returns the running max that makes the
  // gain exactly `gain` in double. Valid for the v0 used below, where both
  // subtractions are exact.
  auto set_gain = [&](Fixture& f, double v0, double gain) {
    f.gdt[next] = static_cast<float>(v0 + gain);
    return static_cast<double>(f.gdt[next]) - gain;
  };
  std::vector<RewardRow> rows;

  Fixture f = fresh();
  rows.push_back({"zero action", eval(f, 20.0, p), -4.0});

  f = fresh();
  double vm = set_gain(f, 20.0, theta);
  rows.push_back({"gain = theta", eval(f, vm), 6.0});
  vm = set_gain(f, 10.0, theta / 2);
  rows.push_back({"gain = theta/2", eval(f, vm), 3.0});
  vm = set_gain(f, 20.0, 2 * theta);
  rows.push_back({"gain = 2 theta (abrupt)", eval(f, vm), -6.0});
  f.gdt[next] = 15.0f;
  rows.push_back({"below running max", eval(f, 20.0), 0.0});
  f.gdt[next] = 20.0f;
  rows.push_back({"equal to running max", eval(f, 20.0), 0.0});
  f.gdt[next] = std::numeric_limits<float>::infinity();
  rows.push_back({"non-finite GDT", eval(f, 20.0), 0.0});

  f = fresh();
  vm = set_gain(f, 10.0, theta / 2);
  for (int i = 2; i <= 6; ++i) f.wall(i, 2, 2) = 0.5f;
  rows.push_back({"gain theta/2, wall mean 0.5", eval(f, vm), 0.0});
  for (int i = 2; i <= 6; ++i) f.wall(i, 2, 2) = 0.0f;
  f.wall(3, 2, 2) = 1.0f;
  f.wall(5, 2, 2) = 1.0f;
  rows.push_back({"gain theta/2, wall mean 0.4", eval(f, vm), 3.0 - 2.4});
  f.wall(9, 2, 2) = 1.0f;  // off the line
  rows.push_back({"wall off the line ignored", eval(f, vm), 3.0 - 2.4});

  f = fresh();
  vm = set_gain(f, 10.0, theta / 2);
  f.revisit(4, 2, 2) = 1;
  rows.push_back({"revisit", eval(f, vm), -1.0});
  f.revisit(4, 2, 2) = 0;
  f.revisit(4, 3, 2) = 1;
  rows.push_back({"revisit mask beside the line", eval(f, vm), 3.0});
  f.revisit(2, 2, 2) = 1;
  rows.push_back({"revisit at the current position", eval(f, vm), -1.0});

  f = fresh();
  vm = set_gain(f, 20.0, 2 * theta);
  for (int i = 2; i <= 6; ++i) f.wall(i, 2, 2) = 1.0f;
  f.revisit(6, 2, 2) = 1;
  rows.push_back({"abrupt + full wall + revisit (lower bound)", eval(f, vm), -16.0});
  f.seg[next] = 0;
  rows.push_back({"same, landing outside segmentation", eval(f, vm), -4.0});

  f = fresh();
  vm = set_gain(f, 20.0, theta);
  f.seg[next] = 0;
  rows.push_back({"full gain but outside segmentation", eval(f, vm), -4.0});
  f = fresh();
  vm = set_gain(f, 20.0, theta);
  f.seg(4, 2, 2) = 0;
  rows.push_back({"segmentation gap mid-line only", eval(f, vm), 6.0});
  return rows;
}

}  // namespace tubetrack::testing
