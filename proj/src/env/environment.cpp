#include "tubetrack/env/environment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tubetrack/config_json.hpp"
#include "tubetrack/errors.hpp"
#include "tubetrack/grid/cylinder.hpp"
#include "tubetrack/grid/line.hpp"
#include "tubetrack/grid/patch.hpp"

namespace tubetrack {

void RewardConfig::validate() const {
  if (!(r_val1 > 0.0 && r_val2 > 0.0 && r_final > 0.0 && theta > 0.0)) {
    throw ConfigError("reward: r_val1, r_val2, r_final and theta must be positive");
  }
  if (!(cylinder_radius_mm > 0.0)) throw ConfigError("reward: cylinder_radius_mm must be positive");
  if (revisit_exclusion_steps < 0) {
    throw ConfigError("reward: revisit_exclusion_steps must be non-negative");
  }
}

void EnvConfig::validate() const {
  if (!(patch_size_mm > 0.0 && d_step_mm > 0.0 && end_tolerance_mm > 0.0) || max_steps <= 0) {
    throw ConfigError("env: patch_size_mm, d_step_mm, max_steps and end_tolerance_mm must be positive");
  }
  if (!(middle_start_prob >= 0.0 && middle_start_prob <= 1.0)) {
    throw ConfigError("env: middle_start_prob must lie in [0, 1]");
  }
}

nlohmann::json to_json(const RewardConfig& c) {
  return {{"r_val1", c.r_val1},
          {"r_val2", c.r_val2},
          {"r_final", c.r_final},
          {"theta", c.theta},
          {"cylinder_radius_mm", c.cylinder_radius_mm},
          {"revisit_exclusion_steps", c.revisit_exclusion_steps},
          {"reward_mode", c.reward_mode == RewardMode::Gdt ? "gdt" : "euclidean"}};
}

nlohmann::json to_json(const EnvConfig& c) {
  return {{"patch_size_mm", c.patch_size_mm},
          {"d_step_mm", c.d_step_mm},
          {"max_steps", c.max_steps},
          {"end_tolerance_mm", c.end_tolerance_mm},
          {"middle_start_prob", c.middle_start_prob}};
}

RewardConfig reward_config_from_json(const nlohmann::json& j) {
  const std::string sec = "reward";
  require_known_keys(j, {"r_val1", "r_val2", "r_final", "theta", "cylinder_radius_mm",
                         "revisit_exclusion_steps", "reward_mode"},
                     sec);
  RewardConfig c;
  read_optional(j, "r_val1", c.r_val1, sec);
  read_optional(j, "r_val2", c.r_val2, sec);
  read_optional(j, "r_final", c.r_final, sec);
  read_optional(j, "theta", c.theta, sec);
  read_optional(j, "cylinder_radius_mm", c.cylinder_radius_mm, sec);
  read_optional(j, "revisit_exclusion_steps", c.revisit_exclusion_steps, sec);
  std::string mode = "gdt";
  read_optional(j, "reward_mode", mode, sec);
  if (mode == "gdt") {
    c.reward_mode = RewardMode::Gdt;
  } else if (mode == "euclidean") {
    c.reward_mode = RewardMode::EuclideanToGtPath;
  } else {
    throw ConfigError("reward.reward_mode: expected 'gdt' or 'euclidean', got '" + mode + "'");
  }
  c.validate();
  return c;
}

EnvConfig env_config_from_json(const nlohmann::json& j) {
  const std::string sec = "env";
  require_known_keys(j, {"patch_size_mm", "d_step_mm", "max_steps", "end_tolerance_mm",
                         "middle_start_prob"},
                     sec);
  EnvConfig c;
  read_optional(j, "patch_size_mm", c.patch_size_mm, sec);
  read_optional(j, "d_step_mm", c.d_step_mm, sec);
  read_optional(j, "max_steps", c.max_steps, sec);
  read_optional(j, "end_tolerance_mm", c.end_tolerance_mm, sec);
  read_optional(j, "middle_start_prob", c.middle_start_prob, sec);
  c.validate();
  return c;
}

std::string to_string(DoneCause c) {
  switch (c) {
    case DoneCause::ReachedEnd: return "reached_end";
    case DoneCause::LeftImage: return "left_image";
    case DoneCause::MaxSteps: return "max_steps";
    case DoneCause::ZeroMove: return "zero_move";
  }
  return "unknown";
}

std::string to_string(StartMode m) {
  switch (m) {
    case StartMode::Pylorus: return "pylorus";
    case StartMode::End: return "end";
    case StartMode::Middle: return "middle";
  }
  return "unknown";
}

StartMode start_mode_from_string(const std::string& s) {
  if (s == "pylorus") return StartMode::Pylorus;
  if (s == "end") return StartMode::End;
  if (s == "middle") return StartMode::Middle;
  throw ConfigError("start must be 'pylorus', 'end' or 'middle', got '" + s + "'");
}

std::shared_ptr<const PreparedCase> prepare_case(std::shared_ptr<const TrackingCase> c,
                                                 const WallConfig& wall_cfg,
                                                 const GdtConfig& gdt_cfg) {
  auto pc = std::make_shared<PreparedCase>();
  const TrackingCase& tc = *c;
  pc->source = std::move(c);
  pc->wall = meijering_wall_response(tc.intensity, wall_cfg);
  pc->gt_mask = MaskVolume::like(tc.segmentation);
  if (tc.annotation == Annotation::PathAnnotated) {
    if (!tc.gt_path || tc.gt_path->empty()) throw DataError("path-annotated case without a GT path");
    const auto& pts = tc.gt_path->points();
    VoxelPoint prev = tc.segmentation.to_voxel(pts.front());
    for (const auto& p : pts) {
      const VoxelPoint v = tc.segmentation.to_voxel(p);
      for (const auto& q : line_voxels(prev, v)) {
        if (pc->gt_mask.contains(q)) pc->gt_mask[q] = 1;
      }
      prev = v;
    }
  }
  pc->end_voxel[0] = tc.segmentation.to_voxel(tc.start_mm);
  pc->end_voxel[1] = tc.segmentation.to_voxel(tc.end_mm);
  GdtConfig g = gdt_cfg;
  g.cell_length = tc.spacing_mm();
  for (int e = 0; e < 2; ++e) {
    if (!tc.segmentation.contains(pc->end_voxel[e])) {
      throw DataError("case endpoint lies outside the grid");
    }
    pc->gdt_from[e] = gdt_for_case(tc, pc->end_voxel[e], g);
  }
  const auto seg = tc.segmentation.data();
  const auto wall = pc->wall.data();
  for (std::size_t i = 0; i < seg.size(); ++i) {
    if (!seg[i]) continue;
    ++pc->segmentation_voxels;
    if (wall[i] < kMiddleStartMaxWall) pc->middle_candidates.push_back(i);
  }
  if (pc->segmentation_voxels == 0) throw DataError("case has an empty segmentation");
  return pc;
}

double compute_reward(const VoxelPoint& p, const VoxelPoint& next, double v_max,
                      const RealVolume& gdt, const RealVolume& wall, const MaskVolume& revisit,
                      const MaskVolume& segmentation, const RewardConfig& cfg) {
  if (p == next) return -cfg.r_val1;
  double r = 0.0;
  const double v = gdt.at_or(next, std::numeric_limits<float>::infinity());
  if (std::isfinite(v) && v > v_max) {
    const double delta = v - v_max;
    r = delta > cfg.theta ? -cfg.r_val2 : delta / cfg.theta * cfg.r_val2;
  }
  const auto line = line_voxels(p, next);
  double wall_sum = 0.0;
  bool revisited = false;
  for (const auto& q : line) {
    if (!wall.contains(q)) continue;
    wall_sum += wall[q];
    revisited = revisited || revisit[q] != 0;
  }
  r -= wall_sum / static_cast<double>(line.size()) * cfg.r_val2;
  if (revisited) r -= cfg.r_val1;
  if (!segmentation.at_or(next, 0)) r = -cfg.r_val1;
  return r;
}

double final_reward(double coverage, bool reached_end, const RewardConfig& cfg) {
  if (!(coverage >= 0.0 && coverage <= 1.0)) {
    throw NumericError("coverage " + std::to_string(coverage) + " outside [0, 1]");
  }
  return reached_end ? coverage * cfg.r_final : (coverage - 1.0) * cfg.r_final;
}

double euclidean_reward_variant(const VoxelPoint& p, const VoxelPoint& next,
                                const TrackingCase& c, const RewardConfig& cfg,
                                const EnvConfig& env) {
  if (!c.gt_path || !c.gt_path->valid()) {
    throw ConfigError("the Euclidean reward needs a GT path; the case is segmentation-only");
  }
  if (!c.segmentation.at_or(next, 0)) return -cfg.r_val1;
  const double d0 = c.gt_path->project(c.segmentation.to_mm(p)).distance;
  const double d1 = c.gt_path->project(c.segmentation.to_mm(next)).distance;
  return (d0 - d1) / env.d_step_mm * cfg.r_val2;
}

Environment::Environment(std::shared_ptr<const PreparedCase> pc, EnvConfig env,
                         RewardConfig reward, EpisodeKind kind)
    : pc_(std::move(pc)), env_(env), reward_(reward), kind_(kind) {
  env_.validate();
  reward_.validate();
  const TrackingCase& tc = pc_->tracking_case();
  if (reward_.reward_mode == RewardMode::EuclideanToGtPath &&
      (!tc.gt_path || !tc.gt_path->valid())) {
    throw ConfigError("the Euclidean reward needs a GT path; the case is segmentation-only");
  }
  side_ = tubetrack::patch_side(env_.patch_size_mm, tc.spacing_mm());
  obs_.assign(4 * patch_voxels(), 0.0f);
}

void Environment::reset_random(Rng& rng) {
  if (rng.bernoulli(env_.middle_start_prob)) {
    reset(StartMode::Middle, rng);
  } else {
    reset(rng.bernoulli(0.5) ? StartMode::End : StartMode::Pylorus, rng);
  }
}

void Environment::reset(StartMode mode, Rng& rng) {
  const TrackingCase& tc = pc_->tracking_case();
  if (mode == StartMode::Middle) {
    start_end_ = rng.bernoulli(0.5) ? 1 : 0;
    if (tc.annotation == Annotation::PathAnnotated && tc.gt_path && !tc.gt_path->empty()) {
      const auto& pts = tc.gt_path->points();
      position_ = tc.segmentation.to_voxel(pts[rng.below(pts.size())]);
    } else {
      if (pc_->middle_candidates.empty()) {
        throw DataError("no non-wall segmentation voxel available for a middle start");
      }
      position_ = tc.segmentation.point(
          pc_->middle_candidates[rng.below(pc_->middle_candidates.size())]);
    }
  } else {
    start_end_ = mode == StartMode::End ? 1 : 0;
    position_ = pc_->end_voxel[start_end_];
  }
  far_end_mm_ = start_end_ == 0 ? tc.end_mm : tc.start_mm;

  line_mask_ = MaskVolume::like(tc.segmentation);
  cylinder_mask_ = MaskVolume::like(tc.segmentation);
  revisit_mask_ = MaskVolume::like(tc.segmentation);
  revisit_positions_ = 0;
  positions_.assign(1, position_);
  if (line_mask_.contains(position_)) line_mask_[position_] = 1;
  const Vec3 p_mm = tc.segmentation.to_mm(position_);
  add_capsule(cylinder_mask_, p_mm, p_mm, reward_.cylinder_radius_mm);

  const float g = gdt().at_or(position_, std::numeric_limits<float>::infinity());
  v_max_ = std::isfinite(g) ? g : 0.0;
  step_ = 0;
  done_.reset();
  started_ = true;
  trace_.clear();
  assemble_observation();
}

void Environment::extend_revisit_mask() {
  // Positions p_0 .. p_{t-k} contribute; the k most recent moves are exempt.
  const long t = step_;
  const long upto = t - reward_.revisit_exclusion_steps;
  const double s = pc_->tracking_case().spacing_mm();
  auto mm = [s](const VoxelPoint& v) { return Vec3{v.i * s, v.j * s, v.k * s}; };
  while (static_cast<long>(revisit_positions_) <= upto) {
    const std::size_t n = revisit_positions_;
    const Vec3 b = mm(positions_[n]);
    const Vec3 a = n == 0 ? b : mm(positions_[n - 1]);
    add_capsule(revisit_mask_, a, b, reward_.cylinder_radius_mm);
    ++revisit_positions_;
  }
}

Environment::StepResult Environment::step(const VoxelPoint& displacement) {
  if (!started_) throw ConfigError("environment: step before reset");
  if (done_) throw ConfigError("environment: step on a finished episode");
  const TrackingCase& tc = pc_->tracking_case();
  const VoxelPoint next = position_ + displacement;
  extend_revisit_mask();

  StepResult res;
  const bool inside = tc.segmentation.contains(next);
  if (!inside) {
    res.reward = -reward_.r_val1;
  } else if (reward_.reward_mode == RewardMode::EuclideanToGtPath) {
    res.reward = displacement == VoxelPoint{} ? 0.0
                                              : euclidean_reward_variant(position_, next, tc,
                                                                         reward_, env_);
  } else {
    res.reward = compute_reward(position_, next, v_max_, gdt(), pc_->wall, revisit_mask_,
                                tc.segmentation, reward_);
  }

  for (const auto& q : line_voxels(position_, next)) {
    if (line_mask_.contains(q)) line_mask_[q] = 1;
  }
  add_capsule(cylinder_mask_, tc.segmentation.to_mm(position_), tc.segmentation.to_mm(next),
              reward_.cylinder_radius_mm);
  const float g = gdt().at_or(next, std::numeric_limits<float>::infinity());
  if (std::isfinite(g) && g > v_max_) v_max_ = g;
  position_ = next;
  positions_.push_back(next);
  ++step_;

  if (!inside) {
    res.done = DoneCause::LeftImage;
  } else if (distance(tc.segmentation.to_mm(next), far_end_mm_) <= env_.end_tolerance_mm) {
    res.done = DoneCause::ReachedEnd;
  } else if (kind_ == EpisodeKind::Test && displacement == VoxelPoint{}) {
    res.done = DoneCause::ZeroMove;
  } else if (step_ >= env_.max_steps) {
    res.done = DoneCause::MaxSteps;
  }
  if (res.done) {
    res.reward += final_reward(coverage(), *res.done == DoneCause::ReachedEnd, reward_);
    done_ = res.done;
  }
  trace_.push_back({step_, position_, tc.segmentation.to_mm(position_), displacement, res.reward,
                    res.done});
  assemble_observation();
  return res;
}

void Environment::assemble_observation() {
  const std::size_t n = patch_voxels();
  std::span<float> out(obs_);
  extract_patch_into(pc_->tracking_case().intensity, position_, side_, out.subspan(0, n));
  extract_patch_into(pc_->wall, position_, side_, out.subspan(n, n));
  extract_patch_into(line_mask_, position_, side_, out.subspan(2 * n, n));
  extract_patch_into(pc_->gt_mask, position_, side_, out.subspan(3 * n, n));
}

double Environment::coverage() const {
  const auto seg = pc_->tracking_case().segmentation.data();
  const auto cyl = cylinder_mask_.data();
  std::size_t hit = 0;
  for (std::size_t i = 0; i < seg.size(); ++i) hit += (seg[i] && cyl[i]) ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(pc_->segmentation_voxels);
}

Polyline Environment::tracked_path() const {
  const auto& seg = pc_->tracking_case().segmentation;
  std::vector<Vec3> pts;
  for (const auto& p : positions_) {
    if (seg.contains(p)) pts.push_back(seg.to_mm(p));
  }
  return Polyline(std::move(pts));
}

void write_trace_jsonl(const std::vector<TraceStep>& trace, std::ostream& out) {
  for (const auto& t : trace) {
    nlohmann::json j = {{"step", t.step},
                        {"position", {t.position.i, t.position.j, t.position.k}},
                        {"position_mm", {t.position_mm.x, t.position_mm.y, t.position_mm.z}},
                        {"action", {t.action.i, t.action.j, t.action.k}},
                        {"reward", t.reward},
                        {"done", t.done ? nlohmann::json(to_string(*t.done)) : nlohmann::json()}};
    out << j.dump() << '\n';
  }
}

}  // namespace tubetrack
