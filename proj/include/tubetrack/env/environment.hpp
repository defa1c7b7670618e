#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tubetrack/geodesic/geodesic.hpp"
#include "tubetrack/grid/polyline.hpp"
#include "tubetrack/grid/volume.hpp"
#include "tubetrack/phantom/phantom.hpp"
#include "tubetrack/rng.hpp"
#include "tubetrack/wall/wall_filter.hpp"

namespace tubetrack {

enum class RewardMode { Gdt, EuclideanToGtPath };

struct RewardConfig {
  double r_val1 = 4.0;
  double r_val2 = 6.0;
  double r_final = 100.0;
  double theta = std::sqrt(300.0);  // max GDT gain per step, mm
  double cylinder_radius_mm = 6.0;
  int revisit_exclusion_steps = 2;
  RewardMode reward_mode = RewardMode::Gdt;

  void validate() const;
};

struct EnvConfig {
  double patch_size_mm = 60.0;
  double d_step_mm = 10.0;
  int max_steps = 800;
  double end_tolerance_mm = 10.0;
  double middle_start_prob = 0.3;

  void validate() const;
};

nlohmann::json to_json(const RewardConfig& c);
nlohmann::json to_json(const EnvConfig& c);
RewardConfig reward_config_from_json(const nlohmann::json& j);
EnvConfig env_config_from_json(const nlohmann::json& j);

// Per-case data derived once and shared read-only by all episodes.
struct PreparedCase {
  std::shared_ptr<const TrackingCase> source;
  RealVolume wall;
  MaskVolume gt_mask;            // thin GT-path voxels; all zero for SegmOnly
  RealVolume gdt_from[2];        // [0]: seeded at start_mm, [1]: at end_mm
  VoxelPoint end_voxel[2];       // start_mm, end_mm as voxels
  std::vector<std::size_t> middle_candidates;  // SegmOnly: segmentation with wall < 0.2
  std::size_t segmentation_voxels = 0;

  const TrackingCase& tracking_case() const { return *source; }
};

std::shared_ptr<const PreparedCase> prepare_case(std::shared_ptr<const TrackingCase> c,
                                                 const WallConfig& wall_cfg = {},
                                                 const GdtConfig& gdt_cfg = {});

inline constexpr float kMiddleStartMaxWall = 0.2f;

enum class DoneCause { ReachedEnd, LeftImage, MaxSteps, ZeroMove };
std::string to_string(DoneCause c);

// Which end an episode is seeded from; Middle picks a random end as the
// start end and a random interior point as the position.
enum class StartMode { Pylorus, End, Middle };
std::string to_string(StartMode m);
StartMode start_mode_from_string(const std::string& s);

// Test episodes additionally stop on a zero displacement.
enum class EpisodeKind { Train, Test };

// Alg.-1 reward for moving from p to next given the running GDT maximum.
// Pure: the caller owns the v_max update.
double compute_reward(const VoxelPoint& p, const VoxelPoint& next, double v_max,
                      const RealVolume& gdt, const RealVolume& wall, const MaskVolume& revisit,
                      const MaskVolume& segmentation, const RewardConfig& cfg);

// c * r_final when the end was reached, (c - 1) * r_final otherwise.
double final_reward(double coverage, bool reached_end, const RewardConfig& cfg);

// Decrease in distance to the GT path, in units of d_step, times r_val2, with
// the out-of-segmentation override. Throws ConfigError without a GT path.
double euclidean_reward_variant(const VoxelPoint& p, const VoxelPoint& next,
                                const TrackingCase& c, const RewardConfig& cfg,
                                const EnvConfig& env);

struct TraceStep {
  int step = 0;
  VoxelPoint position;  // after the move
  Vec3 position_mm;
  VoxelPoint action;
  double reward = 0.0;
  std::optional<DoneCause> done;
};

class Environment {
 public:
  Environment(std::shared_ptr<const PreparedCase> pc, EnvConfig env, RewardConfig reward,
              EpisodeKind kind = EpisodeKind::Train);

  int patch_side() const { return side_; }
  std::size_t patch_voxels() const { return static_cast<std::size_t>(side_) * side_ * side_; }

  // Observation layout: intensity, wall, cumulative path, GT path; the actor
  // reads the first three channels.
  void reset(StartMode mode, Rng& rng);
  // Draws the start mode the way training does: Middle with
  // middle_start_prob, otherwise one of the two ends uniformly.
  void reset_random(Rng& rng);

  struct StepResult {
    double reward = 0.0;
    std::optional<DoneCause> done;
  };
  // Throws ConfigError once the episode is done.
  StepResult step(const VoxelPoint& displacement);

  std::span<const float> actor_observation() const {
    return {obs_.data(), 3 * patch_voxels()};
  }
  std::span<const float> critic_observation() const { return obs_; }

  const VoxelPoint& position() const { return position_; }
  const std::vector<VoxelPoint>& visited_positions() const { return positions_; }
  const MaskVolume& visited_line_mask() const { return line_mask_; }
  const MaskVolume& cylinder_mask() const { return cylinder_mask_; }
  const MaskVolume& revisit_mask() const { return revisit_mask_; }
  const RealVolume& gdt() const { return pc_->gdt_from[start_end_]; }
  double v_max_gdt() const { return v_max_; }
  int steps() const { return step_; }
  std::optional<DoneCause> done() const { return done_; }
  int start_end() const { return start_end_; }
  const Vec3& far_end_mm() const { return far_end_mm_; }
  const PreparedCase& prepared() const { return *pc_; }
  const EnvConfig& env_config() const { return env_; }
  const RewardConfig& reward_config() const { return reward_; }

  // |cylinder_mask ∩ segmentation| / |segmentation|.
  double coverage() const;
  // Visited positions in mm, out-of-grid ones omitted.
  Polyline tracked_path() const;
  const std::vector<TraceStep>& trace() const { return trace_; }

 private:
  void assemble_observation();
  void extend_revisit_mask();

  std::shared_ptr<const PreparedCase> pc_;
  EnvConfig env_;
  RewardConfig reward_;
  EpisodeKind kind_;
  int side_ = 0;

  VoxelPoint position_;
  std::vector<VoxelPoint> positions_;
  MaskVolume line_mask_, cylinder_mask_, revisit_mask_;
  std::size_t revisit_positions_ = 0;  // positions folded into revisit_mask_
  double v_max_ = 0.0;
  int step_ = 0;
  int start_end_ = 0;
  Vec3 far_end_mm_;
  std::optional<DoneCause> done_;
  bool started_ = false;
  std::vector<float> obs_;
  std::vector<TraceStep> trace_;
};

// One JSON object per line: step, position (voxels and mm), action, reward,
// done.
void write_trace_jsonl(const std::vector<TraceStep>& trace, std::ostream& out);

}  // namespace tubetrack
