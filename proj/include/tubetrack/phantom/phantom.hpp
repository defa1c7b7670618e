#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "tubetrack/errors.hpp"
#include "tubetrack/grid/polyline.hpp"
#include "tubetrack/grid/volume.hpp"
#include "tubetrack/rng.hpp"

namespace tubetrack {

struct PhantomConfig {
  GridSize grid_size{96, 96, 96};
  double spacing_mm = 1.5;
  double tube_radius_mm = 6.0;
  double wall_thickness_mm = 1.5;
  double target_length_mm = 400.0;
  double min_fold_gap_mm = 0.0;
  double lumen_intensity = 1.0;
  double wall_intensity = 0.2;
  double background_intensity = 0.5;
  double noise_sigma = 0.02;
  std::uint64_t seed = 0;

  // Throws ConfigError on violated invariants.
  void validate() const;

  double clearance_mm() const { return 2.0 * tube_radius_mm + min_fold_gap_mm; }
  // Two centreline points are "adjacent" (same fold) when their arc-length
  // separation is below this window; clearance applies to all other pairs.
  double adjacency_window_mm() const;
};

nlohmann::json to_json(const PhantomConfig& cfg);
PhantomConfig phantom_config_from_json(const nlohmann::json& j);

enum class Annotation { PathAnnotated, SegmOnly };

std::string to_string(Annotation a);
Annotation annotation_from_string(const std::string& s);

struct TrackingCase {
  RealVolume intensity;
  MaskVolume segmentation;
  std::optional<Polyline> gt_path;
  Vec3 start_mm;
  Vec3 end_mm;
  Annotation annotation = Annotation::SegmOnly;
  PhantomConfig config;

  double spacing_mm() const { return segmentation.spacing_mm(); }
  const GridSize& sizes() const { return segmentation.sizes(); }
};

class PackingError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Self-avoiding smooth (Catmull-Rom) centreline packed into the grid. Every
// pair of centreline samples further apart than the adjacency window along
// the curve is at least clearance_mm() apart in space; the dilated tube stays
// inside the grid. Throws PackingError after bounded retries.
Polyline generate_centerline(const PhantomConfig& cfg, Rng& rng);

TrackingCase rasterize_case(const Polyline& centerline, const PhantomConfig& cfg,
                            Annotation annotation, Rng& rng);

// generate_centerline + rasterize_case with an Rng seeded from cfg.seed.
TrackingCase generate_case(const PhantomConfig& cfg, Annotation annotation);

// Directory layout: intensity.nrrd, segmentation.nrrd, gt_path.json (path
// annotated only), meta.json.
void save_case(const TrackingCase& c, const std::filesystem::path& dir);
TrackingCase load_case(const std::filesystem::path& dir);

}  // namespace tubetrack
