#include "tubetrack/phantom/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <vector>

#include "tubetrack/config_json.hpp"
#include "tubetrack/grid/cylinder.hpp"
#include "tubetrack/grid/io.hpp"

namespace tubetrack {

void PhantomConfig::validate() const {
  for (int s : grid_size) {
    if (s <= 0) throw ConfigError("phantom: grid_size entries must be positive");
  }
  if (!(spacing_mm > 0.0)) throw ConfigError("phantom: spacing_mm must be positive");
  if (!(wall_thickness_mm > 0.0) || !(tube_radius_mm > wall_thickness_mm)) {
    throw ConfigError("phantom: need tube_radius_mm > wall_thickness_mm > 0");
  }
  if (!(target_length_mm > 0.0)) throw ConfigError("phantom: target_length_mm must be positive");
  if (min_fold_gap_mm < 0.0) throw ConfigError("phantom: min_fold_gap_mm must be >= 0");
  if (!(lumen_intensity > background_intensity && background_intensity > wall_intensity)) {
    throw ConfigError("phantom: need lumen > background > wall intensity");
  }
  if (noise_sigma < 0.0) throw ConfigError("phantom: noise_sigma must be >= 0");
}

double PhantomConfig::adjacency_window_mm() const {
  return std::numbers::pi * 0.5 * clearance_mm();
}

nlohmann::json to_json(const PhantomConfig& c) {
  return {{"grid_size", c.grid_size},
          {"spacing_mm", c.spacing_mm},
          {"tube_radius_mm", c.tube_radius_mm},
          {"wall_thickness_mm", c.wall_thickness_mm},
          {"target_length_mm", c.target_length_mm},
          {"min_fold_gap_mm", c.min_fold_gap_mm},
          {"lumen_intensity", c.lumen_intensity},
          {"wall_intensity", c.wall_intensity},
          {"background_intensity", c.background_intensity},
          {"noise_sigma", c.noise_sigma},
          {"seed", c.seed}};
}

PhantomConfig phantom_config_from_json(const nlohmann::json& j) {
  const std::string sec = "phantom";
  require_known_keys(j,
                     {"grid_size", "spacing_mm", "tube_radius_mm", "wall_thickness_mm",
                      "target_length_mm", "min_fold_gap_mm", "lumen_intensity",
                      "wall_intensity", "background_intensity", "noise_sigma", "seed"},
                     sec);
  PhantomConfig c;
  if (j.contains("grid_size") && j["grid_size"].is_number_integer()) {
    const int n = j["grid_size"].get<int>();
    c.grid_size = {n, n, n};
  } else {
    read_optional(j, "grid_size", c.grid_size, sec);
  }
  read_optional(j, "spacing_mm", c.spacing_mm, sec);
  read_optional(j, "tube_radius_mm", c.tube_radius_mm, sec);
  read_optional(j, "wall_thickness_mm", c.wall_thickness_mm, sec);
  read_optional(j, "target_length_mm", c.target_length_mm, sec);
  read_optional(j, "min_fold_gap_mm", c.min_fold_gap_mm, sec);
  read_optional(j, "lumen_intensity", c.lumen_intensity, sec);
  read_optional(j, "wall_intensity", c.wall_intensity, sec);
  read_optional(j, "background_intensity", c.background_intensity, sec);
  read_optional(j, "noise_sigma", c.noise_sigma, sec);
  read_optional(j, "seed", c.seed, sec);
  c.validate();
  return c;
}

std::string to_string(Annotation a) {
  return a == Annotation::PathAnnotated ? "path" : "segm";
}

Annotation annotation_from_string(const std::string& s) {
  if (s == "path") return Annotation::PathAnnotated;
  if (s == "segm") return Annotation::SegmOnly;
  throw ConfigError("unknown annotation kind '" + s + "' (expected path|segm)");
}

namespace {

constexpr double kSampleStepMm = 0.5;
// Extra clearance demanded of point samples so that the true segment-to-segment
// distance of the dense polyline also meets the clearance.
constexpr double kClearanceMarginMm = 0.05;
constexpr double kMaxTurnRad = 50.0 * std::numbers::pi / 180.0;
constexpr int kCandidates = 24;
constexpr double kPackProbability = 0.6;
constexpr int kMaxBacktracks = 200;
constexpr int kMaxRestarts = 60;
// Curves whose closest non-adjacent approach is within this of the clearance
// count as touching. Valid curves without contact are retried this many times.
constexpr double kContactSlackMm = 0.5;
constexpr int kContactAttempts = 24;

struct Sample {
  Vec3 p;
  double arc;
};

Vec3 catmull_rom(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3,
                 double t) {
  const double t2 = t * t, t3 = t2 * t;
  return 0.5 * ((2.0 * p1) + (p2 - p0) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2 +
                (3.0 * p1 - p0 - 3.0 * p2 + p3) * t3);
}

Vec3 random_unit(Rng& rng) {
  for (;;) {
    Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    const double n = norm(v);
    if (n > 1e-9) return v * (1.0 / n);
  }
}

// Rotates `dir` by `angle` towards a random perpendicular direction.
Vec3 perturb(const Vec3& dir, double angle, Rng& rng) {
  Vec3 perp;
  do {
    perp = cross(dir, random_unit(rng));
  } while (norm(perp) < 1e-6);
  perp = normalized(perp);
  return normalized(dir * std::cos(angle) + perp * std::sin(angle));
}

class CenterlineBuilder {
 public:
  CenterlineBuilder(const PhantomConfig& cfg) : cfg_(cfg) {
    step_ = 1.5 * cfg.tube_radius_mm;
    margin_ = cfg.tube_radius_mm + cfg.spacing_mm;
    for (int ax = 0; ax < 3; ++ax) hi_[ax] = (cfg.grid_size[ax] - 1) * cfg.spacing_mm;
    min_dist2_ = std::pow(cfg.clearance_mm() + kClearanceMarginMm, 2);
    window_ = cfg.adjacency_window_mm();
  }

  bool inside(const Vec3& p) const {
    for (int ax = 0; ax < 3; ++ax) {
      if (p[ax] < margin_ || p[ax] > hi_[ax] - margin_) return false;
    }
    return true;
  }

  // Dense samples of segment i of `ctrl` (between ctrl[i] and ctrl[i+1]),
  // with phantom end points mirrored when neighbours are missing.
  std::vector<Vec3> segment_samples(const std::vector<Vec3>& ctrl, std::size_t i,
                                    bool include_end) const {
    const Vec3& p1 = ctrl[i];
    const Vec3& p2 = ctrl[i + 1];
    const Vec3 p0 = i > 0 ? ctrl[i - 1] : 2.0 * p1 - p2;
    const Vec3 p3 = i + 2 < ctrl.size() ? ctrl[i + 2] : 2.0 * p2 - p1;
    const int m = std::max(2, static_cast<int>(std::ceil(distance(p1, p2) / kSampleStepMm)));
    std::vector<Vec3> out;
    for (int s = 0; s < m; ++s) out.push_back(catmull_rom(p0, p1, p2, p3, double(s) / m));
    if (include_end) out.push_back(p2);
    return out;
  }

  // Smallest squared distance from `pts` (starting at arc `arc0`) to
  // committed samples that are outside the adjacency window; returns -1 when
  // any point leaves the grid margin.
  double proximity(const std::vector<Vec3>& pts, double arc0) const {
    double best = std::numeric_limits<double>::infinity();
    double arc = arc0;
    for (std::size_t a = 0; a < pts.size(); ++a) {
      if (a > 0) arc += distance(pts[a - 1], pts[a]);
      if (!inside(pts[a])) return -1.0;
      for (const auto& s : committed_) {
        if (arc - s.arc < window_) break;  // committed_ is sorted by arc
        const Vec3 d = pts[a] - s.p;
        best = std::min(best, dot(d, d));
      }
    }
    return best;
  }

  std::optional<Polyline> build(Rng& rng) {
    ctrl_.clear();
    committed_.clear();
    Vec3 start;
    for (int ax = 0; ax < 3; ++ax) start[ax] = rng.uniform(margin_, hi_[ax] - margin_);
    if (!inside(start)) return std::nullopt;
    ctrl_.push_back(start);
    Vec3 dir = random_unit(rng);
    int backtracks = 0;

    for (;;) {
      const double committed_arc = committed_.empty() ? 0.0 : committed_.back().arc;
      if (ctrl_.size() >= 2) {
        const auto tail = segment_samples(ctrl_, ctrl_.size() - 2, true);
        double tail_len = 0.0;
        for (std::size_t a = 1; a < tail.size(); ++a) tail_len += distance(tail[a - 1], tail[a]);
        if (committed_arc + tail_len >= cfg_.target_length_mm) break;
      }

      struct Candidate {
        Vec3 point, dir;
        double prox;
      };
      std::vector<Candidate> valid;
      for (int c = 0; c < kCandidates; ++c) {
        const double angle = ctrl_.size() == 1 ? 0.0 : rng.uniform(0.0, kMaxTurnRad);
        const Vec3 cdir = ctrl_.size() == 1 ? random_unit(rng) : perturb(dir, angle, rng);
        const Vec3 cand = ctrl_.back() + cdir * step_;
        auto trial = ctrl_;
        trial.push_back(cand);
        // Segment n-2 is finalised by this point; n-1 is provisional.
        std::vector<Vec3> fresh;
        if (trial.size() >= 3) fresh = segment_samples(trial, trial.size() - 3, false);
        const auto prov = segment_samples(trial, trial.size() - 2, true);
        fresh.insert(fresh.end(), prov.begin(), prov.end());
        const double arc0 =
            committed_.empty() ? 0.0 : committed_arc + distance(committed_.back().p, fresh.front());
        const double prox = proximity(fresh, arc0);
        if (prox < 0.0 || prox < min_dist2_) continue;
        valid.push_back({cand, cdir, prox});
      }

      if (valid.empty()) {
        if (++backtracks > kMaxBacktracks || ctrl_.size() < 3) return std::nullopt;
        ctrl_.pop_back();
        uncommit_last_segment();
        dir = normalized(ctrl_.back() - ctrl_[ctrl_.size() - 2]);
        continue;
      }
      std::size_t pick;
      if (rng.bernoulli(kPackProbability)) {
        pick = 0;
        for (std::size_t c = 1; c < valid.size(); ++c) {
          if (valid[c].prox < valid[pick].prox) pick = c;
        }
      } else {
        pick = rng.below(valid.size());
      }
      ctrl_.push_back(valid[pick].point);
      dir = valid[pick].dir;
      if (ctrl_.size() >= 3) commit_segment(ctrl_.size() - 3);
    }

    // Assemble the full dense curve and cut it at the target length.
    std::vector<Vec3> dense;
    for (std::size_t s = 0; s + 1 < ctrl_.size(); ++s) {
      const auto seg = segment_samples(ctrl_, s, s + 2 == ctrl_.size());
      dense.insert(dense.end(), seg.begin(), seg.end());
    }
    Polyline curve = Polyline(std::move(dense)).truncated(cfg_.target_length_mm);
    if (!validate(curve)) return std::nullopt;
    return curve;
  }

  // Closest approach between non-adjacent samples.
  double min_separation(const Polyline& c) const {
    const auto& pts = c.points();
    const auto& arc = c.cumulative_length();
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < pts.size(); ++a) {
      for (std::size_t b = a + 1; b < pts.size(); ++b) {
        if (arc[b] - arc[a] >= window_) best = std::min(best, distance(pts[a], pts[b]));
      }
    }
    return best;
  }

  bool validate(const Polyline& c) const {
    const auto& pts = c.points();
    const auto& arc = c.cumulative_length();
    for (std::size_t a = 0; a < pts.size(); ++a) {
      if (!inside(pts[a])) return false;
      for (std::size_t b = a + 1; b < pts.size(); ++b) {
        if (arc[b] - arc[a] < window_) continue;
        const Vec3 d = pts[a] - pts[b];
        if (dot(d, d) < std::pow(cfg_.clearance_mm() + 0.5 * kClearanceMarginMm, 2)) {
          return false;
        }
      }
    }
    return true;
  }

 private:
  void commit_segment(std::size_t i) {
    const auto pts = segment_samples(ctrl_, i, false);
    segment_sizes_.resize(i + 1);
    segment_sizes_[i] = pts.size();
    for (const auto& p : pts) {
      const double arc =
          committed_.empty() ? 0.0 : committed_.back().arc + distance(committed_.back().p, p);
      committed_.push_back(Sample{p, arc});
    }
  }

  void uncommit_last_segment() {
    // After popping control point n, segment n-2 is no longer final.
    if (ctrl_.size() < 2) return;
    const std::size_t seg = ctrl_.size() - 2;
    if (seg < segment_sizes_.size()) {
      committed_.resize(committed_.size() - segment_sizes_[seg]);
      segment_sizes_.resize(seg);
    }
  }

  const PhantomConfig& cfg_;
  double step_, margin_, min_dist2_, window_;
  Vec3 hi_;
  std::vector<Vec3> ctrl_;
  std::vector<Sample> committed_;  // ascending arc
  std::vector<std::size_t> segment_sizes_;
};

}  // namespace

Polyline generate_centerline(const PhantomConfig& cfg, Rng& rng) {
  cfg.validate();
  CenterlineBuilder builder(cfg);
  // Folds should touch; keep the tightest valid curve if none does.
  std::optional<Polyline> best;
  double best_sep = std::numeric_limits<double>::infinity();
  int valid = 0;
  for (int attempt = 0; attempt < kMaxRestarts && valid < kContactAttempts; ++attempt) {
    auto curve = builder.build(rng);
    if (!curve) continue;
    ++valid;
    const double sep = builder.min_separation(*curve);
    if (sep <= cfg.clearance_mm() + kContactSlackMm) return *curve;
    if (sep < best_sep) best_sep = sep, best = std::move(curve);
  }
  if (best) return *best;
  throw PackingError("phantom: could not pack a " + std::to_string(cfg.target_length_mm) +
                     " mm tube of radius " + std::to_string(cfg.tube_radius_mm) +
                     " mm into the grid after " + std::to_string(kMaxRestarts) +
                     " attempts");
}

TrackingCase rasterize_case(const Polyline& centerline, const PhantomConfig& cfg,
                            Annotation annotation, Rng& rng) {
  if (!centerline.valid()) throw DataError("phantom: centreline needs >= 2 points");
  const auto dist = polyline_distance_band(centerline, cfg.tube_radius_mm, cfg.grid_size,
                                           cfg.spacing_mm);
  TrackingCase c;
  c.config = cfg;
  c.annotation = annotation;
  c.segmentation = MaskVolume(cfg.grid_size, cfg.spacing_mm);
  c.intensity = RealVolume(cfg.grid_size, cfg.spacing_mm);
  const double lumen_radius = cfg.tube_radius_mm - cfg.wall_thickness_mm;
  auto& seg = c.segmentation.storage();
  auto& img = c.intensity.storage();
  const auto& d = dist.storage();
  for (std::size_t v = 0; v < d.size(); ++v) {
    double value = cfg.background_intensity;
    if (d[v] <= cfg.tube_radius_mm) {
      seg[v] = 1;
      value = d[v] <= lumen_radius ? cfg.lumen_intensity : cfg.wall_intensity;
    }
    if (cfg.noise_sigma > 0.0) value += cfg.noise_sigma * rng.normal();
    img[v] = static_cast<float>(std::clamp(value, 0.0, 1.0));
  }
  c.start_mm = centerline.front();
  c.end_mm = centerline.back();
  if (annotation == Annotation::PathAnnotated) c.gt_path = centerline;
  return c;
}

TrackingCase generate_case(const PhantomConfig& cfg, Annotation annotation) {
  Rng rng(cfg.seed);
  const Polyline centerline = generate_centerline(cfg, rng);
  return rasterize_case(centerline, cfg, annotation, rng);
}

void save_case(const TrackingCase& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_volume(c.intensity, dir / "intensity.nrrd");
  save_volume(c.segmentation, dir / "segmentation.nrrd");
  if (c.annotation == Annotation::PathAnnotated) {
    if (!c.gt_path) throw DataError("path-annotated case without a GT path");
    save_polyline(*c.gt_path, c.spacing_mm(), dir / "gt_path.json");
  } else {
    std::filesystem::remove(dir / "gt_path.json");
  }
  nlohmann::json meta;
  meta["annotation"] = to_string(c.annotation);
  meta["start_mm"] = {c.start_mm.x, c.start_mm.y, c.start_mm.z};
  meta["end_mm"] = {c.end_mm.x, c.end_mm.y, c.end_mm.z};
  meta["seed"] = c.config.seed;
  meta["config"] = to_json(c.config);
  std::ofstream out(dir / "meta.json");
  if (!out) throw DataError("cannot write " + (dir / "meta.json").string());
  out << meta.dump(2) << "\n";
}

TrackingCase load_case(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  std::ifstream in(meta_path);
  if (!in) throw DataError("case directory lacks meta.json: " + dir.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed " + meta_path.string() + ": " + e.what());
  }
  TrackingCase c;
  try {
    c.annotation = annotation_from_string(meta.at("annotation").get<std::string>());
    const auto s = meta.at("start_mm").get<std::array<double, 3>>();
    const auto e = meta.at("end_mm").get<std::array<double, 3>>();
    c.start_mm = {s[0], s[1], s[2]};
    c.end_mm = {e[0], e[1], e[2]};
    if (meta.contains("config")) c.config = phantom_config_from_json(meta["config"]);
  } catch (const nlohmann::json::exception& ex) {
    throw DataError("malformed " + meta_path.string() + ": " + ex.what());
  } catch (const ConfigError& ex) {
    throw DataError("malformed " + meta_path.string() + ": " + ex.what());
  }
  c.intensity = load_real_volume(dir / "intensity.nrrd");
  c.segmentation = load_mask_volume(dir / "segmentation.nrrd");
  if (!same_geometry(c.intensity, c.segmentation)) {
    throw DataError("intensity/segmentation geometry mismatch in " + dir.string());
  }
  if (c.annotation == Annotation::PathAnnotated) {
    c.gt_path = load_polyline(dir / "gt_path.json");
    if (!c.gt_path->valid()) throw DataError("GT path needs >= 2 points in " + dir.string());
  }
  for (const Vec3& p : {c.start_mm, c.end_mm}) {
    if (c.segmentation.at_or(c.segmentation.to_voxel(p), 0) == 0) {
      throw DataError("start/end point outside segmentation in " + dir.string());
    }
  }
  return c;
}

}  // namespace tubetrack
