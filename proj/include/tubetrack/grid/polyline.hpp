#pragma once

#include <filesystem>
#include <vector>

#include "tubetrack/vec3.hpp"

namespace tubetrack {

// Ordered 3D curve in mm with cumulative arc length.
class Polyline {
 public:
  Polyline() = default;
  explicit Polyline(std::vector<Vec3> points);

  const std::vector<Vec3>& points() const { return points_; }
  const std::vector<double>& cumulative_length() const { return cumulative_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  bool valid() const { return points_.size() >= 2; }
  double length() const { return cumulative_.empty() ? 0.0 : cumulative_.back(); }
  const Vec3& front() const { return points_.front(); }
  const Vec3& back() const { return points_.back(); }

  Polyline reversed() const;
  // Point at arc length s (clamped to [0, length]).
  Vec3 at_arc(double s) const;
  // Uniform resampling at `step_mm` (last point always kept).
  Polyline resampled(double step_mm) const;
  // Prefix of the curve up to arc length s.
  Polyline truncated(double s) const;

  struct Projection {
    double distance = 0.0;
    double arc = 0.0;
    Vec3 point;
    std::size_t segment = 0;
  };
  // Exact nearest point over all segments. A single-point polyline projects
  // onto its point.
  Projection project(const Vec3& p) const;

  friend bool operator==(const Polyline& a, const Polyline& b) {
    return a.points_ == b.points_;
  }

 private:
  std::vector<Vec3> points_;
  std::vector<double> cumulative_;
};

// {"spacing_mm": s, "points_mm": [[x,y,z], ...]}; other keys are ignored on
// load.
void save_polyline(const Polyline& p, double spacing_mm,
                   const std::filesystem::path& path);
Polyline load_polyline(const std::filesystem::path& path,
                       double* spacing_mm = nullptr);

}  // namespace tubetrack
