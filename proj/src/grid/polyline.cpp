#include "tubetrack/grid/polyline.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "tubetrack/errors.hpp"

namespace tubetrack {

Polyline::Polyline(std::vector<Vec3> points) : points_(std::move(points)) {
  cumulative_.resize(points_.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (i > 0) acc += distance(points_[i - 1], points_[i]);
    cumulative_[i] = acc;
  }
}

Polyline Polyline::reversed() const {
  std::vector<Vec3> pts(points_.rbegin(), points_.rend());
  return Polyline(std::move(pts));
}

Vec3 Polyline::at_arc(double s) const {
  if (points_.empty()) return {};
  if (s <= 0.0 || points_.size() == 1) return points_.front();
  if (s >= length()) return points_.back();
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), s);
  const std::size_t hi = static_cast<std::size_t>(it - cumulative_.begin());
  const std::size_t lo = hi - 1;
  const double seg = cumulative_[hi] - cumulative_[lo];
  const double t = seg > 0.0 ? (s - cumulative_[lo]) / seg : 0.0;
  return points_[lo] + (points_[hi] - points_[lo]) * t;
}

Polyline Polyline::resampled(double step_mm) const {
  if (points_.size() < 2 || !(step_mm > 0.0)) return *this;
  const double total = length();
  std::vector<Vec3> pts;
  const auto n = static_cast<std::size_t>(std::floor(total / step_mm));
  pts.reserve(n + 2);
  for (std::size_t i = 0; i <= n; ++i) pts.push_back(at_arc(i * step_mm));
  if (total - n * step_mm > 1e-9) pts.push_back(points_.back());
  return Polyline(std::move(pts));
}

Polyline Polyline::truncated(double s) const {
  if (points_.empty()) return *this;
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < points_.size() && cumulative_[i] < s; ++i) {
    pts.push_back(points_[i]);
  }
  pts.push_back(at_arc(s));
  return Polyline(std::move(pts));
}

Polyline::Projection Polyline::project(const Vec3& p) const {
  Projection best;
  best.distance = std::numeric_limits<double>::infinity();
  if (points_.empty()) return best;
  if (points_.size() == 1) {
    best.distance = distance(p, points_[0]);
    best.point = points_[0];
    return best;
  }
  for (std::size_t s = 0; s + 1 < points_.size(); ++s) {
    const double t = segment_param(p, points_[s], points_[s + 1]);
    const Vec3 q = points_[s] + (points_[s + 1] - points_[s]) * t;
    const double d = distance(p, q);
    if (d < best.distance) {
      best.distance = d;
      best.point = q;
      best.segment = s;
      best.arc = cumulative_[s] + t * (cumulative_[s + 1] - cumulative_[s]);
    }
  }
  return best;
}

void save_polyline(const Polyline& p, double spacing_mm,
                   const std::filesystem::path& path) {
  nlohmann::json j;
  j["spacing_mm"] = spacing_mm;
  auto pts = nlohmann::json::array();
  for (const auto& q : p.points()) pts.push_back({q.x, q.y, q.z});
  j["points_mm"] = std::move(pts);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write polyline: " + path.string());
  out << j.dump() << "\n";
}

Polyline load_polyline(const std::filesystem::path& path, double* spacing_mm) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read polyline: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed polyline JSON " + path.string() + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("points_mm") || !j["points_mm"].is_array()) {
    throw DataError("polyline JSON lacks a points_mm array: " + path.string());
  }
  std::vector<Vec3> pts;
  for (const auto& q : j["points_mm"]) {
    if (!q.is_array() || q.size() != 3 || !q[0].is_number() ||
        !q[1].is_number() || !q[2].is_number()) {
      throw DataError("polyline point is not [x,y,z]: " + path.string());
    }
    pts.push_back({q[0].get<double>(), q[1].get<double>(), q[2].get<double>()});
  }
  if (spacing_mm != nullptr) {
    *spacing_mm = j.contains("spacing_mm") && j["spacing_mm"].is_number()
                      ? j["spacing_mm"].get<double>()
                      : 0.0;
  }
  return Polyline(std::move(pts));
}

}  // namespace tubetrack
