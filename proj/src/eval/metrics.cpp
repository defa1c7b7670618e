#include "tubetrack/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tubetrack/errors.hpp"
#include "tubetrack/grid/cylinder.hpp"

namespace tubetrack {

void EvalConfig::validate() const {
  if (!(tolerance_mm > 0.0)) throw ConfigError("eval: tolerance_mm must be positive");
}

double max_tracked_length(const Polyline& pred, const Polyline& gt_in, const EvalConfig& cfg) {
  cfg.validate();
  if (!gt_in.valid()) throw DataError("eval: GT path needs at least two points");
  if (pred.empty()) return 0.0;
  const Vec3& first = pred.front();
  const bool flip = distance(first, gt_in.back()) < distance(first, gt_in.front());
  const Polyline oriented = flip ? gt_in.reversed() : gt_in;
  constexpr double kStep = 1.0;
  const Polyline gt = oriented.resampled(kStep);
  // Arcs are reported in the original curve's length: resampled vertex i sits
  // at original arc i * kStep (the last one at the full length).
  const double total = oriented.length();
  auto original_arc = [&](const Polyline::Projection& pr) {
    const std::size_t s = pr.segment;
    const double a0 = std::min(total, static_cast<double>(s) * kStep);
    const double a1 = s + 2 == gt.size() ? total : std::min(total, (s + 1.0) * kStep);
    const double seg = gt.cumulative_length()[s + 1] - gt.cumulative_length()[s];
    const double t = seg > 0.0 ? (pr.arc - gt.cumulative_length()[s]) / seg : 0.0;
    return a0 + t * (a1 - a0);
  };

  const double tol = cfg.tolerance_mm;
  const auto& pts = pred.points();
  double start_arc = 0.0, furthest = 0.0, prev_arc = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto proj = gt.project(pts[i]);
    if (proj.distance > tol) break;
    const double arc = original_arc(proj);
    if (i == 0) {
      start_arc = furthest = prev_arc = arc;
      continue;
    }
    if (arc < furthest - tol) break;
    if (arc - prev_arc > distance(pts[i], pts[i - 1]) + tol) break;
    furthest = std::max(furthest, arc);
    prev_arc = arc;
  }
  return std::max(0.0, furthest - start_arc);
}

double coverage(const Polyline& pred, const MaskVolume& segmentation, double radius_mm) {
  const std::size_t total = count_nonzero(segmentation);
  if (total == 0) throw DataError("coverage: empty segmentation");
  if (pred.empty()) return 0.0;
  const MaskVolume cyl = rasterize_cylinders(pred, radius_mm, segmentation);
  std::size_t hit = 0;
  const auto a = cyl.data();
  const auto b = segmentation.data();
  for (std::size_t i = 0; i < a.size(); ++i) hit += (a[i] && b[i]) ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(total);
}

double percentile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw ConfigError("percentile of an empty list");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

Summary summarize(std::vector<double> values) {
  if (values.empty()) throw ConfigError("summarize: empty list");
  std::sort(values.begin(), values.end());
  Summary s;
  s.count = values.size();
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / n);
  s.median = percentile_sorted(values, 0.5);
  s.p20 = percentile_sorted(values, 0.2);
  s.p80 = percentile_sorted(values, 0.8);
  s.max = values.back();
  return s;
}

nlohmann::json to_json(const Summary& s) {
  return {{"count", s.count}, {"mean", s.mean}, {"std", s.std},  {"median", s.median},
          {"p20", s.p20},     {"p80", s.p80},   {"max", s.max}};
}

}  // namespace tubetrack
