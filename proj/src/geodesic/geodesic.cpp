#include "tubetrack/geodesic/geodesic.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <queue>
#include <vector>

namespace tubetrack {

void GdtConfig::validate() const {
  if (!(cell_length > 0.0)) throw ConfigError("gdt: cell_length must be positive");
  if (!(path_tube_radius_mm > 0.0)) {
    throw ConfigError("gdt: path_tube_radius_mm must be positive");
  }
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Offset {
  int di, dj, dk;
  double length;  // in cells
};

const std::vector<Offset>& neighbours26() {
  static const std::vector<Offset> offsets = [] {
    std::vector<Offset> out;
    for (int a = -1; a <= 1; ++a)
      for (int b = -1; b <= 1; ++b)
        for (int c = -1; c <= 1; ++c)
          if (a || b || c) out.push_back({a, b, c, std::sqrt(double(a * a + b * b + c * c))});
    return out;
  }();
  return offsets;
}

void check_seed(const MaskVolume& mask, const VoxelPoint& seed, const char* who) {
  if (!mask.contains(seed) || mask[seed] == 0) {
    throw DataError(std::string(who) + ": seed voxel lies outside the mask");
  }
}

RealVolume to_real(const MaskVolume& like, const std::vector<double>& t) {
  RealVolume out = RealVolume::like(like);
  std::transform(t.begin(), t.end(), out.storage().begin(),
                 [](double d) { return static_cast<float>(d); });
  return out;
}

using HeapItem = std::pair<double, std::size_t>;
using MinHeap = std::priority_queue<HeapItem, std::vector<HeapItem>, std::greater<>>;

// Upwind solution from the smallest accepted neighbour value per axis.
double eikonal_update(std::array<double, 3> a, double h) {
  std::sort(a.begin(), a.end());
  if (a[0] == kInf) return kInf;
  double t = a[0] + h;
  if (t <= a[1]) return t;
  const double d = a[0] - a[1];
  t = 0.5 * (a[0] + a[1] + std::sqrt(2.0 * h * h - d * d));
  if (t <= a[2]) return t;
  const double s = a[0] + a[1] + a[2];
  const double q = a[0] * a[0] + a[1] * a[1] + a[2] * a[2];
  const double disc = s * s - 3.0 * (q - h * h);
  return (s + std::sqrt(std::max(0.0, disc))) / 3.0;
}

}  // namespace

RealVolume fast_marching_gdt(const MaskVolume& mask, const VoxelPoint& seed,
                             const GdtConfig& cfg) {
  cfg.validate();
  check_seed(mask, seed, "fast_marching_gdt");
  const double h = cfg.cell_length;
  const auto& n = mask.sizes();
  std::vector<double> t(mask.voxel_count(), kInf);
  std::vector<std::uint8_t> known(mask.voxel_count(), 0);
  MinHeap heap;
  t[mask.index(seed)] = 0.0;
  heap.push({0.0, mask.index(seed)});

  auto known_value = [&](int i, int j, int k) {
    if (i < 0 || j < 0 || k < 0 || i >= n[0] || j >= n[1] || k >= n[2]) return kInf;
    const std::size_t idx = mask.index(i, j, k);
    return known[idx] ? t[idx] : kInf;
  };

  while (!heap.empty()) {
    const auto [tu, u] = heap.top();
    heap.pop();
    if (known[u] || tu > t[u]) continue;
    known[u] = 1;
    const VoxelPoint p = mask.point(u);
    for (const auto& o : neighbours26()) {
      const VoxelPoint q{p.i + o.di, p.j + o.dj, p.k + o.dk};
      if (!mask.contains(q) || mask[q] == 0) continue;
      const std::size_t v = mask.index(q);
      if (known[v]) continue;
      double cand = tu + o.length * h;
      if (o.length == 1.0) {
        const std::array<double, 3> a{
            std::min(known_value(q.i - 1, q.j, q.k), known_value(q.i + 1, q.j, q.k)),
            std::min(known_value(q.i, q.j - 1, q.k), known_value(q.i, q.j + 1, q.k)),
            std::min(known_value(q.i, q.j, q.k - 1), known_value(q.i, q.j, q.k + 1))};
        cand = std::min(cand, eikonal_update(a, h));
      }
      if (cand < t[v]) {
        t[v] = cand;
        heap.push({cand, v});
      }
    }
  }
  return to_real(mask, t);
}

RealVolume dijkstra_gdt(const MaskVolume& mask, const VoxelPoint& seed,
                        const GdtConfig& cfg) {
  cfg.validate();
  check_seed(mask, seed, "dijkstra_gdt");
  std::vector<double> t(mask.voxel_count(), kInf);
  std::vector<std::uint8_t> done(mask.voxel_count(), 0);
  MinHeap heap;
  t[mask.index(seed)] = 0.0;
  heap.push({0.0, mask.index(seed)});
  while (!heap.empty()) {
    const auto [tu, u] = heap.top();
    heap.pop();
    if (done[u]) continue;
    done[u] = 1;
    const VoxelPoint p = mask.point(u);
    for (const auto& o : neighbours26()) {
      const VoxelPoint q{p.i + o.di, p.j + o.dj, p.k + o.dk};
      if (!mask.contains(q) || mask[q] == 0) continue;
      const std::size_t v = mask.index(q);
      const double cand = tu + o.length * cfg.cell_length;
      if (cand < t[v]) {
        t[v] = cand;
        heap.push({cand, v});
      }
    }
  }
  return to_real(mask, t);
}

RealVolume path_gdt(const Polyline& gt_path, const MaskVolume& segmentation,
                    const GdtConfig& cfg, PathGdtStats* stats) {
  cfg.validate();
  if (gt_path.empty()) throw DataError("path_gdt: empty GT path");
  RealVolume out = RealVolume::like(segmentation, std::numeric_limits<float>::infinity());
  PathGdtStats local;
  const auto& seg = segmentation.storage();
  for (std::size_t v = 0; v < seg.size(); ++v) {
    if (!seg[v]) continue;
    const Vec3 x = segmentation.to_mm(segmentation.point(v));
    const auto proj = gt_path.project(x);
    ++local.voxels;
    if (proj.distance > cfg.path_tube_radius_mm) ++local.extrapolated;
    out.storage()[v] = static_cast<float>(proj.arc + proj.distance);
  }
  if (stats) *stats = local;
  return out;
}

RealVolume gdt_for_case(const TrackingCase& c, const VoxelPoint& start,
                        const GdtConfig& cfg) {
  if (!c.segmentation.contains(start) || c.segmentation[start] == 0) {
    throw DataError("gdt_for_case: start voxel outside segmentation");
  }
  if (c.annotation == Annotation::PathAnnotated) {
    if (!c.gt_path) throw DataError("gdt_for_case: path-annotated case lacks a GT path");
    const Vec3 s = c.segmentation.to_mm(start);
    const bool from_back = distance(s, c.gt_path->back()) < distance(s, c.gt_path->front());
    return path_gdt(from_back ? c.gt_path->reversed() : *c.gt_path, c.segmentation, cfg);
  }
  return fast_marching_gdt(c.segmentation, start, cfg);
}

}  // namespace tubetrack
