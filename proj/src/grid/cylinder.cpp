#include "tubetrack/grid/cylinder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tubetrack {

namespace {

struct Box {
  int lo[3];
  int hi[3];  // inclusive
  bool empty = false;
};

Box segment_box(const Vec3& a, const Vec3& b, double radius_mm,
                const GridSize& sizes, double spacing) {
  Box box;
  for (int ax = 0; ax < 3; ++ax) {
    const double lo = std::min(a[ax], b[ax]) - radius_mm;
    const double hi = std::max(a[ax], b[ax]) + radius_mm;
    box.lo[ax] = std::max(0, static_cast<int>(std::ceil(lo / spacing)));
    box.hi[ax] = std::min(sizes[ax] - 1, static_cast<int>(std::floor(hi / spacing)));
    if (box.lo[ax] > box.hi[ax]) box.empty = true;
  }
  return box;
}

}  // namespace

std::size_t add_capsule(MaskVolume& mask, const Vec3& a, const Vec3& b,
                        double radius_mm) {
  const double s = mask.spacing_mm();
  const Box box = segment_box(a, b, radius_mm, mask.sizes(), s);
  if (box.empty) return 0;
  std::size_t added = 0;
  for (int i = box.lo[0]; i <= box.hi[0]; ++i) {
    for (int j = box.lo[1]; j <= box.hi[1]; ++j) {
      for (int k = box.lo[2]; k <= box.hi[2]; ++k) {
        auto& m = mask(i, j, k);
        if (m) continue;
        if (point_segment_distance({i * s, j * s, k * s}, a, b) <= radius_mm) {
          m = 1;
          ++added;
        }
      }
    }
  }
  return added;
}

MaskVolume rasterize_cylinders(const Polyline& p, double radius_mm,
                               const GridSize& sizes, double spacing_mm) {
  if (!(radius_mm > 0.0)) throw ConfigError("cylinder radius must be positive");
  MaskVolume mask(sizes, spacing_mm);
  const auto& pts = p.points();
  if (pts.size() == 1) add_capsule(mask, pts[0], pts[0], radius_mm);
  for (std::size_t s = 0; s + 1 < pts.size(); ++s) {
    add_capsule(mask, pts[s], pts[s + 1], radius_mm);
  }
  return mask;
}

Volume<double> polyline_distance_band(const Polyline& p, double band_mm,
                                      const GridSize& sizes, double spacing_mm) {
  Volume<double> dist(sizes, spacing_mm, std::numeric_limits<double>::infinity());
  const auto& pts = p.points();
  auto visit = [&](const Vec3& a, const Vec3& b) {
    const Box box = segment_box(a, b, band_mm, sizes, spacing_mm);
    if (box.empty) return;
    for (int i = box.lo[0]; i <= box.hi[0]; ++i) {
      for (int j = box.lo[1]; j <= box.hi[1]; ++j) {
        for (int k = box.lo[2]; k <= box.hi[2]; ++k) {
          const double d = point_segment_distance(
              {i * spacing_mm, j * spacing_mm, k * spacing_mm}, a, b);
          if (d <= band_mm) {
            auto& cur = dist(i, j, k);
            cur = std::min(cur, d);
          }
        }
      }
    }
  };
  if (pts.size() == 1) visit(pts[0], pts[0]);
  for (std::size_t s = 0; s + 1 < pts.size(); ++s) visit(pts[s], pts[s + 1]);
  return dist;
}

}  // namespace tubetrack
