#pragma once

#include "tubetrack/grid/polyline.hpp"
#include "tubetrack/grid/volume.hpp"

namespace tubetrack {

// Marks voxels whose centre is within radius_mm of any segment of p.
// A one-point polyline marks a ball. Empty polyline -> all zero.
MaskVolume rasterize_cylinders(const Polyline& p, double radius_mm,
                               const GridSize& sizes, double spacing_mm);

template <typename T>
MaskVolume rasterize_cylinders(const Polyline& p, double radius_mm,
                               const Volume<T>& like) {
  return rasterize_cylinders(p, radius_mm, like.sizes(), like.spacing_mm());
}

// Incremental form: ORs the capsule around segment [a, b] into `mask`.
// Returns the number of voxels newly set.
std::size_t add_capsule(MaskVolume& mask, const Vec3& a, const Vec3& b,
                        double radius_mm);

// Minimum distance (mm) from each voxel centre to the polyline, computed only
// within `band_mm` of the curve; other voxels hold +inf.
Volume<double> polyline_distance_band(const Polyline& p, double band_mm,
                                      const GridSize& sizes, double spacing_mm);

}  // namespace tubetrack
