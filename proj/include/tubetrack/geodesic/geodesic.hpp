#pragma once

#include <cstddef>

#include "tubetrack/grid/polyline.hpp"
#include "tubetrack/grid/volume.hpp"
#include "tubetrack/phantom/phantom.hpp"

namespace tubetrack {

struct GdtConfig {
  double cell_length = 1.5;
  double path_tube_radius_mm = 6.0;
  void validate() const;
};

// First-order fast marching of |grad T| = 1 restricted to `mask`, seeded at
// `seed` with T = 0, distances in mm (cell_length per voxel step). Each
// accepted voxel also relaxes its 26 neighbours along straight edges, so the
// result never exceeds the 26-neighbour graph distance. Voxels outside the
// mask or unreachable are +inf.
RealVolume fast_marching_gdt(const MaskVolume& mask, const VoxelPoint& seed,
                             const GdtConfig& cfg);

// Exact shortest paths on the 26-neighbour graph with Euclidean edge lengths.
RealVolume dijkstra_gdt(const MaskVolume& mask, const VoxelPoint& seed,
                        const GdtConfig& cfg);

struct PathGdtStats {
  std::size_t voxels = 0;
  std::size_t extrapolated = 0;  // farther than path_tube_radius_mm from the path
};

// For every segmentation voxel v with nearest path point q:
// arc_length(q) + |v - q|. Non-segmentation voxels are +inf.
RealVolume path_gdt(const Polyline& gt_path, const MaskVolume& segmentation,
                    const GdtConfig& cfg, PathGdtStats* stats = nullptr);

// Path-anchored field for path-annotated cases (oriented so that arc length
// grows from the end nearest `start`), fast marching otherwise.
RealVolume gdt_for_case(const TrackingCase& c, const VoxelPoint& start,
                        const GdtConfig& cfg);

}  // namespace tubetrack
