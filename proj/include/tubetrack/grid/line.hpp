#pragma once

#include <vector>

#include "tubetrack/grid/volume.hpp"

namespace tubetrack {

// Supercover DDA between two voxel centres. Returns every voxel whose cell
// the ideal segment passes through, ordered from a to b, 26-connected, with
// both endpoints included. When the segment crosses a cell edge or corner
// exactly, the diagonal step is taken (no extra face-neighbour voxels), which
// keeps the traversal symmetric: line_voxels(b, a) is the reverse of
// line_voxels(a, b). Out-of-grid voxels are returned as-is.
std::vector<VoxelPoint> line_voxels(const VoxelPoint& a, const VoxelPoint& b);

}  // namespace tubetrack
