#pragma once

#include <span>

#include "tubetrack/grid/volume.hpp"

namespace tubetrack {

// Side length in voxels of a cubic patch of `size_mm` extent: rounded, then
// decremented to odd so the centre voxel is exact (60 mm @ 1.5 mm -> 39).
int patch_side(double size_mm, double spacing_mm);

// Cubic patch centred on `center`, zero outside the grid. Output is
// side^3 values in (i, j, k) order, k fastest.
template <typename T>
Volume<T> extract_patch(const Volume<T>& v, const VoxelPoint& center,
                        double size_mm);

// Writes the patch as float into `out` (size side^3), converting values.
template <typename T>
void extract_patch_into(const Volume<T>& v, const VoxelPoint& center, int side,
                        std::span<float> out);

}  // namespace tubetrack
