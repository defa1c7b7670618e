#include "tubetrack/grid/line.hpp"

#include <array>
#include <cstdint>
#include <cstdlib>

namespace tubetrack {

std::vector<VoxelPoint> line_voxels(const VoxelPoint& a, const VoxelPoint& b) {
  const std::array<int, 3> delta{b.i - a.i, b.j - a.j, b.k - a.k};
  std::array<std::int64_t, 3> span{};
  std::array<int, 3> dir{};
  for (int ax = 0; ax < 3; ++ax) {
    span[ax] = std::abs(delta[ax]);
    dir[ax] = delta[ax] > 0 ? 1 : (delta[ax] < 0 ? -1 : 0);
  }

  // Axis `ax` crosses its m-th cell boundary at t = (2m + 1) / (2 * span).
  // Events are compared exactly as fractions.
  std::array<std::int64_t, 3> crossed{0, 0, 0};
  std::array<int, 3> cur{a.i, a.j, a.k};
  std::vector<VoxelPoint> out;
  out.reserve(static_cast<std::size_t>(span[0] + span[1] + span[2] + 1));
  out.push_back(a);

  for (;;) {
    int best = -1;
    for (int ax = 0; ax < 3; ++ax) {
      if (crossed[ax] >= span[ax]) continue;
      if (best < 0) {
        best = ax;
        continue;
      }
      // (2c_ax + 1) / span_ax  <  (2c_best + 1) / span_best
      const std::int64_t lhs = (2 * crossed[ax] + 1) * span[best];
      const std::int64_t rhs = (2 * crossed[best] + 1) * span[ax];
      if (lhs < rhs) best = ax;
    }
    if (best < 0) break;
    const std::int64_t num = 2 * crossed[best] + 1;
    const std::int64_t den = span[best];
    for (int ax = 0; ax < 3; ++ax) {
      if (crossed[ax] >= span[ax]) continue;
      if ((2 * crossed[ax] + 1) * den == num * span[ax]) {
        cur[ax] += dir[ax];
        ++crossed[ax];
      }
    }
    out.push_back({cur[0], cur[1], cur[2]});
  }
  return out;
}

}  // namespace tubetrack
