#include "tubetrack/grid/patch.hpp"

#include <algorithm>
#include <cmath>

namespace tubetrack {

int patch_side(double size_mm, double spacing_mm) {
  if (!(size_mm > 0.0)) throw ConfigError("patch size must be positive");
  int side = static_cast<int>(std::lround(size_mm / spacing_mm));
  if (side % 2 == 0) --side;
  return std::max(side, 1);
}

template <typename T>
void extract_patch_into(const Volume<T>& v, const VoxelPoint& center, int side,
                        std::span<float> out) {
  std::fill(out.begin(), out.end(), 0.0f);
  const int half = side / 2;
  const auto& n = v.sizes();
  const int i0 = center.i - half, j0 = center.j - half, k0 = center.k - half;
  const int ib = std::max(0, -i0), ie = std::min(side, n[0] - i0);
  const int jb = std::max(0, -j0), je = std::min(side, n[1] - j0);
  const int kb = std::max(0, -k0), ke = std::min(side, n[2] - k0);
  if (kb >= ke) return;
  for (int a = ib; a < ie; ++a) {
    for (int b = jb; b < je; ++b) {
      const T* src = &v(i0 + a, j0 + b, k0 + kb);
      float* dst = &out[(static_cast<std::size_t>(a) * side + b) * side + kb];
      for (int c = kb; c < ke; ++c) *dst++ = static_cast<float>(*src++);
    }
  }
}

template <typename T>
Volume<T> extract_patch(const Volume<T>& v, const VoxelPoint& center,
                        double size_mm) {
  const int side = patch_side(size_mm, v.spacing_mm());
  std::vector<float> buf(static_cast<std::size_t>(side) * side * side);
  extract_patch_into(v, center, side, std::span<float>(buf));
  Volume<T> out({side, side, side}, v.spacing_mm());
  std::transform(buf.begin(), buf.end(), out.storage().begin(),
                 [](float f) { return static_cast<T>(f); });
  return out;
}

template Volume<float> extract_patch(const Volume<float>&, const VoxelPoint&, double);
template Volume<std::uint8_t> extract_patch(const Volume<std::uint8_t>&,
                                            const VoxelPoint&, double);
template void extract_patch_into(const Volume<float>&, const VoxelPoint&, int,
                                 std::span<float>);
template void extract_patch_into(const Volume<std::uint8_t>&, const VoxelPoint&,
                                 int, std::span<float>);

}  // namespace tubetrack
