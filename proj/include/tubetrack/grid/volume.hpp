#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tubetrack/errors.hpp"
#include "tubetrack/vec3.hpp"

namespace tubetrack {

// Integer voxel index. May lie outside a grid; callers test explicitly.
struct VoxelPoint {
  int i = 0;
  int j = 0;
  int k = 0;

  int operator[](int axis) const { return axis == 0 ? i : (axis == 1 ? j : k); }
  friend VoxelPoint operator+(const VoxelPoint& a, const VoxelPoint& b) {
    return {a.i + b.i, a.j + b.j, a.k + b.k};
  }
  friend VoxelPoint operator-(const VoxelPoint& a, const VoxelPoint& b) {
    return {a.i - b.i, a.j - b.j, a.k - b.k};
  }
  friend bool operator==(const VoxelPoint&, const VoxelPoint&) = default;
  friend auto operator<=>(const VoxelPoint&, const VoxelPoint&) = default;
};

using GridSize = std::array<int, 3>;

// Dense isotropic 3D grid with origin at (0,0,0) mm. Linear index is
// (i * ny + j) * nz + k, i.e. k varies fastest.
template <typename T>
class Volume {
 public:
  using value_type = T;

  Volume() = default;
  Volume(GridSize sizes, double spacing_mm, T fill = T{})
      : sizes_(sizes), spacing_mm_(spacing_mm) {
    for (int s : sizes_) {
      if (s <= 0) throw ConfigError("volume sizes must be positive");
    }
    if (!(spacing_mm_ > 0.0)) throw ConfigError("volume spacing must be positive");
    data_.assign(voxel_count(), fill);
  }
  Volume(GridSize sizes, double spacing_mm, std::vector<T> data)
      : Volume(sizes, spacing_mm) {
    if (data.size() != data_.size()) {
      throw DataError("volume payload length does not match sizes");
    }
    data_ = std::move(data);
  }

  // Same geometry, new fill value.
  template <typename U>
  static Volume like(const Volume<U>& other, T fill = T{}) {
    return Volume(other.sizes(), other.spacing_mm(), fill);
  }

  const GridSize& sizes() const { return sizes_; }
  double spacing_mm() const { return spacing_mm_; }
  std::size_t voxel_count() const {
    return static_cast<std::size_t>(sizes_[0]) * sizes_[1] * sizes_[2];
  }
  bool empty() const { return data_.empty(); }

  bool contains(const VoxelPoint& p) const {
    return p.i >= 0 && p.j >= 0 && p.k >= 0 && p.i < sizes_[0] &&
           p.j < sizes_[1] && p.k < sizes_[2];
  }
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * sizes_[1] + j) * sizes_[2] + k;
  }
  std::size_t index(const VoxelPoint& p) const { return index(p.i, p.j, p.k); }
  VoxelPoint point(std::size_t idx) const {
    const int k = static_cast<int>(idx % sizes_[2]);
    idx /= sizes_[2];
    const int j = static_cast<int>(idx % sizes_[1]);
    return {static_cast<int>(idx / sizes_[1]), j, k};
  }

  T& operator()(int i, int j, int k) { return data_[index(i, j, k)]; }
  const T& operator()(int i, int j, int k) const { return data_[index(i, j, k)]; }
  T& operator[](const VoxelPoint& p) { return data_[index(p)]; }
  const T& operator[](const VoxelPoint& p) const { return data_[index(p)]; }

  // Value at p, or `outside` when p is not in the grid.
  T at_or(const VoxelPoint& p, T outside) const {
    return contains(p) ? data_[index(p)] : outside;
  }

  Vec3 to_mm(const VoxelPoint& p) const {
    return {p.i * spacing_mm_, p.j * spacing_mm_, p.k * spacing_mm_};
  }
  VoxelPoint to_voxel(const Vec3& mm) const {
    return {static_cast<int>(std::lround(mm.x / spacing_mm_)),
            static_cast<int>(std::lround(mm.y / spacing_mm_)),
            static_cast<int>(std::lround(mm.z / spacing_mm_))};
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  GridSize sizes_{0, 0, 0};
  double spacing_mm_ = 1.5;
  std::vector<T> data_;
};

using RealVolume = Volume<float>;
using MaskVolume = Volume<std::uint8_t>;

template <typename T, typename U>
bool same_geometry(const Volume<T>& a, const Volume<U>& b) {
  return a.sizes() == b.sizes() && a.spacing_mm() == b.spacing_mm();
}

inline std::size_t count_nonzero(const MaskVolume& m) {
  std::size_t n = 0;
  for (auto v : m.data()) n += v != 0;
  return n;
}

}  // namespace tubetrack
