#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "tubetrack/grid/cylinder.hpp"
#include "tubetrack/grid/io.hpp"
#include "tubetrack/grid/line.hpp"
#include "tubetrack/grid/patch.hpp"
#include "tubetrack/grid/polyline.hpp"
#include "tubetrack/grid/volume.hpp"
#include "tubetrack/rng.hpp"

using namespace tubetrack;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "tubetrack_unit" / name;
  fs::create_directories(p.parent_path());
  return p;
}

// Brute-force oracle: every voxel whose closed unit cell meets the segment,
// by dense sampling plus an explicit cell/segment slab test.
bool segment_hits_cell(const VoxelPoint& a, const VoxelPoint& b, const VoxelPoint& c) {
  double t0 = 0.0, t1 = 1.0;
  for (int ax = 0; ax < 3; ++ax) {
    const double o = a[ax], d = b[ax] - a[ax];
    const double lo = c[ax] - 0.5, hi = c[ax] + 0.5;
    if (d == 0.0) {
      if (o < lo || o > hi) return false;
      continue;
    }
    double ta = (lo - o) / d, tb = (hi - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  return t0 < t1;  // positive-length overlap: touching an edge or corner only does not count
}

}  // namespace

TEST_CASE("volume indexing is k-fastest and round-trips through point()") {
  RealVolume v({3, 4, 5}, 1.5);
  CHECK(v.index(0, 0, 1) == 1);
  CHECK(v.index(0, 1, 0) == 5);
  CHECK(v.index(1, 0, 0) == 20);
  for (std::size_t i = 0; i < v.voxel_count(); ++i) CHECK(v.index(v.point(i)) == i);
  CHECK(v.contains({2, 3, 4}));
  CHECK_FALSE(v.contains({3, 0, 0}));
  CHECK_FALSE(v.contains({0, -1, 0}));
  CHECK(v.to_voxel(v.to_mm({2, 1, 3})) == VoxelPoint{2, 1, 3});
  CHECK_THROWS_AS(RealVolume({0, 1, 1}, 1.0), ConfigError);
  CHECK_THROWS_AS(RealVolume({2, 2, 2}, 1.0, std::vector<float>(7)), DataError);
}

TEST_CASE("line_voxels worked examples") {
  const std::vector<VoxelPoint> diag{{0, 0, 0}, {1, 1, 0}, {1, 1, 1}, {2, 2, 1}};
  CHECK(line_voxels({0, 0, 0}, {2, 2, 1}) == diag);
  CHECK(line_voxels({4, 4, 4}, {4, 4, 4}) == std::vector<VoxelPoint>{{4, 4, 4}});
  const auto axis = line_voxels({0, 0, 0}, {3, 0, 0});
  CHECK(axis == std::vector<VoxelPoint>{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}});
  const auto neg = line_voxels({0, 0, 0}, {-2, 0, 0});
  CHECK(neg == std::vector<VoxelPoint>{{0, 0, 0}, {-1, 0, 0}, {-2, 0, 0}});
}

TEST_CASE("line_voxels matches a slab-test oracle, is 26-connected and reversible") {
  Rng rng(11);
  for (int trial = 0; trial < 400; ++trial) {
    VoxelPoint a{int(rng.below(13)) - 6, int(rng.below(13)) - 6, int(rng.below(13)) - 6};
    VoxelPoint b{int(rng.below(13)) - 6, int(rng.below(13)) - 6, int(rng.below(13)) - 6};
    const auto line = line_voxels(a, b);
    REQUIRE(!line.empty());
    CHECK(line.front() == a);
    CHECK(line.back() == b);
    for (std::size_t i = 1; i < line.size(); ++i) {
      const VoxelPoint d = line[i] - line[i - 1];
      CHECK(std::max({std::abs(d.i), std::abs(d.j), std::abs(d.k)}) == 1);
    }
    std::set<VoxelPoint> got(line.begin(), line.end());
    CHECK(got.size() == line.size());
    // Every voxel whose open cell interior the segment crosses must be present.
    for (int i = std::min(a.i, b.i); i <= std::max(a.i, b.i); ++i) {
      for (int j = std::min(a.j, b.j); j <= std::max(a.j, b.j); ++j) {
        for (int k = std::min(a.k, b.k); k <= std::max(a.k, b.k); ++k) {
          if (segment_hits_cell(a, b, {i, j, k})) CHECK(got.count({i, j, k}) == 1);
        }
      }
    }
    auto rev = line_voxels(b, a);
    std::reverse(rev.begin(), rev.end());
    CHECK(rev == line);
  }
}

TEST_CASE("polyline arc length, projection, resampling and truncation") {
  const Polyline p({{0, 0, 0}, {10, 0, 0}, {10, 10, 0}});
  CHECK(p.length() == doctest::Approx(20.0));
  CHECK(p.at_arc(15.0).y == doctest::Approx(5.0));
  const auto pr = p.project({4, 3, 0});
  CHECK(pr.distance == doctest::Approx(3.0));
  CHECK(pr.arc == doctest::Approx(4.0));
  CHECK(pr.segment == 0);
  const auto r = p.resampled(1.0);
  CHECK(r.size() == 21);
  CHECK(r.length() == doctest::Approx(20.0));
  CHECK(p.truncated(12.5).length() == doctest::Approx(12.5));
  CHECK(p.reversed().front() == p.back());
}

TEST_CASE("polyline JSON round trip and malformed input") {
  const Polyline p({{0, 0, 0}, {1.5, 3.0, 4.5}});
  const auto path = scratch("poly.json");
  save_polyline(p, 1.5, path);
  double spacing = 0.0;
  CHECK(load_polyline(path, &spacing) == p);
  CHECK(spacing == 1.5);
  std::ofstream(scratch("bad.json")) << "{\"points_mm\": [[1, 2]]}";
  CHECK_THROWS_AS(load_polyline(scratch("bad.json")), DataError);
}

TEST_CASE("patch side and zero fill") {
  CHECK(patch_side(60.0, 1.5) == 39);
  CHECK(patch_side(30.0, 1.5) == 19);
  RealVolume v({5, 5, 5}, 1.5, 1.0f);
  const auto patch = extract_patch(v, {0, 0, 0}, 4.5);  // side 3
  REQUIRE(patch.sizes() == GridSize{3, 3, 3});
  CHECK(patch(0, 0, 0) == 0.0f);
  CHECK(patch(1, 1, 1) == 1.0f);
  CHECK(patch(2, 2, 2) == 1.0f);
  std::vector<float> out(27, -1.0f);
  extract_patch_into(v, {-10, 0, 0}, 3, std::span<float>(out));
  CHECK(std::all_of(out.begin(), out.end(), [](float f) { return f == 0.0f; }));
}

TEST_CASE("cylinder rasterisation agrees with the distance definition") {
  const Polyline p({{6, 6, 6}, {18, 9, 6}});
  const auto mask = rasterize_cylinders(p, 3.0, {20, 20, 20}, 1.5);
  for (std::size_t i = 0; i < mask.voxel_count(); ++i) {
    const Vec3 c = mask.to_mm(mask.point(i));
    CHECK((mask.data()[i] != 0) == (point_segment_distance(c, p.front(), p.back()) <= 3.0));
  }
  MaskVolume inc = MaskVolume::like(mask);
  const std::size_t added = add_capsule(inc, p.front(), p.back(), 3.0);
  CHECK(added == count_nonzero(mask));
  CHECK(add_capsule(inc, p.front(), p.back(), 3.0) == 0);
  CHECK(count_nonzero(rasterize_cylinders(Polyline{}, 3.0, {4, 4, 4}, 1.0)) == 0);
}

TEST_CASE("NRRD round trip, header layout and error classes") {
  RealVolume v({2, 3, 4}, 1.5);
  for (std::size_t i = 0; i < v.voxel_count(); ++i) v.storage()[i] = float(i) * 0.25f;
  const auto path = scratch("v.nrrd");
  save_volume(v, path);
  CHECK(load_real_volume(path) == v);
  {
    std::ifstream in(path, std::ios::binary);
    std::string header((std::istreambuf_iterator<char>(in)), {});
    header = header.substr(0, header.find("\n\n") + 2);
    CHECK(header ==
          "NRRD0004\ntype: float\ndimension: 3\nsizes: 2 3 4\nspacings: 1.5 1.5 1.5\n"
          "encoding: raw\nendian: little\n\n");
  }
  MaskVolume m({2, 2, 2}, 1.0);
  m(1, 0, 1) = 1;
  save_volume(m, scratch("m.nrrd"));
  CHECK(load_mask_volume(scratch("m.nrrd")) == m);
  CHECK_THROWS_AS(load_mask_volume(path), NrrdUnsupportedTypeError);

  std::ofstream(scratch("gz.nrrd"), std::ios::binary)
      << "NRRD0004\ntype: float\ndimension: 3\nsizes: 1 1 1\nspacings: 1 1 1\n"
         "encoding: gzip\nendian: little\n\n1234";
  CHECK_THROWS_AS(load_volume(scratch("gz.nrrd")), NrrdUnsupportedEncodingError);
  std::ofstream(scratch("short.nrrd"), std::ios::binary)
      << "NRRD0004\ntype: float\ndimension: 3\nsizes: 2 1 1\nspacings: 1 1 1\n"
         "encoding: raw\nendian: little\n\n1234";
  CHECK_THROWS_AS(load_volume(scratch("short.nrrd")), NrrdSizeMismatchError);
  std::ofstream(scratch("junk.nrrd"), std::ios::binary) << "hello\n\n";
  CHECK_THROWS_AS(load_volume(scratch("junk.nrrd")), NrrdHeaderError);
}
