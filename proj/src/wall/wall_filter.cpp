#include "tubetrack/wall/wall_filter.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace tubetrack {

void WallConfig::validate() const {
  if (!(sigma_mm > 0.0)) throw ConfigError("wall: sigma_mm must be positive");
}

namespace {

// One separable pass along `axis` in double precision.
void convolve_axis(std::vector<double>& data, const GridSize& n, int axis,
                   const std::vector<double>& kernel) {
  const int radius = static_cast<int>(kernel.size() / 2);
  const int len = n[axis];
  const std::size_t stride =
      axis == 2 ? 1 : (axis == 1 ? static_cast<std::size_t>(n[2])
                                 : static_cast<std::size_t>(n[1]) * n[2]);
  std::vector<double> line(len), out(len);
  const int o1 = axis == 0 ? 1 : 0, o2 = axis == 2 ? 1 : 2;
  for (int a = 0; a < n[o1]; ++a) {
    for (int b = 0; b < n[o2]; ++b) {
      int idx[3] = {0, 0, 0};
      idx[o1] = a;
      idx[o2] = b;
      const std::size_t base =
          (static_cast<std::size_t>(idx[0]) * n[1] + idx[1]) * n[2] + idx[2];
      for (int t = 0; t < len; ++t) line[t] = data[base + t * stride];
      for (int t = 0; t < len; ++t) {
        double acc = 0.0, wsum = 0.0;
        const int lo = std::max(0, t - radius), hi = std::min(len - 1, t + radius);
        for (int u = lo; u <= hi; ++u) {
          const double w = kernel[u - t + radius];
          acc += w * line[u];
          wsum += w;
        }
        out[t] = acc / wsum;
      }
      for (int t = 0; t < len; ++t) data[base + t * stride] = out[t];
    }
  }
}

std::vector<double> smooth_double(const RealVolume& v, double sigma_mm) {
  std::vector<double> data(v.storage().begin(), v.storage().end());
  if (sigma_mm <= 0.0) return data;
  const double sigma = sigma_mm / v.spacing_mm();
  const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  for (int t = -radius; t <= radius; ++t) {
    kernel[t + radius] = std::exp(-0.5 * t * t / (sigma * sigma));
  }
  for (int axis = 0; axis < 3; ++axis) convolve_axis(data, v.sizes(), axis, kernel);
  return data;
}

}  // namespace

RealVolume gaussian_smooth(const RealVolume& v, double sigma_mm) {
  if (sigma_mm < 0.0) throw ConfigError("gaussian_smooth: sigma must be >= 0");
  const auto data = smooth_double(v, sigma_mm);
  RealVolume out = RealVolume::like(v);
  std::transform(data.begin(), data.end(), out.storage().begin(),
                 [](double d) { return static_cast<float>(d); });
  return out;
}

std::array<double, 3> symmetric_eigenvalues(const std::array<double, 6>& m) {
  // Cyclic Jacobi rotations on a 3x3 symmetric matrix.
  double a[3][3] = {{m[0], m[3], m[4]}, {m[3], m[1], m[5]}, {m[4], m[5], m[2]}};
  for (int sweep = 0; sweep < 50; ++sweep) {
    const double off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    const double diag = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2];
    if (off <= 1e-32 * diag || off == 0.0) break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (int k = 0; k < 3; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
    }
  }
  std::array<double, 3> ev{a[0][0], a[1][1], a[2][2]};
  std::sort(ev.begin(), ev.end());
  return ev;
}

HessianEigenvalues hessian_eigenvalues(const RealVolume& v, double sigma_mm) {
  const auto& n = v.sizes();
  if (n[0] < 5 || n[1] < 5 || n[2] < 5) {
    throw ConfigError("hessian_eigenvalues: every side must be >= 5 voxels");
  }
  const auto f = smooth_double(v, sigma_mm);
  const double inv_h2 = 1.0 / (v.spacing_mm() * v.spacing_mm());
  HessianEigenvalues out{RealVolume::like(v), RealVolume::like(v), RealVolume::like(v)};
  auto at = [&](int i, int j, int k) {
    i = std::clamp(i, 0, n[0] - 1);
    j = std::clamp(j, 0, n[1] - 1);
    k = std::clamp(k, 0, n[2] - 1);
    return f[(static_cast<std::size_t>(i) * n[1] + j) * n[2] + k];
  };
  for (int i = 0; i < n[0]; ++i) {
    for (int j = 0; j < n[1]; ++j) {
      for (int k = 0; k < n[2]; ++k) {
        const double c = at(i, j, k);
        const double xx = at(i + 1, j, k) - 2.0 * c + at(i - 1, j, k);
        const double yy = at(i, j + 1, k) - 2.0 * c + at(i, j - 1, k);
        const double zz = at(i, j, k + 1) - 2.0 * c + at(i, j, k - 1);
        const double xy = 0.25 * (at(i + 1, j + 1, k) - at(i + 1, j - 1, k) -
                                  at(i - 1, j + 1, k) + at(i - 1, j - 1, k));
        const double xz = 0.25 * (at(i + 1, j, k + 1) - at(i + 1, j, k - 1) -
                                  at(i - 1, j, k + 1) + at(i - 1, j, k - 1));
        const double yz = 0.25 * (at(i, j + 1, k + 1) - at(i, j + 1, k - 1) -
                                  at(i, j - 1, k + 1) + at(i, j - 1, k - 1));
        const auto ev = symmetric_eigenvalues(
            {xx * inv_h2, yy * inv_h2, zz * inv_h2, xy * inv_h2, xz * inv_h2, yz * inv_h2});
        out.l1(i, j, k) = static_cast<float>(ev[0]);
        out.l2(i, j, k) = static_cast<float>(ev[1]);
        out.l3(i, j, k) = static_cast<float>(ev[2]);
      }
    }
  }
  return out;
}

RealVolume meijering_wall_response(const RealVolume& v, const WallConfig& cfg) {
  cfg.validate();
  const auto eig = hessian_eigenvalues(v, cfg.sigma_mm);
  RealVolume out = RealVolume::like(v);
  constexpr double kAlpha = 1.0 / 3.0;
  double peak = 0.0;
  auto& r = out.storage();
  // Curvatures below this are rounding noise of the smoothing passes.
  double range = 0.0;
  for (float x : v.storage()) range = std::max(range, static_cast<double>(std::abs(x)));
  const double floor = 1e-9 * range / (v.spacing_mm() * v.spacing_mm());
  for (std::size_t x = 0; x < r.size(); ++x) {
    const double l1 = eig.l1.storage()[x], l2 = eig.l2.storage()[x],
                 l3 = eig.l3.storage()[x];
    // Largest modified eigenvalue; the coupling preserves ordering.
    const double m3 = l3 + kAlpha * (l1 + l2);
    const double resp = m3 > floor ? m3 : 0.0;
    r[x] = static_cast<float>(resp);
    peak = std::max(peak, resp);
  }
  if (cfg.normalize && peak > 0.0) {
    const double inv = 1.0 / peak;
    for (auto& x : r) x = std::min(1.0f, static_cast<float>(x * inv));
  }
  return out;
}

}  // namespace tubetrack
