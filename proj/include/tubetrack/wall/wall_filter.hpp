#pragma once

#include <array>

#include "tubetrack/grid/volume.hpp"

namespace tubetrack {

struct WallConfig {
  double sigma_mm = 1.5;
  bool normalize = true;
  void validate() const;
};

// Separable Gaussian, sigma in mm, kernel truncated at 4 sigma and
// renormalised where it overhangs the border. sigma 0 is the identity.
RealVolume gaussian_smooth(const RealVolume& v, double sigma_mm);

struct HessianEigenvalues {
  RealVolume l1, l2, l3;  // ascending, mm^-2
};

// Eigenvalues of the Hessian of the Gaussian-smoothed volume (central
// differences, replicated borders).
HessianEigenvalues hessian_eigenvalues(const RealVolume& v, double sigma_mm);

// Eigenvalues of a symmetric 3x3 matrix {xx, yy, zz, xy, xz, yz}, ascending.
std::array<double, 3> symmetric_eigenvalues(const std::array<double, 6>& m);

// Valley (dark sheet / tube on bright background) response: with
// m_i = l_i + (l_j + l_k) / 3, response = max(m_3, 0), optionally divided by
// the volume maximum. Output lies in [0, 1] when normalised.
RealVolume meijering_wall_response(const RealVolume& v, const WallConfig& cfg);

}  // namespace tubetrack
