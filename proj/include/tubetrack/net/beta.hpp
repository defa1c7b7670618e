#pragma once

#include <array>
#include <span>

#include "tubetrack/grid/volume.hpp"
#include "tubetrack/rng.hpp"

namespace tubetrack {

using Unit3 = std::array<double, 3>;

// Per-axis Beta(alpha, beta) policy output; every parameter > 1.
struct BetaTriple {
  std::array<double, 3> alpha{2.0, 2.0, 2.0};
  std::array<double, 3> beta{2.0, 2.0, 2.0};

  // alpha_i = softplus(raw[i]) + 1, beta_i = softplus(raw[3 + i]) + 1.
  static BetaTriple from_raw(std::span<const double> raw);
};

// Clamp applied to unit actions before evaluating densities.
inline constexpr double kUnitEpsilon = 1e-6;

Unit3 sample_unit(const BetaTriple& bt, Rng& rng);
// (alpha - 1) / (alpha + beta - 2) per axis.
Unit3 mode_unit(const BetaTriple& bt);

// Sum over axes of the Beta log-density; u is clamped to
// [kUnitEpsilon, 1 - kUnitEpsilon].
double log_prob(const BetaTriple& bt, const Unit3& u);
// Sum over axes of the differential entropy.
double entropy(const BetaTriple& bt);

// Partial derivatives with respect to alpha and beta per axis.
struct BetaGrad {
  std::array<double, 3> d_alpha{};
  std::array<double, 3> d_beta{};
};
BetaGrad log_prob_grad(const BetaTriple& bt, const Unit3& u);
BetaGrad entropy_grad(const BetaTriple& bt);

// Chain rule through softplus + 1 to the six raw head outputs.
void beta_grad_to_raw(std::span<const double> raw, const BetaGrad& g,
                      std::span<double> d_raw);

// mm = (2u - 1) * d_step_mm; voxels = round(mm / spacing), ties away from
// zero.
VoxelPoint unit_to_displacement(const Unit3& u, double d_step_mm, double spacing_mm);

}  // namespace tubetrack
