#include "tubetrack/net/beta.hpp"

#include <algorithm>
#include <cmath>

#include "tubetrack/net/special.hpp"

namespace tubetrack {

BetaTriple BetaTriple::from_raw(std::span<const double> raw) {
  BetaTriple bt;
  for (int a = 0; a < 3; ++a) {
    bt.alpha[a] = softplus(raw[a]) + 1.0;
    bt.beta[a] = softplus(raw[3 + a]) + 1.0;
  }
  return bt;
}

Unit3 sample_unit(const BetaTriple& bt, Rng& rng) {
  Unit3 u;
  for (int a = 0; a < 3; ++a) {
    double x = rng.beta(bt.alpha[a], bt.beta[a]);
    // Gamma ratios can round to the closed interval; keep draws interior.
    u[a] = std::clamp(x, kUnitEpsilon, 1.0 - kUnitEpsilon);
  }
  return u;
}

Unit3 mode_unit(const BetaTriple& bt) {
  Unit3 m;
  for (int a = 0; a < 3; ++a) {
    m[a] = (bt.alpha[a] - 1.0) / (bt.alpha[a] + bt.beta[a] - 2.0);
  }
  return m;
}

double log_prob(const BetaTriple& bt, const Unit3& u) {
  double lp = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double x = std::clamp(u[a], kUnitEpsilon, 1.0 - kUnitEpsilon);
    lp += (bt.alpha[a] - 1.0) * std::log(x) + (bt.beta[a] - 1.0) * std::log1p(-x) -
          log_beta_fn(bt.alpha[a], bt.beta[a]);
  }
  return lp;
}

double entropy(const BetaTriple& bt) {
  double h = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double al = bt.alpha[a], be = bt.beta[a];
    h += log_beta_fn(al, be) - (al - 1.0) * digamma(al) - (be - 1.0) * digamma(be) +
         (al + be - 2.0) * digamma(al + be);
  }
  return h;
}

BetaGrad log_prob_grad(const BetaTriple& bt, const Unit3& u) {
  BetaGrad g;
  for (int a = 0; a < 3; ++a) {
    const double x = std::clamp(u[a], kUnitEpsilon, 1.0 - kUnitEpsilon);
    const double psi_sum = digamma(bt.alpha[a] + bt.beta[a]);
    g.d_alpha[a] = std::log(x) - digamma(bt.alpha[a]) + psi_sum;
    g.d_beta[a] = std::log1p(-x) - digamma(bt.beta[a]) + psi_sum;
  }
  return g;
}

BetaGrad entropy_grad(const BetaTriple& bt) {
  BetaGrad g;
  for (int a = 0; a < 3; ++a) {
    const double al = bt.alpha[a], be = bt.beta[a];
    const double tri_sum = (al + be - 2.0) * trigamma(al + be);
    g.d_alpha[a] = -(al - 1.0) * trigamma(al) + tri_sum;
    g.d_beta[a] = -(be - 1.0) * trigamma(be) + tri_sum;
  }
  return g;
}

void beta_grad_to_raw(std::span<const double> raw, const BetaGrad& g,
                      std::span<double> d_raw) {
  for (int a = 0; a < 3; ++a) {
    d_raw[a] = g.d_alpha[a] * sigmoid(raw[a]);
    d_raw[3 + a] = g.d_beta[a] * sigmoid(raw[3 + a]);
  }
}

VoxelPoint unit_to_displacement(const Unit3& u, double d_step_mm, double spacing_mm) {
  int v[3];
  for (int a = 0; a < 3; ++a) {
    const double mm = (2.0 * std::clamp(u[a], 0.0, 1.0) - 1.0) * d_step_mm;
    v[a] = static_cast<int>(std::round(mm / spacing_mm));  // half away from zero
  }
  return {v[0], v[1], v[2]};
}

}  // namespace tubetrack
