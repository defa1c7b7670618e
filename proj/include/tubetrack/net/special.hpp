#pragma once

#include <cmath>

namespace tubetrack {

// ln Gamma(x) for x > 0 (shifted Stirling series, ~1e-14 relative).
double log_gamma(double x);
// Digamma psi(x) for x > 0 (recurrence + asymptotic series, < 1e-12).
double digamma(double x);
// Trigamma psi'(x) for x > 0.
double trigamma(double x);
// ln B(a, b).
double log_beta_fn(double a, double b);

inline double softplus(double x) {
  // log(1 + e^x) without overflow.
  return x > 30.0 ? x : (x < -30.0 ? std::exp(x) : std::log1p(std::exp(x)));
}
inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                  : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace tubetrack
