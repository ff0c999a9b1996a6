#pragma once

#include <cmath>
#include <numbers>

namespace mixflow {

// Asymptotic series after shifting the argument above 6; abs. error < 1e-12.
inline double digamma(double x) {
  double result = 0.0;
  while (x < 6.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double f = 1.0 / (x * x);
  result += std::log(x) - 0.5 / x -
            f * (1.0 / 12 - f * (1.0 / 120 - f * (1.0 / 252 - f * (1.0 / 240 - f / 132))));
  return result;
}

/// Log-density of a location-scale Student-t at a single point.
inline double student_t_logpdf(double x, double loc, double scale, double df) {
  const double u = (x - loc) / scale;
  return std::lgamma(0.5 * (df + 1.0)) - std::lgamma(0.5 * df) -
         0.5 * std::log(df * std::numbers::pi) - std::log(scale) -
         0.5 * (df + 1.0) * std::log1p(u * u / df);
}

inline double normal_logpdf(double x, double mean, double sd) {
  const double u = (x - mean) / sd;
  return -0.5 * u * u - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

/// Half-normal with scale parameter `scale` (the std of the parent normal).
inline double half_normal_logpdf(double x, double scale) {
  if (x < 0.0) return -INFINITY;
  return normal_logpdf(x, 0.0, scale) + std::log(2.0);
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace mixflow
