#pragma once

#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include "mixflow/rng.hpp"
#include "mixflow/simulator/config.hpp"
#include "mixflow/simulator/types.hpp"

namespace mixflow {

inline double uniform(Rng& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// |N(0, scale^2)|, redrawn on an exact zero so the result is strictly positive.
inline double half_normal(Rng& rng, double scale) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    const double v = std::abs(n(rng)) * scale;
    if (v > 0.0) return v;
  }
}

/// Draws `batch` prior specifications. The first tau_beta entry (intercept)
/// uses the intercept interval, the remaining entries the slope interval.
inline std::vector<PriorSpec> sample_priors(std::size_t batch, int d, int q, Rng& rng,
                                            const PriorRanges& r = {}) {
  if (d < 1 || q < 1) throw ConfigError("sample_priors: need d >= 1 and q >= 1");
  if (q > d) throw ConfigError("sample_priors: q=" + std::to_string(q) + " exceeds d=" + std::to_string(d));
  std::vector<PriorSpec> out(batch);
  for (auto& p : out) {
    p.nu_beta.resize(static_cast<std::size_t>(d));
    p.tau_beta.resize(static_cast<std::size_t>(d));
    p.tau_sigma.resize(static_cast<std::size_t>(q));
    for (auto& v : p.nu_beta) v = uniform(rng, r.nu_lo, r.nu_hi);
    p.tau_beta[0] = uniform(rng, r.tau_intercept_lo, r.tau_intercept_hi);
    for (int k = 1; k < d; ++k) p.tau_beta[static_cast<std::size_t>(k)] = uniform(rng, r.tau_slope_lo, r.tau_slope_hi);
    for (auto& v : p.tau_sigma) v = uniform(rng, r.tau_sigma_lo, r.tau_sigma_hi);
    p.tau_eps = uniform(rng, r.tau_eps_lo, r.tau_eps_hi);
  }
  return out;
}

/// Draws global and local parameters for m groups from a prior.
inline std::pair<GlobalParams, LocalParams> sample_parameters(const PriorSpec& prior, std::size_t m, Rng& rng) {
  if (m < 1) throw DimensionError("sample_parameters: m must be >= 1");
  const std::size_t d = prior.nu_beta.size();
  const std::size_t q = prior.tau_sigma.size();
  GlobalParams g;
  g.sigma_alpha.resize(q);
  for (std::size_t j = 0; j < q; ++j) g.sigma_alpha[j] = half_normal(rng, prior.tau_sigma[j]);
  g.sigma_eps = half_normal(rng, prior.tau_eps);
  std::normal_distribution<double> n01(0.0, 1.0);
  LocalParams l{Tensor<double>({m, q})};
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < q; ++j) l.alpha(i, j) = g.sigma_alpha[j] * n01(rng);
  g.beta.resize(d);
  for (std::size_t k = 0; k < d; ++k) g.beta[k] = prior.nu_beta[k] + prior.tau_beta[k] * n01(rng);
  return {std::move(g), std::move(l)};
}

}  // namespace mixflow
