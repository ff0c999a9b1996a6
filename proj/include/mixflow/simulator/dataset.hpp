#pragma once

#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "mixflow/rng.hpp"
#include "mixflow/simulator/config.hpp"
#include "mixflow/simulator/predictors.hpp"
#include "mixflow/simulator/priors.hpp"
#include "mixflow/simulator/types.hpp"

namespace mixflow {

/// x_ij' beta + z_ij' alpha_i for one valid cell.
inline double linear_predictor(const HierDataset& ds, std::size_t i, std::size_t j,
                               std::span<const double> beta, std::span<const double> alpha_i) {
  double acc = 0.0;
  for (int k = 0; k < ds.d; ++k) acc += ds.X(i, j, static_cast<std::size_t>(k)) * beta[static_cast<std::size_t>(k)];
  for (int k = 0; k < ds.q; ++k) acc += ds.Z(i, j, static_cast<std::size_t>(k)) * alpha_i[static_cast<std::size_t>(k)];
  return acc;
}

inline std::vector<double> alpha_row(const LocalParams& lp, std::size_t i) {
  const std::size_t q = lp.alpha.dim(1);
  std::vector<double> row(q);
  for (std::size_t k = 0; k < q; ++k) row[k] = lp.alpha(i, k);
  return row;
}

/// Noise draws eps_ij = sigma_eps * u_ij with u ~ N(0,1) taken from `rng`
/// in group-major, observation-minor order over valid cells.
inline Tensor<double> draw_noise(const HierDataset& ds, double sigma_eps, Rng& rng) {
  Tensor<double> eps({ds.m(), ds.n_max()});
  std::normal_distribution<double> n01(0.0, 1.0);
  for (std::size_t i = 0; i < ds.m(); ++i)
    for (std::size_t j = 0; j < ds.group_sizes[i]; ++j) eps(i, j) = sigma_eps * n01(rng);
  return eps;
}

/// Builds a dataset from predictors and parameters: Z copies the first q
/// columns of X, y = X beta + Z alpha + eps. Noise comes from a dedicated
/// stream seeded by a value drawn from `rng`, recorded in the truth.
inline HierDataset assemble_dataset(const PriorSpec& prior, const GlobalParams& gp, const LocalParams& lp,
                                    const Tensor<double>& X, const std::vector<std::size_t>& group_sizes,
                                    int q, Rng& rng) {
  const int d = static_cast<int>(X.dim(2));
  HierDataset ds = make_empty_dataset(d, q, group_sizes);
  if (X.dim(0) != ds.m() || X.dim(1) != ds.n_max()) throw DimensionError("assemble_dataset: X shape");
  if (gp.beta.size() != static_cast<std::size_t>(d) || gp.sigma_alpha.size() != static_cast<std::size_t>(q) ||
      lp.groups() != ds.m() || lp.alpha.dim(1) != static_cast<std::size_t>(q)) {
    throw DimensionError("assemble_dataset: parameter shapes");
  }
  for (std::size_t i = 0; i < ds.m(); ++i)
    for (std::size_t j = 0; j < group_sizes[i]; ++j)
      for (int k = 0; k < d; ++k) {
        const double v = X(i, j, static_cast<std::size_t>(k));
        ds.X(i, j, static_cast<std::size_t>(k)) = v;
        if (k < q) ds.Z(i, j, static_cast<std::size_t>(k)) = v;
      }
  Truth t;
  t.global = gp;
  t.local = lp;
  t.noise_seed = rng();
  Rng noise(t.noise_seed);
  t.eps = draw_noise(ds, gp.sigma_eps, noise);
  for (std::size_t i = 0; i < ds.m(); ++i) {
    const auto a = alpha_row(lp, i);
    for (std::size_t j = 0; j < group_sizes[i]; ++j) {
      const double v = linear_predictor(ds, i, j, gp.beta, a) + t.eps(i, j);
      if (!std::isfinite(v)) throw NumericError("assemble_dataset: non-finite outcome");
      ds.y(i, j) = v;
    }
  }
  ds.prior = prior;
  ds.truth = std::move(t);
  return ds;
}

struct SimulationStats {
  std::size_t rejected_datasets = 0;
  std::size_t variance_rejections = 0;
  std::size_t lkj_resamples = 0;
};

/// Simulates dataset number `index` of the stream identified by `seed`. The
/// result depends only on (cfg, seed, index), never on other datasets.
inline HierDataset simulate_dataset(const SimulatorConfig& cfg, std::uint64_t seed, std::uint64_t index,
                                    SimulationStats* stats = nullptr) {
  cfg.validate();
  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng = make_rng(seed, index, attempt);
    PriorSpec prior = sample_priors(1, cfg.d, cfg.q, rng, cfg.priors).front();
    const std::size_t m = static_cast<std::size_t>(std::uniform_int_distribution<int>(cfg.m_min, cfg.m_max)(rng));
    std::vector<std::size_t> sizes(m);
    for (auto& s : sizes) s = static_cast<std::size_t>(std::uniform_int_distribution<int>(cfg.n_min, cfg.n_max)(rng));
    auto pred = sample_predictors(sizes, cfg.d, cfg, rng);
    auto [gp, lp] = sample_parameters(prior, m, rng);
    if (stats) {
      stats->variance_rejections += pred.variance_rejections;
      stats->lkj_resamples += pred.lkj_resamples;
    }
    try {
      HierDataset ds = assemble_dataset(prior, gp, lp, pred.X, sizes, cfg.q, rng);
      ds.id = index;
      return ds;
    } catch (const NumericError&) {
      if (stats) ++stats->rejected_datasets;
      if (attempt > 100) throw;
    }
  }
}

/// Signal-to-noise ratio V(y - eps) / V(eps) over valid cells (population
/// variances). +infinity when the noise has zero variance.
inline double snr(const HierDataset& ds) {
  if (!ds.truth) throw ConfigError("snr: dataset has no recorded truth");
  std::vector<double> sig, noise;
  for (std::size_t i = 0; i < ds.m(); ++i)
    for (std::size_t j = 0; j < ds.group_sizes[i]; ++j) {
      noise.push_back(ds.truth->eps(i, j));
      sig.push_back(ds.y(i, j) - ds.truth->eps(i, j));
    }
  auto var = [](const std::vector<double>& v) {
    const double mu = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - mu) * (x - mu);
    return s / static_cast<double>(v.size());
  };
  const double vn = var(noise);
  if (vn == 0.0) return std::numeric_limits<double>::infinity();
  return var(sig) / vn;
}

/// Reorders slope columns: new column k takes old column perm[k]. perm must
/// fix the intercept (perm[0] == 0) and keep random-effect columns
/// (indices < q) among themselves so Z stays a prefix of X. The same
/// permutation is applied to X, Z, the prior, beta, alpha and sigma_alpha.
inline HierDataset permute_columns(const HierDataset& ds, const std::vector<int>& perm) {
  const int d = ds.d;
  if (static_cast<int>(perm.size()) != d) throw DomainError("permute_columns: permutation length");
  std::vector<int> seen(static_cast<std::size_t>(d), 0);
  for (int k = 0; k < d; ++k) {
    const int p = perm[static_cast<std::size_t>(k)];
    if (p < 0 || p >= d || seen[static_cast<std::size_t>(p)]++) throw DomainError("permute_columns: not a permutation");
    if ((k < ds.q) != (p < ds.q)) throw DomainError("permute_columns: must keep random-effect columns in place as a block");
  }
  if (perm[0] != 0) throw DomainError("permute_columns: intercept must stay in column 0");
  HierDataset out = ds;
  for (std::size_t i = 0; i < ds.m(); ++i)
    for (std::size_t j = 0; j < ds.n_max(); ++j)
      for (int k = 0; k < d; ++k) {
        const auto src = static_cast<std::size_t>(perm[static_cast<std::size_t>(k)]);
        out.X(i, j, static_cast<std::size_t>(k)) = ds.X(i, j, src);
        out.Z(i, j, static_cast<std::size_t>(k)) = ds.Z(i, j, src);
      }
  auto perm_vec = [&](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) r[k] = v[static_cast<std::size_t>(perm[k])];
    return r;
  };
  if (out.prior) {
    out.prior->nu_beta = perm_vec(ds.prior->nu_beta);
    out.prior->tau_beta = perm_vec(ds.prior->tau_beta);
    out.prior->tau_sigma = perm_vec(ds.prior->tau_sigma);
  }
  if (out.truth) {
    out.truth->global.beta = perm_vec(ds.truth->global.beta);
    out.truth->global.sigma_alpha = perm_vec(ds.truth->global.sigma_alpha);
    for (std::size_t i = 0; i < ds.m(); ++i)
      for (int k = 0; k < ds.q; ++k)
        out.truth->local.alpha(i, static_cast<std::size_t>(k)) =
            ds.truth->local.alpha(i, static_cast<std::size_t>(perm[static_cast<std::size_t>(k)]));
  }
  return out;
}

inline std::vector<int> inverse_permutation(const std::vector<int>& perm) {
  std::vector<int> inv(perm.size());
  for (std::size_t k = 0; k < perm.size(); ++k) inv[static_cast<std::size_t>(perm[k])] = static_cast<int>(k);
  return inv;
}

/// Uniformly random block-preserving slope permutation.
inline std::vector<int> random_slope_permutation(int d, int q, Rng& rng) {
  std::vector<int> perm(static_cast<std::size_t>(d));
  std::iota(perm.begin(), perm.end(), 0);
  if (q > 2) std::shuffle(perm.begin() + 1, perm.begin() + q, rng);
  if (d - q > 1) std::shuffle(perm.begin() + std::max(q, 1), perm.end(), rng);
  return perm;
}

}  // namespace mixflow
