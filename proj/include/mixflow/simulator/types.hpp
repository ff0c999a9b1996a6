#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mixflow/error.hpp"
#include "mixflow/numerics/tensor.hpp"

namespace mixflow {

/// Hyperparameters of the per-dataset priors:
///   beta_k ~ N(nu_beta[k], tau_beta[k]^2), sigma_alpha[j] ~ HalfNormal(tau_sigma[j]),
///   sigma_eps ~ HalfNormal(tau_eps).
struct PriorSpec {
  std::vector<double> nu_beta;
  std::vector<double> tau_beta;
  std::vector<double> tau_sigma;
  double tau_eps = 1.0;

  void validate(int d, int q) const {
    if (static_cast<int>(nu_beta.size()) != d || static_cast<int>(tau_beta.size()) != d ||
        static_cast<int>(tau_sigma.size()) != q) {
      throw DimensionError("prior lengths do not match d=" + std::to_string(d) +
                           " q=" + std::to_string(q));
    }
    for (double t : tau_beta)
      if (!(t > 0)) throw DomainError("tau_beta must be positive");
    for (double t : tau_sigma)
      if (!(t > 0)) throw DomainError("tau_sigma must be positive");
    if (!(tau_eps > 0)) throw DomainError("tau_eps must be positive");
  }

  bool operator==(const PriorSpec&) const = default;
};

/// Population-level parameters: fixed effects, random-effect standard
/// deviations (diagonal covariance) and the noise standard deviation.
struct GlobalParams {
  std::vector<double> beta;
  std::vector<double> sigma_alpha;
  double sigma_eps = 1.0;

  bool operator==(const GlobalParams&) const = default;
};

/// Per-group random effects, m x q.
struct LocalParams {
  Tensor<double> alpha;

  std::size_t groups() const { return alpha.rank() ? alpha.dim(0) : 0; }
  bool operator==(const LocalParams&) const = default;
};

/// Ground truth recorded by the simulator.
struct Truth {
  GlobalParams global;
  LocalParams local;
  Tensor<double> eps;  // m x n_max noise draws, zero at padded cells
  std::uint64_t noise_seed = 0;
};

/// A hierarchical regression dataset in padded layout.
///
/// Column 0 of X is the intercept (constant 1 on valid cells). Z equals X on
/// its first q columns and is zero elsewhere. All padded cells are zero.
struct HierDataset {
  std::uint64_t id = 0;
  int d = 0;
  int q = 0;
  Tensor<double> X;             // m x n_max x d
  Tensor<double> Z;             // m x n_max x d
  Tensor<double> y;             // m x n_max
  Tensor<std::uint8_t> mask;    // m x n_max
  std::vector<std::size_t> group_sizes;
  std::optional<PriorSpec> prior;
  std::optional<Truth> truth;

  std::size_t m() const { return group_sizes.size(); }
  std::size_t n_max() const { return y.rank() ? y.dim(1) : 0; }
  std::size_t total_n() const {
    std::size_t n = 0;
    for (auto s : group_sizes) n += s;
    return n;
  }

  /// Checks the structural invariants; throws DimensionError on violation.
  void validate() const {
    const std::size_t m_ = m();
    const std::size_t nm = n_max();
    if (d < 1 || q < 0 || q > d) throw DimensionError("invalid d/q");
    const std::vector<std::size_t> s3{m_, nm, static_cast<std::size_t>(d)};
    const std::vector<std::size_t> s2{m_, nm};
    if (X.shape() != s3 || Z.shape() != s3 || y.shape() != s2 || mask.shape() != s2) {
      throw DimensionError("dataset arrays do not match m x n_max x d");
    }
    for (std::size_t i = 0; i < m_; ++i) {
      std::size_t cnt = 0;
      for (std::size_t j = 0; j < nm; ++j) {
        const bool v = mask(i, j) != 0;
        cnt += v;
        if (v != (j < group_sizes[i])) throw DimensionError("mask is not a prefix of length group_sizes[i]");
        for (int k = 0; k < d; ++k) {
          if (!v && (X(i, j, k) != 0.0 || Z(i, j, k) != 0.0)) throw DimensionError("padded cell not zero");
          if (k >= q && Z(i, j, k) != 0.0) throw DimensionError("Z column beyond q not zero");
        }
        if (!v && y(i, j) != 0.0) throw DimensionError("padded outcome not zero");
      }
      if (cnt != group_sizes[i]) throw DimensionError("mask count differs from group size");
    }
  }
};

/// Allocates a zeroed dataset with prefix masks for the given group sizes.
inline HierDataset make_empty_dataset(int d, int q, const std::vector<std::size_t>& group_sizes) {
  if (group_sizes.empty()) throw DimensionError("dataset needs at least one group");
  std::size_t nm = 0;
  for (auto s : group_sizes) {
    if (s == 0) throw DimensionError("group sizes must be positive");
    nm = std::max(nm, s);
  }
  HierDataset ds;
  ds.d = d;
  ds.q = q;
  ds.group_sizes = group_sizes;
  const std::size_t m = group_sizes.size();
  ds.X = Tensor<double>({m, nm, static_cast<std::size_t>(d)});
  ds.Z = Tensor<double>({m, nm, static_cast<std::size_t>(d)});
  ds.y = Tensor<double>({m, nm});
  ds.mask = Tensor<std::uint8_t>({m, nm});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < group_sizes[i]; ++j) ds.mask(i, j) = 1;
  return ds;
}

}  // namespace mixflow
