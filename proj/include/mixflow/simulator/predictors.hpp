#pragma once

#include <array>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mixflow/numerics/special.hpp"
#include "mixflow/numerics/tensor.hpp"
#include "mixflow/rng.hpp"
#include "mixflow/simulator/config.hpp"
#include "mixflow/simulator/priors.hpp"

namespace mixflow {

enum class Family { Normal = 0, StudentT, Uniform, Bernoulli, NegativeBinomial, ScaledBeta };

inline constexpr std::array<double, 6> kFamilyProbabilities{0.10, 0.40, 0.05, 0.25, 0.10, 0.10};

inline const char* family_name(Family f) {
  switch (f) {
    case Family::Normal: return "normal";
    case Family::StudentT: return "student_t";
    case Family::Uniform: return "uniform";
    case Family::Bernoulli: return "bernoulli";
    case Family::NegativeBinomial: return "negative_binomial";
    case Family::ScaledBeta: return "scaled_beta";
  }
  return "?";
}

inline double beta_variate(Rng& rng, double a, double b) {
  const double x = std::gamma_distribution<double>(a, 1.0)(rng);
  const double y = std::gamma_distribution<double>(b, 1.0)(rng);
  return x / (x + y);
}

/// One predictor column's distribution. Meaning of a/b/c per family:
/// Normal(mean a, sd b); StudentT(df a, loc b, scale c); Uniform(low a, width b);
/// Bernoulli(p a); NegativeBinomial(r a, p b); ScaledBeta(shape a, shape b, scale c).
struct ColumnDistribution {
  Family family = Family::Normal;
  double a = 0.0, b = 1.0, c = 1.0;

  double variance() const {
    switch (family) {
      case Family::Normal: return b * b;
      case Family::StudentT: return c * c * a / (a - 2.0);
      case Family::Uniform: return b * b / 12.0;
      case Family::Bernoulli: return a * (1.0 - a);
      case Family::NegativeBinomial: return a * (1.0 - b) / (b * b);
      case Family::ScaledBeta: return c * c * a * b / ((a + b) * (a + b) * (a + b + 1.0));
    }
    return 0.0;
  }

  double sample(Rng& rng) const {
    switch (family) {
      case Family::Normal: return std::normal_distribution<double>(a, b)(rng);
      case Family::StudentT: return b + c * std::student_t_distribution<double>(a)(rng);
      case Family::Uniform: return a + b * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      case Family::Bernoulli: return std::bernoulli_distribution(a)(rng) ? 1.0 : 0.0;
      case Family::NegativeBinomial:
        return static_cast<double>(std::negative_binomial_distribution<int>(static_cast<int>(a), b)(rng));
      case Family::ScaledBeta: return c * beta_variate(rng, a, b);
    }
    return 0.0;
  }
};

inline ColumnDistribution draw_column_parameters(Family f, const PredictorRanges& r, Rng& rng) {
  ColumnDistribution c;
  c.family = f;
  switch (f) {
    case Family::Normal:
      c.a = uniform(rng, -r.normal_mean, r.normal_mean);
      c.b = uniform(rng, r.normal_sd_lo, r.normal_sd_hi);
      break;
    case Family::StudentT:
      c.a = uniform(rng, r.t_df_lo, r.t_df_hi);
      c.b = uniform(rng, -r.t_loc, r.t_loc);
      c.c = uniform(rng, r.t_scale_lo, r.t_scale_hi);
      break;
    case Family::Uniform:
      c.a = uniform(rng, -r.uniform_lo, r.uniform_lo);
      c.b = uniform(rng, r.uniform_width_lo, r.uniform_width_hi);
      break;
    case Family::Bernoulli:
      c.a = uniform(rng, r.bernoulli_p_lo, r.bernoulli_p_hi);
      break;
    case Family::NegativeBinomial:
      c.a = static_cast<double>(std::uniform_int_distribution<int>(r.negbin_r_lo, r.negbin_r_hi)(rng));
      c.b = uniform(rng, r.negbin_p_lo, r.negbin_p_hi);
      break;
    case Family::ScaledBeta:
      c.a = uniform(rng, r.beta_shape_lo, r.beta_shape_hi);
      c.b = uniform(rng, r.beta_shape_lo, r.beta_shape_hi);
      c.c = uniform(rng, r.beta_scale_lo, r.beta_scale_hi);
      break;
  }
  return c;
}

/// Lower Cholesky factor of an LKJ(eta) correlation matrix via the onion method.
inline Mat<double> lkj_cholesky(int dim, double eta, Rng& rng) {
  if (dim < 1) throw ConfigError("lkj_cholesky: dim must be >= 1");
  if (!(eta > 0)) throw ConfigError("lkj_cholesky: eta must be positive");
  Mat<double> L = Mat<double>::Zero(dim, dim);
  L(0, 0) = 1.0;
  if (dim == 1) return L;
  double b = eta + (dim - 2) / 2.0;
  const double r12 = 2.0 * beta_variate(rng, b, b) - 1.0;
  L(1, 0) = r12;
  L(1, 1) = std::sqrt(1.0 - r12 * r12);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int k = 2; k < dim; ++k) {
    b -= 0.5;
    const double y = beta_variate(rng, k / 2.0, b);
    Eigen::VectorXd u(k);
    for (int i = 0; i < k; ++i) u(i) = n01(rng);
    u /= u.norm();
    L.row(k).head(k) = std::sqrt(y) * u.transpose();
    L(k, k) = std::sqrt(1.0 - y);
  }
  return L;
}

/// Latent success probabilities of a binary variable correlated with x:
/// u ~ N(0,1), u <- r x + sqrt(1 - r^2) u, p = logistic(u).
inline std::vector<double> correlated_binary_probabilities(std::span<const double> x, double r, Rng& rng) {
  if (!(std::abs(r) < 1.0)) throw DomainError("correlated_binary: |r| must be < 1");
  std::normal_distribution<double> n01(0.0, 1.0);
  const double s = std::sqrt(1.0 - r * r);
  std::vector<double> p(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) throw DomainError("correlated_binary: non-finite input");
    p[i] = logistic(r * x[i] + s * n01(rng));
  }
  return p;
}

inline std::vector<std::uint8_t> correlated_binary(std::span<const double> x, double r, Rng& rng) {
  std::vector<double> p = correlated_binary_probabilities(x, r, rng);
  std::vector<std::uint8_t> z(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) z[i] = std::bernoulli_distribution(p[i])(rng) ? 1 : 0;
  return z;
}

struct PredictorSample {
  Tensor<double> X;                          // m x n_max x d, column 0 = intercept
  std::vector<ColumnDistribution> columns;   // per slope column (d - 1 entries)
  std::size_t variance_rejections = 0;
  std::size_t lkj_resamples = 0;
};

/// Draws the design matrices of all groups. Column 0 is the constant
/// intercept; slope columns draw a family per column, are mixed through an
/// LKJ Cholesky factor (continuous columns) and binaries are tied to a
/// previously generated column by correlated_binary. Toy mode draws
/// independent standard-normal slope columns.
inline PredictorSample sample_predictors(const std::vector<std::size_t>& group_sizes, int d,
                                         const SimulatorConfig& cfg, Rng& rng) {
  if (group_sizes.empty()) throw DimensionError("sample_predictors: no groups");
  std::size_t nm = 0;
  for (auto s : group_sizes) {
    if (s == 0) throw DimensionError("sample_predictors: group sizes must be positive");
    nm = std::max(nm, s);
  }
  const std::size_t m = group_sizes.size();
  PredictorSample out;
  out.X = Tensor<double>({m, nm, static_cast<std::size_t>(d)});
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < group_sizes[i]; ++j) {
      cells.emplace_back(i, j);
      out.X(i, j, 0) = 1.0;
    }
  if (d == 1) return out;

  std::discrete_distribution<int> pick(kFamilyProbabilities.begin(), kFamilyProbabilities.end());
  const double slope_bound = cfg.priors.tau_slope_hi;
  for (int k = 1; k < d; ++k) {
    ColumnDistribution col;
    if (cfg.toy) {
      col = ColumnDistribution{Family::Normal, 0.0, 1.0, 1.0};
    } else {
      const Family f = static_cast<Family>(pick(rng));
      int tries = 0;
      for (;;) {
        col = draw_column_parameters(f, cfg.predictors, rng);
        if (col.variance() * slope_bound <= cfg.variance_cap) break;
        ++out.variance_rejections;
        if (++tries >= 1000) {
          col = ColumnDistribution{Family::Normal, 0.0, 1.0, 1.0};
          break;
        }
      }
    }
    out.columns.push_back(col);
    for (auto [i, j] : cells) out.X(i, j, static_cast<std::size_t>(k)) = col.sample(rng);
  }
  if (cfg.toy) return out;

  std::vector<std::size_t> continuous;
  for (int k = 1; k < d; ++k)
    if (out.columns[static_cast<std::size_t>(k - 1)].family != Family::Bernoulli) continuous.push_back(static_cast<std::size_t>(k));
  if (continuous.size() >= 2) {
    const int dim = static_cast<int>(continuous.size());
    Mat<double> L;
    for (;;) {
      L = lkj_cholesky(dim, cfg.lkj_eta, rng);
      if ((L.diagonal().array() > 1e-12).all() && L.allFinite()) break;
      ++out.lkj_resamples;
    }
    Eigen::VectorXd v(dim);
    for (auto [i, j] : cells) {
      for (int c = 0; c < dim; ++c) v(c) = out.X(i, j, continuous[static_cast<std::size_t>(c)]);
      const Eigen::VectorXd w = L * v;
      for (int c = 0; c < dim; ++c) out.X(i, j, continuous[static_cast<std::size_t>(c)]) = w(c);
    }
  }

  for (int k = 2; k < d; ++k) {
    if (out.columns[static_cast<std::size_t>(k - 1)].family != Family::Bernoulli) continue;
    const std::size_t src = static_cast<std::size_t>(std::uniform_int_distribution<int>(1, k - 1)(rng));
    std::vector<double> x(cells.size());
    double mean = 0.0;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      x[c] = out.X(cells[c].first, cells[c].second, src);
      mean += x[c];
    }
    mean /= static_cast<double>(x.size());
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(x.size()));
    if (sd <= 0.0) continue;
    for (double& v : x) v = (v - mean) / sd;
    const double r = uniform(rng, -cfg.predictors.binary_corr, cfg.predictors.binary_corr);
    const auto z = correlated_binary(x, r, rng);
    for (std::size_t c = 0; c < cells.size(); ++c)
      out.X(cells[c].first, cells[c].second, static_cast<std::size_t>(k)) = z[c];
  }
  return out;
}

}  // namespace mixflow
