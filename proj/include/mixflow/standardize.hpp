#pragma once

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mixflow/error.hpp"
#include "mixflow/simulator/types.hpp"

namespace mixflow {

/// Per-dataset location/scale of every X column and of y, over valid cells.
/// Column 0 (the intercept) is recorded as mean 1, scale 1 and left as is.
/// Random-effect columns are the first q columns of X, so their statistics
/// are the leading entries of mu_x / sigma_x.
struct StandardizationRecord {
  std::vector<double> mu_x;
  std::vector<double> sigma_x;
  double mu_y = 0.0;
  double sigma_y = 1.0;
  std::vector<bool> degenerate_x;  // zero-variance slope column; its sigma was set to 1
  bool degenerate_y = false;
  int q = 0;

  int d() const { return static_cast<int>(mu_x.size()); }

  static StandardizationRecord identity(int d, int q) {
    StandardizationRecord r;
    r.mu_x.assign(static_cast<std::size_t>(d), 0.0);
    r.mu_x[0] = 1.0;
    r.sigma_x.assign(static_cast<std::size_t>(d), 1.0);
    r.degenerate_x.assign(static_cast<std::size_t>(d), false);
    r.q = q;
    return r;
  }
};

inline void to_json(nlohmann::json& j, const StandardizationRecord& r) {
  j = {{"mu_x", r.mu_x},       {"sigma_x", r.sigma_x},           {"mu_y", r.mu_y},
       {"sigma_y", r.sigma_y}, {"degenerate_x", r.degenerate_x}, {"degenerate_y", r.degenerate_y},
       {"q", r.q}};
}

inline void from_json(const nlohmann::json& j, StandardizationRecord& r) {
  r.mu_x = j.at("mu_x").get<std::vector<double>>();
  r.sigma_x = j.at("sigma_x").get<std::vector<double>>();
  r.mu_y = j.at("mu_y").get<double>();
  r.sigma_y = j.at("sigma_y").get<double>();
  r.degenerate_x = j.value("degenerate_x", std::vector<bool>(r.mu_x.size(), false));
  r.degenerate_y = j.value("degenerate_y", false);
  r.q = j.at("q").get<int>();
}

/// Z-scores y and the slope columns of X over valid cells (population
/// standard deviation). Z is rebuilt from the standardized X; pads stay 0.
inline std::pair<HierDataset, StandardizationRecord> standardize_data(const HierDataset& ds) {
  const std::size_t n = ds.total_n();
  if (n < 2) throw DomainError("standardize_data: need at least 2 observations");
  const int d = ds.d;
  StandardizationRecord rec = StandardizationRecord::identity(d, ds.q);

  auto moments = [&](auto get) {
    double s = 0.0;
    for (std::size_t i = 0; i < ds.m(); ++i)
      for (std::size_t j = 0; j < ds.group_sizes[i]; ++j) s += get(i, j);
    const double mu = s / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < ds.m(); ++i)
      for (std::size_t j = 0; j < ds.group_sizes[i]; ++j) ss += (get(i, j) - mu) * (get(i, j) - mu);
    return std::pair{mu, std::sqrt(ss / static_cast<double>(n))};
  };

  for (int k = 1; k < d; ++k) {
    auto [mu, sd] = moments([&](std::size_t i, std::size_t j) { return ds.X(i, j, k); });
    rec.mu_x[static_cast<std::size_t>(k)] = mu;
    if (!(sd > 0.0)) {
      rec.degenerate_x[static_cast<std::size_t>(k)] = true;
      sd = 1.0;
    }
    rec.sigma_x[static_cast<std::size_t>(k)] = sd;
  }
  auto [mu_y, sd_y] = moments([&](std::size_t i, std::size_t j) { return ds.y(i, j); });
  rec.mu_y = mu_y;
  if (!(sd_y > 0.0)) {
    rec.degenerate_y = true;
    sd_y = 1.0;
  }
  rec.sigma_y = sd_y;

  HierDataset out = ds;
  for (std::size_t i = 0; i < ds.m(); ++i)
    for (std::size_t j = 0; j < ds.group_sizes[i]; ++j) {
      for (int k = 1; k < d; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        out.X(i, j, k) = (ds.X(i, j, k) - rec.mu_x[kk]) / rec.sigma_x[kk];
      }
      for (int k = 0; k < ds.q; ++k) out.Z(i, j, k) = out.X(i, j, k);
      out.y(i, j) = (ds.y(i, j) - rec.mu_y) / rec.sigma_y;
    }
  return {std::move(out), std::move(rec)};
}

/// Maps parameters of the data-scale model to the model of the standardized
/// data. The random intercept absorbs the mean shift of the random slopes,
/// so its standard deviation is that of sum_k mu_zk alpha_ik (independent
/// random effects, mu_z0 = 1).
inline std::pair<GlobalParams, LocalParams> standardize_params(const GlobalParams& gp, const LocalParams& lp,
                                                               const StandardizationRecord& rec) {
  const auto d = static_cast<std::size_t>(rec.d());
  const auto q = static_cast<std::size_t>(rec.q);
  if (gp.beta.size() != d || gp.sigma_alpha.size() != q) throw DimensionError("standardize_params: lengths");
  const double sy = rec.sigma_y;
  GlobalParams g;
  g.beta.resize(d);
  double shift = gp.beta[0] - rec.mu_y;
  for (std::size_t k = 1; k < d; ++k) {
    g.beta[k] = gp.beta[k] * rec.sigma_x[k] / sy;
    shift += rec.mu_x[k] * gp.beta[k];
  }
  g.beta[0] = shift / sy;
  g.sigma_alpha.resize(q);
  double var0 = gp.sigma_alpha[0] * gp.sigma_alpha[0];
  for (std::size_t k = 1; k < q; ++k) {
    g.sigma_alpha[k] = gp.sigma_alpha[k] * rec.sigma_x[k] / sy;
    var0 += rec.mu_x[k] * rec.mu_x[k] * gp.sigma_alpha[k] * gp.sigma_alpha[k];
  }
  g.sigma_alpha[0] = std::sqrt(var0) / sy;
  g.sigma_eps = gp.sigma_eps / sy;

  LocalParams l{Tensor<double>(lp.alpha.shape())};
  for (std::size_t i = 0; i < lp.groups(); ++i) {
    double a0 = lp.alpha(i, 0);
    for (std::size_t k = 1; k < q; ++k) {
      l.alpha(i, k) = lp.alpha(i, k) * rec.sigma_x[k] / sy;
      a0 += rec.mu_x[k] * lp.alpha(i, k);
    }
    l.alpha(i, 0) = a0 / sy;
  }
  return {std::move(g), std::move(l)};
}

/// Inverse of the random-intercept variance map. Exact while
/// (sigma*_0 sigma_y)^2 exceeds the slope contribution; otherwise (a draw the
/// forward map cannot produce) falls back to sigma_0 = sigma*_0 sigma_y.
inline double unstandardize_intercept_sd(double s0_std, std::span<const double> slope_sds,
                                         const StandardizationRecord& rec) {
  const double total = (s0_std * rec.sigma_y) * (s0_std * rec.sigma_y);
  double slopes = 0.0;
  for (std::size_t k = 1; k < slope_sds.size(); ++k) slopes += rec.mu_x[k] * rec.mu_x[k] * slope_sds[k] * slope_sds[k];
  const double v = total - slopes;
  return v > 0.0 ? std::sqrt(v) : s0_std * rec.sigma_y;
}

inline GlobalParams unstandardize_global(const GlobalParams& g, const StandardizationRecord& rec) {
  const auto d = static_cast<std::size_t>(rec.d());
  const auto q = static_cast<std::size_t>(rec.q);
  const double sy = rec.sigma_y;
  GlobalParams out;
  out.beta.resize(d);
  double b0 = g.beta[0] * sy + rec.mu_y;
  for (std::size_t k = 1; k < d; ++k) {
    out.beta[k] = g.beta[k] * sy / rec.sigma_x[k];
    b0 -= rec.mu_x[k] * out.beta[k];
  }
  out.beta[0] = b0;
  out.sigma_alpha.resize(q);
  for (std::size_t k = 1; k < q; ++k) out.sigma_alpha[k] = g.sigma_alpha[k] * sy / rec.sigma_x[k];
  out.sigma_alpha[0] = unstandardize_intercept_sd(g.sigma_alpha[0], out.sigma_alpha, rec);
  out.sigma_eps = g.sigma_eps * sy;
  return out;
}

inline void unstandardize_alpha_row(std::span<const double> in, std::span<double> out, const StandardizationRecord& rec) {
  const std::size_t q = in.size();
  double a0 = in[0] * rec.sigma_y;
  for (std::size_t k = 1; k < q; ++k) {
    out[k] = in[k] * rec.sigma_y / rec.sigma_x[k];
    a0 -= rec.mu_x[k] * out[k];
  }
  out[0] = a0;
}

/// log |d(data-scale global) / d(standardized global)| at a standardized
/// point. The map is triangular (the intercept and its sd depend on the
/// slopes, not the other way round), so this is the sum of the diagonal.
inline double log_jacobian_global(const GlobalParams& g, const StandardizationRecord& rec) {
  const auto d = static_cast<std::size_t>(rec.d());
  const auto q = static_cast<std::size_t>(rec.q);
  const double log_sy = std::log(rec.sigma_y);
  double lj = log_sy;  // intercept
  for (std::size_t k = 1; k < d; ++k) lj += log_sy - std::log(rec.sigma_x[k]);
  double slopes = 0.0;
  for (std::size_t k = 1; k < q; ++k) {
    const double sk = g.sigma_alpha[k] * rec.sigma_y / rec.sigma_x[k];
    slopes += rec.mu_x[k] * rec.mu_x[k] * sk * sk;
    lj += log_sy - std::log(rec.sigma_x[k]);
  }
  const double s0 = g.sigma_alpha[0];
  const double v = s0 * rec.sigma_y * s0 * rec.sigma_y - slopes;
  // exact branch: d sigma_0 / d s0 = s0 sigma_y^2 / sigma_0; the fallback is linear
  lj += v > 0.0 ? std::log(s0) + 2.0 * log_sy - 0.5 * std::log(v) : log_sy;
  lj += log_sy;  // noise sd
  return lj;
}

/// Same for one group's random-effect row; it does not depend on the point.
inline double log_jacobian_alpha(const StandardizationRecord& rec) {
  double lj = 0.0;
  for (int k = 0; k < rec.q; ++k) lj += std::log(rec.sigma_y) - (k > 0 ? std::log(rec.sigma_x[static_cast<std::size_t>(k)]) : 0.0);
  return lj;
}

inline std::pair<GlobalParams, LocalParams> unstandardize_params(const GlobalParams& g, const LocalParams& l,
                                                                 const StandardizationRecord& rec) {
  LocalParams out{Tensor<double>(l.alpha.shape())};
  const std::size_t q = static_cast<std::size_t>(rec.q);
  for (std::size_t i = 0; i < l.groups(); ++i)
    unstandardize_alpha_row(std::span<const double>(l.alpha.storage().data() + i * q, q),
                            std::span<double>(out.alpha.storage().data() + i * q, q), rec);
  return {unstandardize_global(g, rec), std::move(out)};
}

/// The prior expressed on the standardized scale, used as conditioning input.
/// Location/scale of each fixed effect follow the same linear map as the
/// parameters; the intercept scale and the random-intercept scale combine
/// the slope terms as independent contributions. Cross-covariances that the
/// intercept shift induces are dropped.
inline PriorSpec standardize_prior(const PriorSpec& p, const StandardizationRecord& rec) {
  const auto d = static_cast<std::size_t>(rec.d());
  const auto q = static_cast<std::size_t>(rec.q);
  if (p.nu_beta.size() != d || p.tau_sigma.size() != q) throw DimensionError("standardize_prior: lengths");
  const double sy = rec.sigma_y;
  PriorSpec s;
  s.nu_beta.resize(d);
  s.tau_beta.resize(d);
  s.tau_sigma.resize(q);
  double nu0 = p.nu_beta[0] - rec.mu_y;
  double t0 = p.tau_beta[0] * p.tau_beta[0];
  for (std::size_t k = 1; k < d; ++k) {
    s.nu_beta[k] = p.nu_beta[k] * rec.sigma_x[k] / sy;
    s.tau_beta[k] = p.tau_beta[k] * rec.sigma_x[k] / sy;
    nu0 += rec.mu_x[k] * p.nu_beta[k];
    t0 += rec.mu_x[k] * rec.mu_x[k] * p.tau_beta[k] * p.tau_beta[k];
  }
  s.nu_beta[0] = nu0 / sy;
  s.tau_beta[0] = std::sqrt(t0) / sy;
  double ts0 = p.tau_sigma[0] * p.tau_sigma[0];
  for (std::size_t k = 1; k < q; ++k) {
    s.tau_sigma[k] = p.tau_sigma[k] * rec.sigma_x[k] / sy;
    ts0 += rec.mu_x[k] * rec.mu_x[k] * p.tau_sigma[k] * p.tau_sigma[k];
  }
  s.tau_sigma[0] = std::sqrt(ts0) / sy;
  s.tau_eps = p.tau_eps / sy;
  return s;
}

}  // namespace mixflow
