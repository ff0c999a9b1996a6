#pragma once

#include <string>

#include "json.hpp"
#include "mixflow/error.hpp"

namespace mixflow {

/// Uniform sampling intervals for the prior hyperparameters.
struct PriorRanges {
  double nu_lo = -20.0, nu_hi = 20.0;
  double tau_intercept_lo = 0.1, tau_intercept_hi = 30.0;
  double tau_slope_lo = 0.1, tau_slope_hi = 20.0;
  double tau_sigma_lo = 0.1, tau_sigma_hi = 10.0;
  double tau_eps_lo = 0.001, tau_eps_hi = 10.0;

  /// Toy ranges: nu fixed at 0, tau_beta below 5, tau_sigma and tau_eps below 1.
  static PriorRanges toy() {
    PriorRanges r;
    r.nu_lo = r.nu_hi = 0.0;
    r.tau_intercept_hi = 5.0;
    r.tau_slope_hi = 5.0;
    r.tau_sigma_hi = 1.0;
    r.tau_eps_hi = 1.0;
    return r;
  }
};

/// Parameter ranges of the predictor families. These are not fixed by the
/// model definition; they are choices that keep outcomes well scaled.
struct PredictorRanges {
  double normal_mean = 5.0;                       // mean ~ U(-a, a)
  double normal_sd_lo = 0.1, normal_sd_hi = 5.0;
  double t_df_lo = 3.0, t_df_hi = 20.0;
  double t_loc = 5.0;
  double t_scale_lo = 0.1, t_scale_hi = 3.0;
  double uniform_lo = 5.0;                        // lower end ~ U(-a, a)
  double uniform_width_lo = 0.5, uniform_width_hi = 10.0;
  double bernoulli_p_lo = 0.1, bernoulli_p_hi = 0.9;
  int negbin_r_lo = 1, negbin_r_hi = 10;
  double negbin_p_lo = 0.2, negbin_p_hi = 0.9;
  double beta_shape_lo = 0.5, beta_shape_hi = 5.0;
  double beta_scale_lo = 1.0, beta_scale_hi = 10.0;
  double binary_corr = 0.8;                       // r ~ U(-a, a) for correlated binaries
};

struct SimulatorConfig {
  int d = 2;
  int q = 1;
  int m_min = 5, m_max = 30;
  int n_min = 5, n_max = 70;
  bool toy = false;
  double lkj_eta = 10.0;
  /// Rejection threshold for predictor family parameters: the analytic
  /// column variance times the slope prior-scale upper bound must stay below it.
  double variance_cap = 1e3;
  PriorRanges priors;
  PredictorRanges predictors;

  static SimulatorConfig make(int d, int q, bool toy) {
    SimulatorConfig c;
    c.d = d;
    c.q = q;
    c.toy = toy;
    if (toy) c.priors = PriorRanges::toy();
    c.validate();
    return c;
  }

  void validate() const {
    if (d < 1 || q < 1 || q > d) {
      throw ConfigError("need 1 <= q <= d (got d=" + std::to_string(d) + ", q=" + std::to_string(q) + ")");
    }
    if (m_min < 1 || m_max < m_min || n_min < 1 || n_max < n_min) {
      throw ConfigError("invalid group-count or group-size range");
    }
  }
};

inline void to_json(nlohmann::json& j, const SimulatorConfig& c) {
  j = {{"d", c.d},         {"q", c.q},         {"m_min", c.m_min},
       {"m_max", c.m_max}, {"n_min", c.n_min}, {"n_max", c.n_max},
       {"toy", c.toy},     {"lkj_eta", c.lkj_eta}, {"variance_cap", c.variance_cap}};
}

inline void from_json(const nlohmann::json& j, SimulatorConfig& c) {
  c = SimulatorConfig::make(j.value("d", 2), j.value("q", 1), j.value("toy", false));
  c.m_min = j.value("m_min", c.m_min);
  c.m_max = j.value("m_max", c.m_max);
  c.n_min = j.value("n_min", c.n_min);
  c.n_max = j.value("n_max", c.n_max);
  c.lkj_eta = j.value("lkj_eta", c.lkj_eta);
  c.variance_cap = j.value("variance_cap", c.variance_cap);
  c.validate();
}

}  // namespace mixflow
