#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "json.hpp"
#include "mixflow/draws.hpp"
#include "mixflow/simulator/dataset.hpp"

namespace mixflow {

namespace detail {
inline constexpr double kLog2Pi = 1.8378770664093454836;

inline double normal_logpdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * kLog2Pi;
}

inline double half_normal_logpdf(double x, double scale) {
  if (x < 0.0) return -std::numeric_limits<double>::infinity();
  return normal_logpdf(x, 0.0, scale) + std::numbers::ln2;
}

inline void check_scales(const GlobalParams& g) {
  if (!(g.sigma_eps > 0.0)) throw DomainError("sigma_eps draw must be positive");
  for (double s : g.sigma_alpha)
    if (!(s >= 0.0)) throw DomainError("sigma_alpha draw must be non-negative");
}
}  // namespace detail

// --- likelihoods and priors ---------------------------------------------------------
//
// Likelihood functions return the data term only; priors are separate and
// log_joint_* adds them up.

inline double group_log_likelihood(const HierDataset& ds, std::size_t i, const GlobalParams& g,
                                   std::span<const double> alpha_i) {
  double ll = 0.0;
  for (std::size_t j = 0; j < ds.group_sizes[i]; ++j) {
    const double r = ds.y(i, j) - linear_predictor(ds, i, j, g.beta, alpha_i);
    ll += detail::normal_logpdf(r, 0.0, g.sigma_eps);
  }
  return ll;
}

/// log p(y | X, alpha, beta, sigma_eps) summed over groups.
inline double conditional_log_likelihood(const HierDataset& ds, const GlobalParams& g, const LocalParams& l) {
  detail::check_scales(g);
  if (l.groups() != ds.m()) throw DimensionError("conditional_log_likelihood: alpha rows != groups");
  double ll = 0.0;
  for (std::size_t i = 0; i < ds.m(); ++i) ll += group_log_likelihood(ds, i, g, alpha_row(l, i));
  return ll;
}

/// log p(y | X, beta, sigma_alpha, sigma_eps) with the random effects
/// integrated out: y_i ~ N(X_i beta, Z_i diag(sigma_alpha^2) Z_i' + sigma_eps^2 I).
inline double marginal_log_likelihood(const HierDataset& ds, const GlobalParams& g) {
  detail::check_scales(g);
  const auto q = static_cast<std::size_t>(ds.q);
  const std::vector<double> zero(q, 0.0);
  double ll = 0.0;
  for (std::size_t i = 0; i < ds.m(); ++i) {
    const auto n = static_cast<Index>(ds.group_sizes[i]);
    Eigen::MatrixXd Z(n, static_cast<Index>(q));
    Eigen::VectorXd r(n);
    for (Index j = 0; j < n; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      r(j) = ds.y(i, jj) - linear_predictor(ds, i, jj, g.beta, zero);
      for (std::size_t k = 0; k < q; ++k) Z(j, static_cast<Index>(k)) = ds.Z(i, jj, k);
    }
    Eigen::VectorXd var(static_cast<Index>(q));
    for (std::size_t k = 0; k < q; ++k) var(static_cast<Index>(k)) = g.sigma_alpha[k] * g.sigma_alpha[k];
    Eigen::MatrixXd S = Z * var.asDiagonal() * Z.transpose();
    S.diagonal().array() += g.sigma_eps * g.sigma_eps;
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success) {
      S.diagonal().array() += 1e-8;
      llt.compute(S);
      if (llt.info() != Eigen::Success) throw NumericError("marginal covariance of group " + std::to_string(i) + " is not positive definite");
    }
    const Eigen::VectorXd w = llt.matrixL().solve(r);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    ll += -0.5 * (w.squaredNorm() + logdet + static_cast<double>(n) * detail::kLog2Pi);
  }
  return ll;
}

/// log p(beta) + log p(sigma_alpha) + log p(sigma_eps).
inline double log_prior_global(const PriorSpec& p, const GlobalParams& g) {
  double lp = 0.0;
  for (std::size_t k = 0; k < g.beta.size(); ++k) lp += detail::normal_logpdf(g.beta[k], p.nu_beta[k], p.tau_beta[k]);
  for (std::size_t k = 0; k < g.sigma_alpha.size(); ++k) lp += detail::half_normal_logpdf(g.sigma_alpha[k], p.tau_sigma[k]);
  lp += detail::half_normal_logpdf(g.sigma_eps, p.tau_eps);
  return lp;
}

/// log p(alpha_i | sigma_alpha).
inline double log_prior_alpha(std::span<const double> alpha_i, std::span<const double> sigma_alpha) {
  double lp = 0.0;
  for (std::size_t k = 0; k < alpha_i.size(); ++k) lp += detail::normal_logpdf(alpha_i[k], 0.0, sigma_alpha[k]);
  return lp;
}

inline double log_joint_conditional(const HierDataset& ds, const PriorSpec& p, const GlobalParams& g,
                                    const LocalParams& l) {
  double lp = conditional_log_likelihood(ds, g, l) + log_prior_global(p, g);
  for (std::size_t i = 0; i < ds.m(); ++i) lp += log_prior_alpha(alpha_row(l, i), g.sigma_alpha);
  return lp;
}

inline double log_joint_marginal(const HierDataset& ds, const PriorSpec& p, const GlobalParams& g) {
  return marginal_log_likelihood(ds, g) + log_prior_global(p, g);
}

// --- importance weights -----------------------------------------------------------------

/// Linear-interpolation quantile of unsorted values.
inline double quantile(std::vector<double> v, double prob) {
  if (v.empty()) throw DimensionError("quantile of an empty vector");
  std::sort(v.begin(), v.end());
  const double pos = prob * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct WeightResult {
  std::vector<double> weights;  // mean 1
  bool uniform_fallback = false;
  double ess = 0.0;  // (sum w)^2 / sum w^2
};

/// Self-normalized importance weights: log w = log p - log q, clipped from
/// above at the `clip` quantile, exponentiated after subtracting the max and
/// scaled to mean 1. Non-finite log weights get weight zero; if nothing is
/// left the weights fall back to uniform.
inline WeightResult importance_weights(std::span<const double> log_p, std::span<const double> log_q,
                                       double clip = 0.98) {
  if (log_p.size() != log_q.size() || log_p.empty()) throw DimensionError("importance_weights: length mismatch");
  const std::size_t k = log_p.size();
  std::vector<double> lw(k);
  std::vector<double> finite;
  for (std::size_t j = 0; j < k; ++j) {
    lw[j] = log_p[j] - log_q[j];
    if (std::isfinite(lw[j])) finite.push_back(lw[j]);
  }
  WeightResult r;
  r.weights.assign(k, 1.0);
  if (finite.empty()) {
    r.uniform_fallback = true;
    r.ess = static_cast<double>(k);
    return r;
  }
  const double cap = quantile(finite, clip);
  double mx = -std::numeric_limits<double>::infinity();
  for (double& v : lw) {
    if (std::isfinite(v)) v = std::min(v, cap);
    mx = std::max(mx, std::isfinite(v) ? v : mx);
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    r.weights[j] = std::isfinite(lw[j]) ? std::exp(lw[j] - mx) : 0.0;
    sum += r.weights[j];
  }
  if (!(sum > 0.0)) {
    r.weights.assign(k, 1.0);
    r.uniform_fallback = true;
    r.ess = static_cast<double>(k);
    return r;
  }
  double sq = 0.0;
  for (double& w : r.weights) {
    w *= static_cast<double>(k) / sum;
    sq += w * w;
  }
  r.ess = static_cast<double>(k) * static_cast<double>(k) / sq;
  return r;
}

enum class WeightLikelihood { Conditional, Marginal };

struct RefineOptions {
  int alternations = 3;
  double clip = 0.98;
  WeightLikelihood likelihood = WeightLikelihood::Conditional;
};

struct RefineDiagnostics {
  double global_ess = 0.0;
  double min_local_ess = 0.0;
  int fallbacks = 0;
};

/// Alternating importance reweighting on the data scale. Starting with the
/// local level, each group's draws are weighted given the weighted global
/// means; then the global draws are weighted given the weighted local means.
/// `draws` must be unstandardized and carry log densities of those draws.
inline PosteriorDraws alternating_refine(const HierDataset& ds, const PriorSpec& prior, const PosteriorDraws& draws,
                                         const RefineOptions& opt = {}, RefineDiagnostics* diag = nullptr) {
  if (draws.standardized) throw ConfigError("alternating_refine expects data-scale draws");
  if (draws.m != ds.m() || draws.d != ds.d || draws.q != ds.q) throw DimensionError("alternating_refine: draws do not match dataset");
  const std::size_t k = draws.k();
  const std::size_t m = ds.m();
  const auto q = static_cast<std::size_t>(ds.q);
  PosteriorDraws out = draws;
  out.global_weights = std::vector<double>(k, 1.0);
  out.local_weights = Mat<double>::Ones(static_cast<Index>(k), static_cast<Index>(m));
  RefineDiagnostics dg;

  std::vector<GlobalParams> globals(k);
  for (std::size_t j = 0; j < k; ++j) globals[j] = draws.global_draw(j);

  // the marginal global weights do not depend on the local means
  std::vector<double> marginal_lp;
  if (opt.likelihood == WeightLikelihood::Marginal) {
    marginal_lp.resize(k);
    for (std::size_t j = 0; j < k; ++j) marginal_lp[j] = log_joint_marginal(ds, prior, globals[j]);
  }

  std::vector<double> lp(k), lq(k);
  for (int it = 0; it < opt.alternations; ++it) {
    const GlobalParams gbar = global_from_vector(out.global_mean(), ds.d, ds.q);
    dg.min_local_ess = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        std::span<const double> a(draws.local.row(static_cast<Index>(j)).data() + i * q, q);
        lp[j] = group_log_likelihood(ds, i, gbar, a) + log_prior_alpha(a, gbar.sigma_alpha);
        lq[j] = draws.log_q_local(static_cast<Index>(j), static_cast<Index>(i));
      }
      const auto w = importance_weights(lp, lq, opt.clip);
      dg.fallbacks += w.uniform_fallback;
      dg.min_local_ess = std::min(dg.min_local_ess, w.ess);
      for (std::size_t j = 0; j < k; ++j) (*out.local_weights)(static_cast<Index>(j), static_cast<Index>(i)) = w.weights[j];
    }

    if (opt.likelihood == WeightLikelihood::Marginal) {
      lp = marginal_lp;
    } else {
      const LocalParams abar = out.local_mean();
      for (std::size_t j = 0; j < k; ++j) lp[j] = log_joint_conditional(ds, prior, globals[j], abar);
    }
    const auto w = importance_weights(lp, draws.log_q_global, opt.clip);
    dg.fallbacks += w.uniform_fallback;
    dg.global_ess = w.ess;
    out.global_weights = w.weights;
  }
  if (diag) *diag = dg;
  return out;
}

// --- intervals and conformal calibration ---------------------------------------------------

/// Weighted quantile with midpoint plotting positions: draw i (sorted) sits at
/// (cumulative weight before it + w_i / 2) / total; values between positions
/// are interpolated and values outside clamp to the extremes. Zero-weight
/// draws are ignored. Equal weights give the Hazen quantile.
inline double weighted_quantile(std::span<const double> values, std::span<const double> weights, double prob) {
  std::vector<std::pair<double, double>> vw;
  double total = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    if (w > 0.0) {
      vw.emplace_back(values[i], w);
      total += w;
    }
  }
  if (vw.empty()) throw DomainError("weighted_quantile: no positive weights");
  std::sort(vw.begin(), vw.end());
  double before = 0.0, prev_pos = 0.0, prev_val = vw.front().first;
  for (std::size_t i = 0; i < vw.size(); ++i) {
    const double pos = (before + 0.5 * vw[i].second) / total;
    if (prob <= pos) {
      if (i == 0) return vw[0].first;
      return prev_val + (prob - prev_pos) / (pos - prev_pos) * (vw[i].first - prev_val);
    }
    before += vw[i].second;
    prev_pos = pos;
    prev_val = vw[i].first;
  }
  return vw.back().first;
}

inline const std::vector<double>& default_alphas() {
  static const std::vector<double> a{0.05, 0.1, 0.2, 0.32, 0.5};
  return a;
}

/// Central (1 - alpha) intervals of every parameter: global columns first,
/// then alpha[i][c] group-major.
struct Intervals {
  double alpha = 0.1;
  std::vector<double> lo, hi;
  std::vector<Role> roles;
  std::vector<double> scale;  // data units per standardized unit
  bool nearest_alpha = false;  // the table had no entry for alpha
};

inline std::vector<std::string> parameter_names(int d, int q, std::size_t m) {
  auto n = global_param_names(d, q);
  for (std::size_t i = 0; i < m; ++i)
    for (int c = 0; c < q; ++c) n.push_back("alpha[" + std::to_string(i) + "][" + std::to_string(c) + "]");
  return n;
}

/// Scale of each parameter in data units per standardized unit.
inline std::vector<double> parameter_scales(const StandardizationRecord& rec, std::size_t m) {
  const int d = rec.d(), q = rec.q;
  auto coef = [&](int k) { return k == 0 ? rec.sigma_y : rec.sigma_y / rec.sigma_x[static_cast<std::size_t>(k)]; };
  std::vector<double> s;
  for (int k = 0; k < d; ++k) s.push_back(coef(k));
  for (int k = 0; k < q; ++k) s.push_back(coef(k));
  s.push_back(rec.sigma_y);
  for (std::size_t i = 0; i < m; ++i)
    for (int k = 0; k < q; ++k) s.push_back(coef(k));
  return s;
}

inline std::vector<Role> parameter_roles(int d, int q, std::size_t m) {
  std::vector<Role> r;
  for (int c = 0; c < global_dim(d, q); ++c) r.push_back(global_role(c, d));
  r.insert(r.end(), m * static_cast<std::size_t>(q), Role::Random);
  return r;
}

/// Flattened truth in the same layout as Intervals.
inline std::vector<double> truth_vector(const Truth& t) {
  std::vector<double> v = global_vector(t.global);
  v.insert(v.end(), t.local.alpha.storage().begin(), t.local.alpha.storage().end());
  return v;
}

/// Raw (uncalibrated) weighted-quantile intervals of data-scale draws.
inline Intervals raw_intervals(const PosteriorDraws& p, double alpha) {
  if (p.standardized) throw ConfigError("intervals are computed on data-scale draws");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must be in (0, 1)");
  Intervals iv;
  iv.alpha = alpha;
  iv.roles = parameter_roles(p.d, p.q, p.m);
  iv.scale = p.record ? parameter_scales(*p.record, p.m) : std::vector<double>(iv.roles.size(), 1.0);
  const std::size_t k = p.k();
  std::vector<double> col(k), w;
  auto push = [&](const Mat<double>& src, Index c, std::vector<double> weights) {
    for (std::size_t j = 0; j < k; ++j) col[j] = src(static_cast<Index>(j), c);
    iv.lo.push_back(weighted_quantile(col, weights, alpha / 2));
    iv.hi.push_back(weighted_quantile(col, weights, 1 - alpha / 2));
  };
  const std::vector<double> gw = p.global_weights ? *p.global_weights : std::vector<double>{};
  for (Index c = 0; c < p.global.cols(); ++c) push(p.global, c, gw);
  for (std::size_t i = 0; i < p.m; ++i) {
    std::vector<double> lw;
    if (p.local_weights) lw.assign(p.local_weights->col(static_cast<Index>(i)).data(),
                                   p.local_weights->col(static_cast<Index>(i)).data() + k);
    for (int c = 0; c < p.q; ++c) push(p.local, static_cast<Index>(i * static_cast<std::size_t>(p.q) + static_cast<std::size_t>(c)), lw);
  }
  return iv;
}

/// Additive border adjustments in standardized units, one per role and alpha.
struct ConformalTable {
  std::vector<double> alphas;
  std::vector<std::vector<double>> adjust;  // [role][alpha index]
  std::vector<std::size_t> scores;          // calibration scores per role
  std::size_t sets = 0;
  bool low_confidence = false;  // fewer than 100 calibration sets
  bool reweighted = false;      // calibrated on importance-weighted draws
  std::string checkpoint;       // id of the model it calibrates

  static ConformalTable zero(std::vector<double> alphas = default_alphas()) {
    ConformalTable t;
    t.adjust.assign(kRoleCount, std::vector<double>(alphas.size(), 0.0));
    t.scores.assign(kRoleCount, 0);
    t.alphas = std::move(alphas);
    return t;
  }

  /// Index of alpha in the table, or of the nearest entry (nearest = true).
  std::size_t find(double alpha, bool* nearest = nullptr) const {
    if (alphas.empty()) throw ConfigError("conformal table is empty");
    std::size_t best = 0;
    for (std::size_t a = 1; a < alphas.size(); ++a)
      if (std::abs(alphas[a] - alpha) < std::abs(alphas[best] - alpha)) best = a;
    if (nearest) *nearest = std::abs(alphas[best] - alpha) > 1e-12;
    return best;
  }

  double at(Role r, double alpha) const { return adjust[static_cast<std::size_t>(r)][find(alpha)]; }
};

inline void to_json(nlohmann::json& j, const ConformalTable& t) {
  j = {{"format", "mixflow-conformal"}, {"alphas", t.alphas}, {"sets", t.sets}, {"low_confidence", t.low_confidence},
       {"reweighted", t.reweighted}, {"checkpoint", t.checkpoint}};
  for (int r = 0; r < kRoleCount; ++r) {
    j["adjust"][role_name(static_cast<Role>(r))] = t.adjust[static_cast<std::size_t>(r)];
    j["scores"][role_name(static_cast<Role>(r))] = t.scores[static_cast<std::size_t>(r)];
  }
}

inline void from_json(const nlohmann::json& j, ConformalTable& t) {
  if (j.value("format", "") != "mixflow-conformal") throw IoError("not a conformal table");
  t = ConformalTable::zero(j.at("alphas").get<std::vector<double>>());
  t.sets = j.value("sets", std::size_t{0});
  t.low_confidence = j.value("low_confidence", false);
  t.reweighted = j.value("reweighted", false);
  t.checkpoint = j.value("checkpoint", "");
  for (int r = 0; r < kRoleCount; ++r) {
    const char* n = role_name(static_cast<Role>(r));
    auto v = j.at("adjust").at(n).get<std::vector<double>>();
    if (v.size() != t.alphas.size()) throw IoError("conformal table: wrong number of adjustments");
    for (double x : v)
      if (!std::isfinite(x)) throw IoError("conformal table: non-finite adjustment");
    t.adjust[static_cast<std::size_t>(r)] = std::move(v);
    if (j.contains("scores")) t.scores[static_cast<std::size_t>(r)] = j["scores"].value(n, std::size_t{0});
  }
}

/// Signed distance from the truth to the nearest border, positive outside the
/// interval, in standardized units.
inline double conformal_score(double lo, double hi, double truth, double scale) {
  return std::max(lo - truth, truth - hi) / scale;
}

/// Split-conformal adjustment: the ceil((n+1)(1-alpha))-th smallest score,
/// capped at the largest one.
inline double conformal_quantile(std::vector<double> scores, double alpha) {
  if (scores.empty()) return 0.0;
  std::sort(scores.begin(), scores.end());
  const double n = static_cast<double>(scores.size());
  auto rank = static_cast<std::size_t>(std::ceil((n + 1.0) * (1.0 - alpha)));
  rank = std::clamp<std::size_t>(rank, 1, scores.size());
  return scores[rank - 1];
}

/// `draws[i]` are data-scale draws (with standardization record) of the
/// dataset whose flattened truth (see truth_vector) is `truths[i]`.
inline ConformalTable calibrate(const std::vector<PosteriorDraws>& draws, const std::vector<std::vector<double>>& truths,
                                const std::vector<double>& alphas = default_alphas()) {
  if (draws.size() != truths.size()) throw DimensionError("calibrate: draws and truths differ in count");
  ConformalTable t = ConformalTable::zero(alphas);
  t.sets = draws.size();
  t.low_confidence = draws.size() < 100;
  for (std::size_t a = 0; a < alphas.size(); ++a) {
    std::vector<std::vector<double>> scores(kRoleCount);
    for (std::size_t s = 0; s < draws.size(); ++s) {
      const Intervals iv = raw_intervals(draws[s], alphas[a]);
      const std::vector<double>& th = truths[s];
      if (th.size() != iv.lo.size()) throw DimensionError("calibrate: truth layout differs from draws");
      for (std::size_t p = 0; p < th.size(); ++p)
        scores[static_cast<std::size_t>(iv.roles[p])].push_back(conformal_score(iv.lo[p], iv.hi[p], th[p], iv.scale[p]));
    }
    for (int r = 0; r < kRoleCount; ++r) {
      t.adjust[static_cast<std::size_t>(r)][a] = conformal_quantile(scores[static_cast<std::size_t>(r)], alphas[a]);
      t.scores[static_cast<std::size_t>(r)] = scores[static_cast<std::size_t>(r)].size();
    }
  }
  return t;
}

/// Weighted-quantile intervals with each border moved outward by the
/// table's adjustment (inward when it is negative). Borders never cross.
inline Intervals apply_calibration(const PosteriorDraws& p, const ConformalTable& t, double alpha) {
  bool nearest = false;
  const std::size_t a = t.find(alpha, &nearest);
  Intervals iv = raw_intervals(p, alpha);
  iv.nearest_alpha = nearest;
  for (std::size_t i = 0; i < iv.lo.size(); ++i) {
    const double shift = t.adjust[static_cast<std::size_t>(iv.roles[i])][a] * iv.scale[i];
    double lo = iv.lo[i] - shift, hi = iv.hi[i] + shift;
    if (lo > hi) lo = hi = 0.5 * (lo + hi);
    iv.lo[i] = lo;
    iv.hi[i] = hi;
  }
  return iv;
}

inline nlohmann::ordered_json intervals_to_json(const Intervals& iv) {
  nlohmann::ordered_json j;
  j["alpha"] = iv.alpha;
  j["lo"] = iv.lo;
  j["hi"] = iv.hi;
  if (iv.nearest_alpha) j["nearest_alpha"] = true;
  return j;
}

}  // namespace mixflow
