#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mixflow/numerics/tensor.hpp"
#include "mixflow/simulator/types.hpp"
#include "mixflow/standardize.hpp"
#include "mixflow/textio.hpp"

namespace mixflow {

/// Parameter roles used for grouping metrics and conformal adjustments.
enum class Role { Fixed = 0, Variance = 1, Random = 2 };
inline constexpr int kRoleCount = 3;

inline const char* role_name(Role r) {
  switch (r) {
    case Role::Fixed: return "fixed";
    case Role::Variance: return "variance";
    case Role::Random: return "random";
  }
  return "?";
}

/// Column layout of a global draw: beta (d), sigma_alpha (q), sigma_eps.
inline int global_dim(int d, int q) { return d + q + 1; }

inline std::vector<std::string> global_param_names(int d, int q) {
  std::vector<std::string> n;
  for (int k = 0; k < d; ++k) n.push_back("beta[" + std::to_string(k) + "]");
  for (int k = 0; k < q; ++k) n.push_back("sigma_alpha[" + std::to_string(k) + "]");
  n.push_back("sigma_eps");
  return n;
}

inline Role global_role(int col, int d) { return col < d ? Role::Fixed : Role::Variance; }

inline std::vector<double> global_vector(const GlobalParams& g) {
  std::vector<double> v = g.beta;
  v.insert(v.end(), g.sigma_alpha.begin(), g.sigma_alpha.end());
  v.push_back(g.sigma_eps);
  return v;
}

inline GlobalParams global_from_vector(std::span<const double> v, int d, int q) {
  GlobalParams g;
  g.beta.assign(v.begin(), v.begin() + d);
  g.sigma_alpha.assign(v.begin() + d, v.begin() + d + q);
  g.sigma_eps = v[static_cast<std::size_t>(d + q)];
  return g;
}

/// k joint posterior draws for one dataset.
///
/// `global` is k x (d+q+1) in the layout above; `local` is k x (m*q), row j
/// holding alpha draws of all groups (group-major). Local draws are
/// conditioned on a point estimate of the global parameters, not on the
/// global draw of the same row.
struct PosteriorDraws {
  std::uint64_t dataset_id = 0;
  int d = 0;
  int q = 0;
  std::size_t m = 0;
  bool standardized = true;
  Mat<double> global;
  Mat<double> local;
  std::vector<double> log_q_global;   // k
  Mat<double> log_q_local;            // k x m
  std::optional<std::vector<double>> global_weights;  // mean 1
  std::optional<Mat<double>> local_weights;           // k x m, column means 1
  std::optional<StandardizationRecord> record;

  std::size_t k() const { return static_cast<std::size_t>(global.rows()); }

  GlobalParams global_draw(std::size_t j) const {
    std::vector<double> row(global.row(static_cast<Index>(j)).data(),
                            global.row(static_cast<Index>(j)).data() + global.cols());
    return global_from_vector(row, d, q);
  }

  double alpha(std::size_t j, std::size_t group, std::size_t col) const {
    return local(static_cast<Index>(j), static_cast<Index>(group * static_cast<std::size_t>(q) + col));
  }

  /// Weighted mean of every global column (uniform when no weights).
  std::vector<double> global_mean() const;
  /// Weighted mean of alpha, m x q.
  LocalParams local_mean() const;
};

inline std::vector<double> weighted_column_mean(const Mat<double>& draws, const std::vector<double>* w) {
  std::vector<double> out(static_cast<std::size_t>(draws.cols()), 0.0);
  double wsum = 0.0;
  for (Index j = 0; j < draws.rows(); ++j) {
    const double wj = w ? (*w)[static_cast<std::size_t>(j)] : 1.0;
    wsum += wj;
    for (Index c = 0; c < draws.cols(); ++c) out[static_cast<std::size_t>(c)] += wj * draws(j, c);
  }
  for (double& v : out) v /= wsum;
  return out;
}

inline std::vector<double> PosteriorDraws::global_mean() const {
  return weighted_column_mean(global, global_weights ? &*global_weights : nullptr);
}

inline LocalParams PosteriorDraws::local_mean() const {
  LocalParams out{Tensor<double>({m, static_cast<std::size_t>(q)})};
  for (std::size_t i = 0; i < m; ++i) {
    double wsum = 0.0;
    for (std::size_t j = 0; j < k(); ++j) {
      const double w = local_weights ? (*local_weights)(static_cast<Index>(j), static_cast<Index>(i)) : 1.0;
      wsum += w;
      for (std::size_t c = 0; c < static_cast<std::size_t>(q); ++c) out.alpha(i, c) += w * alpha(j, i, c);
    }
    for (std::size_t c = 0; c < static_cast<std::size_t>(q); ++c) out.alpha(i, c) /= wsum;
  }
  return out;
}

/// Applies the exact inverse parameter map draw by draw. Weights carry over
/// unchanged; log densities get the change-of-variables correction so they
/// stay densities of the returned draws.
inline PosteriorDraws unstandardize_draws(const PosteriorDraws& in, const StandardizationRecord& rec) {
  if (!in.standardized) return in;
  PosteriorDraws out = in;
  out.standardized = false;
  out.record = rec;
  const auto q = static_cast<std::size_t>(in.q);
  const double lj_alpha = log_jacobian_alpha(rec);
  const bool has_lq = in.log_q_global.size() == in.k();
  const bool has_lql = in.log_q_local.rows() == static_cast<Index>(in.k()) && in.log_q_local.cols() == static_cast<Index>(in.m);
  for (std::size_t j = 0; j < in.k(); ++j) {
    const GlobalParams gs = in.global_draw(j);
    if (has_lq) out.log_q_global[j] -= log_jacobian_global(gs, rec);
    if (has_lql) out.log_q_local.row(static_cast<Index>(j)).array() -= lj_alpha;
    const GlobalParams g = unstandardize_global(gs, rec);
    const auto v = global_vector(g);
    for (std::size_t c = 0; c < v.size(); ++c) out.global(static_cast<Index>(j), static_cast<Index>(c)) = v[c];
    for (std::size_t i = 0; i < in.m; ++i) {
      const double* src = in.local.row(static_cast<Index>(j)).data() + i * q;
      double* dst = out.local.row(static_cast<Index>(j)).data() + i * q;
      unstandardize_alpha_row(std::span<const double>(src, q), std::span<double>(dst, q), rec);
    }
  }
  return out;
}

// Posterior draw files: JSON Lines, one record per dataset with fields
// dataset_id, d, q, m, k, standardized, global (k*(d+q+1), row-major),
// local (k*m*q), log_q_global, log_q_local, optional global_weights,
// local_weights and record (standardization), plus free-form "intervals".

inline nlohmann::ordered_json draws_to_json(const PosteriorDraws& p) {
  auto flat = [](const Mat<double>& m) { return std::vector<double>(m.data(), m.data() + m.size()); };
  nlohmann::ordered_json j;
  j["dataset_id"] = p.dataset_id;
  j["d"] = p.d;
  j["q"] = p.q;
  j["m"] = p.m;
  j["k"] = p.k();
  j["standardized"] = p.standardized;
  j["global"] = flat(p.global);
  j["local"] = flat(p.local);
  j["log_q_global"] = p.log_q_global;
  j["log_q_local"] = flat(p.log_q_local);
  if (p.global_weights) j["global_weights"] = *p.global_weights;
  if (p.local_weights) j["local_weights"] = flat(*p.local_weights);
  if (p.record) j["record"] = nlohmann::json(*p.record);
  return j;
}

inline PosteriorDraws draws_from_json(const nlohmann::json& j) {
  PosteriorDraws p;
  p.dataset_id = j.value("dataset_id", std::uint64_t{0});
  p.d = j.at("d").get<int>();
  p.q = j.at("q").get<int>();
  p.m = j.at("m").get<std::size_t>();
  const auto k = static_cast<Index>(j.at("k").get<std::size_t>());
  p.standardized = j.value("standardized", false);
  auto mat = [&](const char* key, Index rows, Index cols) {
    const auto v = j.at(key).get<std::vector<double>>();
    if (static_cast<Index>(v.size()) != rows * cols) throw DimensionError(std::string("draw record: ") + key + " length");
    Mat<double> m(rows, cols);
    std::copy(v.begin(), v.end(), m.data());
    return m;
  };
  const auto mq = static_cast<Index>(p.m) * p.q;
  p.global = mat("global", k, global_dim(p.d, p.q));
  p.local = mat("local", k, mq);
  p.log_q_global = j.value("log_q_global", std::vector<double>(static_cast<std::size_t>(k), 0.0));
  p.log_q_local = j.contains("log_q_local") ? mat("log_q_local", k, static_cast<Index>(p.m))
                                             : Mat<double>::Zero(k, static_cast<Index>(p.m));
  if (j.contains("global_weights")) p.global_weights = j["global_weights"].get<std::vector<double>>();
  if (j.contains("local_weights")) p.local_weights = mat("local_weights", k, static_cast<Index>(p.m));
  if (j.contains("record")) p.record = j["record"].get<StandardizationRecord>();
  return p;
}

inline void write_draws(const std::string& path, const std::vector<nlohmann::ordered_json>& records) {
  std::string text;
  for (const auto& r : records) {
    text += r.dump();
    text += '\n';
  }
  write_text(path, text);
}

inline std::vector<nlohmann::json> read_json_lines(const std::string& path) {
  std::vector<nlohmann::json> out;
  std::size_t lineno = 0;
  for (const auto& line : split_lines(read_text(path))) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace mixflow
