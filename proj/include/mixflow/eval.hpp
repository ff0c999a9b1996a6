#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mixflow/draws.hpp"
#include "mixflow/refine.hpp"
#include "mixflow/simulator/dataset.hpp"

namespace mixflow {

// --- scalar metrics -------------------------------------------------------------------

struct Recovery {
  double r = std::numeric_limits<double>::quiet_NaN();  // NaN when either side has zero variance
  double rmse = 0.0;
  double bias = 0.0;
  std::size_t n = 0;
};

inline Recovery recovery(std::span<const double> truths, std::span<const double> means) {
  if (truths.size() != means.size()) throw DimensionError("recovery: length mismatch");
  if (truths.size() < 2) throw DimensionError("recovery needs at least two values");
  const double n = static_cast<double>(truths.size());
  double mt = 0, mm = 0, se = 0, bias = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    mt += truths[i];
    mm += means[i];
    se += (means[i] - truths[i]) * (means[i] - truths[i]);
    bias += means[i] - truths[i];
  }
  mt /= n;
  mm /= n;
  double stt = 0, smm = 0, stm = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    stt += (truths[i] - mt) * (truths[i] - mt);
    smm += (means[i] - mm) * (means[i] - mm);
    stm += (truths[i] - mt) * (means[i] - mm);
  }
  Recovery r;
  r.n = truths.size();
  r.rmse = std::sqrt(se / n);
  r.bias = bias / n;
  if (stt > 0 && smm > 0) r.r = std::clamp(stm / std::sqrt(stt * smm), -1.0, 1.0);
  return r;
}

/// Empirical hit rate of the (1 - alpha) interval minus its nominal mass.
inline double coverage_error(const std::vector<bool>& hits, double alpha) {
  if (hits.empty()) throw DimensionError("coverage_error needs at least one indicator");
  const double n_hit = static_cast<double>(std::count(hits.begin(), hits.end(), true));
  return n_hit / static_cast<double>(hits.size()) - (1.0 - alpha);
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw DimensionError("median of an empty vector");
  const std::size_t h = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(h), v.end());
  const double hi = v[h];
  if (v.size() % 2) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(h)));
}

/// Flags |x - median| / (1.4826 MAD) > threshold. When more than half the
/// values coincide the MAD is zero; the scale then falls back to
/// 1.2533 * mean absolute deviation from the median (also normal-consistent),
/// which is zero only for constant input, where nothing is flagged.
inline std::vector<bool> mad_outliers(std::span<const double> x, double threshold = 3.0) {
  if (x.size() < 3) throw DimensionError("mad_outliers needs at least three values");
  const double med = median(std::vector<double>(x.begin(), x.end()));
  std::vector<double> dev(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) dev[i] = std::abs(x[i] - med);
  double scale = 1.4826 * median(dev);
  if (scale == 0.0) scale = 1.2533 * std::accumulate(dev.begin(), dev.end(), 0.0) / static_cast<double>(dev.size());
  std::vector<bool> out(x.size(), false);
  if (scale == 0.0) return out;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = dev[i] / scale > threshold;
  return out;
}

// --- posterior predictive ----------------------------------------------------------------

/// y = X beta + Z alpha + eps for all valid cells (group-major), eps drawn
/// with the same stream layout as the simulator.
inline std::vector<double> simulate_outcomes(const HierDataset& ds, const GlobalParams& g, const LocalParams& l, Rng& rng) {
  const Tensor<double> eps = draw_noise(ds, g.sigma_eps, rng);
  std::vector<double> y;
  y.reserve(ds.total_n());
  for (std::size_t i = 0; i < ds.m(); ++i) {
    const auto a = alpha_row(l, i);
    for (std::size_t j = 0; j < ds.group_sizes[i]; ++j) y.push_back(linear_predictor(ds, i, j, g.beta, a) + eps(i, j));
  }
  return y;
}

/// t replicated outcome vectors from data-scale draws. Draws are taken in
/// order (cycling) or, when weights are present, resampled by weight.
inline Mat<double> posterior_predictive(const HierDataset& ds, const PosteriorDraws& p, std::size_t t, Rng& rng) {
  if (p.standardized) throw ConfigError("posterior_predictive expects data-scale draws");
  if (p.m != ds.m()) throw DimensionError("posterior_predictive: draws do not match dataset");
  const std::size_t k = p.k();
  const auto q = static_cast<std::size_t>(p.q);
  Mat<double> out(static_cast<Index>(t), static_cast<Index>(ds.total_n()));
  std::optional<std::discrete_distribution<std::size_t>> pick_g;
  std::vector<std::discrete_distribution<std::size_t>> pick_l;
  if (p.global_weights) pick_g.emplace(p.global_weights->begin(), p.global_weights->end());
  if (p.local_weights)
    for (std::size_t i = 0; i < p.m; ++i) {
      const auto c = p.local_weights->col(static_cast<Index>(i));
      pick_l.emplace_back(c.data(), c.data() + k);
    }
  for (std::size_t s = 0; s < t; ++s) {
    const std::size_t jg = pick_g ? (*pick_g)(rng) : s % k;
    const GlobalParams g = p.global_draw(jg);
    LocalParams l{Tensor<double>({p.m, q})};
    for (std::size_t i = 0; i < p.m; ++i) {
      const std::size_t jl = pick_l.empty() ? s % k : pick_l[i](rng);
      for (std::size_t c = 0; c < q; ++c) l.alpha(i, c) = p.alpha(jl, i, c);
    }
    const auto y = simulate_outcomes(ds, g, l, rng);
    for (std::size_t c = 0; c < y.size(); ++c) out(static_cast<Index>(s), static_cast<Index>(c)) = y[c];
  }
  return out;
}

// --- per-dataset results and reports -------------------------------------------------------

/// Everything the report needs from one dataset.
struct DatasetResult {
  std::uint64_t id = 0;
  int d = 0, q = 0;
  std::size_t m = 0, n = 0;
  double snr = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> truth;  // flattened, see truth_vector
  std::vector<double> mean;   // posterior means, same layout
  std::vector<Role> roles;
  std::vector<double> alphas;
  std::vector<std::vector<bool>> hits;  // [alpha][parameter]
};

inline DatasetResult evaluate_draws(const HierDataset& ds, const PosteriorDraws& p, const std::vector<double>& truth,
                                    const ConformalTable* table = nullptr,
                                    const std::vector<double>& alphas = default_alphas()) {
  DatasetResult r;
  r.id = ds.id;
  r.d = ds.d;
  r.q = ds.q;
  r.m = ds.m();
  r.n = ds.total_n();
  if (ds.truth) r.snr = snr(ds);
  r.truth = truth;
  r.mean = p.global_mean();
  const LocalParams lm = p.local_mean();
  r.mean.insert(r.mean.end(), lm.alpha.storage().begin(), lm.alpha.storage().end());
  r.roles = parameter_roles(p.d, p.q, p.m);
  if (truth.size() != r.mean.size()) throw DimensionError("evaluate_draws: truth layout differs from draws");
  r.alphas = alphas;
  for (double a : alphas) {
    const Intervals iv = table ? apply_calibration(p, *table, a) : raw_intervals(p, a);
    std::vector<bool> h(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) h[i] = iv.lo[i] <= truth[i] && truth[i] <= iv.hi[i];
    r.hits.push_back(std::move(h));
  }
  return r;
}

struct RoleMetrics {
  Recovery rec;                   // pooled over every parameter of the role
  std::vector<double> ce;         // per alpha
  double mean_abs_ce = 0.0;       // average |CE| over alphas
  double mean_ce = 0.0;           // average CE over alphas
};

struct MetricReport {
  std::string label;
  std::size_t datasets = 0;
  std::vector<double> alphas;
  std::map<Role, RoleMetrics> roles;
  std::vector<double> ce_all;  // per alpha, pooled over all parameters
  std::vector<std::string> global_names;
  std::vector<Recovery> per_global;  // per global parameter
  double mean_n = 0, mean_m = 0, median_snr = std::numeric_limits<double>::quiet_NaN();
  nlohmann::json provenance = nlohmann::json::object();
};

inline MetricReport make_report(const std::vector<DatasetResult>& results, const std::string& label = "") {
  if (results.empty()) throw DimensionError("make_report: no results");
  MetricReport rep;
  rep.label = label;
  rep.datasets = results.size();
  rep.alphas = results.front().alphas;
  const int d = results.front().d, q = results.front().q;
  rep.global_names = global_param_names(d, q);
  const auto pg = static_cast<std::size_t>(global_dim(d, q));

  std::map<Role, std::pair<std::vector<double>, std::vector<double>>> pooled;
  std::vector<std::vector<double>> gt(pg), gm(pg);
  std::map<Role, std::vector<std::vector<bool>>> hits;
  std::vector<std::vector<bool>> all_hits(rep.alphas.size());
  std::vector<double> snrs;
  for (const auto& r : results) {
    if (r.d != d || r.q != q || r.alphas != rep.alphas) throw DimensionError("make_report: mixed configurations");
    rep.mean_n += static_cast<double>(r.n) / static_cast<double>(results.size());
    rep.mean_m += static_cast<double>(r.m) / static_cast<double>(results.size());
    if (!std::isnan(r.snr)) snrs.push_back(r.snr);
    for (std::size_t i = 0; i < r.truth.size(); ++i) {
      auto& [t, m] = pooled[r.roles[i]];
      t.push_back(r.truth[i]);
      m.push_back(r.mean[i]);
      if (i < pg) {
        gt[i].push_back(r.truth[i]);
        gm[i].push_back(r.mean[i]);
      }
      auto& h = hits[r.roles[i]];
      h.resize(rep.alphas.size());
      for (std::size_t a = 0; a < rep.alphas.size(); ++a) {
        h[a].push_back(r.hits[a][i]);
        all_hits[a].push_back(r.hits[a][i]);
      }
    }
  }
  if (!snrs.empty()) rep.median_snr = median(snrs);
  for (auto& [role, tm] : pooled) {
    RoleMetrics rm;
    if (tm.first.size() >= 2) rm.rec = recovery(tm.first, tm.second);
    for (std::size_t a = 0; a < rep.alphas.size(); ++a) {
      rm.ce.push_back(coverage_error(hits[role][a], rep.alphas[a]));
      rm.mean_abs_ce += std::abs(rm.ce.back()) / static_cast<double>(rep.alphas.size());
      rm.mean_ce += rm.ce.back() / static_cast<double>(rep.alphas.size());
    }
    rep.roles[role] = rm;
  }
  for (std::size_t a = 0; a < rep.alphas.size(); ++a) rep.ce_all.push_back(coverage_error(all_hits[a], rep.alphas[a]));
  for (std::size_t i = 0; i < pg; ++i) rep.per_global.push_back(gt[i].size() >= 2 ? recovery(gt[i], gm[i]) : Recovery{});
  return rep;
}

enum class SplitKey { N, Snr };

/// Median split into bottom / top halves by total n or SNR. Ties are broken
/// by dataset id so the partition does not depend on input order.
inline std::pair<MetricReport, MetricReport> split_report(std::vector<DatasetResult> results, SplitKey key) {
  if (results.size() < 2) throw DimensionError("split_report needs at least two datasets");
  auto value = [key](const DatasetResult& r) { return key == SplitKey::N ? static_cast<double>(r.n) : r.snr; };
  std::sort(results.begin(), results.end(), [&](const DatasetResult& a, const DatasetResult& b) {
    const double va = value(a), vb = value(b);
    return va != vb ? va < vb : a.id < b.id;
  });
  const std::size_t half = results.size() / 2;
  std::vector<DatasetResult> lo(results.begin(), results.begin() + static_cast<std::ptrdiff_t>(half));
  std::vector<DatasetResult> hi(results.begin() + static_cast<std::ptrdiff_t>(half), results.end());
  const std::string k = key == SplitKey::N ? "n" : "snr";
  return {make_report(lo, "bottom50_" + k), make_report(hi, "top50_" + k)};
}

// --- external samples -----------------------------------------------------------------------
//
// CSV with header `chain,draw,parameter,value`, one row per scalar draw.
// Parameter names follow parameter_names(): beta[k], sigma_alpha[k],
// sigma_eps, alpha[i][k]. Values are on the data scale.

struct ExternalSelection {
  PosteriorDraws draws;
  std::map<long, std::size_t> outliers;  // per chain
  long chain = 0;
};

namespace detail {
inline bool parse_param(const std::string& s, int& kind, std::size_t& a, std::size_t& b) {
  auto num = [](const std::string& t, std::size_t& out) {
    if (t.empty() || !std::all_of(t.begin(), t.end(), ::isdigit)) return false;
    out = std::stoul(t);
    return true;
  };
  if (s == "sigma_eps") {
    kind = 2;
    return true;
  }
  if (s.rfind("beta[", 0) == 0 && s.back() == ']') {
    kind = 0;
    return num(s.substr(5, s.size() - 6), a);
  }
  if (s.rfind("sigma_alpha[", 0) == 0 && s.back() == ']') {
    kind = 1;
    return num(s.substr(12, s.size() - 13), a);
  }
  if (s.rfind("alpha[", 0) == 0 && s.back() == ']') {
    const auto mid = s.find("][");
    if (mid == std::string::npos) return false;
    kind = 3;
    return num(s.substr(6, mid - 6), a) && num(s.substr(mid + 2, s.size() - mid - 3), b);
  }
  return false;
}
}  // namespace detail

/// Reads external draws, counts MAD outliers per chain against the pooled
/// draws of each parameter, and keeps the chain with the fewest (lowest
/// chain id on ties).
inline ExternalSelection ingest_external_samples(const std::string& path, double threshold = 3.0) {
  const auto lines = split_lines(read_text(path));
  struct Cell {
    long chain;
    long draw;
    std::string param;
    double value;
  };
  std::vector<Cell> cells;
  std::vector<std::string> bad;
  int d = 0, q = 0;
  std::size_t m = 0;
  bool has_eps = false;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    const std::string& line = lines[ln];
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string t; std::getline(ss, t, ',');) f.push_back(t);
    Cell c;
    int kind = 0;
    std::size_t a = 0, b = 0;
    try {
      if (f.size() != 4) throw std::invalid_argument("field count");
      std::size_t used = 0;
      c.chain = std::stol(f[0], &used);
      if (used != f[0].size()) throw std::invalid_argument("chain");
      c.draw = std::stol(f[1], &used);
      if (used != f[1].size()) throw std::invalid_argument("draw");
      c.param = f[2];
      c.value = std::stod(f[3], &used);
      if (used != f[3].size() || !std::isfinite(c.value)) throw std::invalid_argument("value");
      if (!detail::parse_param(c.param, kind, a, b)) throw std::invalid_argument("parameter");
    } catch (const std::exception&) {
      bad.push_back(std::to_string(ln + 1));
      continue;
    }
    if (kind == 0) d = std::max(d, static_cast<int>(a) + 1);
    if (kind == 1) q = std::max(q, static_cast<int>(a) + 1);
    if (kind == 2) has_eps = true;
    if (kind == 3) {
      m = std::max(m, a + 1);
      q = std::max(q, static_cast<int>(b) + 1);
    }
    cells.push_back(std::move(c));
  }
  if (lines.empty() || lines[0].rfind("chain,draw,parameter,value", 0) != 0) throw IoError(path + ": missing header chain,draw,parameter,value");
  if (!bad.empty()) {
    std::string msg = path + ": malformed rows at lines";
    for (std::size_t i = 0; i < std::min<std::size_t>(bad.size(), 20); ++i) msg += " " + bad[i];
    throw IoError(msg);
  }
  if (cells.empty() || d == 0 || !has_eps) throw IoError(path + ": no usable draws");

  const auto names = parameter_names(d, q, m);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < names.size(); ++i) col[names[i]] = i;
  // chain -> draw -> values
  std::map<long, std::map<long, std::vector<double>>> table;
  for (const auto& c : cells) {
    auto& row = table[c.chain][c.draw];
    if (row.empty()) row.assign(names.size(), std::numeric_limits<double>::quiet_NaN());
    row[col.at(c.param)] = c.value;
  }
  for (const auto& [ch, draws] : table)
    for (const auto& [dr, row] : draws)
      for (std::size_t i = 0; i < row.size(); ++i)
        if (std::isnan(row[i])) throw IoError(path + ": chain " + std::to_string(ch) + " draw " + std::to_string(dr) + " lacks " + names[i]);

  ExternalSelection sel;
  for (const auto& [ch, _] : table) sel.outliers[ch] = 0;
  for (std::size_t p = 0; p < names.size(); ++p) {
    std::vector<double> pooled;
    std::vector<long> owner;
    for (const auto& [ch, draws] : table)
      for (const auto& [dr, row] : draws) {
        pooled.push_back(row[p]);
        owner.push_back(ch);
      }
    if (pooled.size() < 3) continue;
    const auto flags = mad_outliers(pooled, threshold);
    for (std::size_t i = 0; i < flags.size(); ++i) sel.outliers[owner[i]] += flags[i];
  }
  sel.chain = table.begin()->first;
  for (const auto& [ch, n] : sel.outliers)
    if (n < sel.outliers[sel.chain]) sel.chain = ch;

  const auto& chosen = table.at(sel.chain);
  PosteriorDraws& p = sel.draws;
  p.d = d;
  p.q = q;
  p.m = m;
  p.standardized = false;
  const auto k = static_cast<Index>(chosen.size());
  const auto pg = global_dim(d, q);
  p.global.resize(k, pg);
  p.local.resize(k, static_cast<Index>(m) * q);
  p.log_q_global.assign(static_cast<std::size_t>(k), 0.0);
  p.log_q_local = Mat<double>::Zero(k, static_cast<Index>(m));
  Index j = 0;
  for (const auto& [dr, row] : chosen) {
    for (Index c = 0; c < pg; ++c) p.global(j, c) = row[static_cast<std::size_t>(c)];
    for (Index c = 0; c < p.local.cols(); ++c) p.local(j, c) = row[static_cast<std::size_t>(pg + c)];
    ++j;
  }
  return sel;
}

/// Writes draws in the external-samples schema as a single chain.
inline void write_external_samples(const std::string& path, const PosteriorDraws& p, long chain = 0) {
  const auto names = parameter_names(p.d, p.q, p.m);
  std::ostringstream os;
  os << "chain,draw,parameter,value\n" << std::setprecision(17);
  const auto pg = p.global.cols();
  for (Index j = 0; j < static_cast<Index>(p.k()); ++j)
    for (std::size_t c = 0; c < names.size(); ++c) {
      const double v = static_cast<Index>(c) < pg ? p.global(j, static_cast<Index>(c)) : p.local(j, static_cast<Index>(c) - pg);
      os << chain << ',' << j << ',' << names[c] << ',' << v << '\n';
    }
  write_text(path, os.str());
}

// --- rendering ------------------------------------------------------------------------------------

inline std::string fmt(double v, int prec = 3) {
  if (std::isnan(v)) return "NA";
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

/// Long-format CSV: report,role,metric,alpha,value.
inline std::string report_csv(const std::vector<MetricReport>& reps) {
  std::ostringstream os;
  os << std::setprecision(10) << "report,role,metric,alpha,value\n";
  for (const auto& r : reps) {
    for (const auto& [role, m] : r.roles) {
      const char* rn = role_name(role);
      os << r.label << ',' << rn << ",r,," << m.rec.r << '\n';
      os << r.label << ',' << rn << ",rmse,," << m.rec.rmse << '\n';
      os << r.label << ',' << rn << ",bias,," << m.rec.bias << '\n';
      for (std::size_t a = 0; a < r.alphas.size(); ++a) os << r.label << ',' << rn << ",ce," << r.alphas[a] << ',' << m.ce[a] << '\n';
      os << r.label << ',' << rn << ",mean_abs_ce,," << m.mean_abs_ce << '\n';
    }
    for (std::size_t a = 0; a < r.alphas.size(); ++a) os << r.label << ",all,ce," << r.alphas[a] << ',' << r.ce_all[a] << '\n';
    for (std::size_t i = 0; i < r.per_global.size(); ++i) {
      os << r.label << ',' << r.global_names[i] << ",r,," << r.per_global[i].r << '\n';
      os << r.label << ',' << r.global_names[i] << ",rmse,," << r.per_global[i].rmse << '\n';
    }
    os << r.label << ",all,datasets,," << r.datasets << '\n';
    os << r.label << ",all,mean_n,," << r.mean_n << '\n';
    os << r.label << ",all,median_snr,," << r.median_snr << '\n';
  }
  return os.str();
}

/// Plain-text table with one column per report: r, RMSE and mean |CE| per role.
inline std::string render_table(const std::vector<MetricReport>& reps) {
  std::ostringstream os;
  os << std::left << std::setw(22) << "metric";
  for (const auto& r : reps) os << std::setw(16) << (r.label.empty() ? "model" : r.label);
  os << '\n';
  auto row = [&](const std::string& name, auto get) {
    os << std::setw(22) << name;
    for (const auto& r : reps) os << std::setw(16) << get(r);
    os << '\n';
  };
  for (int ri = 0; ri < kRoleCount; ++ri) {
    const Role role = static_cast<Role>(ri);
    const std::string rn = role_name(role);
    auto metric = [&](auto f) {
      return [&, f](const MetricReport& r) { return r.roles.count(role) ? fmt(f(r.roles.at(role))) : std::string("-"); };
    };
    row(rn + " r", metric([](const RoleMetrics& m) { return m.rec.r; }));
    row(rn + " RMSE", metric([](const RoleMetrics& m) { return m.rec.rmse; }));
    row(rn + " mean|CE|", metric([](const RoleMetrics& m) { return m.mean_abs_ce; }));
  }
  row("datasets", [](const MetricReport& r) { return std::to_string(r.datasets); });
  return os.str();
}

/// Scatter of posterior means against truths (one role).
inline std::string svg_scatter(const std::vector<double>& truth, const std::vector<double>& mean, const std::string& title) {
  const double W = 360, H = 360, pad = 40;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : truth) lo = std::min(lo, v), hi = std::max(hi, v);
  for (double v : mean) lo = std::min(lo, v), hi = std::max(hi, v);
  if (!(hi > lo)) hi = lo + 1;
  auto sx = [&](double v) { return pad + (v - lo) / (hi - lo) * (W - 2 * pad); };
  auto sy = [&](double v) { return H - pad - (v - lo) / (hi - lo) * (H - 2 * pad); };
  std::ostringstream os;
  os << std::setprecision(5) << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
     << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">" << title << "</text>\n"
     << "<line x1=\"" << sx(lo) << "\" y1=\"" << sy(lo) << "\" x2=\"" << sx(hi) << "\" y2=\"" << sy(hi)
     << "\" stroke=\"#999\"/>\n";
  for (std::size_t i = 0; i < truth.size(); ++i)
    os << "<circle cx=\"" << sx(truth[i]) << "\" cy=\"" << sy(mean[i]) << "\" r=\"2\" fill=\"#1f77b4\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"" << H - 8 << "\" text-anchor=\"middle\" font-size=\"11\">true</text>\n"
     << "<text x=\"12\" y=\"" << H / 2 << "\" font-size=\"11\" transform=\"rotate(-90 12 " << H / 2 << ")\">posterior mean</text>\n"
     << "</svg>\n";
  return os.str();
}

/// Empirical coverage against nominal 1 - alpha, one line per report.
inline std::string svg_coverage(const std::vector<MetricReport>& reps) {
  const double W = 360, H = 360, pad = 40;
  auto sx = [&](double v) { return pad + v * (W - 2 * pad); };
  auto sy = [&](double v) { return H - pad - v * (H - 2 * pad); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  std::ostringstream os;
  os << std::setprecision(5) << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
     << "<line x1=\"" << sx(0) << "\" y1=\"" << sy(0) << "\" x2=\"" << sx(1) << "\" y2=\"" << sy(1) << "\" stroke=\"#999\"/>\n";
  for (std::size_t r = 0; r < reps.size(); ++r) {
    os << "<polyline fill=\"none\" stroke=\"" << colors[r % 4] << "\" points=\"";
    std::vector<std::pair<double, double>> pts;
    for (std::size_t a = 0; a < reps[r].alphas.size(); ++a) {
      const double nominal = 1 - reps[r].alphas[a];
      pts.emplace_back(nominal, nominal + reps[r].ce_all[a]);
    }
    std::sort(pts.begin(), pts.end());
    for (auto [x, y] : pts) os << sx(x) << ',' << sy(y) << ' ';
    os << "\"/>\n<text x=\"" << pad + 4 << "\" y=\"" << 20 + 14 * static_cast<double>(r) << "\" font-size=\"11\" fill=\""
       << colors[r % 4] << "\">" << (reps[r].label.empty() ? "model" : reps[r].label) << "</text>\n";
  }
  os << "<text x=\"" << W / 2 << "\" y=\"" << H - 8 << "\" text-anchor=\"middle\" font-size=\"11\">nominal coverage</text>\n"
     << "</svg>\n";
  return os.str();
}

}  // namespace mixflow
