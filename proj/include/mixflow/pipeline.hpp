#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mixflow/eval.hpp"
#include "mixflow/model.hpp"
#include "mixflow/refine.hpp"
#include "mixflow/simulator/io.hpp"

namespace mixflow {

// --- real-data CSV ---------------------------------------------------------------------

struct CsvDataset {
  HierDataset data;
  std::vector<std::string> group_labels;  // in group order (first appearance)
  std::vector<std::string> predictor_names;
};

/// Reads `group_id,y,x_1..x_p` (header required, one row per observation).
/// An intercept column is prepended, so d = p + 1. Groups keep the order in
/// which they first appear; categorical predictors must already be numeric.
inline CsvDataset read_csv_dataset(const std::string& path, int q) {
  const auto lines = split_lines(read_text(path));
  if (lines.empty()) throw IoError(path + ": empty file");
  auto split = [](const std::string& line) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string t; std::getline(ss, t, ',');) {
      while (!t.empty() && (t.back() == '\r' || t.back() == ' ')) t.pop_back();
      while (!t.empty() && t.front() == ' ') t.erase(t.begin());
      f.push_back(t);
    }
    return f;
  };
  const auto header = split(lines[0]);
  if (header.size() < 2 || header[0] != "group_id" || header[1] != "y") {
    throw IoError(path + ":1: header must start with group_id,y");
  }
  CsvDataset out;
  out.predictor_names.assign(header.begin() + 2, header.end());
  const int d = static_cast<int>(header.size()) - 1;
  if (q < 1 || q > d) throw ConfigError("csv: q=" + std::to_string(q) + " invalid for d=" + std::to_string(d));

  std::map<std::string, std::size_t> index;
  std::vector<std::vector<std::vector<double>>> rows;  // group -> obs -> [y, x...]
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const auto f = split(lines[ln]);
    const std::string where = path + ":" + std::to_string(ln + 1) + ": ";
    if (f.size() != header.size()) throw IoError(where + "expected " + std::to_string(header.size()) + " fields");
    std::vector<double> vals;
    for (std::size_t c = 1; c < f.size(); ++c) {
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(f[c], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != f[c].size() || !std::isfinite(v)) throw IoError(where + "non-numeric value '" + f[c] + "'");
      vals.push_back(v);
    }
    auto [it, fresh] = index.emplace(f[0], rows.size());
    if (fresh) {
      rows.emplace_back();
      out.group_labels.push_back(f[0]);
    }
    rows[it->second].push_back(std::move(vals));
  }
  if (rows.empty()) throw IoError(path + ": no observations");
  std::vector<std::size_t> sizes;
  for (const auto& g : rows) sizes.push_back(g.size());
  HierDataset ds = make_empty_dataset(d, q, sizes);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      ds.y(i, j) = rows[i][j][0];
      ds.X(i, j, 0) = 1.0;
      for (int k = 1; k < d; ++k) ds.X(i, j, static_cast<std::size_t>(k)) = rows[i][j][static_cast<std::size_t>(k)];
      for (int k = 0; k < q; ++k) ds.Z(i, j, static_cast<std::size_t>(k)) = ds.X(i, j, static_cast<std::size_t>(k));
    }
  ds.validate();
  out.data = std::move(ds);
  return out;
}

/// Prior used when none is supplied: centred at zero with scales at the
/// middle of the toy-mode ranges.
inline PriorSpec default_inference_prior(int d, int q) {
  PriorSpec p;
  p.nu_beta.assign(static_cast<std::size_t>(d), 0.0);
  p.tau_beta.assign(static_cast<std::size_t>(d), 2.5);
  p.tau_sigma.assign(static_cast<std::size_t>(q), 0.5);
  p.tau_eps = 0.5;
  return p;
}

// --- inference ---------------------------------------------------------------------------

enum class RefineMode { None, Is, Conformal, Both };

inline RefineMode parse_refine_mode(const std::string& s) {
  if (s == "none") return RefineMode::None;
  if (s == "is") return RefineMode::Is;
  if (s == "conformal") return RefineMode::Conformal;
  if (s == "both") return RefineMode::Both;
  throw ConfigError("--refine must be one of none|is|conformal|both (got '" + s + "')");
}

inline const char* to_string(RefineMode m) {
  switch (m) {
    case RefineMode::None: return "none";
    case RefineMode::Is: return "is";
    case RefineMode::Conformal: return "conformal";
    case RefineMode::Both: return "both";
  }
  return "?";
}

inline bool uses_is(RefineMode m) { return m == RefineMode::Is || m == RefineMode::Both; }
inline bool uses_conformal(RefineMode m) { return m == RefineMode::Conformal || m == RefineMode::Both; }

struct InferOptions {
  std::size_t k = 1000;
  RefineMode refine = RefineMode::None;
  RefineOptions is;
  const ConformalTable* table = nullptr;  // required for conformal modes
  std::vector<double> alphas = default_alphas();
};

struct InferResult {
  PosteriorDraws draws;  // data scale
  std::vector<Intervals> intervals;
  RefineDiagnostics diagnostics;
};

/// standardize -> summarize -> sample -> (reweight) -> unstandardize -> intervals.
template <class T>
InferResult infer(const Architecture& arch, const ParamStore<T>& ps, const HierDataset& ds, const PriorSpec& prior,
                  const InferOptions& opt, Rng& rng) {
  if (uses_conformal(opt.refine) && !opt.table) throw ConfigError("conformal refinement needs a calibration table");
  const PreparedDataset prep = prepare_dataset(ds, prior);
  InferResult r;
  r.draws = unstandardize_draws(sample_posterior(arch, ps, prep, opt.k, rng), prep.record);
  if (uses_is(opt.refine)) r.draws = alternating_refine(ds, prior, r.draws, opt.is, &r.diagnostics);
  for (double a : opt.alphas) {
    r.intervals.push_back(uses_conformal(opt.refine) ? apply_calibration(r.draws, *opt.table, a) : raw_intervals(r.draws, a));
  }
  return r;
}

inline nlohmann::ordered_json infer_record(const InferResult& r) {
  auto j = draws_to_json(r.draws);
  j["intervals"] = nlohmann::ordered_json::array();
  for (const auto& iv : r.intervals) j["intervals"].push_back(intervals_to_json(iv));
  return j;
}

}  // namespace mixflow
