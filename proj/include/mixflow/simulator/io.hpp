#pragma once

// Dataset files hold one JSON object per line (JSON Lines), optionally
// gzip-compressed. Field order within a record:
//
//   id, d, q, m, n_max, group_sizes,
//   X      m*n_max*d numbers, row-major (group, observation, column), pads 0
//   y      m*n_max numbers, row-major, pads 0
//   prior  {nu_beta[d], tau_beta[d], tau_sigma[q], tau_eps}       (optional)
//   truth  {beta[d], sigma_alpha[q], sigma_eps, alpha[m*q],
//           eps[m*n_max], noise_seed}                              (optional)
//
// Z is not stored: it is the first q columns of X. Doubles are written in
// shortest round-trip form, so reading back is bit-exact.

#include <string>
#include <vector>

#include "json.hpp"
#include "mixflow/simulator/types.hpp"
#include "mixflow/textio.hpp"

namespace mixflow {

inline nlohmann::ordered_json prior_to_json(const PriorSpec& p) {
  return {{"nu_beta", p.nu_beta}, {"tau_beta", p.tau_beta}, {"tau_sigma", p.tau_sigma}, {"tau_eps", p.tau_eps}};
}

inline PriorSpec prior_from_json(const nlohmann::json& j) {
  PriorSpec p;
  p.nu_beta = j.at("nu_beta").get<std::vector<double>>();
  p.tau_beta = j.at("tau_beta").get<std::vector<double>>();
  p.tau_sigma = j.at("tau_sigma").get<std::vector<double>>();
  p.tau_eps = j.at("tau_eps").get<double>();
  return p;
}

inline nlohmann::ordered_json dataset_to_json(const HierDataset& ds) {
  nlohmann::ordered_json j;
  j["id"] = ds.id;
  j["d"] = ds.d;
  j["q"] = ds.q;
  j["m"] = ds.m();
  j["n_max"] = ds.n_max();
  j["group_sizes"] = ds.group_sizes;
  j["X"] = ds.X.storage();
  j["y"] = ds.y.storage();
  if (ds.prior) j["prior"] = prior_to_json(*ds.prior);
  if (ds.truth) {
    const Truth& t = *ds.truth;
    j["truth"] = {{"beta", t.global.beta},
                  {"sigma_alpha", t.global.sigma_alpha},
                  {"sigma_eps", t.global.sigma_eps},
                  {"alpha", t.local.alpha.storage()},
                  {"eps", t.eps.storage()},
                  {"noise_seed", t.noise_seed}};
  }
  return j;
}

inline HierDataset dataset_from_json(const nlohmann::json& j) {
  const int d = j.at("d").get<int>();
  const int q = j.at("q").get<int>();
  if (d < 1 || q < 1 || q > d) throw ConfigError("dataset record: need 1 <= q <= d");
  const auto sizes = j.at("group_sizes").get<std::vector<std::size_t>>();
  HierDataset ds = make_empty_dataset(d, q, sizes);
  ds.id = j.value("id", std::uint64_t{0});
  if (j.contains("m") && j["m"].get<std::size_t>() != ds.m()) throw DimensionError("dataset record: m != len(group_sizes)");
  if (j.contains("n_max") && j["n_max"].get<std::size_t>() != ds.n_max()) {
    throw DimensionError("dataset record: n_max != max(group_sizes)");
  }
  auto X = j.at("X").get<std::vector<double>>();
  auto y = j.at("y").get<std::vector<double>>();
  ds.X = Tensor<double>(ds.X.shape(), std::move(X));
  ds.y = Tensor<double>(ds.y.shape(), std::move(y));
  for (std::size_t i = 0; i < ds.m(); ++i)
    for (std::size_t r = 0; r < ds.group_sizes[i]; ++r)
      for (int k = 0; k < q; ++k) ds.Z(i, r, k) = ds.X(i, r, k);
  if (j.contains("prior")) {
    ds.prior = prior_from_json(j["prior"]);
    ds.prior->validate(d, q);
  }
  if (j.contains("truth")) {
    const auto& t = j["truth"];
    Truth tr;
    tr.global.beta = t.at("beta").get<std::vector<double>>();
    tr.global.sigma_alpha = t.at("sigma_alpha").get<std::vector<double>>();
    tr.global.sigma_eps = t.at("sigma_eps").get<double>();
    tr.local.alpha = Tensor<double>({ds.m(), static_cast<std::size_t>(q)}, t.at("alpha").get<std::vector<double>>());
    tr.eps = Tensor<double>({ds.m(), ds.n_max()}, t.at("eps").get<std::vector<double>>());
    tr.noise_seed = t.value("noise_seed", std::uint64_t{0});
    if (tr.global.beta.size() != static_cast<std::size_t>(d) || tr.global.sigma_alpha.size() != static_cast<std::size_t>(q)) {
      throw DimensionError("dataset record: truth lengths do not match d/q");
    }
    ds.truth = std::move(tr);
  }
  ds.validate();
  return ds;
}

inline void write_datasets(const std::string& path, const std::vector<HierDataset>& sets) {
  std::string text;
  for (const auto& ds : sets) {
    text += dataset_to_json(ds).dump();
    text += '\n';
  }
  write_text(path, text);
}

inline std::vector<HierDataset> read_datasets(const std::string& path) {
  std::vector<HierDataset> out;
  std::size_t lineno = 0;
  for (const auto& line : split_lines(read_text(path))) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(dataset_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const DimensionError& e) {
      throw IoError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace mixflow
