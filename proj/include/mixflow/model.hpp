#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "mixflow/draws.hpp"
#include "mixflow/flow.hpp"
#include "mixflow/numerics/checkpoint.hpp"
#include "mixflow/standardize.hpp"
#include "mixflow/summary.hpp"

namespace mixflow {

struct ModelConfig {
  int d = 2;
  int q = 1;
  SummaryConfig summary;
  int flow_blocks = 4;
  Index flow_hidden = 128;
  double flow_dropout = 0.01;

  void validate() const {
    if (d < 1 || q < 1 || q > d) throw ConfigError("model: need 1 <= q <= d");
    summary.validate();
    if (flow_blocks < 1 || flow_hidden < 1) throw ConfigError("model: flow blocks and hidden width must be positive");
    if (flow_dropout < 0.0 || flow_dropout >= 1.0) throw ConfigError("model: flow dropout must be in [0, 1)");
  }

  int global_dim() const { return mixflow::global_dim(d, q); }
  /// nu (d), log tau_beta (d), intercept/slope prior correlations (d-1),
  /// log tau_sigma (q), log tau_eps.
  int prior_feature_dim() const { return 3 * d + q; }
  int global_cond_dim() const { return static_cast<int>(summary.width) + prior_feature_dim(); }
  int local_cond_dim() const { return static_cast<int>(summary.width) + global_dim(); }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"d", c.d},
       {"q", c.q},
       {"summary", c.summary},
       {"flow_blocks", c.flow_blocks},
       {"flow_hidden", c.flow_hidden},
       {"flow_dropout", c.flow_dropout}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.d = j.value("d", c.d);
  c.q = j.value("q", c.q);
  if (j.contains("summary")) c.summary = j["summary"].get<SummaryConfig>();
  c.flow_blocks = j.value("flow_blocks", c.flow_blocks);
  c.flow_hidden = j.value("flow_hidden", c.flow_hidden);
  c.flow_dropout = j.value("flow_dropout", c.flow_dropout);
  c.validate();
}

/// Network descriptions for one (d, q) configuration.
struct Architecture {
  ModelConfig cfg;

  explicit Architecture(ModelConfig c) : cfg(std::move(c)) { cfg.validate(); }

  SummaryNetwork summary() const { return {"summary", cfg.d, cfg.summary}; }
  CouplingFlow global_flow() const {
    return {"global_flow", cfg.global_dim(), cfg.global_cond_dim(), cfg.flow_blocks, cfg.flow_hidden, cfg.flow_dropout};
  }
  CouplingFlow local_flow() const {
    return {"local_flow", cfg.q, cfg.local_cond_dim(), cfg.flow_blocks, cfg.flow_hidden, cfg.flow_dropout};
  }

  template <class T>
  ParamStore<T> init(std::uint64_t seed) const {
    ParamStore<T> ps;
    Rng rng = make_rng(seed, 0x1a1);
    summary().init(ps, rng);
    global_flow().init(ps, rng);
    local_flow().init(ps, rng);
    return ps;
  }
};

// --- features -------------------------------------------------------------------

/// Conditioning features of a prior on the standardized scale. Besides the
/// marginal location/scale of every coefficient this includes the prior
/// correlation between the standardized intercept and each slope, which the
/// intercept shift induces.
inline std::vector<double> prior_features(const PriorSpec& prior, const StandardizationRecord& rec) {
  const PriorSpec s = standardize_prior(prior, rec);
  const std::size_t d = prior.nu_beta.size();
  std::vector<double> f(s.nu_beta);
  for (double t : s.tau_beta) f.push_back(std::log(t));
  double v0 = prior.tau_beta[0] * prior.tau_beta[0];
  for (std::size_t k = 1; k < d; ++k) v0 += rec.mu_x[k] * rec.mu_x[k] * prior.tau_beta[k] * prior.tau_beta[k];
  for (std::size_t k = 1; k < d; ++k) f.push_back(rec.mu_x[k] * prior.tau_beta[k] / std::sqrt(v0));
  for (double t : s.tau_sigma) f.push_back(std::log(t));
  f.push_back(std::log(s.tau_eps));
  return f;
}

/// [beta, log sigma_alpha, log sigma_eps]: the flow's coordinates.
inline std::vector<double> to_unconstrained(const GlobalParams& g) {
  std::vector<double> v = g.beta;
  for (double s : g.sigma_alpha) v.push_back(std::log(s));
  v.push_back(std::log(g.sigma_eps));
  return v;
}

inline GlobalParams from_unconstrained(std::span<const double> v, int d, int q) {
  GlobalParams g;
  g.beta.assign(v.begin(), v.begin() + d);
  for (int k = 0; k < q; ++k) g.sigma_alpha.push_back(std::exp(v[static_cast<std::size_t>(d + k)]));
  g.sigma_eps = std::exp(v[static_cast<std::size_t>(d + q)]);
  return g;
}

/// A dataset in the form the networks consume: standardized data, its
/// record, prior features and (when known) standardized true parameters.
struct PreparedDataset {
  std::uint64_t id = 0;
  HierDataset data;
  StandardizationRecord record;
  PriorSpec prior;
  std::vector<double> features;
  std::vector<double> theta;  // unconstrained standardized truth; empty if unknown
  Mat<double> alpha;          // m x q standardized truth; empty if unknown

  bool has_truth() const { return !theta.empty(); }
};

inline PreparedDataset prepare_dataset(const HierDataset& ds, const PriorSpec& prior) {
  prior.validate(ds.d, ds.q);
  PreparedDataset p;
  p.id = ds.id;
  auto [s, rec] = standardize_data(ds);
  p.data = std::move(s);
  p.record = std::move(rec);
  p.prior = prior;
  p.features = prior_features(prior, p.record);
  if (ds.truth) {
    auto [g, l] = standardize_params(ds.truth->global, ds.truth->local, p.record);
    p.theta = to_unconstrained(g);
    p.alpha.resize(static_cast<Index>(ds.m()), ds.q);
    std::copy(l.alpha.storage().begin(), l.alpha.storage().end(), p.alpha.data());
  }
  return p;
}

inline PreparedDataset prepare_dataset(const HierDataset& ds) {
  if (!ds.prior) throw ConfigError("dataset " + std::to_string(ds.id) + " has no prior; supply one");
  return prepare_dataset(ds, *ds.prior);
}

// --- losses -----------------------------------------------------------------------

struct LossTerms {
  Var global;  // mean over datasets of -log q_global(theta)
  Var local;   // sum over groups of -log q_local(alpha_i), divided by the dataset count
  Var total;
  bool teacher_forced = false;  // local flow conditioned on the true global parameters
  std::size_t groups = 0;
};

/// Joint loss of a batch. Both flows are evaluated at the true parameters;
/// the local flow is conditioned on the true global parameters. Groups with
/// `group_valid` == 0 are excluded from the local term.
template <class T>
LossTerms batch_loss(Graph<T>& g, const Architecture& arch, const ParamStore<T>& ps,
                     const std::vector<const PreparedDataset*>& batch, Rng* dropout_rng = nullptr,
                     const RowMask& group_valid = {}) {
  const ModelConfig& cfg = arch.cfg;
  std::vector<const HierDataset*> sets;
  for (const auto* p : batch) {
    if (!p->has_truth()) throw ConfigError("batch_loss: dataset " + std::to_string(p->id) + " lacks truth");
    if (p->data.d != cfg.d || p->data.q != cfg.q) throw DimensionError("batch_loss: dataset (d, q) differs from model");
    sets.push_back(&p->data);
  }
  const TokenBatch<T> tokens = pack_tokens<T>(sets);
  const auto summ = arch.summary().apply(g, ps, tokens, dropout_rng);
  const Index B = static_cast<Index>(batch.size());
  const Index G = static_cast<Index>(tokens.group_count());
  const Index pg = cfg.global_dim();

  Mat<T> feats(B, cfg.prior_feature_dim());
  Mat<T> theta(B, pg);
  Mat<T> alpha(G, cfg.q);
  Index row = 0;
  for (Index b = 0; b < B; ++b) {
    const auto* p = batch[static_cast<std::size_t>(b)];
    for (Index c = 0; c < feats.cols(); ++c) feats(b, c) = static_cast<T>(p->features[static_cast<std::size_t>(c)]);
    for (Index c = 0; c < pg; ++c) theta(b, c) = static_cast<T>(p->theta[static_cast<std::size_t>(c)]);
    for (Index i = 0; i < p->alpha.rows(); ++i, ++row)
      for (Index c = 0; c < cfg.q; ++c) alpha(row, c) = static_cast<T>(p->alpha(i, c));
  }
  std::vector<Index> group_to_set(tokens.group_dataset.begin(), tokens.group_dataset.end());

  Var th = g.constant(theta);
  Var cond_g = g.concat_cols(summ.global, g.constant(feats));
  Var lp_g = arch.global_flow().log_prob(g, ps, th, cond_g, {}, dropout_rng);
  Var cond_l = g.concat_cols(summ.local, g.gather_rows(th, group_to_set));
  Var lp_l = arch.local_flow().log_prob(g, ps, g.constant(alpha), cond_l, {}, dropout_rng);
  if (!group_valid.empty()) lp_l = g.mask_rows(lp_l, group_valid);

  LossTerms out;
  const T inv_b = T(-1) / static_cast<T>(B);
  out.global = g.scale(g.sum(lp_g), inv_b);
  out.local = g.scale(g.sum(lp_l), inv_b);
  out.total = g.add(out.global, out.local);
  out.teacher_forced = true;
  out.groups = static_cast<std::size_t>(G);
  return out;
}

// --- checkpoint mapping ---------------------------------------------------------------

inline Checkpoint model_checkpoint(const ModelConfig& cfg, const ParamStore<float>& ps,
                                   const nlohmann::json& extra = nlohmann::json::object()) {
  Checkpoint ck;
  ck.manifest = extra;
  ck.manifest["format"] = "mixflow-model";
  ck.manifest["model"] = cfg;
  for (const auto& n : ps.names()) ck.arrays.emplace_back("param/" + n, ps.at(n));
  return ck;
}

struct LoadedModel {
  ModelConfig cfg;
  ParamStore<float> params;
  nlohmann::json manifest;
  std::string id;  // content hash of the checkpoint bytes
};

inline LoadedModel model_from_checkpoint(const Checkpoint& ck, const std::string& id = "") {
  if (ck.manifest.value("format", "") != "mixflow-model") throw IoError("not a model checkpoint");
  LoadedModel m;
  m.cfg = ck.manifest.at("model").get<ModelConfig>();
  m.manifest = ck.manifest;
  m.id = id;
  // rebuild names in architecture order and check every shape
  const auto fresh = Architecture(m.cfg).init<float>(0);
  for (const auto& n : fresh.names()) {
    const Mat<float>& v = ck.at("param/" + n);
    if (v.rows() != fresh.at(n).rows() || v.cols() != fresh.at(n).cols()) {
      throw IoError("checkpoint array " + n + " has the wrong shape");
    }
    m.params.add(n, v);
  }
  return m;
}

inline LoadedModel load_model(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  return model_from_checkpoint(deserialize_checkpoint(bytes), fnv1a_hex(bytes));
}

// --- posterior sampling ---------------------------------------------------------------

/// Draws k global samples and, for every group, k local samples conditioned
/// on the mean of the global draws (in flow coordinates). Draws stay on the
/// standardized scale; log densities are with respect to the constrained
/// parameters (the log-transform Jacobian is applied).
template <class T>
PosteriorDraws sample_posterior(const Architecture& arch, const ParamStore<T>& ps, const PreparedDataset& p,
                                std::size_t k, Rng& rng) {
  const ModelConfig& cfg = arch.cfg;
  if (p.data.d != cfg.d || p.data.q != cfg.q) {
    throw DimensionError("model expects (d=" + std::to_string(cfg.d) + ", q=" + std::to_string(cfg.q) +
                         ") but dataset has (d=" + std::to_string(p.data.d) + ", q=" + std::to_string(p.data.q) + ")");
  }
  if (k < 1) throw ConfigError("need k >= 1 draws");
  const Index K = static_cast<Index>(k);
  const Index pg = cfg.global_dim();
  const auto m = p.data.m();

  Mat<T> s_local, s_global;
  {
    Graph<T> g(false);
    const auto tokens = pack_tokens<T>({&p.data});
    const auto out = arch.summary().apply(g, ps, tokens);
    s_local = g.value(out.local);
    s_global = g.value(out.global);
  }
  Mat<T> cond_g(1, cfg.global_cond_dim());
  cond_g.leftCols(cfg.summary.width) = s_global;
  for (int c = 0; c < cfg.prior_feature_dim(); ++c)
    cond_g(0, cfg.summary.width + c) = static_cast<T>(p.features[static_cast<std::size_t>(c)]);
  auto [theta_u, lq_u] = arch.global_flow().sample(ps, cond_g, {}, K, rng);

  PosteriorDraws out;
  out.dataset_id = p.id;
  out.d = cfg.d;
  out.q = cfg.q;
  out.m = m;
  out.standardized = true;
  out.record = p.record;
  out.global.resize(K, pg);
  out.log_q_global.resize(k);
  std::vector<double> mean_u(static_cast<std::size_t>(pg), 0.0);
  for (Index j = 0; j < K; ++j) {
    double lq = lq_u[static_cast<std::size_t>(j)];
    for (Index c = 0; c < pg; ++c) {
      const double u = static_cast<double>(theta_u(j, c));
      mean_u[static_cast<std::size_t>(c)] += u / static_cast<double>(K);
      if (c < cfg.d) {
        out.global(j, c) = u;
      } else {
        out.global(j, c) = std::exp(u);
        lq -= u;
      }
    }
    out.log_q_global[static_cast<std::size_t>(j)] = lq;
  }

  out.local.resize(K, static_cast<Index>(m) * cfg.q);
  out.log_q_local.resize(K, static_cast<Index>(m));
  const CouplingFlow lf = arch.local_flow();
  for (std::size_t i = 0; i < m; ++i) {
    Mat<T> cond_l(1, cfg.local_cond_dim());
    cond_l.leftCols(cfg.summary.width) = s_local.row(static_cast<Index>(i));
    for (Index c = 0; c < pg; ++c) cond_l(0, cfg.summary.width + c) = static_cast<T>(mean_u[static_cast<std::size_t>(c)]);
    auto [a, lq] = lf.sample(ps, cond_l, {}, K, rng);
    for (Index j = 0; j < K; ++j) {
      for (Index c = 0; c < cfg.q; ++c) out.local(j, static_cast<Index>(i) * cfg.q + c) = static_cast<double>(a(j, c));
      out.log_q_local(j, static_cast<Index>(i)) = lq[static_cast<std::size_t>(j)];
    }
  }
  return out;
}

}  // namespace mixflow
