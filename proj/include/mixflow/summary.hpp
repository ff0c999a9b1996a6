#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "mixflow/numerics/graph.hpp"
#include "mixflow/numerics/layers.hpp"
#include "mixflow/numerics/params.hpp"
#include "mixflow/simulator/types.hpp"

namespace mixflow {

struct SummaryConfig {
  Index width = 128;
  int blocks = 4;
  int heads = 8;
  double dropout = 0.01;

  void validate() const {
    if (width < 1 || blocks < 0 || heads < 1 || width % heads != 0) {
      throw ConfigError("summary: width " + std::to_string(width) + " must be positive and divisible by heads " +
                        std::to_string(heads));
    }
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("summary: dropout must be in [0, 1)");
  }
};

inline void to_json(nlohmann::json& j, const SummaryConfig& c) {
  j = {{"width", c.width}, {"blocks", c.blocks}, {"heads", c.heads}, {"dropout", c.dropout}};
}
inline void from_json(const nlohmann::json& j, SummaryConfig& c) {
  c.width = j.value("width", c.width);
  c.blocks = j.value("blocks", c.blocks);
  c.heads = j.value("heads", c.heads);
  c.dropout = j.value("dropout", c.dropout);
  c.validate();
}

/// Observation rows of one or more datasets laid out for the summary
/// network. Each row is [y, x_1..x_d, z_1..z_d]. `groups` delimits the rows
/// of each group, `datasets` delimits the groups of each dataset.
template <class T>
struct TokenBatch {
  Mat<T> tokens;
  std::vector<Segment> groups;
  RowMask valid;  // empty when every row is an observation (packed layout)
  std::vector<Segment> datasets;
  std::vector<std::size_t> group_dataset;  // dataset index of each group

  std::size_t group_count() const { return groups.size(); }
  std::size_t dataset_count() const { return datasets.size(); }
};

inline Index token_width(int d) { return 1 + 2 * static_cast<Index>(d); }

namespace detail {
template <class T>
void write_token(Mat<T>& tok, Index row, const HierDataset& ds, std::size_t i, std::size_t j) {
  tok(row, 0) = static_cast<T>(ds.y(i, j));
  for (int k = 0; k < ds.d; ++k) {
    tok(row, 1 + k) = static_cast<T>(ds.X(i, j, k));
    tok(row, 1 + ds.d + k) = static_cast<T>(ds.Z(i, j, k));
  }
}
}  // namespace detail

/// Packed layout: only valid observations, no padding rows.
template <class T>
TokenBatch<T> pack_tokens(const std::vector<const HierDataset*>& sets) {
  if (sets.empty()) throw DimensionError("pack_tokens: empty batch");
  const int d = sets.front()->d;
  std::size_t rows = 0;
  for (const auto* ds : sets) {
    if (ds->d != d) throw DimensionError("pack_tokens: mixed d in one batch");
    rows += ds->total_n();
  }
  TokenBatch<T> b;
  b.tokens.resize(static_cast<Index>(rows), token_width(d));
  Index r = 0;
  for (std::size_t s = 0; s < sets.size(); ++s) {
    const HierDataset& ds = *sets[s];
    b.datasets.push_back({static_cast<Index>(b.groups.size()), static_cast<Index>(ds.m())});
    for (std::size_t i = 0; i < ds.m(); ++i) {
      b.groups.push_back({r, static_cast<Index>(ds.group_sizes[i])});
      b.group_dataset.push_back(s);
      for (std::size_t j = 0; j < ds.group_sizes[i]; ++j) detail::write_token(b.tokens, r++, ds, i, j);
    }
  }
  return b;
}

/// Padded layout of a single dataset: m * n_max rows with the row mask.
/// Pad rows carry whatever the dataset holds there.
template <class T>
TokenBatch<T> pad_tokens(const HierDataset& ds) {
  TokenBatch<T> b;
  const Index nm = static_cast<Index>(ds.n_max());
  b.tokens.resize(static_cast<Index>(ds.m()) * nm, token_width(ds.d));
  b.valid.assign(static_cast<std::size_t>(b.tokens.rows()), 0);
  for (std::size_t i = 0; i < ds.m(); ++i) {
    b.groups.push_back({static_cast<Index>(i) * nm, nm});
    b.group_dataset.push_back(0);
    for (std::size_t j = 0; j < ds.n_max(); ++j) {
      const Index row = static_cast<Index>(i) * nm + static_cast<Index>(j);
      detail::write_token(b.tokens, row, ds, i, j);
      b.valid[static_cast<std::size_t>(row)] = ds.mask(i, j);
    }
  }
  b.datasets.push_back({0, static_cast<Index>(ds.m())});
  return b;
}

/// Two-level set encoder. Observations of a group attend to each other and
/// are mean-pooled into a local summary; the local summaries of a dataset
/// attend to each other and are mean-pooled into the global summary.
struct SummaryNetwork {
  std::string name = "summary";
  int d = 1;
  SummaryConfig cfg;

  Linear embed() const { return {name + ".embed", token_width(d), cfg.width}; }
  EncoderBlock local_block(int b) const {
    return {name + ".local" + std::to_string(b), cfg.width, cfg.width, cfg.heads, cfg.dropout};
  }
  EncoderBlock global_block(int b) const {
    return {name + ".global" + std::to_string(b), cfg.width, cfg.width, cfg.heads, cfg.dropout};
  }

  template <class T>
  void init(ParamStore<T>& ps, Rng& rng) const {
    cfg.validate();
    embed().init(ps, rng);
    for (int b = 0; b < cfg.blocks; ++b) local_block(b).init(ps, rng);
    for (int b = 0; b < cfg.blocks; ++b) global_block(b).init(ps, rng);
  }

  /// Linear projection of each row; invalid rows become zero.
  template <class T>
  Var embed_rows(Graph<T>& g, const ParamStore<T>& ps, Var tokens, const RowMask& valid) const {
    if (g.value(tokens).cols() != token_width(d)) {
      throw ConfigError("embed_rows: token width " + std::to_string(g.value(tokens).cols()) + " != " +
                        std::to_string(token_width(d)));
    }
    return g.mask_rows(embed().apply(g, ps, tokens), valid);
  }

  /// One summary row per group segment.
  template <class T>
  Var summarize_local(Graph<T>& g, const ParamStore<T>& ps, Var emb, std::span<const Segment> groups,
                      const RowMask& valid, Rng* dropout_rng = nullptr) const {
    Var h = emb;
    for (int b = 0; b < cfg.blocks; ++b) h = local_block(b).apply(g, ps, h, groups, valid, dropout_rng);
    return g.segment_mean(h, groups, valid);
  }

  /// One summary row per dataset segment of the local summaries.
  template <class T>
  Var summarize_global(Graph<T>& g, const ParamStore<T>& ps, Var local, std::span<const Segment> datasets,
                       const RowMask& group_valid = {}, Rng* dropout_rng = nullptr) const {
    Var h = local;
    for (int b = 0; b < cfg.blocks; ++b) h = global_block(b).apply(g, ps, h, datasets, group_valid, dropout_rng);
    return g.segment_mean(h, datasets, group_valid);
  }

  struct Output {
    Var local;   // groups x width
    Var global;  // datasets x width
  };

  template <class T>
  Output apply(Graph<T>& g, const ParamStore<T>& ps, const TokenBatch<T>& batch, Rng* dropout_rng = nullptr) const {
    Var tok = g.constant(batch.tokens);
    Var emb = embed_rows(g, ps, tok, batch.valid);
    Var loc = summarize_local(g, ps, emb, batch.groups, batch.valid, dropout_rng);
    Var glob = summarize_global(g, ps, loc, batch.datasets, RowMask{}, dropout_rng);
    return {loc, glob};
  }
};

}  // namespace mixflow
