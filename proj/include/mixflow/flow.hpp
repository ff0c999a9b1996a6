#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "mixflow/numerics/graph.hpp"
#include "mixflow/numerics/layers.hpp"
#include "mixflow/numerics/params.hpp"

namespace mixflow {

/// Bound on the per-dimension log-scale of a coupling block.
inline constexpr double kLogScaleBound = 3.0;

/// Conditional affine-coupling flow with a per-dimension location-scale
/// Student-t base. The forward direction maps parameters x to base
/// coordinates z; sampling runs the blocks in reverse.
///
/// Block b keeps one part of x fixed and transforms the other:
///   z_B = x_B * exp(s(x_A, c)) + t(x_A, c),   log|det| = sum(s).
/// The parts alternate between blocks; the first part has ceil(dim/2)
/// entries, so with dim == 1 only the odd blocks do any work.
struct CouplingFlow {
  std::string name;
  int dim = 1;
  int cond_dim = 0;
  int blocks = 4;
  Index hidden = 128;
  double dropout = 0.01;

  struct Split {
    int fixed_start, fixed_len, trans_start, trans_len;
  };

  Split split(int b) const {
    const int first = (dim + 1) / 2;
    if (b % 2 == 0) return {0, first, first, dim - first};
    return {first, dim - first, 0, first};
  }

  std::string block_name(int b) const { return name + ".block" + std::to_string(b); }
  Linear hidden1(int b) const { return {block_name(b) + ".h1", hidden, hidden}; }
  Linear hidden2(int b) const { return {block_name(b) + ".h2", hidden, hidden}; }
  Linear head(int b) const { return {block_name(b) + ".out", hidden, 2 * static_cast<Index>(split(b).trans_len)}; }
  std::string in_x(int b) const { return block_name(b) + ".in_x"; }
  std::string in_c(int b) const { return block_name(b) + ".in_c"; }
  std::string in_b(int b) const { return block_name(b) + ".in_b"; }
  std::string base_loc() const { return name + ".base.loc"; }
  std::string base_log_scale() const { return name + ".base.log_scale"; }
  std::string base_log_df() const { return name + ".base.log_df"; }

  template <class T>
  void init(ParamStore<T>& ps, Rng& rng) const {
    if (dim < 1 || cond_dim < 0 || blocks < 1 || hidden < 1) throw ConfigError(name + ": invalid flow dimensions");
    for (int b = 0; b < blocks; ++b) {
      const Split s = split(b);
      if (s.trans_len == 0) continue;
      const Index fan_in = s.fixed_len + cond_dim;
      Mat<T> w = glorot_uniform<T>(fan_in, hidden, rng);
      if (s.fixed_len > 0) ps.add(in_x(b), w.topRows(s.fixed_len));
      ps.add(in_c(b), w.bottomRows(cond_dim));
      ps.add(in_b(b), Mat<T>::Zero(1, hidden));
      hidden1(b).init(ps, rng);
      hidden2(b).init(ps, rng);
      head(b).init(ps, rng, /*zero=*/true);
    }
    ps.add(base_loc(), Mat<T>::Zero(1, dim));
    ps.add(base_log_scale(), Mat<T>::Zero(1, dim));
    ps.add(base_log_df(), Mat<T>::Constant(1, dim, static_cast<T>(std::log(30.0))));
  }

  /// Projects condition rows once per block: cond W_c + b, then expands
  /// them to one row per sample through `cond_index` (empty = one to one).
  template <class T>
  std::vector<Var> project_conditions(Graph<T>& g, const ParamStore<T>& ps, Var cond,
                                      const std::vector<Index>& cond_index) const {
    if (g.value(cond).cols() != cond_dim) {
      throw DimensionError(name + ": condition width " + std::to_string(g.value(cond).cols()) + " != " +
                           std::to_string(cond_dim));
    }
    std::vector<Var> out(static_cast<std::size_t>(blocks));
    for (int b = 0; b < blocks; ++b) {
      if (split(b).trans_len == 0) continue;
      Var p = g.linear(cond, ps.bind(g, in_c(b)), ps.bind(g, in_b(b)));
      out[static_cast<std::size_t>(b)] = cond_index.empty() ? p : g.gather_rows(p, cond_index);
    }
    return out;
  }

  struct Affine {
    Var log_scale;
    Var shift;
  };

  template <class T>
  Affine conditioner(Graph<T>& g, const ParamStore<T>& ps, int b, Var fixed, Var cond_proj, Rng* rng) const {
    const Split s = split(b);
    const T rate = rng ? static_cast<T>(dropout) : T(0);
    Var pre = cond_proj;
    if (s.fixed_len > 0) pre = g.add(pre, g.matmul(fixed, ps.bind(g, in_x(b))));
    Var h = g.relu(pre);
    if (rng) h = g.dropout(h, rate, *rng);
    h = g.add(h, g.relu(hidden1(b).apply(g, ps, h)));
    if (rng) h = g.dropout(h, rate, *rng);
    h = g.add(h, g.relu(hidden2(b).apply(g, ps, h)));
    if (rng) h = g.dropout(h, rate, *rng);
    Var o = head(b).apply(g, ps, h);
    return {g.soft_clamp(g.slice_cols(o, 0, s.trans_len), static_cast<T>(kLogScaleBound)),
            g.slice_cols(o, s.trans_len, s.trans_len)};
  }

  struct Result {
    Var out;     // n x dim
    Var logdet;  // n x 1; invalid when no block transforms anything
  };

  /// x -> z with the summed log-scales.
  template <class T>
  Result forward(Graph<T>& g, const ParamStore<T>& ps, Var x, Var cond, const std::vector<Index>& cond_index = {},
                 Rng* rng = nullptr) const {
    check_input(g, x, cond, cond_index);
    const auto proj = project_conditions(g, ps, cond, cond_index);
    Var logdet;
    for (int b = 0; b < blocks; ++b) {
      const Split s = split(b);
      if (s.trans_len == 0) continue;
      Var xa = g.slice_cols(x, s.fixed_start, s.fixed_len);
      Var xb = g.slice_cols(x, s.trans_start, s.trans_len);
      Affine a = conditioner(g, ps, b, xa, proj[static_cast<std::size_t>(b)], rng);
      Var zb = g.add(g.mul(xb, g.exp(a.log_scale)), a.shift);
      x = join(g, s, xa, zb);
      g.check_finite(x, block_name(b));
      Var ld = g.sum_cols(a.log_scale);
      logdet = logdet.valid() ? g.add(logdet, ld) : ld;
    }
    return {x, logdet};
  }

  /// z -> x; `logdet` is the forward log-determinant at the returned x.
  template <class T>
  Result inverse(Graph<T>& g, const ParamStore<T>& ps, Var z, Var cond, const std::vector<Index>& cond_index = {}) const {
    check_input(g, z, cond, cond_index);
    const auto proj = project_conditions(g, ps, cond, cond_index);
    Var logdet;
    for (int b = blocks - 1; b >= 0; --b) {
      const Split s = split(b);
      if (s.trans_len == 0) continue;
      Var za = g.slice_cols(z, s.fixed_start, s.fixed_len);
      Var zb = g.slice_cols(z, s.trans_start, s.trans_len);
      Affine a = conditioner(g, ps, b, za, proj[static_cast<std::size_t>(b)], nullptr);
      Var xb = g.mul(g.sub(zb, a.shift), g.exp(g.scale(a.log_scale, T(-1))));
      z = join(g, s, za, xb);
      g.check_finite(z, block_name(b));
      Var ld = g.sum_cols(a.log_scale);
      logdet = logdet.valid() ? g.add(logdet, ld) : ld;
    }
    return {z, logdet};
  }

  template <class T>
  Var base_log_prob(Graph<T>& g, const ParamStore<T>& ps, Var z) const {
    return g.student_t_logpdf(z, ps.bind(g, base_loc()), ps.bind(g, base_log_scale()), ps.bind(g, base_log_df()));
  }

  /// log q(x | cond) per row (n x 1), in the flow's own coordinates.
  template <class T>
  Var log_prob(Graph<T>& g, const ParamStore<T>& ps, Var x, Var cond, const std::vector<Index>& cond_index = {},
               Rng* rng = nullptr) const {
    Result r = forward(g, ps, x, cond, cond_index, rng);
    Var lp = base_log_prob(g, ps, r.out);
    return r.logdet.valid() ? g.add(lp, r.logdet) : lp;
  }

  template <class T>
  Mat<T> sample_base(const ParamStore<T>& ps, Index n, Rng& rng) const {
    Mat<T> z(n, dim);
    const Mat<T>& loc = ps.at(base_loc());
    const Mat<T>& ls = ps.at(base_log_scale());
    const Mat<T>& ldf = ps.at(base_log_df());
    for (int c = 0; c < dim; ++c) {
      std::student_t_distribution<double> t(std::exp(static_cast<double>(ldf(0, c))));
      const double sc = std::exp(static_cast<double>(ls(0, c)));
      for (Index r = 0; r < n; ++r) z(r, c) = static_cast<T>(static_cast<double>(loc(0, c)) + sc * t(rng));
    }
    return z;
  }

  /// Draws n samples; `cond` holds condition rows and `cond_index` maps
  /// each sample to one of them (empty: a single row shared by all).
  /// Returns the samples and their log densities.
  template <class T>
  std::pair<Mat<T>, std::vector<double>> sample(const ParamStore<T>& ps, const Mat<T>& cond,
                                                std::vector<Index> cond_index, Index n, Rng& rng) const {
    if (cond_index.empty()) {
      if (cond.rows() != 1) throw DimensionError(name + ": sample needs one condition row or an index");
      cond_index.assign(static_cast<std::size_t>(n), 0);
    }
    Mat<T> z0 = sample_base(ps, n, rng);
    Graph<T> g(false);
    Var z = g.constant(z0);
    Result r = inverse(g, ps, z, g.constant(cond), cond_index);
    Mat<T> base = g.value(base_log_prob(g, ps, z));
    std::vector<double> lq(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      lq[static_cast<std::size_t>(i)] =
          static_cast<double>(base(i, 0)) + (r.logdet.valid() ? static_cast<double>(g.value(r.logdet)(i, 0)) : 0.0);
    }
    return {g.value(r.out), std::move(lq)};
  }

 private:
  template <class T>
  void check_input(Graph<T>& g, Var x, Var cond, const std::vector<Index>& cond_index) const {
    const Mat<T>& X = g.value(x);
    if (X.cols() != dim) {
      throw DimensionError(name + ": input width " + std::to_string(X.cols()) + " != " + std::to_string(dim));
    }
    const Index rows = cond_index.empty() ? g.value(cond).rows() : static_cast<Index>(cond_index.size());
    if (rows != X.rows()) throw DimensionError(name + ": condition rows do not match input rows");
  }

  template <class T>
  static Var join(Graph<T>& g, const Split& s, Var fixed, Var trans) {
    if (s.fixed_len == 0) return trans;
    return s.trans_start > s.fixed_start ? g.concat_cols(fixed, trans) : g.concat_cols(trans, fixed);
  }
};

}  // namespace mixflow
