#pragma once

#include <span>
#include <string>
#include <vector>

#include "mixflow/numerics/graph.hpp"
#include "mixflow/numerics/params.hpp"

namespace mixflow {

/// Affine map x W + b. Describes parameter names and shapes; the values live
/// in a ParamStore so the same description serves float and double models.
struct Linear {
  std::string name;
  Index in = 0;
  Index out = 0;

  std::string weight() const { return name + ".w"; }
  std::string bias() const { return name + ".b"; }

  template <class T>
  void init(ParamStore<T>& ps, Rng& rng, bool zero = false) const {
    ps.add(weight(), zero ? Mat<T>::Zero(in, out) : glorot_uniform<T>(in, out, rng));
    ps.add(bias(), Mat<T>::Zero(1, out));
  }

  template <class T>
  Var apply(Graph<T>& g, const ParamStore<T>& ps, Var x) const {
    return g.linear(x, ps.bind(g, weight()), ps.bind(g, bias()));
  }
};

struct LayerNorm {
  std::string name;
  Index width = 0;

  template <class T>
  void init(ParamStore<T>& ps) const {
    ps.add(name + ".gamma", Mat<T>::Ones(1, width));
    ps.add(name + ".beta", Mat<T>::Zero(1, width));
  }

  template <class T>
  Var apply(Graph<T>& g, const ParamStore<T>& ps, Var x) const {
    return g.layer_norm(x, ps.bind(g, name + ".gamma"), ps.bind(g, name + ".beta"));
  }
};

struct MultiHeadAttention {
  std::string name;
  Index width = 0;
  int heads = 1;

  Linear query() const { return {name + ".q", width, width}; }
  Linear key() const { return {name + ".k", width, width}; }
  Linear value() const { return {name + ".v", width, width}; }
  Linear output() const { return {name + ".o", width, width}; }

  void validate() const {
    if (heads <= 0 || width % heads != 0) {
      throw ConfigError(name + ": width " + std::to_string(width) + " not divisible by " +
                        std::to_string(heads) + " heads");
    }
  }

  template <class T>
  void init(ParamStore<T>& ps, Rng& rng) const {
    validate();
    query().init(ps, rng);
    key().init(ps, rng);
    value().init(ps, rng);
    output().init(ps, rng);
  }

  /// Self-attention within each segment; invalid rows are excluded and
  /// come out as zero rows.
  template <class T>
  Var apply(Graph<T>& g, const ParamStore<T>& ps, Var x, std::span<const Segment> segments,
            const RowMask& valid) const {
    validate();
    Var q = query().apply(g, ps, x);
    Var k = key().apply(g, ps, x);
    Var v = value().apply(g, ps, x);
    Var ctx = g.attention(q, k, v, segments, valid, heads);
    return g.mask_rows(output().apply(g, ps, ctx), valid);
  }

  /// Single-set form: x is n x width and `valid` flags the rows that take part.
  template <class T>
  Var apply(Graph<T>& g, const ParamStore<T>& ps, Var x, const RowMask& valid) const {
    const Segment whole{0, g.value(x).rows()};
    return apply(g, ps, x, std::span<const Segment>(&whole, 1), valid);
  }
};

/// Post-norm transformer encoder block: attention, residual, norm, GELU
/// feedforward, residual, norm. Dropout follows the attention and the
/// feedforward outputs when a dropout RNG is supplied (training mode).
struct EncoderBlock {
  std::string name;
  Index width = 0;
  Index ff_width = 0;
  int heads = 1;
  double dropout = 0.0;

  MultiHeadAttention attention() const { return {name + ".attn", width, heads}; }
  LayerNorm norm1() const { return {name + ".ln1", width}; }
  LayerNorm norm2() const { return {name + ".ln2", width}; }
  Linear ff1() const { return {name + ".ff1", width, ff_width}; }
  Linear ff2() const { return {name + ".ff2", ff_width, width}; }

  template <class T>
  void init(ParamStore<T>& ps, Rng& rng) const {
    attention().init(ps, rng);
    norm1().init(ps);
    norm2().init(ps);
    ff1().init(ps, rng);
    ff2().init(ps, rng);
  }

  template <class T>
  Var apply(Graph<T>& g, const ParamStore<T>& ps, Var x, std::span<const Segment> segments,
            const RowMask& valid, Rng* dropout_rng) const {
    if (g.value(x).cols() != width) {
      throw ConfigError(name + ": input width " + std::to_string(g.value(x).cols()) +
                        " != configured " + std::to_string(width));
    }
    const T rate = dropout_rng ? static_cast<T>(dropout) : T(0);
    Var a = attention().apply(g, ps, x, segments, valid);
    if (dropout_rng) a = g.dropout(a, rate, *dropout_rng);
    Var h = g.mask_rows(norm1().apply(g, ps, g.add(x, a)), valid);
    Var f = ff2().apply(g, ps, g.gelu(ff1().apply(g, ps, h)));
    if (dropout_rng) f = g.dropout(f, rate, *dropout_rng);
    Var out = g.mask_rows(norm2().apply(g, ps, g.add(h, f)), valid);
    g.check_finite(out, name);
    return out;
  }

  template <class T>
  Var apply(Graph<T>& g, const ParamStore<T>& ps, Var x, const RowMask& valid,
            Rng* dropout_rng = nullptr) const {
    const Segment whole{0, g.value(x).rows()};
    return apply(g, ps, x, std::span<const Segment>(&whole, 1), valid, dropout_rng);
  }
};

}  // namespace mixflow
