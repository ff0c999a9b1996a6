#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mixflow/error.hpp"
#include "mixflow/numerics/special.hpp"
#include "mixflow/numerics/tensor.hpp"
#include "mixflow/rng.hpp"

namespace mixflow {

/// Handle to a node of a Graph.
struct Var {
  std::uint32_t id = 0xffffffffu;
  bool valid() const { return id != 0xffffffffu; }
};

/// A run of rows that forms one exchangeable set (the observations of a
/// group, or the groups of one dataset). Attention and pooling never cross
/// segment boundaries.
struct Segment {
  Index offset = 0;
  Index length = 0;
};

/// Per-row validity flags; an empty mask means every row is valid.
using RowMask = std::vector<std::uint8_t>;

/// Tape-based reverse-mode differentiation over a fixed set of matrix
/// operations. Nodes are appended in evaluation order, so the reverse of
/// creation order is a valid topological order for the backward sweep.
///
/// With `record == false` no backward closures are kept and no gradients
/// are produced; the forward values are identical either way.
template <class T>
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Mat<T> v) { return push(std::move(v), false, nullptr); }

  /// Leaf that receives a gradient.
  Var variable(Mat<T> v) { return push(std::move(v), record_, nullptr); }

  /// Binds a named parameter once per graph; repeated calls return the same node.
  Var param(const std::string& name, const Mat<T>& v) {
    if (auto it = params_.find(name); it != params_.end()) return it->second;
    Var out = variable(v);
    params_.emplace(name, out);
    return out;
  }

  const std::map<std::string, Var>& params() const { return params_; }

  const Mat<T>& value(Var v) const { return nodes_.at(v.id).value; }

  /// Gradient of the last backward() target; zero when the node was not reached.
  Mat<T> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.size() == 0) return Mat<T>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void backward(Var loss) {
    const Node& l = nodes_.at(loss.id);
    if (l.value.rows() != 1 || l.value.cols() != 1) {
      throw DimensionError("backward target must be a 1x1 scalar");
    }
    if (!l.requires_grad) return;
    acc(loss).setOnes();
    for (std::int64_t i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.back && n.grad.size() != 0) n.back();
    }
  }

  void check_finite(Var v, const std::string& where) const {
    if (!value(v).allFinite()) throw NumericError("non-finite activation in " + where);
  }

  // --- linear algebra -----------------------------------------------------

  Var matmul(Var a, Var b) {
    const Mat<T>& A = value(a);
    const Mat<T>& B = value(b);
    if (A.cols() != B.rows()) {
      throw DimensionError("matmul: " + dims(A) + " x " + dims(B));
    }
    return push(A * B, needs(a, b), [this, a, b, out = next()] {
      const Mat<T>& gy = nodes_[out.id].grad;
      if (req(a)) acc(a).noalias() += gy * value(b).transpose();
      if (req(b)) acc(b).noalias() += value(a).transpose() * gy;
    });
  }

  /// y = x W + b, with b a 1 x out row broadcast over rows.
  Var linear(Var x, Var w, Var b) {
    const Mat<T>& X = value(x);
    const Mat<T>& W = value(w);
    const Mat<T>& B = value(b);
    if (X.cols() != W.rows() || B.rows() != 1 || B.cols() != W.cols()) {
      throw DimensionError("linear: x" + dims(X) + " W" + dims(W) + " b" + dims(B));
    }
    Mat<T> y = X * W;
    y.rowwise() += B.row(0);
    return push(std::move(y), needs(x, w, b), [this, x, w, b, out = next()] {
      const Mat<T>& gy = nodes_[out.id].grad;
      if (req(x)) acc(x).noalias() += gy * value(w).transpose();
      if (req(w)) acc(w).noalias() += value(x).transpose() * gy;
      if (req(b)) acc(b) += gy.colwise().sum();
    });
  }

  // --- elementwise ----------------------------------------------------------

  Var add(Var a, Var b) {
    same_shape(a, b, "add");
    return push(value(a) + value(b), needs(a, b), [this, a, b, out = next()] {
      const Mat<T>& gy = nodes_[out.id].grad;
      if (req(a)) acc(a) += gy;
      if (req(b)) acc(b) += gy;
    });
  }

  Var sub(Var a, Var b) {
    same_shape(a, b, "sub");
    return push(value(a) - value(b), needs(a, b), [this, a, b, out = next()] {
      const Mat<T>& gy = nodes_[out.id].grad;
      if (req(a)) acc(a) += gy;
      if (req(b)) acc(b) -= gy;
    });
  }

  /// Adds a 1 x cols row to every row of x.
  Var add_row(Var x, Var row) {
    const Mat<T>& X = value(x);
    const Mat<T>& R = value(row);
    if (R.rows() != 1 || R.cols() != X.cols()) {
      throw DimensionError("add_row: x" + dims(X) + " row" + dims(R));
    }
    Mat<T> y = X;
    y.rowwise() += R.row(0);
    return push(std::move(y), needs(x, row), [this, x, row, out = next()] {
      const Mat<T>& gy = nodes_[out.id].grad;
      if (req(x)) acc(x) += gy;
      if (req(row)) acc(row) += gy.colwise().sum();
    });
  }

  Var mul(Var a, Var b) {
    same_shape(a, b, "mul");
    return push(value(a).cwiseProduct(value(b)), needs(a, b), [this, a, b, out = next()] {
      const Mat<T>& gy = nodes_[out.id].grad;
      if (req(a)) acc(a) += gy.cwiseProduct(value(b));
      if (req(b)) acc(b) += gy.cwiseProduct(value(a));
    });
  }

  Var scale(Var a, T c) {
    return push(value(a) * c, needs(a), [this, a, c, out = next()] {
      acc(a) += nodes_[out.id].grad * c;
    });
  }

  Var relu(Var a) {
    return push(value(a).cwiseMax(T(0)), needs(a), [this, a, out = next()] {
      const Mat<T>& gy = nodes_[out.id].grad;
      acc(a) += (value(a).array() > T(0)).select(gy.array(), T(0)).matrix();
    });
  }

  /// Exact (erf-based) GELU.
  Var gelu(Var a) {
    const Mat<T>& X = value(a);
    Mat<T> y = X.unaryExpr([](T v) {
      return T(0.5) * v * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
    });
    return push(std::move(y), needs(a), [this, a, out = next()] {
      const Mat<T>& gy = nodes_[out.id].grad;
      Mat<T> d = value(a).unaryExpr([](T v) {
        const T cdf = T(0.5) * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
        const T pdf = std::exp(T(-0.5) * v * v) * std::numbers::inv_sqrtpi_v<T> /
                      std::numbers::sqrt2_v<T>;
        return cdf + v * pdf;
      });
      acc(a) += gy.cwiseProduct(d);
    });
  }

  Var tanh(Var a) {
    Mat<T> y = value(a).array().tanh().matrix();
    return push(std::move(y), needs(a), [this, a, out = next()] {
      const Mat<T>& Y = nodes_[out.id].value;
      acc(a) += nodes_[out.id].grad.cwiseProduct((T(1) - Y.array().square()).matrix());
    });
  }

  Var exp(Var a) {
    Mat<T> y = value(a).array().exp().matrix();
    return push(std::move(y), needs(a), [this, a, out = next()] {
      acc(a) += nodes_[out.id].grad.cwiseProduct(nodes_[out.id].value);
    });
  }

  /// bound * tanh(x / bound): identity near zero, saturating at +-bound.
  Var soft_clamp(Var a, T bound) {
    Mat<T> y = (bound * (value(a).array() / bound).tanh()).matrix();
    return push(std::move(y), needs(a), [this, a, bound, out = next()] {
      const Mat<T>& Y = nodes_[out.id].value;
      acc(a) += nodes_[out.id]
                    .grad.cwiseProduct((T(1) - (Y.array() / bound).square()).matrix());
    });
  }

  // --- normalization / pooling ---------------------------------------------

  /// Row-wise layer normalization with affine gain and bias (1 x cols each).
  Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-5)) {
    const Mat<T>& X = value(x);
    const Index n = X.rows();
    const Index h = X.cols();
    if (value(gamma).cols() != h || value(beta).cols() != h) {
      throw DimensionError("layer_norm: width " + std::to_string(h));
    }
    auto xhat = std::make_shared<Mat<T>>(n, h);
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
    Mat<T> y(n, h);
    for (Index r = 0; r < n; ++r) {
      const T mu = X.row(r).mean();
      const T var = (X.row(r).array() - mu).square().mean();
      const T is = T(1) / std::sqrt(var + eps);
      (*inv_std)[static_cast<std::size_t>(r)] = is;
      xhat->row(r) = (X.row(r).array() - mu) * is;
    }
    y = (xhat->array().rowwise() * value(gamma).row(0).array()).matrix();
    y.rowwise() += value(beta).row(0);
    return push(std::move(y), needs(x, gamma, beta),
                [this, x, gamma, beta, xhat, inv_std, out = next()] {
                  const Mat<T>& gy = nodes_[out.id].grad;
                  if (req(gamma)) acc(gamma) += gy.cwiseProduct(*xhat).colwise().sum();
                  if (req(beta)) acc(beta) += gy.colwise().sum();
                  if (!req(x)) return;
                  Mat<T> gxh = (gy.array().rowwise() * value(gamma).row(0).array()).matrix();
                  Mat<T>& gx = acc(x);
                  for (Index r = 0; r < gxh.rows(); ++r) {
                    const T m1 = gxh.row(r).mean();
                    const T m2 = gxh.row(r).cwiseProduct(xhat->row(r)).mean();
                    gx.row(r).array() += (*inv_std)[static_cast<std::size_t>(r)] *
                                         (gxh.row(r).array() - m1 - xhat->row(r).array() * m2);
                  }
                });
  }

  /// Mean of the valid rows of each segment: returns segments.size() x cols.
  Var segment_mean(Var x, std::span<const Segment> segments, const RowMask& valid = {}) {
    const Mat<T>& X = value(x);
    auto rows = std::make_shared<std::vector<std::vector<Index>>>(segment_rows(segments, valid, X.rows()));
    Mat<T> y = Mat<T>::Zero(static_cast<Index>(segments.size()), X.cols());
    for (std::size_t s = 0; s < rows->size(); ++s) {
      const auto& idx = (*rows)[s];
      if (idx.empty()) throw DimensionError("segment_mean: segment " + std::to_string(s) + " has no valid rows");
      for (Index r : idx) y.row(static_cast<Index>(s)) += X.row(r);
      y.row(static_cast<Index>(s)) /= static_cast<T>(idx.size());
    }
    return push(std::move(y), needs(x), [this, x, rows, out = next()] {
      const Mat<T>& gy = nodes_[out.id].grad;
      Mat<T>& gx = acc(x);
      for (std::size_t s = 0; s < rows->size(); ++s) {
        const auto& idx = (*rows)[s];
        const T w = T(1) / static_cast<T>(idx.size());
        for (Index r : idx) gx.row(r) += w * gy.row(static_cast<Index>(s));
      }
    });
  }

  /// Multi-head scaled dot-product attention restricted to each segment.
  /// Invalid rows neither attend nor are attended to; their output is zero.
  Var attention(Var q, Var k, Var v, std::span<const Segment> segments, const RowMask& valid,
                int heads) {
    const Mat<T>& Q = value(q);
    const Mat<T>& K = value(k);
    const Mat<T>& V = value(v);
    if (heads <= 0 || Q.cols() % heads != 0) {
      throw ConfigError("attention: width " + std::to_string(Q.cols()) +
                        " not divisible by heads " + std::to_string(heads));
    }
    if (K.rows() != Q.rows() || V.rows() != Q.rows() || K.cols() != Q.cols() ||
        V.cols() != Q.cols()) {
      throw DimensionError("attention: q" + dims(Q) + " k" + dims(K) + " v" + dims(V));
    }
    const Index dh = Q.cols() / heads;
    const T sc = T(1) / std::sqrt(static_cast<T>(dh));
    auto rows = std::make_shared<std::vector<std::vector<Index>>>(segment_rows(segments, valid, Q.rows()));
    const bool rec = record_ && (req(q) || req(k) || req(v));
    auto probs = std::make_shared<std::vector<Mat<T>>>();
    Mat<T> y = Mat<T>::Zero(Q.rows(), Q.cols());
    for (const auto& idx : *rows) {
      const Index L = static_cast<Index>(idx.size());
      if (L == 0) continue;
      for (int h = 0; h < heads; ++h) {
        const Index c0 = h * dh;
        Mat<T> qs = gather(Q, idx, c0, dh);
        Mat<T> ks = gather(K, idx, c0, dh);
        Mat<T> vs = gather(V, idx, c0, dh);
        Mat<T> p = (qs * ks.transpose()) * sc;
        for (Index r = 0; r < L; ++r) {
          const T mx = p.row(r).maxCoeff();
          p.row(r) = (p.row(r).array() - mx).exp();
          p.row(r) /= p.row(r).sum();
        }
        Mat<T> o = p * vs;
        for (Index r = 0; r < L; ++r) y.row(idx[static_cast<std::size_t>(r)]).segment(c0, dh) = o.row(r);
        if (rec) probs->push_back(std::move(p));
      }
    }
    return push(std::move(y), needs(q, k, v), [this, q, k, v, rows, probs, heads, dh, sc, out = next()] {
      const Mat<T>& gy = nodes_[out.id].grad;
      const Mat<T>& Q = value(q);
      const Mat<T>& K = value(k);
      const Mat<T>& V = value(v);
      std::size_t pi = 0;
      for (const auto& idx : *rows) {
        const Index L = static_cast<Index>(idx.size());
        if (L == 0) continue;
        for (int h = 0; h < heads; ++h) {
          const Index c0 = h * dh;
          const Mat<T>& p = (*probs)[pi++];
          Mat<T> go = gather(gy, idx, c0, dh);
          Mat<T> qs = gather(Q, idx, c0, dh);
          Mat<T> ks = gather(K, idx, c0, dh);
          Mat<T> vs = gather(V, idx, c0, dh);
          Mat<T> gp = go * vs.transpose();
          Mat<T> gs(L, L);
          for (Index r = 0; r < L; ++r) {
            const T dot = gp.row(r).dot(p.row(r));
            gs.row(r) = p.row(r).array() * (gp.row(r).array() - dot);
          }
          if (req(v)) scatter_add(acc(v), idx, c0, p.transpose() * go);
          if (req(q)) scatter_add(acc(q), idx, c0, (gs * ks) * sc);
          if (req(k)) scatter_add(acc(k), idx, c0, (gs.transpose() * qs) * sc);
        }
      }
    });
  }

  // --- structural -------------------------------------------------------------

  Var gather_rows(Var x, std::vector<Index> idx) {
    const Mat<T>& X = value(x);
    Mat<T> y(static_cast<Index>(idx.size()), X.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= X.rows()) throw DimensionError("gather_rows: index out of range");
      y.row(static_cast<Index>(i)) = X.row(idx[i]);
    }
    return push(std::move(y), needs(x), [this, x, idx = std::move(idx), out = next()] {
      const Mat<T>& gy = nodes_[out.id].grad;
      Mat<T>& gx = acc(x);
      for (std::size_t i = 0; i < idx.size(); ++i) gx.row(idx[i]) += gy.row(static_cast<Index>(i));
    });
  }

  Var concat_cols(Var a, Var b) {
    const Mat<T>& A = value(a);
    const Mat<T>& B = value(b);
    if (A.rows() != B.rows()) throw DimensionError("concat_cols: " + dims(A) + " | " + dims(B));
    Mat<T> y(A.rows(), A.cols() + B.cols());
    y << A, B;
    return push(std::move(y), needs(a, b), [this, a, b, out = next()] {
      const Mat<T>& gy = nodes_[out.id].grad;
      const Index ca = value(a).cols();
      if (req(a)) acc(a) += gy.leftCols(ca);
      if (req(b)) acc(b) += gy.rightCols(gy.cols() - ca);
    });
  }

  Var slice_cols(Var x, Index start, Index len) {
    const Mat<T>& X = value(x);
    if (start < 0 || len < 0 || start + len > X.cols()) {
      throw DimensionError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(len) +
                           ") of " + dims(X));
    }
    return push(X.middleCols(start, len), needs(x), [this, x, start, len, out = next()] {
      acc(x).middleCols(start, len) += nodes_[out.id].grad;
    });
  }

  /// Zeroes the rows flagged invalid.
  Var mask_rows(Var x, const RowMask& valid) {
    if (valid.empty()) return x;
    const Mat<T>& X = value(x);
    if (static_cast<Index>(valid.size()) != X.rows()) throw DimensionError("mask_rows: mask length");
    Mat<T> y = X;
    for (Index r = 0; r < X.rows(); ++r)
      if (!valid[static_cast<std::size_t>(r)]) y.row(r).setZero();
    return push(std::move(y), needs(x), [this, x, valid, out = next()] {
      const Mat<T>& gy = nodes_[out.id].grad;
      Mat<T>& gx = acc(x);
      for (Index r = 0; r < gy.rows(); ++r)
        if (valid[static_cast<std::size_t>(r)]) gx.row(r) += gy.row(r);
    });
  }

  /// Inverted dropout; a no-op when rate is zero.
  Var dropout(Var x, T rate, Rng& rng) {
    if (rate <= T(0)) return x;
    const Mat<T>& X = value(x);
    std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
    auto m = std::make_shared<Mat<T>>(X.rows(), X.cols());
    const T s = T(1) / (T(1) - rate);
    for (Index i = 0; i < m->size(); ++i) m->data()[i] = keep(rng) ? s : T(0);
    return push(X.cwiseProduct(*m), needs(x), [this, x, m, out = next()] {
      acc(x) += nodes_[out.id].grad.cwiseProduct(*m);
    });
  }

  // --- reductions ---------------------------------------------------------------

  /// Row sums: n x c -> n x 1.
  Var sum_cols(Var x) {
    return push(value(x).rowwise().sum(), needs(x), [this, x, out = next()] {
      acc(x).colwise() += nodes_[out.id].grad.col(0);
    });
  }

  Var sum(Var x) {
    Mat<T> y(1, 1);
    y(0, 0) = value(x).sum();
    return push(std::move(y), needs(x), [this, x, out = next()] {
      acc(x).array() += nodes_[out.id].grad(0, 0);
    });
  }

  Var mean(Var x) {
    const T n = static_cast<T>(value(x).size());
    return scale(sum(x), T(1) / n);
  }

  // --- densities ----------------------------------------------------------------

  /// Row-summed log-density of independent location-scale Student-t
  /// coordinates. loc/log_scale/log_df are 1 x p; z is n x p; result n x 1.
  Var student_t_logpdf(Var z, Var loc, Var log_scale, Var log_df) {
    const Mat<T>& Z = value(z);
    const Index n = Z.rows();
    const Index p = Z.cols();
    if (value(loc).cols() != p || value(log_scale).cols() != p || value(log_df).cols() != p) {
      throw DimensionError("student_t_logpdf: z" + dims(Z));
    }
    Mat<T> y(n, 1);
    for (Index r = 0; r < n; ++r) {
      T acc_r = 0;
      for (Index c = 0; c < p; ++c) {
        const T sd = std::exp(value(log_scale)(0, c));
        const T df = std::exp(value(log_df)(0, c));
        acc_r += static_cast<T>(mixflow::student_t_logpdf(
            static_cast<double>(Z(r, c)), static_cast<double>(value(loc)(0, c)),
            static_cast<double>(sd), static_cast<double>(df)));
      }
      y(r, 0) = acc_r;
    }
    return push(std::move(y), needs(z, loc, log_scale, log_df), [this, z, loc, log_scale, log_df, out = next()] {
      const Mat<T>& gy = nodes_[out.id].grad;
      const Mat<T>& Z = value(z);
      const Index p = Z.cols();
      Mat<T> gz(Z.rows(), p);
      Mat<T> gls = Mat<T>::Zero(1, p);
      Mat<T> gld = Mat<T>::Zero(1, p);
      for (Index c = 0; c < p; ++c) {
        const double sd = std::exp(static_cast<double>(value(log_scale)(0, c)));
        const double df = std::exp(static_cast<double>(value(log_df)(0, c)));
        const double dconst = 0.5 * digamma(0.5 * (df + 1)) - 0.5 * digamma(0.5 * df) - 0.5 / df;
        for (Index r = 0; r < Z.rows(); ++r) {
          const double g = static_cast<double>(gy(r, 0));
          const double u = (static_cast<double>(Z(r, c)) - static_cast<double>(value(loc)(0, c))) / sd;
          const double u2 = u * u;
          gz(r, c) = static_cast<T>(-g * (df + 1) * u / (sd * (df + u2)));
          gls(0, c) += static_cast<T>(g * (-1.0 + (df + 1) * u2 / (df + u2)));
          const double ddf = dconst - 0.5 * std::log1p(u2 / df) + (df + 1) * u2 / (2 * df * (df + u2));
          gld(0, c) += static_cast<T>(g * ddf * df);
        }
      }
      if (req(z)) acc(z) += gz;
      if (req(loc)) acc(loc) -= gz.colwise().sum();
      if (req(log_scale)) acc(log_scale) += gls;
      if (req(log_df)) acc(log_df) += gld;
    });
  }

 private:
  struct Node {
    Mat<T> value;
    Mat<T> grad;
    bool requires_grad = false;
    std::function<void()> back;
  };

  Var next() const { return Var{static_cast<std::uint32_t>(nodes_.size())}; }

  Var push(Mat<T> v, bool requires_grad, std::function<void()> back) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = requires_grad && record_;
    if (n.requires_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  bool req(Var v) const { return nodes_[v.id].requires_grad; }

  template <class... V>
  bool needs(V... v) const {
    return (req(v) || ...);
  }

  Mat<T>& acc(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.size() == 0) n.grad = Mat<T>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void same_shape(Var a, Var b, const char* op) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols()) {
      throw DimensionError(std::string(op) + ": " + dims(value(a)) + " vs " + dims(value(b)));
    }
  }

  static std::string dims(const Mat<T>& m) {
    return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
  }

  static std::vector<std::vector<Index>> segment_rows(std::span<const Segment> segments,
                                                      const RowMask& valid, Index total) {
    if (!valid.empty() && static_cast<Index>(valid.size()) != total) {
      throw DimensionError("row mask length " + std::to_string(valid.size()) + " != rows " +
                           std::to_string(total));
    }
    std::vector<std::vector<Index>> out;
    out.reserve(segments.size());
    for (const Segment& s : segments) {
      if (s.offset < 0 || s.length < 0 || s.offset + s.length > total) {
        throw DimensionError("segment out of range");
      }
      std::vector<Index> idx;
      idx.reserve(static_cast<std::size_t>(s.length));
      for (Index r = s.offset; r < s.offset + s.length; ++r)
        if (valid.empty() || valid[static_cast<std::size_t>(r)]) idx.push_back(r);
      out.push_back(std::move(idx));
    }
    return out;
  }

  static Mat<T> gather(const Mat<T>& X, const std::vector<Index>& idx, Index c0, Index w) {
    Mat<T> out(static_cast<Index>(idx.size()), w);
    for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Index>(r)) = X.row(idx[r]).segment(c0, w);
    return out;
  }

  static void scatter_add(Mat<T>& dst, const std::vector<Index>& idx, Index c0, const Mat<T>& src) {
    for (std::size_t r = 0; r < idx.size(); ++r)
      dst.row(idx[r]).segment(c0, src.cols()) += src.row(static_cast<Index>(r));
  }

  bool record_;
  std::vector<Node> nodes_;
  std::map<std::string, Var> params_;
};

}  // namespace mixflow
