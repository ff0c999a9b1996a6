#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "mixflow/numerics/graph.hpp"
#include "mixflow/numerics/params.hpp"

namespace mixflow::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
};

/// Compares reverse-mode gradients of a scalar loss with central finite
/// differences, parameter by parameter. The relative error of a parameter
/// block is ||analytic - numeric|| / max(||analytic||, ||numeric||, floor).
inline GradCheckResult grad_check(ParamStore<double>& ps,
                                  const std::function<Var(Graph<double>&, const ParamStore<double>&)>& loss,
                                  double h = 1e-4, double floor = 1e-6) {
  Graph<double> g;
  Var l = loss(g, ps);
  g.backward(l);
  const GradMap<double> analytic = collect_grads(g, ps);
  auto eval = [&] {
    Graph<double> g2(false);
    return g2.value(loss(g2, ps))(0, 0);
  };
  GradCheckResult res;
  for (const auto& name : ps.names()) {
    Mat<double>& p = ps.at(name);
    Mat<double> numeric(p.rows(), p.cols());
    for (Index i = 0; i < p.size(); ++i) {
      const double orig = p.data()[i];
      p.data()[i] = orig + h;
      const double up = eval();
      p.data()[i] = orig - h;
      const double dn = eval();
      p.data()[i] = orig;
      numeric.data()[i] = (up - dn) / (2 * h);
    }
    const Mat<double>& a = analytic.at(name);
    const double denom = std::max({a.norm(), numeric.norm(), floor});
    const double rel = (a - numeric).norm() / denom;
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst = name;
    }
  }
  return res;
}

/// Same comparison with the finite differences taken through a long double
/// instantiation of the loss. A step of 1e-7 then sits far above roundoff and
/// rarely straddles a ReLU kink.
inline GradCheckResult grad_check_ld(const ParamStore<double>& ps,
                                     const std::function<Var(Graph<double>&, const ParamStore<double>&)>& loss,
                                     const std::function<Var(Graph<long double>&, const ParamStore<long double>&)>& loss_ld,
                                     long double h = 1e-7L, double floor = 1e-6) {
  Graph<double> g;
  Var l = loss(g, ps);
  g.backward(l);
  const GradMap<double> analytic = collect_grads(g, ps);
  ParamStore<long double> pl = ps.cast<long double>();
  auto eval = [&] {
    Graph<long double> g2(false);
    return g2.value(loss_ld(g2, pl))(0, 0);
  };
  GradCheckResult res;
  for (const auto& name : pl.names()) {
    Mat<long double>& p = pl.at(name);
    Mat<double> numeric(p.rows(), p.cols());
    for (Index i = 0; i < p.size(); ++i) {
      const long double orig = p.data()[i];
      p.data()[i] = orig + h;
      const long double up = eval();
      p.data()[i] = orig - h;
      const long double dn = eval();
      p.data()[i] = orig;
      numeric.data()[i] = static_cast<double>((up - dn) / (2 * h));
    }
    const Mat<double>& a = analytic.at(name);
    const double denom = std::max({a.norm(), numeric.norm(), floor});
    const double rel = (a - numeric).norm() / denom;
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst = name;
    }
  }
  return res;
}

inline Mat<double> random_mat(Index r, Index c, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Mat<double> m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace mixflow::testing
