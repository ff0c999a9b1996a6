#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mixflow/error.hpp"
#include "mixflow/numerics/graph.hpp"
#include "mixflow/numerics/tensor.hpp"
#include "mixflow/rng.hpp"

namespace mixflow {

/// Named parameter matrices in insertion order. Biases and per-feature
/// vectors are stored as 1 x n rows.
template <class T>
class ParamStore {
 public:
  Mat<T>& add(const std::string& name, Mat<T> init) {
    if (values_.count(name)) throw ConfigError("duplicate parameter " + name);
    order_.push_back(name);
    return values_[name] = std::move(init);
  }

  bool contains(const std::string& name) const { return values_.count(name) != 0; }

  Mat<T>& at(const std::string& name) {
    auto it = values_.find(name);
    if (it == values_.end()) throw ConfigError("unknown parameter " + name);
    return it->second;
  }
  const Mat<T>& at(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw ConfigError("unknown parameter " + name);
    return it->second;
  }

  const std::vector<std::string>& names() const { return order_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : values_) n += static_cast<std::size_t>(v.size());
    return n;
  }

  bool all_finite() const {
    for (const auto& [_, v] : values_)
      if (!v.allFinite()) return false;
    return true;
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& n : order_) out.add(n, values_.at(n).template cast<U>());
    return out;
  }

  bool operator==(const ParamStore& o) const {
    if (order_ != o.order_) return false;
    for (const auto& n : order_) {
      const Mat<T>& a = values_.at(n);
      const Mat<T>& b = o.values_.at(n);
      if (a.rows() != b.rows() || a.cols() != b.cols() || a != b) return false;
    }
    return true;
  }

  Var bind(Graph<T>& g, const std::string& name) const { return g.param(name, at(name)); }

 private:
  std::vector<std::string> order_;
  std::map<std::string, Mat<T>> values_;
};

/// Gradients keyed by parameter name.
template <class T>
using GradMap = std::map<std::string, Mat<T>>;

/// Collects gradients of every bound parameter after backward(); parameters
/// of the store that the graph never touched receive zeros.
template <class T>
GradMap<T> collect_grads(const Graph<T>& g, const ParamStore<T>& store) {
  GradMap<T> out;
  for (const auto& name : store.names()) {
    auto it = g.params().find(name);
    if (it == g.params().end()) {
      const Mat<T>& v = store.at(name);
      out[name] = Mat<T>::Zero(v.rows(), v.cols());
    } else {
      out[name] = g.grad(it->second);
    }
  }
  return out;
}

template <class T>
Mat<T> glorot_uniform(Index fan_in, Index fan_out, Rng& rng) {
  const double lim = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-lim, lim);
  Mat<T> w(fan_in, fan_out);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(u(rng));
  return w;
}

}  // namespace mixflow
