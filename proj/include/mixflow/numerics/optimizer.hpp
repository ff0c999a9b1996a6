#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "mixflow/error.hpp"
#include "mixflow/numerics/params.hpp"

namespace mixflow {

enum class OptimizerKind { ScheduleFreeAdamW, AdamW };

inline OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "schedule_free_adamw" || s == "sf-adamw") return OptimizerKind::ScheduleFreeAdamW;
  if (s == "adamw") return OptimizerKind::AdamW;
  throw ConfigError("unknown optimizer '" + s + "'");
}

inline std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::AdamW ? "adamw" : "schedule_free_adamw";
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::ScheduleFreeAdamW;
  double lr = 1e-3;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int warmup_steps = 0;
  double clip_norm = 0.0;  // global gradient-norm clip; 0 disables
};

/// Schedule-free AdamW (with a plain constant-rate AdamW fallback).
///
/// Schedule-free keeps two sequences per parameter: `z`, the base Adam-style
/// iterate, and `x`, a running weighted average of `z`. Gradients are taken
/// at the interpolation y = (1 - beta1) z + beta1 x, which is what the
/// ParamStore holds during training; evaluation uses `x`. Weight decay is
/// applied to z through y and never enters the second-moment estimate.
template <class T>
class Optimizer {
 public:
  struct Slot {
    Mat<T> z;  // base iterate (schedule-free) or first moment (AdamW)
    Mat<T> x;  // averaged iterate (schedule-free only)
    Mat<T> v;  // second moment
  };

  Optimizer(OptimizerConfig cfg, const ParamStore<T>& params) : cfg_(cfg) {
    for (const auto& name : params.names()) {
      const Mat<T>& p = params.at(name);
      Slot s;
      s.v = Mat<T>::Zero(p.rows(), p.cols());
      if (cfg_.kind == OptimizerKind::ScheduleFreeAdamW) {
        s.z = p;
        s.x = p;
      } else {
        s.z = Mat<T>::Zero(p.rows(), p.cols());
      }
      slots_.emplace(name, std::move(s));
      order_.push_back(name);
    }
  }

  const OptimizerConfig& config() const { return cfg_; }
  long step_count() const { return step_; }
  double weight_sum() const { return weight_sum_; }
  double lr_max() const { return lr_max_; }
  const std::vector<std::string>& names() const { return order_; }
  Slot& slot(const std::string& n) { return slots_.at(n); }
  const Slot& slot(const std::string& n) const { return slots_.at(n); }

  void restore_counters(long step, double weight_sum, double lr_max) {
    step_ = step;
    weight_sum_ = weight_sum;
    lr_max_ = lr_max;
  }

  /// Applies one update. Returns false, leaving parameters and state
  /// untouched, when any gradient entry is non-finite.
  bool step(ParamStore<T>& params, const GradMap<T>& grads) {
    double sq = 0.0;
    for (const auto& name : order_) {
      const Mat<T>& g = grads.at(name);
      if (!g.allFinite()) return false;
      sq += static_cast<double>(g.squaredNorm());
    }
    T gscale = T(1);
    if (cfg_.clip_norm > 0.0 && std::sqrt(sq) > cfg_.clip_norm) {
      gscale = static_cast<T>(cfg_.clip_norm / std::sqrt(sq));
    }
    const double k = static_cast<double>(step_);
    const double warm = cfg_.warmup_steps > 0 ? std::min(1.0, (k + 1.0) / cfg_.warmup_steps) : 1.0;
    const T b1 = static_cast<T>(cfg_.beta1);
    const T b2 = static_cast<T>(cfg_.beta2);
    const T eps = static_cast<T>(cfg_.eps);
    const T wd = static_cast<T>(cfg_.weight_decay);

    if (cfg_.kind == OptimizerKind::ScheduleFreeAdamW) {
      const double lr = cfg_.lr * warm * std::sqrt(1.0 - std::pow(cfg_.beta2, k + 1.0));
      lr_max_ = std::max(lr_max_, lr);
      const double weight = lr_max_ * lr_max_;
      weight_sum_ += weight;
      const T c = static_cast<T>(weight_sum_ > 0 ? weight / weight_sum_ : 1.0);
      const T lrt = static_cast<T>(lr);
      for (const auto& name : order_) {
        Slot& s = slots_.at(name);
        Mat<T>& y = params.at(name);
        const auto g = (grads.at(name).array() * gscale).eval();
        s.v.array() = b2 * s.v.array() + (T(1) - b2) * g.square();
        s.z.array() -= lrt * (g / (s.v.array().sqrt() + eps) + wd * y.array());
        // incremental forms: exact fixed point when z == x
        s.x.array() += c * (s.z.array() - s.x.array());
        y.array() = s.z.array() + b1 * (s.x.array() - s.z.array());
      }
    } else {
      const double lr = cfg_.lr * warm;
      const T bc1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, k + 1.0));
      const T bc2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, k + 1.0));
      const T lrt = static_cast<T>(lr);
      for (const auto& name : order_) {
        Slot& s = slots_.at(name);
        Mat<T>& p = params.at(name);
        const auto g = (grads.at(name).array() * gscale).eval();
        s.z.array() = b1 * s.z.array() + (T(1) - b1) * g;
        s.v.array() = b2 * s.v.array() + (T(1) - b2) * g.square();
        p.array() -= lrt * ((s.z.array() / bc1) / ((s.v.array() / bc2).sqrt() + eps) + wd * p.array());
      }
    }
    ++step_;
    return true;
  }

  /// Parameters to use for evaluation: the averaged sequence x for
  /// schedule-free, the live parameters otherwise.
  ParamStore<T> eval_params(const ParamStore<T>& train) const {
    if (cfg_.kind != OptimizerKind::ScheduleFreeAdamW) return train;
    ParamStore<T> out;
    for (const auto& name : order_) out.add(name, slots_.at(name).x);
    return out;
  }

 private:
  OptimizerConfig cfg_;
  std::vector<std::string> order_;
  std::map<std::string, Slot> slots_;
  long step_ = 0;
  double weight_sum_ = 0.0;
  double lr_max_ = 0.0;
};

}  // namespace mixflow
