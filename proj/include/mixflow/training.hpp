#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mixflow/model.hpp"
#include "mixflow/numerics/optimizer.hpp"
#include "mixflow/simulator/dataset.hpp"

namespace mixflow {

inline void to_json(nlohmann::json& j, const OptimizerConfig& c) {
  j = {{"kind", to_string(c.kind)}, {"lr", c.lr},       {"weight_decay", c.weight_decay},
       {"beta1", c.beta1},          {"beta2", c.beta2}, {"eps", c.eps},
       {"warmup_steps", c.warmup_steps}, {"clip_norm", c.clip_norm}};
}

inline void from_json(const nlohmann::json& j, OptimizerConfig& c) {
  if (j.contains("kind")) c.kind = parse_optimizer_kind(j["kind"].get<std::string>());
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
}

struct TrainConfig {
  ModelConfig model;
  SimulatorConfig sim;
  OptimizerConfig opt;
  std::size_t batch = 32;
  std::size_t budget = 20000;  // simulated training datasets
  std::size_t eval_every = 25;  // optimizer steps between validation passes
  std::size_t validation_sets = 512;
  int patience = 20;  // validation passes without improvement
  std::size_t divergence_steps = 1000;
  double divergence_factor = 10.0;
  std::uint64_t seed = 1;
  bool permute_slopes = true;  // random block-preserving column permutations
  bool deterministic = true;   // false: simulate the next batch on a helper thread

  static TrainConfig make(int d, int q, bool toy) {
    TrainConfig c;
    c.model.d = d;
    c.model.q = q;
    c.sim = SimulatorConfig::make(d, q, toy);
    c.opt.warmup_steps = 50;
    c.opt.clip_norm = 5.0;
    return c;
  }

  void validate() const {
    model.validate();
    sim.validate();
    if (model.d != sim.d || model.q != sim.q) throw ConfigError("train: model and simulator (d, q) differ");
    if (batch < 1) throw ConfigError("train: batch must be positive");
    if (budget < batch) throw ConfigError("train: budget must be at least the batch size");
    if (eval_every < 1 || validation_sets < 1 || patience < 1) throw ConfigError("train: invalid evaluation settings");
  }

  std::size_t total_steps() const { return budget / batch; }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"model", c.model},
       {"sim", c.sim},
       {"opt", c.opt},
       {"batch", c.batch},
       {"budget", c.budget},
       {"eval_every", c.eval_every},
       {"validation_sets", c.validation_sets},
       {"patience", c.patience},
       {"divergence_steps", c.divergence_steps},
       {"divergence_factor", c.divergence_factor},
       {"seed", c.seed},
       {"permute_slopes", c.permute_slopes},
       {"deterministic", c.deterministic}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (j.contains("model")) c.model = j["model"].get<ModelConfig>();
  if (j.contains("sim")) c.sim = j["sim"].get<SimulatorConfig>();
  if (j.contains("opt")) c.opt = j["opt"].get<OptimizerConfig>();
  c.batch = j.value("batch", c.batch);
  c.budget = j.value("budget", c.budget);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.validation_sets = j.value("validation_sets", c.validation_sets);
  c.patience = j.value("patience", c.patience);
  c.divergence_steps = j.value("divergence_steps", c.divergence_steps);
  c.divergence_factor = j.value("divergence_factor", c.divergence_factor);
  c.seed = j.value("seed", c.seed);
  c.permute_slopes = j.value("permute_slopes", c.permute_slopes);
  c.deterministic = j.value("deterministic", c.deterministic);
}

/// Produces dataset `index` of stream `stream` (0 = training, 1 = validation).
/// Must be a pure function of its arguments.
using DatasetSource = std::function<HierDataset(std::uint64_t stream, std::uint64_t index)>;

inline DatasetSource simulator_source(const SimulatorConfig& sim, std::uint64_t seed) {
  return [sim, seed](std::uint64_t stream, std::uint64_t index) {
    return simulate_dataset(sim, stream_seed(seed, 0x5eed, stream), index);
  };
}

struct CurvePoint {
  std::size_t step = 0;
  double global_loss = 0.0;
  double local_loss = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();  // NaN between evaluations
  std::size_t groups = 0;
};

struct TrainResult {
  std::size_t steps = 0;
  std::size_t skipped_batches = 0;
  double initial_val_loss = 0.0;
  double best_val_loss = 0.0;
  std::size_t best_step = 0;
  bool early_stopped = false;
  std::vector<CurvePoint> curve;
  ParamStore<float> best_params;
  double seconds = 0.0;
};

/// Mean total loss of fixed datasets in eval mode (no dropout).
template <class T>
double evaluate_loss(const Architecture& arch, const ParamStore<T>& ps, const std::vector<PreparedDataset>& sets,
                     std::size_t batch) {
  double total = 0.0;
  for (std::size_t start = 0; start < sets.size(); start += batch) {
    std::vector<const PreparedDataset*> b;
    for (std::size_t i = start; i < std::min(sets.size(), start + batch); ++i) b.push_back(&sets[i]);
    Graph<T> g(false);
    const auto terms = batch_loss(g, arch, ps, b);
    total += static_cast<double>(g.value(terms.total)(0, 0)) * static_cast<double>(b.size());
  }
  return total / static_cast<double>(sets.size());
}

/// Complete trainer state; everything needed to continue bit-identically.
struct TrainState {
  TrainState(ParamStore<float> ps, const OptimizerConfig& oc) : params(std::move(ps)), opt(oc, params) {}

  ParamStore<float> params;  // live (interpolated) parameters
  Optimizer<float> opt;
  std::size_t step = 0;
  std::size_t skipped = 0;
  double initial_val = std::numeric_limits<double>::quiet_NaN();
  double initial_train = std::numeric_limits<double>::quiet_NaN();
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_step = 0;
  int evals_since_best = 0;
  std::size_t divergent_run = 0;
  ParamStore<float> best;
};

inline Checkpoint state_checkpoint(const TrainConfig& cfg, const TrainState& s) {
  nlohmann::json extra = {{"kind", "train-state"},
                          {"train", cfg},
                          {"step", s.step},
                          {"skipped", s.skipped},
                          {"initial_val", s.initial_val},
                          {"initial_train", s.initial_train},
                          {"best_val", s.best_val},
                          {"best_step", s.best_step},
                          {"evals_since_best", s.evals_since_best},
                          {"divergent_run", s.divergent_run},
                          {"opt_step", s.opt.step_count()},
                          {"opt_weight_sum", s.opt.weight_sum()},
                          {"opt_lr_max", s.opt.lr_max()}};
  Checkpoint ck = model_checkpoint(cfg.model, s.params, extra);
  for (const auto& n : s.opt.names()) {
    const auto& slot = s.opt.slot(n);
    ck.arrays.emplace_back("opt.z/" + n, slot.z);
    if (slot.x.size()) ck.arrays.emplace_back("opt.x/" + n, slot.x);
    ck.arrays.emplace_back("opt.v/" + n, slot.v);
    ck.arrays.emplace_back("best/" + n, s.best.at(n));
  }
  return ck;
}

inline TrainState state_from_checkpoint(const Checkpoint& ck, const TrainConfig& cfg) {
  const auto& m = ck.manifest;
  if (m.value("kind", "") != "train-state") throw IoError("not a training-state checkpoint");
  LoadedModel lm = model_from_checkpoint(ck);
  TrainState s(lm.params, cfg.opt);
  for (const auto& n : s.opt.names()) {
    auto& slot = s.opt.slot(n);
    slot.z = ck.at("opt.z/" + n);
    if (const auto* x = ck.find("opt.x/" + n)) slot.x = *x;
    slot.v = ck.at("opt.v/" + n);
    s.best.add(n, ck.at("best/" + n));
  }
  s.opt.restore_counters(m.at("opt_step").get<long>(), m.at("opt_weight_sum").get<double>(),
                         m.at("opt_lr_max").get<double>());
  s.step = m.at("step").get<std::size_t>();
  s.skipped = m.at("skipped").get<std::size_t>();
  auto num = [&](const char* k) {
    return m.at(k).is_null() ? std::numeric_limits<double>::quiet_NaN() : m.at(k).get<double>();
  };
  s.initial_val = num("initial_val");
  s.initial_train = num("initial_train");
  s.best_val = m.at("best_val").is_null() ? std::numeric_limits<double>::infinity() : m.at("best_val").get<double>();
  s.best_step = m.at("best_step").get<std::size_t>();
  s.evals_since_best = m.at("evals_since_best").get<int>();
  s.divergent_run = m.at("divergent_run").get<std::size_t>();
  return s;
}

class TrainingDiverged : public NumericError {
 public:
  using NumericError::NumericError;
};

struct TrainOptions {
  std::string out_dir;                    // empty: keep everything in memory
  std::size_t stop_after_steps = 0;       // 0: run to the budget (used to test resume)
  bool resume = false;                    // continue from out_dir/state.ckpt
  std::function<void(const std::string&)> log;
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, DatasetSource source = {}) : cfg_(std::move(cfg)), arch_(cfg_.model) {
    cfg_.validate();
    source_ = source ? std::move(source) : simulator_source(cfg_.sim, cfg_.seed);
  }

  const TrainConfig& config() const { return cfg_; }
  const Architecture& architecture() const { return arch_; }

  /// Training dataset `index`, standardized and (optionally) with slopes permuted.
  PreparedDataset training_set(std::uint64_t index) const {
    HierDataset ds = source_(0, index);
    if (cfg_.permute_slopes && cfg_.model.d > 2) {
      Rng rng = make_rng(cfg_.seed, 0xbe7, index);
      ds = permute_columns(ds, random_slope_permutation(cfg_.model.d, cfg_.model.q, rng));
    }
    return prepare_dataset(ds);
  }

  std::vector<PreparedDataset> validation_sets() const {
    std::vector<PreparedDataset> v;
    for (std::size_t i = 0; i < cfg_.validation_sets; ++i) v.push_back(prepare_dataset(source_(1, i)));
    return v;
  }

  TrainResult run(const TrainOptions& o = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    auto say = [&](const std::string& s) {
      if (o.log) o.log(s);
    };
    const auto val = validation_sets();
    const std::string state_path = o.out_dir.empty() ? "" : o.out_dir + "/state.ckpt";
    const std::string curve_path = o.out_dir.empty() ? "" : o.out_dir + "/curve.csv";
    if (!o.out_dir.empty()) std::filesystem::create_directories(o.out_dir);

    TrainState s = o.resume ? state_from_checkpoint(load_checkpoint(state_path), cfg_) : fresh_state();
    if (o.resume) say("resumed at step " + std::to_string(s.step));

    TrainResult res;
    std::ofstream curve;
    if (!curve_path.empty()) {
      curve.open(curve_path, o.resume ? std::ios::app : std::ios::trunc);
      if (!curve) throw IoError("cannot write " + curve_path);
      if (!o.resume) curve << "step,global_loss,local_loss,val_loss,groups\n";
    }
    auto record = [&](const CurvePoint& p) {
      res.curve.push_back(p);
      if (curve.is_open()) {
        curve << p.step << ',' << p.global_loss << ',' << p.local_loss << ',';
        if (!std::isnan(p.val_loss)) curve << p.val_loss;
        curve << ',' << p.groups << '\n';
        curve.flush();
      }
    };

    if (std::isnan(s.initial_val)) {
      s.initial_val = evaluate_loss(arch_, s.opt.eval_params(s.params), val, cfg_.batch);
      s.best_val = s.initial_val;
      s.best = s.opt.eval_params(s.params);
      say("initial validation loss " + std::to_string(s.initial_val));
      record({0, std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN(), s.initial_val, 0});
    }

    const std::size_t total = cfg_.total_steps();
    const std::size_t stop = o.stop_after_steps ? std::min(total, o.stop_after_steps) : total;
    std::future<std::vector<PreparedDataset>> next;
    auto make_batch = [this](std::size_t step) {
      std::vector<PreparedDataset> b;
      for (std::size_t i = 0; i < cfg_.batch; ++i) b.push_back(training_set(step * cfg_.batch + i));
      return b;
    };
    if (!cfg_.deterministic && s.step < stop) next = std::async(std::launch::async, make_batch, s.step);

    bool early = false;
    while (s.step < stop) {
      std::vector<PreparedDataset> batch;
      if (next.valid()) {
        batch = next.get();
        if (s.step + 1 < stop) next = std::async(std::launch::async, make_batch, s.step + 1);
      } else {
        batch = make_batch(s.step);
      }
      std::vector<const PreparedDataset*> ptrs;
      for (const auto& p : batch) ptrs.push_back(&p);

      Graph<float> g;
      Rng drop = make_rng(cfg_.seed, 0xd50, s.step);
      CurvePoint pt;
      pt.step = s.step + 1;
      bool ok = true;
      try {
        const auto terms = batch_loss(g, arch_, s.params, ptrs, &drop);
        pt.global_loss = g.value(terms.global)(0, 0);
        pt.local_loss = g.value(terms.local)(0, 0);
        pt.groups = terms.groups;
        const double loss = pt.global_loss + pt.local_loss;
        if (!std::isfinite(loss)) throw NumericError("non-finite loss");
        g.backward(terms.total);
        ok = s.opt.step(s.params, collect_grads(g, s.params));
        if (!ok) say("step " + std::to_string(pt.step) + ": non-finite gradient, batch skipped");
        if (std::isnan(s.initial_train)) s.initial_train = loss;
        const double limit = s.initial_train + (cfg_.divergence_factor - 1.0) * std::max(std::abs(s.initial_train), 1.0);
        s.divergent_run = loss > limit ? s.divergent_run + 1 : 0;
      } catch (const NumericError& e) {
        ok = false;
        ++s.divergent_run;
        say("step " + std::to_string(pt.step) + ": " + e.what() + ", batch skipped");
      }
      if (!ok) ++s.skipped;
      ++s.step;
      if (s.divergent_run >= cfg_.divergence_steps) {
        throw TrainingDiverged("training diverged: loss above " + std::to_string(cfg_.divergence_factor) +
                               "x the initial level for " + std::to_string(s.divergent_run) + " steps (step " +
                               std::to_string(s.step) + ", initial " + std::to_string(s.initial_train) + ")");
      }

      if (s.step % cfg_.eval_every == 0 || s.step == total) {
        const auto eval_ps = s.opt.eval_params(s.params);
        pt.val_loss = evaluate_loss(arch_, eval_ps, val, cfg_.batch);
        if (pt.val_loss < s.best_val) {
          s.best_val = pt.val_loss;
          s.best_step = s.step;
          s.best = eval_ps;
          s.evals_since_best = 0;
        } else {
          ++s.evals_since_best;
        }
        std::ostringstream msg;
        msg << "step " << s.step << "/" << total << " loss " << pt.global_loss + pt.local_loss << " val "
            << pt.val_loss << " best " << s.best_val;
        say(msg.str());
        if (!o.out_dir.empty()) save_outputs(o.out_dir, s);
        if (s.evals_since_best >= cfg_.patience) early = true;
      }
      record(pt);
      if (early) {
        say("no validation improvement in " + std::to_string(cfg_.patience) + " evaluations; stopping");
        break;
      }
    }
    if (next.valid()) next.wait();
    if (!o.out_dir.empty()) save_outputs(o.out_dir, s);

    res.steps = s.step;
    res.skipped_batches = s.skipped;
    res.initial_val_loss = s.initial_val;
    res.best_val_loss = s.best_val;
    res.best_step = s.best_step;
    res.early_stopped = early;
    res.best_params = s.best;
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    state_ = std::move(s);
    return res;
  }

  /// State after the last run (for tests).
  const std::optional<TrainState>& state() const { return state_; }

 private:
  TrainState fresh_state() const {
    ParamStore<float> ps = arch_.init<float>(cfg_.seed);
    return TrainState(std::move(ps), cfg_.opt);
  }

  void save_outputs(const std::string& dir, const TrainState& s) const {
    save_checkpoint(dir + "/state.ckpt", state_checkpoint(cfg_, s));
    nlohmann::json extra = {{"train", cfg_}, {"best_step", s.best_step}, {"best_val_loss", s.best_val}};
    save_checkpoint(dir + "/model.ckpt", model_checkpoint(cfg_.model, s.best, extra));
  }

  TrainConfig cfg_;
  Architecture arch_;
  DatasetSource source_;
  std::optional<TrainState> state_;
};

}  // namespace mixflow
