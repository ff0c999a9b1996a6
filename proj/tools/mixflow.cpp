// mixflow command-line front end.
//
// Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O error.

#include <filesystem>
#include <iostream>
#include <map>
#include <set>

#include "CLI11.hpp"
#include "mixflow/pipeline.hpp"
#include "mixflow/training.hpp"

namespace fs = std::filesystem;
using namespace mixflow;
using json = nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Common {
  std::uint64_t seed = 1;
  std::string config;
  std::string out;
  bool deterministic = false;
};

json read_json_file(const std::string& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Written next to every output: enough to rerun the command.
void write_manifest(const std::string& out, const std::string& command, const Common& c, json details) {
  json m;
  m["command"] = command;
  m["seed"] = c.seed;
  m["config_file"] = c.config;
  m["config_hash"] = c.config.empty() ? "" : fnv1a_hex(read_text(c.config));
  m["deterministic"] = c.deterministic;
  m["versions"] = {{"mixflow", kVersion},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"compiler", __VERSION__},
                   {"checkpoint_format", kCheckpointVersion}};
  m["details"] = std::move(details);
  const std::string path = fs::is_directory(out) ? (fs::path(out) / "manifest.json").string() : out + ".manifest.json";
  write_text(path, m.dump(2) + "\n");
}

std::string checkpoint_path(const std::string& p) {
  return fs::is_directory(p) ? (fs::path(p) / "model.ckpt").string() : p;
}

std::vector<HierDataset> load_datasets(const std::string& path, int q) {
  if (path.size() > 4 && path.substr(path.size() - 4) == ".csv") return {read_csv_dataset(path, q).data};
  return read_datasets(path);
}

PriorSpec prior_for(const HierDataset& ds, const std::string& config) {
  if (!config.empty()) {
    const json j = read_json_file(config);
    if (j.contains("prior")) {
      PriorSpec p = prior_from_json(j["prior"]);
      p.validate(ds.d, ds.q);
      return p;
    }
  }
  if (ds.prior) return *ds.prior;
  return default_inference_prior(ds.d, ds.q);
}

std::vector<double> parse_alphas(const std::string& s) {
  std::vector<double> a;
  std::stringstream ss(s);
  for (std::string t; std::getline(ss, t, ',');) {
    try {
      a.push_back(std::stod(t));
    } catch (const std::exception&) {
      throw ConfigError("bad alpha '" + t + "'");
    }
    if (!(a.back() > 0 && a.back() < 1)) throw ConfigError("alpha values must be in (0, 1)");
  }
  if (a.empty()) throw ConfigError("empty alpha list");
  return a;
}

void say(const std::string& s) { std::cerr << s << std::endl; }

// --- commands --------------------------------------------------------------------------

int cmd_simulate(const Common& c, int d, int q, std::size_t count, bool toy) {
  SimulatorConfig cfg = SimulatorConfig::make(d, q, toy);
  if (!c.config.empty()) cfg = read_json_file(c.config).get<SimulatorConfig>();
  SimulationStats stats;
  std::vector<HierDataset> sets;
  for (std::size_t i = 0; i < count; ++i) sets.push_back(simulate_dataset(cfg, c.seed, i, &stats));
  write_datasets(c.out, sets);
  write_manifest(c.out, "simulate", c,
                 {{"simulator", cfg}, {"count", count}, {"rejected_datasets", stats.rejected_datasets},
                  {"variance_rejections", stats.variance_rejections}, {"lkj_resamples", stats.lkj_resamples}});
  say("wrote " + std::to_string(count) + " datasets to " + c.out);
  return 0;
}

int cmd_train(const Common& c, int d, int q, std::size_t budget, std::size_t batch, bool toy, bool resume) {
  TrainConfig cfg = TrainConfig::make(d, q, toy);
  if (!c.config.empty()) cfg = read_json_file(c.config).get<TrainConfig>();
  if (budget) cfg.budget = budget;
  if (batch) cfg.batch = batch;
  cfg.seed = c.seed;
  cfg.deterministic = cfg.deterministic || c.deterministic;
  Trainer trainer(cfg);
  TrainOptions o;
  o.out_dir = c.out;
  o.resume = resume;
  o.log = say;
  const TrainResult r = trainer.run(o);
  write_manifest(c.out, "train", c,
                 {{"train", cfg}, {"steps", r.steps}, {"skipped_batches", r.skipped_batches},
                  {"initial_val_loss", r.initial_val_loss}, {"best_val_loss", r.best_val_loss},
                  {"best_step", r.best_step}, {"early_stopped", r.early_stopped}, {"seconds", r.seconds},
                  {"checkpoint_id", fnv1a_hex(read_file_bytes(c.out + "/model.ckpt"))}});
  return 0;
}

int cmd_infer(const Common& c, const std::string& ckpt, const std::string& data, std::size_t k,
              const std::string& refine, const std::string& table_path, const std::string& alphas) {
  const LoadedModel model = load_model(checkpoint_path(ckpt));
  const Architecture arch(model.cfg);
  InferOptions opt;
  opt.k = k;
  opt.refine = parse_refine_mode(refine);
  opt.alphas = parse_alphas(alphas);
  ConformalTable table;
  if (uses_conformal(opt.refine)) {
    if (table_path.empty()) throw ConfigError("--refine " + refine + " needs --table");
    table = read_json_file(table_path).get<ConformalTable>();
    if (!table.checkpoint.empty() && table.checkpoint != model.id) {
      say("warning: calibration table was made for checkpoint " + table.checkpoint + ", not " + model.id);
    }
    opt.table = &table;
  }
  std::vector<nlohmann::ordered_json> records;
  for (const HierDataset& ds : load_datasets(data, model.cfg.q)) {
    Rng rng = make_rng(c.seed, 0x1f, ds.id);
    const InferResult r = infer(arch, model.params, ds, prior_for(ds, c.config), opt, rng);
    for (const auto& iv : r.intervals)
      if (iv.nearest_alpha) say("warning: alpha " + std::to_string(iv.alpha) + " not in table; used nearest entry");
    records.push_back(infer_record(r));
  }
  write_draws(c.out, records);
  write_manifest(c.out, "infer", c,
                 {{"checkpoint", model.id}, {"data", data}, {"k", k}, {"refine", refine}, {"table", table_path},
                  {"datasets", records.size()}});
  say("wrote draws for " + std::to_string(records.size()) + " datasets to " + c.out);
  return 0;
}

/// Draws for every set (data scale), with IS applied when requested.
std::vector<PosteriorDraws> draws_for_sets(const LoadedModel& model, const std::vector<HierDataset>& sets,
                                           std::size_t k, bool is, std::uint64_t seed) {
  const Architecture arch(model.cfg);
  InferOptions opt;
  opt.k = k;
  opt.refine = is ? RefineMode::Is : RefineMode::None;
  opt.alphas = {0.5};
  std::vector<PosteriorDraws> out;
  for (const auto& ds : sets) {
    Rng rng = make_rng(seed, 0x1f, ds.id);
    out.push_back(infer(arch, model.params, ds, prior_for(ds, ""), opt, rng).draws);
  }
  return out;
}

int cmd_calibrate(const Common& c, const std::string& ckpt, const std::string& sets_path, const std::string& alphas,
                  std::size_t k, const std::string& refine) {
  const LoadedModel model = load_model(checkpoint_path(ckpt));
  const auto sets = read_datasets(sets_path);
  const bool is = uses_is(parse_refine_mode(refine));
  std::vector<std::vector<double>> truths;
  for (const auto& ds : sets) {
    if (!ds.truth) throw ConfigError("calibration set " + std::to_string(ds.id) + " has no truth");
    truths.push_back(truth_vector(*ds.truth));
  }
  ConformalTable t = calibrate(draws_for_sets(model, sets, k, is, c.seed), truths, parse_alphas(alphas));
  t.checkpoint = model.id;
  t.reweighted = is;
  if (t.low_confidence) say("warning: only " + std::to_string(t.sets) + " calibration sets; table marked low-confidence");
  write_text(c.out, json(t).dump(2) + "\n");
  write_manifest(c.out, "calibrate", c, {{"checkpoint", model.id}, {"sets", sets_path}, {"k", k}, {"refine", refine}});
  return 0;
}

std::vector<MetricReport> reports_with_splits(const std::vector<DatasetResult>& res, const std::string& label) {
  std::vector<MetricReport> reps{make_report(res, label)};
  if (res.size() >= 2) {
    auto [lo_n, hi_n] = split_report(res, SplitKey::N);
    auto [lo_s, hi_s] = split_report(res, SplitKey::Snr);
    for (auto* r : {&lo_n, &hi_n, &lo_s, &hi_s}) {
      r->label = label + "_" + r->label;
      reps.push_back(*r);
    }
  }
  return reps;
}

void write_report_files(const std::string& dir, const std::vector<MetricReport>& main,
                        const std::vector<MetricReport>& all, const std::vector<std::vector<DatasetResult>>& results) {
  fs::create_directories(dir);
  write_text(dir + "/report.csv", report_csv(all));
  write_text(dir + "/table.txt", render_table(main) + "\n" + render_table(all));
  write_text(dir + "/coverage.svg", svg_coverage(main));
  // scatter data and plots per role for the first model
  std::ostringstream csv;
  csv << std::setprecision(12) << "model,dataset,parameter,role,truth,mean\n";
  for (std::size_t mi = 0; mi < results.size(); ++mi)
    for (const auto& r : results[mi]) {
      const auto names = parameter_names(r.d, r.q, r.m);
      for (std::size_t p = 0; p < r.truth.size(); ++p)
        csv << main[mi].label << ',' << r.id << ',' << names[p] << ',' << role_name(r.roles[p]) << ',' << r.truth[p]
            << ',' << r.mean[p] << '\n';
    }
  write_text(dir + "/recovery.csv", csv.str());
  for (int ri = 0; ri < kRoleCount; ++ri) {
    std::vector<double> t, m;
    for (const auto& r : results.front())
      for (std::size_t p = 0; p < r.truth.size(); ++p)
        if (static_cast<int>(r.roles[p]) == ri) {
          t.push_back(r.truth[p]);
          m.push_back(r.mean[p]);
        }
    const std::string rn = role_name(static_cast<Role>(ri));
    write_text(dir + "/recovery_" + rn + ".svg", svg_scatter(t, m, main.front().label + " " + rn));
  }
}

int cmd_evaluate(const Common& c, const std::string& ckpt, const std::string& sets_path, std::size_t k,
                 const std::string& refine, const std::string& table_path) {
  const LoadedModel model = load_model(checkpoint_path(ckpt));
  const Architecture arch(model.cfg);
  const auto sets = read_datasets(sets_path);
  InferOptions opt;
  opt.k = k;
  opt.refine = parse_refine_mode(refine);
  opt.alphas = {0.5};
  ConformalTable table;
  if (uses_conformal(opt.refine)) {
    if (table_path.empty()) throw ConfigError("--refine " + refine + " needs --table");
    table = read_json_file(table_path).get<ConformalTable>();
    opt.table = &table;
  }
  std::vector<DatasetResult> res;
  for (const auto& ds : sets) {
    if (!ds.truth) throw ConfigError("evaluation set " + std::to_string(ds.id) + " has no truth");
    Rng rng = make_rng(c.seed, 0x1f, ds.id);
    const InferResult r = infer(arch, model.params, ds, prior_for(ds, ""), opt, rng);
    res.push_back(evaluate_draws(ds, r.draws, truth_vector(*ds.truth), opt.table));
  }
  const std::string label = std::string("model_") + to_string(opt.refine);
  auto all = reports_with_splits(res, label);
  for (auto& r : all) r.provenance = {{"checkpoint", model.id}, {"refine", refine}};
  write_report_files(c.out, {all.front()}, all, {res});
  std::cout << render_table({all.front()});
  write_manifest(c.out, "evaluate", c, {{"checkpoint", model.id}, {"sets", sets_path}, {"k", k}, {"refine", refine}});
  return 0;
}

int cmd_report(const Common& c, const std::vector<std::string>& draw_files, std::vector<std::string> labels,
               const std::string& truth_path, const std::string& table_path) {
  const auto sets = read_datasets(truth_path);
  std::map<std::uint64_t, const HierDataset*> by_id;
  for (const auto& ds : sets) by_id[ds.id] = &ds;
  ConformalTable table;
  const ConformalTable* tp = nullptr;
  if (!table_path.empty()) {
    table = read_json_file(table_path).get<ConformalTable>();
    tp = &table;
  }
  while (labels.size() < draw_files.size()) labels.push_back("model" + std::to_string(labels.size() + 1));
  std::vector<MetricReport> main, all;
  std::vector<std::vector<DatasetResult>> results;
  for (std::size_t f = 0; f < draw_files.size(); ++f) {
    std::vector<DatasetResult> res;
    std::vector<std::uint64_t> missing;
    for (const auto& j : read_json_lines(draw_files[f])) {
      PosteriorDraws p = draws_from_json(j);
      if (p.standardized) {
        if (!p.record) throw ConfigError(draw_files[f] + ": standardized draws without a record");
        p = unstandardize_draws(p, *p.record);
      }
      auto it = by_id.find(p.dataset_id);
      if (it == by_id.end() || !it->second->truth || it->second->m() != p.m) {
        missing.push_back(p.dataset_id);
        continue;
      }
      res.push_back(evaluate_draws(*it->second, p, truth_vector(*it->second->truth), tp));
    }
    if (!missing.empty()) {
      std::string msg = draw_files[f] + ": skipped dataset ids without matching truth:";
      for (auto id : missing) msg += " " + std::to_string(id);
      say(msg);
    }
    if (res.empty()) throw ConfigError(draw_files[f] + ": no draws matched the truth file");
    auto reps = reports_with_splits(res, labels[f]);
    main.push_back(reps.front());
    all.insert(all.end(), reps.begin(), reps.end());
    results.push_back(std::move(res));
  }
  write_report_files(c.out, main, all, results);
  std::cout << render_table(main);
  write_manifest(c.out, "report", c, {{"draws", draw_files}, {"labels", labels}, {"truth", truth_path}});
  return 0;
}

int cmd_ingest(const Common& c, const std::string& samples, double threshold, std::uint64_t id) {
  ExternalSelection sel = ingest_external_samples(samples, threshold);
  sel.draws.dataset_id = id;
  write_draws(c.out, {draws_to_json(sel.draws)});
  json counts = json::object();
  for (const auto& [ch, n] : sel.outliers) counts[std::to_string(ch)] = n;
  write_manifest(c.out, "ingest", c, {{"samples", samples}, {"selected_chain", sel.chain}, {"outliers", counts}});
  say("selected chain " + std::to_string(sel.chain));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Amortized posterior estimation for hierarchical linear regression"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Common c;
  auto common = [&](CLI::App* s, bool need_out = true) {
    s->add_option("--seed", c.seed, "random seed");
    s->add_option("--config", c.config, "JSON configuration file")->check(CLI::ExistingFile);
    auto* o = s->add_option("--out", c.out, "output path");
    if (need_out) o->required();
    s->add_flag("--deterministic", c.deterministic, "single-threaded, bit-reproducible run");
  };

  int d = 2, q = 1;
  std::size_t count = 100, budget = 0, batch = 0, k = 1000;
  bool toy = false, resume = false;
  std::string ckpt, data, refine = "none", table, alphas = "0.05,0.1,0.2,0.32,0.5", truth, samples;
  std::vector<std::string> draws, labels;
  double threshold = 3.0;
  std::uint64_t dataset_id = 0;

  auto* sim = app.add_subcommand("simulate", "write simulated datasets (JSON Lines)");
  common(sim);
  sim->add_option("--d", d, "fixed effects incl. intercept");
  sim->add_option("--q", q, "random effects");
  sim->add_option("--count", count, "number of datasets");
  sim->add_flag("--toy", toy, "toy prior ranges");

  auto* tr = app.add_subcommand("train", "train a model; --out is a directory");
  common(tr);
  tr->add_option("--d", d, "fixed effects incl. intercept");
  tr->add_option("--q", q, "random effects");
  tr->add_option("--budget", budget, "training datasets");
  tr->add_option("--batch", batch, "datasets per step");
  tr->add_flag("--toy", toy, "simulate with toy prior ranges");
  tr->add_flag("--resume", resume, "continue from <out>/state.ckpt");

  auto* inf = app.add_subcommand("infer", "posterior draws for datasets (JSON Lines or CSV)");
  common(inf);
  inf->add_option("--checkpoint", ckpt, "trained model directory")->required();
  inf->add_option("--data", data, "datasets (.jsonl[.gz]) or observation CSV")->required()->check(CLI::ExistingFile);
  inf->add_option("--k", k, "draws per dataset");
  inf->add_option("--refine", refine, "none|is|conformal|both");
  inf->add_option("--table", table, "conformal table (JSON)");
  inf->add_option("--alphas", alphas, "comma-separated miscoverage levels");

  auto* cal = app.add_subcommand("calibrate", "fit a conformal table on calibration sets");
  common(cal);
  cal->add_option("--checkpoint", ckpt, "trained model directory")->required();
  cal->add_option("--sets", data, "simulated calibration sets with truth")->required()->check(CLI::ExistingFile);
  cal->add_option("--alphas", alphas, "comma-separated miscoverage levels");
  cal->add_option("--k", k, "draws per dataset");
  cal->add_option("--refine", refine, "none|is: which draws the table is fitted on");

  auto* ev = app.add_subcommand("evaluate", "infer on sets with truth and write a report directory");
  common(ev);
  ev->add_option("--checkpoint", ckpt, "trained model directory")->required();
  ev->add_option("--sets", data, "simulated sets with truth")->required()->check(CLI::ExistingFile);
  ev->add_option("--k", k, "draws per dataset");
  ev->add_option("--refine", refine, "none|is|conformal|both");
  ev->add_option("--table", table, "conformal table (JSON)");

  auto* rep = app.add_subcommand("report", "metrics from draw files against simulated truth");
  common(rep);
  rep->add_option("--draws", draws, "draw files from infer, one per method")->required();
  rep->add_option("--labels", labels, "method names, in --draws order");
  rep->add_option("--truth", truth, "the simulated sets the draws came from")->required()->check(CLI::ExistingFile);
  rep->add_option("--table", table, "conformal table applied before scoring");

  auto* ing = app.add_subcommand("ingest", "select the best chain of external draws (chain,draw,parameter,value)");
  common(ing);
  ing->add_option("--samples", samples, "CSV chain,draw,parameter,value")->required()->check(CLI::ExistingFile);
  ing->add_option("--threshold", threshold, "MAD outlier threshold");
  ing->add_option("--dataset-id", dataset_id, "id stored with the selected draws");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*sim) return cmd_simulate(c, d, q, count, toy);
    if (*tr) return cmd_train(c, d, q, budget, batch, toy, resume);
    if (*inf) return cmd_infer(c, ckpt, data, k, refine, table, alphas);
    if (*cal) return cmd_calibrate(c, ckpt, data, alphas, k, refine);
    if (*ev) return cmd_evaluate(c, ckpt, data, k, refine, table);
    if (*rep) return cmd_report(c, draws, labels, truth, table);
    if (*ing) return cmd_ingest(c, samples, threshold, dataset_id);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DimensionError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 4;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 4;
  }
  return 2;
}
