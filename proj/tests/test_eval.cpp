#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "mixflow/eval.hpp"
#include "mixflow/pipeline.hpp"

using namespace mixflow;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("mixflow_eval_" + name)).string();
}

void write_file(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

HierDataset toy(std::uint64_t seed, std::uint64_t index = 0) {
  const SimulatorConfig cfg = SimulatorConfig::make(2, 1, true);
  return simulate_dataset(cfg, seed, index);
}

// k copies of one parameter point
PosteriorDraws point_draws(const GlobalParams& g, const LocalParams& l, std::size_t k) {
  PosteriorDraws p;
  p.d = static_cast<int>(g.beta.size());
  p.q = static_cast<int>(g.sigma_alpha.size());
  p.m = l.groups();
  p.standardized = false;
  const auto gv = global_vector(g);
  p.global.resize(static_cast<Index>(k), static_cast<Index>(gv.size()));
  p.local.resize(static_cast<Index>(k), static_cast<Index>(p.m) * p.q);
  for (Index j = 0; j < static_cast<Index>(k); ++j) {
    for (std::size_t c = 0; c < gv.size(); ++c) p.global(j, static_cast<Index>(c)) = gv[c];
    for (std::size_t c = 0; c < l.alpha.storage().size(); ++c) p.local(j, static_cast<Index>(c)) = l.alpha.storage()[c];
  }
  p.log_q_global.assign(k, 0.0);
  p.log_q_local = Mat<double>::Zero(static_cast<Index>(k), static_cast<Index>(p.m));
  return p;
}

}  // namespace

TEST(Recovery, WorkedExamples) {
  std::vector<double> t{1, 2, 3, 4};
  auto same = recovery(t, t);
  EXPECT_DOUBLE_EQ(same.r, 1.0);
  EXPECT_DOUBLE_EQ(same.rmse, 0.0);
  EXPECT_DOUBLE_EQ(same.bias, 0.0);
  std::vector<double> shifted{2, 3, 4, 5};
  auto s = recovery(t, shifted);
  EXPECT_NEAR(s.r, 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(s.rmse, 1.0);
  EXPECT_DOUBLE_EQ(s.bias, 1.0);
  std::vector<double> a{1, 2, 3}, b{1, 2, 4};
  EXPECT_NEAR(recovery(a, b).rmse, std::sqrt(1.0 / 3.0), 1e-15);
  std::vector<double> flat{2, 2, 2};
  EXPECT_TRUE(std::isnan(recovery(a, flat).r));
  EXPECT_THROW(recovery(std::vector<double>{1.0}, std::vector<double>{1.0}), DimensionError);
}

TEST(Recovery, CorrelationWithinBounds) {
  Rng rng(1);
  std::normal_distribution<double> n;
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> a(10), b(10);
    for (int i = 0; i < 10; ++i) {
      a[i] = n(rng);
      b[i] = rep % 2 ? -a[i] : n(rng);
    }
    const double r = recovery(a, b).r;
    ASSERT_GE(r, -1.0);
    ASSERT_LE(r, 1.0);
  }
}

TEST(CoverageError, WorkedExamples) {
  EXPECT_NEAR(coverage_error({true, true, true}, 0.05), 0.05, 1e-15);
  EXPECT_NEAR(coverage_error({true, false, true, true}, 0.5), 0.25, 1e-15);
  EXPECT_NEAR(coverage_error({true, true, true, true, true, true, true, true, true, false}, 0.1), 0.0, 1e-15);
  EXPECT_THROW(coverage_error({}, 0.1), DimensionError);
}

TEST(CoverageError, MatchesOneLineFormulaAndBounds) {
  Rng rng(2);
  std::bernoulli_distribution coin(0.7);
  for (double alpha : default_alphas()) {
    for (int rep = 0; rep < 50; ++rep) {
      std::vector<bool> h(1 + rep * 3);
      for (auto&& v : h) v = coin(rng);
      int c = 0;
      for (bool v : h) c += v;
      ASSERT_EQ(coverage_error(h, alpha), double(c) / double(h.size()) - (1 - alpha));
      ASSERT_GE(coverage_error(h, alpha), -(1 - alpha) - 1e-15);
      ASSERT_LE(coverage_error(h, alpha), alpha + 1e-15);
    }
  }
}

TEST(MadOutliers, WorkedExamples) {
  std::vector<double> a{1, 2, 3, 4, 5};
  EXPECT_EQ(mad_outliers(a), std::vector<bool>(5, false));
  std::vector<double> b{1, 1, 1, 100};
  // MAD is zero here; mean-deviation fallback gives 99 / (1.2533 * 24.75) = 3.19
  EXPECT_EQ(mad_outliers(b), (std::vector<bool>{false, false, false, true}));
  std::vector<double> c(7, 4.2);
  EXPECT_EQ(mad_outliers(c), std::vector<bool>(7, false));
  std::vector<double> e{1, 2, 3, 4, 50};
  EXPECT_EQ(mad_outliers(e), (std::vector<bool>{false, false, false, false, true}));
  EXPECT_EQ(mad_outliers(e, 100.0), std::vector<bool>(5, false));
  EXPECT_THROW(mad_outliers(std::vector<double>{1, 2}), DimensionError);
}

TEST(PosteriorPredictive, ZeroNoiseReproducesOutcomes) {
  HierDataset ds = toy(3);
  GlobalParams g = ds.truth->global;
  HierDataset noiseless = ds;
  for (std::size_t i = 0; i < ds.m(); ++i)
    for (std::size_t j = 0; j < ds.group_sizes[i]; ++j) noiseless.y(i, j) -= ds.truth->eps(i, j);
  g.sigma_eps = 0.0;
  Rng rng(4);
  const Mat<double> yt = posterior_predictive(noiseless, point_draws(g, ds.truth->local, 5), 3, rng);
  ASSERT_EQ(yt.rows(), 3);
  ASSERT_EQ(yt.cols(), static_cast<Index>(ds.total_n()));
  Index c = 0;
  for (std::size_t i = 0; i < ds.m(); ++i)
    for (std::size_t j = 0; j < ds.group_sizes[i]; ++j, ++c)
      for (Index t = 0; t < 3; ++t) EXPECT_NEAR(yt(t, c), noiseless.y(i, j), 1e-12);
}

TEST(PosteriorPredictive, TrueParametersAndNoiseSeedAreBitExact) {
  for (std::uint64_t idx = 0; idx < 5; ++idx) {
    HierDataset ds = toy(5, idx);
    Rng noise(ds.truth->noise_seed);
    const auto y = simulate_outcomes(ds, ds.truth->global, ds.truth->local, noise);
    std::size_t c = 0;
    for (std::size_t i = 0; i < ds.m(); ++i)
      for (std::size_t j = 0; j < ds.group_sizes[i]; ++j) ASSERT_EQ(y[c++], ds.y(i, j));
  }
}

TEST(PosteriorPredictive, MeanTracksLinearPredictor) {
  HierDataset ds = make_empty_dataset(2, 1, {4, 6});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < ds.group_sizes[i]; ++j) {
      ds.X(i, j, 0) = ds.Z(i, j, 0) = 1.0;
      ds.X(i, j, 1) = 0.5 * double(j) - 1.0;
    }
  Rng rng(6);
  std::normal_distribution<double> n;
  const std::size_t k = 1000;
  PosteriorDraws p = point_draws(GlobalParams{{0.0, 0.0}, {0.1}, 0.5}, LocalParams{Tensor<double>({2, 1})}, k);
  const double b0 = 1.5, b1 = -0.8;
  for (Index j = 0; j < static_cast<Index>(k); ++j) {
    p.global(j, 0) = b0 + 0.2 * n(rng);
    p.global(j, 1) = b1 + 0.2 * n(rng);
  }
  const Mat<double> yt = posterior_predictive(ds, p, k, rng);
  const auto bh = p.global_mean();
  Index c = 0;
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < ds.group_sizes[i]; ++j, ++c) {
      const double x = ds.X(i, j, 1);
      const double mean = yt.col(c).mean();
      const double sd = std::sqrt((yt.col(c).array() - mean).square().sum() / double(k - 1));
      EXPECT_LT(std::abs(mean - (bh[0] + bh[1] * x)), 4 * sd / std::sqrt(double(k))) << "cell " << c;
    }
}

TEST(PosteriorPredictive, WeightsSelectDraws) {
  HierDataset ds = toy(7);
  PosteriorDraws p = point_draws(ds.truth->global, ds.truth->local, 2);
  p.global(1, 0) += 1000.0;
  p.global_weights = std::vector<double>{2.0, 0.0};
  Rng rng(8);
  const Mat<double> yt = posterior_predictive(ds, p, 50, rng);
  EXPECT_LT(yt.array().abs().maxCoeff(), 500.0);
}

namespace {

DatasetResult fake_result(std::uint64_t id, std::size_t n, double snr_value, double offset) {
  DatasetResult r;
  r.id = id;
  r.d = 1;
  r.q = 1;
  r.m = 1;
  r.n = n;
  r.snr = snr_value;
  r.truth = {double(id), 1.0 + 0.1 * double(id), 2.0, -0.5 * double(id)};
  r.mean = r.truth;
  for (double& v : r.mean) v += offset * (double(id % 3) - 1.0);
  r.roles = parameter_roles(1, 1, 1);
  r.alphas = {0.1, 0.5};
  r.hits = {{true, true, id % 2 == 0, true}, {id % 2 == 0, false, true, true}};
  return r;
}

}  // namespace

TEST(Report, InvariantToDatasetOrder) {
  std::vector<DatasetResult> rs;
  for (std::uint64_t i = 0; i < 12; ++i) rs.push_back(fake_result(i, 10 + i % 5, 0.5 * double(i), 0.3));
  const auto a = make_report(rs, "x");
  std::reverse(rs.begin(), rs.end());
  std::swap(rs[2], rs[7]);
  const auto b = make_report(rs, "x");
  EXPECT_EQ(report_csv({a}), report_csv({b}));
  const auto [lo1, hi1] = split_report(rs, SplitKey::Snr);
  std::reverse(rs.begin(), rs.end());
  const auto [lo2, hi2] = split_report(rs, SplitKey::Snr);
  EXPECT_EQ(report_csv({lo1, hi1}), report_csv({lo2, hi2}));
}

TEST(Report, CeAndRecoveryPooling) {
  std::vector<DatasetResult> rs{fake_result(0, 5, 1, 0), fake_result(1, 6, 2, 0), fake_result(2, 7, 3, 0)};
  const auto rep = make_report(rs);
  EXPECT_EQ(rep.datasets, 3u);
  // fixed role is beta[0] only: hits at alpha 0.1 are all true
  EXPECT_NEAR(rep.roles.at(Role::Fixed).ce[0], 0.1, 1e-15);
  EXPECT_NEAR(rep.roles.at(Role::Fixed).ce[1], 2.0 / 3.0 - 0.5, 1e-15);
  EXPECT_NEAR(rep.roles.at(Role::Fixed).rec.rmse, 0.0, 1e-15);
  // all 12 indicators at alpha 0.5: {t,f,t,t},{f,f,t,t},{t,f,t,t}
  EXPECT_NEAR(rep.ce_all[1], 8.0 / 12.0 - 0.5, 1e-15);
}

TEST(SplitReport, HandPartitions) {
  std::vector<DatasetResult> two{fake_result(0, 50, 1, 0), fake_result(1, 10, 2, 0)};
  const auto [lo, hi] = split_report(two, SplitKey::N);
  EXPECT_EQ(lo.datasets, 1u);
  EXPECT_EQ(hi.datasets, 1u);
  EXPECT_DOUBLE_EQ(lo.mean_n, 10.0);
  EXPECT_DOUBLE_EQ(hi.mean_n, 50.0);

  // sizes 8, 3, 8, 5, 8, 1: bottom half is {3, 5, 1}... plus ties broken by id
  std::vector<DatasetResult> six;
  const std::size_t n[6] = {8, 3, 8, 5, 8, 1};
  for (std::uint64_t i = 0; i < 6; ++i) six.push_back(fake_result(i, n[i], 0, 0));
  const auto [l6, h6] = split_report(six, SplitKey::N);
  EXPECT_DOUBLE_EQ(l6.mean_n, 3.0);
  EXPECT_DOUBLE_EQ(h6.mean_n, 8.0);
  // ties at the median: sizes 1, 4, 4, 4 -> ids 1 and 2 go low
  std::vector<DatasetResult> tie{fake_result(3, 4, 0, 0), fake_result(0, 1, 0, 0), fake_result(2, 4, 0, 0), fake_result(1, 4, 0, 0)};
  const auto [lt, ht] = split_report(tie, SplitKey::N);
  EXPECT_DOUBLE_EQ(lt.mean_n, 2.5);
  EXPECT_DOUBLE_EQ(ht.mean_n, 4.0);
  const auto want = make_report({fake_result(2, 4, 0, 0), fake_result(3, 4, 0, 0)}, "top50_n");
  EXPECT_EQ(report_csv({ht}), report_csv({want}));
  EXPECT_THROW(split_report({two[0]}, SplitKey::N), DimensionError);
}

TEST(SplitReport, IdenticalHalvesGiveIdenticalMetrics) {
  std::vector<DatasetResult> rs{fake_result(4, 9, 1, 0.2), fake_result(4, 9, 1, 0.2), fake_result(7, 9, 1, 0.2),
                                fake_result(7, 9, 1, 0.2)};
  rs[1].id = 5;
  rs[3].id = 8;
  rs[2].id = 6;
  rs[2].truth = rs[0].truth;
  rs[2].mean = rs[0].mean;
  rs[2].hits = rs[0].hits;
  rs[3].truth = rs[1].truth;
  rs[3].mean = rs[1].mean;
  rs[3].hits = rs[1].hits;
  const auto [lo, hi] = split_report(rs, SplitKey::N);
  auto strip = [](std::string s) {
    std::string out;
    std::istringstream in(s);
    for (std::string line; std::getline(in, line);) out += line.substr(line.find(',')) + "\n";
    return out;
  };
  EXPECT_EQ(strip(report_csv({lo})), strip(report_csv({hi})));
}

namespace {

std::string chain_rows(long chain, const std::vector<std::vector<double>>& draws, const std::vector<std::string>& names) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t j = 0; j < draws.size(); ++j)
    for (std::size_t c = 0; c < names.size(); ++c) os << chain << ',' << j << ',' << names[c] << ',' << draws[j][c] << '\n';
  return os.str();
}

std::vector<std::vector<double>> normal_draws(std::size_t k, std::size_t p, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n;
  std::vector<std::vector<double>> out(k, std::vector<double>(p));
  for (auto& row : out)
    for (std::size_t c = 0; c < p; ++c) row[c] = c == 1 || c == 2 ? std::exp(0.1 * n(rng)) : n(rng);
  return out;
}

}  // namespace

TEST(Ingest, SingleChainIsSelected) {
  const auto names = parameter_names(1, 1, 2);
  const auto path = temp_path("single.csv");
  write_file(path, "chain,draw,parameter,value\n" + chain_rows(7, normal_draws(40, names.size(), 9), names));
  const auto sel = ingest_external_samples(path);
  EXPECT_EQ(sel.chain, 7);
  EXPECT_EQ(sel.draws.k(), 40u);
  EXPECT_EQ(sel.draws.m, 2u);
  EXPECT_FALSE(sel.draws.global_weights.has_value());
}

TEST(Ingest, OutlierChainIsRejected) {
  const auto names = parameter_names(2, 1, 3);
  auto bad = normal_draws(50, names.size(), 10);
  bad[17][0] = 1e6;
  const auto path = temp_path("two.csv");
  write_file(path, "chain,draw,parameter,value\n" + chain_rows(0, bad, names) + chain_rows(1, normal_draws(50, names.size(), 11), names));
  const auto sel = ingest_external_samples(path);
  EXPECT_EQ(sel.chain, 1);
  EXPECT_GT(sel.outliers.at(0), sel.outliers.at(1));
}

TEST(Ingest, WriteReadRoundTripIsLossless) {
  HierDataset ds = toy(12);
  Rng rng(13);
  std::normal_distribution<double> n;
  PosteriorDraws p = point_draws(ds.truth->global, ds.truth->local, 30);
  for (Index j = 0; j < p.global.rows(); ++j) {
    for (Index c = 0; c < p.global.cols(); ++c) p.global(j, c) *= std::exp(0.1 * n(rng));
    for (Index c = 0; c < p.local.cols(); ++c) p.local(j, c) += n(rng) / 3.0;
  }
  const auto path = temp_path("roundtrip.csv");
  write_external_samples(path, p);
  const auto back = ingest_external_samples(path).draws;
  EXPECT_EQ(back.global, p.global);
  EXPECT_EQ(back.local, p.local);
  EXPECT_EQ(back.m, p.m);
}

TEST(Ingest, MalformedRowsAreReportedWithLineNumbers) {
  const auto path = temp_path("bad.csv");
  write_file(path,
             "chain,draw,parameter,value\n0,0,beta[0],1\n0,0,sigma_eps,oops\n0,0,sigma_alpha[0],1\n0,x,alpha[0][0],1\n"
             "0,0,gamma,2\n");
  try {
    ingest_external_samples(path);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(" 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find(" 5"), std::string::npos) << msg;
    EXPECT_NE(msg.find(" 6"), std::string::npos) << msg;
    EXPECT_EQ(msg.find(" 4"), std::string::npos) << msg;
  }
  write_file(path, "a,b\n0,0,sigma_eps,1\n");
  EXPECT_THROW(ingest_external_samples(path), IoError);
  EXPECT_THROW(ingest_external_samples(temp_path("missing.csv")), IoError);
}

TEST(CsvDataset, ReadsGroupsInOrderOfAppearance) {
  const auto path = temp_path("data.csv");
  write_file(path, "group_id,y,age,treat\nb,1.5,30,0\na,2.0,41,1\nb,0.5,25,1\nc,-1,50,0\n");
  const auto csv = read_csv_dataset(path, 2);
  EXPECT_EQ(csv.group_labels, (std::vector<std::string>{"b", "a", "c"}));
  EXPECT_EQ(csv.predictor_names, (std::vector<std::string>{"age", "treat"}));
  const HierDataset& ds = csv.data;
  EXPECT_EQ(ds.d, 3);
  EXPECT_EQ(ds.q, 2);
  EXPECT_EQ(ds.group_sizes, (std::vector<std::size_t>{2, 1, 1}));
  EXPECT_EQ(ds.y(0, 1), 0.5);
  EXPECT_EQ(ds.X(0, 1, 0), 1.0);
  EXPECT_EQ(ds.X(0, 1, 1), 25.0);
  EXPECT_EQ(ds.Z(1, 0, 1), 41.0);
  EXPECT_EQ(ds.Z(1, 0, 2), 0.0);
  write_file(path, "group_id,y,x\na,1,zz\n");
  EXPECT_THROW(read_csv_dataset(path, 1), IoError);
  write_file(path, "group_id,y,x\na,1,2\n");
  EXPECT_THROW(read_csv_dataset(path, 3), ConfigError);
}

TEST(EvaluateDraws, HitsFollowIntervals) {
  HierDataset ds = toy(14);
  PosteriorDraws p = point_draws(ds.truth->global, ds.truth->local, 20);
  const auto truth = truth_vector(*ds.truth);
  const auto r = evaluate_draws(ds, p, truth);
  for (const auto& h : r.hits) EXPECT_EQ(std::count(h.begin(), h.end(), true), static_cast<long>(truth.size()));
  auto off = truth;
  off[0] += 1.0;
  const auto r2 = evaluate_draws(ds, p, off);
  for (const auto& h : r2.hits) EXPECT_FALSE(h[0]);
  off.pop_back();
  EXPECT_THROW(evaluate_draws(ds, p, off), DimensionError);
}
