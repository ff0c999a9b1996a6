#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "mixflow/numerics/checkpoint.hpp"
#include "mixflow/numerics/graph.hpp"
#include "mixflow/numerics/layers.hpp"
#include "mixflow/numerics/optimizer.hpp"
#include "mixflow/numerics/params.hpp"
#include "mixflow/numerics/special.hpp"
#include "support.hpp"

using namespace mixflow;
using mixflow::testing::grad_check;
using mixflow::testing::random_mat;

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor<double>({2, 3}, std::vector<double>(5)), DimensionError);
  Tensor<double> t({2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
  EXPECT_EQ(t(1, 2), 5.0);
  EXPECT_EQ(t.size(), 6u);
}

TEST(Linear, IdentityAndBiasOnly) {
  Graph<double> g(false);
  Mat<double> I = Mat<double>::Identity(2, 2);
  Var y = g.linear(g.constant(I), g.constant(I), g.constant(Mat<double>::Zero(1, 2)));
  EXPECT_TRUE(g.value(y).isApprox(I));
  Mat<double> b(1, 2);
  b << 1, 2;
  Var z = g.linear(g.constant(random_mat(3, 2, *std::make_unique<Rng>(1))), g.constant(Mat<double>::Zero(2, 2)),
                   g.constant(b));
  for (Index r = 0; r < 3; ++r) EXPECT_TRUE(g.value(z).row(r).isApprox(b));
}

TEST(Linear, ShapeMismatch) {
  Graph<double> g;
  EXPECT_THROW(g.linear(g.constant(Mat<double>::Zero(2, 3)), g.constant(Mat<double>::Zero(2, 2)),
                        g.constant(Mat<double>::Zero(1, 2))),
               DimensionError);
}

TEST(Linear, GradientMatchesFiniteDifferences) {
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(100 + trial);
    ParamStore<double> ps;
    ps.add("x", random_mat(4, 3, rng));
    ps.add("w", random_mat(3, 5, rng));
    ps.add("b", random_mat(1, 5, rng));
    Mat<double> probe = random_mat(4, 5, rng);
    auto r = grad_check(ps, [&](Graph<double>& g, const ParamStore<double>& p) {
      Var y = g.linear(p.bind(g, "x"), p.bind(g, "w"), p.bind(g, "b"));
      return g.sum(g.mul(y, g.constant(probe)));
    });
    EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
  }
}

// Every elementwise and structural op, each contracted with a random probe.
TEST(Ops, ElementwiseGradients) {
  using Fn = std::function<Var(Graph<double>&, Var)>;
  std::vector<std::pair<std::string, Fn>> ops = {
      {"relu", [](Graph<double>& g, Var x) { return g.relu(x); }},
      {"gelu", [](Graph<double>& g, Var x) { return g.gelu(x); }},
      {"tanh", [](Graph<double>& g, Var x) { return g.tanh(x); }},
      {"exp", [](Graph<double>& g, Var x) { return g.exp(x); }},
      {"soft_clamp", [](Graph<double>& g, Var x) { return g.soft_clamp(g.scale(x, 4.0), 3.0); }},
      {"scale", [](Graph<double>& g, Var x) { return g.scale(x, -2.5); }},
      {"mul_self", [](Graph<double>& g, Var x) { return g.mul(x, x); }},
      {"sub", [](Graph<double>& g, Var x) { return g.sub(g.exp(x), x); }},
      {"slice", [](Graph<double>& g, Var x) { return g.slice_cols(x, 1, 2); }},
      {"concat", [](Graph<double>& g, Var x) { return g.concat_cols(x, g.tanh(x)); }},
      {"gather", [](Graph<double>& g, Var x) { return g.gather_rows(x, {2, 0, 2, 1}); }},
      {"sum_cols", [](Graph<double>& g, Var x) { return g.sum_cols(x); }},
      {"mask", [](Graph<double>& g, Var x) { return g.mask_rows(x, RowMask{1, 0, 1}); }},
      {"matmul", [](Graph<double>& g, Var x) { return g.matmul(x, g.constant(Mat<double>::Ones(4, 2))); }},
      {"mean", [](Graph<double>& g, Var x) { return g.mean(g.mul(x, x)); }},
  };
  for (const auto& [name, op] : ops) {
    for (int trial = 0; trial < 10; ++trial) {
      Rng rng(200 + trial);
      ParamStore<double> ps;
      ps.add("x", random_mat(3, 4, rng));
      Graph<double> probe_graph(false);
      const Mat<double> out = probe_graph.value(op(probe_graph, probe_graph.constant(ps.at("x"))));
      const Mat<double> probe = random_mat(out.rows(), out.cols(), rng);
      auto r = grad_check(ps, [&](Graph<double>& g, const ParamStore<double>& p) {
        return g.sum(g.mul(op(g, p.bind(g, "x")), g.constant(probe)));
      });
      EXPECT_LT(r.max_rel_error, 1e-3) << name << " trial " << trial;
    }
  }
}

TEST(Ops, AddRowAndLayerNormGradients) {
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(300 + trial);
    ParamStore<double> ps;
    ps.add("x", random_mat(5, 6, rng));
    ps.add("row", random_mat(1, 6, rng));
    ps.add("gamma", random_mat(1, 6, rng));
    ps.add("beta", random_mat(1, 6, rng));
    Mat<double> probe = random_mat(5, 6, rng);
    auto r = grad_check(ps, [&](Graph<double>& g, const ParamStore<double>& p) {
      Var h = g.add_row(p.bind(g, "x"), p.bind(g, "row"));
      Var y = g.layer_norm(h, p.bind(g, "gamma"), p.bind(g, "beta"));
      return g.sum(g.mul(y, g.constant(probe)));
    });
    EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
  }
}

TEST(Ops, SegmentMeanGradientAndMask) {
  std::vector<Segment> segs{{0, 3}, {3, 2}};
  RowMask valid{1, 0, 1, 1, 1};
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(400 + trial);
    ParamStore<double> ps;
    ps.add("x", random_mat(5, 3, rng));
    Mat<double> probe = random_mat(2, 3, rng);
    auto r = grad_check(ps, [&](Graph<double>& g, const ParamStore<double>& p) {
      return g.sum(g.mul(g.segment_mean(p.bind(g, "x"), segs, valid), g.constant(probe)));
    });
    EXPECT_LT(r.max_rel_error, 1e-3);
  }
  Graph<double> g(false);
  Mat<double> x(5, 1);
  x << 1, 100, 3, 4, 6;
  Mat<double> m = g.value(g.segment_mean(g.constant(x), segs, valid));
  EXPECT_DOUBLE_EQ(m(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(m(1, 0), 5.0);
  RowMask none{0, 0, 0, 1, 1};
  EXPECT_THROW(g.segment_mean(g.constant(x), segs, none), DimensionError);
}

TEST(Ops, StudentTLogPdfGradient) {
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(500 + trial);
    ParamStore<double> ps;
    ps.add("z", random_mat(4, 3, rng, 2.0));
    ps.add("loc", random_mat(1, 3, rng, 0.5));
    ps.add("log_scale", random_mat(1, 3, rng, 0.3));
    ps.add("log_df", (random_mat(1, 3, rng, 0.5).array() + 1.5).matrix());
    auto r = grad_check(ps, [&](Graph<double>& g, const ParamStore<double>& p) {
      return g.sum(g.student_t_logpdf(p.bind(g, "z"), p.bind(g, "loc"), p.bind(g, "log_scale"), p.bind(g, "log_df")));
    });
    EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
  }
}

TEST(Special, StudentTMatchesGaussianForLargeDf) {
  for (double x : {-2.0, -0.3, 0.0, 1.7}) {
    EXPECT_NEAR(student_t_logpdf(x, 0.5, 1.3, 1e8), normal_logpdf(x, 0.5, 1.3), 1e-6);
  }
  // digamma(1) = -Euler-Mascheroni
  EXPECT_NEAR(digamma(1.0), -0.57721566490153286, 1e-10);
  EXPECT_NEAR(digamma(0.5), -1.9635100260214235, 1e-10);
}

TEST(Attention, SingleTokenIsValueProjection) {
  Rng rng(7);
  ParamStore<double> ps;
  MultiHeadAttention mha{"mha", 8, 2};
  mha.init(ps, rng);
  Graph<double> g(false);
  Mat<double> x = random_mat(1, 8, rng);
  Mat<double> out = g.value(mha.apply(g, ps, g.constant(x), RowMask{}));
  Mat<double> v = (x * ps.at("mha.v.w")).rowwise() + ps.at("mha.v.b").row(0);
  Mat<double> expect = (v * ps.at("mha.o.w")).rowwise() + ps.at("mha.o.b").row(0);
  EXPECT_TRUE(out.isApprox(expect, 1e-12));
}

TEST(Attention, AllMaskedGivesZeroAndBadHeadsThrow) {
  Rng rng(8);
  ParamStore<double> ps;
  MultiHeadAttention mha{"mha", 8, 2};
  mha.init(ps, rng);
  Graph<double> g(false);
  Mat<double> out = g.value(mha.apply(g, ps, g.constant(random_mat(3, 8, rng)), RowMask{0, 0, 0}));
  EXPECT_EQ(out.norm(), 0.0);
  MultiHeadAttention bad{"bad", 8, 3};
  ParamStore<double> ps2;
  EXPECT_THROW(bad.init(ps2, rng), ConfigError);
}

TEST(Attention, PermutingRowsPermutesOutput) {
  Rng rng(9);
  ParamStore<double> ps;
  MultiHeadAttention mha{"mha", 8, 4};
  mha.init(ps, rng);
  Mat<double> x = random_mat(6, 8, rng);
  std::vector<Index> perm{3, 1, 5, 0, 2, 4};
  Mat<double> xp(6, 8);
  for (Index i = 0; i < 6; ++i) xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
  Graph<double> g(false);
  Mat<double> a = g.value(mha.apply(g, ps, g.constant(x), RowMask{}));
  Mat<double> b = g.value(mha.apply(g, ps, g.constant(xp), RowMask{}));
  for (Index i = 0; i < 6; ++i) EXPECT_LT((b.row(i) - a.row(perm[static_cast<std::size_t>(i)])).norm(), 1e-12);
}

TEST(Attention, GradientMatchesFiniteDifferences) {
  std::vector<Segment> segs{{0, 4}, {4, 3}};
  RowMask valid{1, 1, 0, 1, 1, 1, 0};
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(600 + trial);
    ParamStore<double> ps;
    MultiHeadAttention mha{"mha", 8, 2};
    mha.init(ps, rng);
    ps.add("x", random_mat(7, 8, rng));
    Mat<double> probe = random_mat(7, 8, rng);
    auto r = grad_check(ps, [&](Graph<double>& g, const ParamStore<double>& p) {
      return g.sum(g.mul(mha.apply(g, p, p.bind(g, "x"), segs, valid), g.constant(probe)));
    });
    EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
  }
}

TEST(EncoderBlock, DeterministicMaskedAndDifferentiable) {
  Rng rng(11);
  EncoderBlock blk{"enc", 8, 8, 2, 0.01};
  ParamStore<double> ps;
  blk.init(ps, rng);
  RowMask valid{1, 1, 1, 0};
  Mat<double> x = random_mat(4, 8, rng);
  x.row(3).setZero();
  Graph<double> g(false);
  Mat<double> a = g.value(blk.apply(g, ps, g.constant(x), valid));
  Mat<double> b = g.value(blk.apply(g, ps, g.constant(x), valid));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.row(3).norm(), 0.0);
  EXPECT_THROW(blk.apply(g, ps, g.constant(random_mat(4, 6, rng)), valid), ConfigError);

  for (int trial = 0; trial < 10; ++trial) {
    Rng r2(700 + trial);
    ParamStore<double> p2;
    blk.init(p2, r2);
    // non-trivial norm parameters so their gradients are exercised
    p2.at("enc.ln1.gamma") = random_mat(1, 8, r2);
    p2.at("enc.ln2.beta") = random_mat(1, 8, r2);
    p2.add("x", random_mat(4, 8, r2));
    Mat<double> probe = random_mat(4, 8, r2);
    auto res = grad_check(p2, [&](Graph<double>& gg, const ParamStore<double>& pp) {
      return gg.sum(gg.mul(blk.apply(gg, pp, pp.bind(gg, "x"), valid), gg.constant(probe)));
    });
    EXPECT_LT(res.max_rel_error, 1e-3) << res.worst;
  }
}

TEST(EncoderBlock, NonFiniteActivationNamesLayer) {
  Rng rng(12);
  EncoderBlock blk{"block7", 4, 4, 1, 0.0};
  ParamStore<double> ps;
  blk.init(ps, rng);
  Mat<double> x = Mat<double>::Zero(2, 4);
  x(0, 0) = std::numeric_limits<double>::quiet_NaN();
  Graph<double> g(false);
  try {
    blk.apply(g, ps, g.constant(x), RowMask{});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("block7"), std::string::npos);
  }
}

TEST(Dropout, TrainingModeDiffersEvalModeDoesNot) {
  Graph<double> g(false);
  Rng rng(1);
  Mat<double> x = Mat<double>::Ones(50, 50);
  Mat<double> y = g.value(g.dropout(g.constant(x), 0.5, rng));
  EXPECT_GT((y - x).norm(), 0.0);
  EXPECT_EQ(g.value(g.dropout(g.constant(x), 0.0, rng)), x);
}

namespace {
ParamStore<double> one_param(double v) {
  ParamStore<double> ps;
  Mat<double> m(1, 1);
  m(0, 0) = v;
  ps.add("w", m);
  return ps;
}
}  // namespace

TEST(Optimizer, ZeroGradientNoDecayIsStationary) {
  for (auto kind : {OptimizerKind::ScheduleFreeAdamW, OptimizerKind::AdamW}) {
    auto ps = one_param(1.5);
    OptimizerConfig cfg;
    cfg.kind = kind;
    cfg.weight_decay = 0.0;
    Optimizer<double> opt(cfg, ps);
    GradMap<double> g{{"w", Mat<double>::Zero(1, 1)}};
    for (int i = 0; i < 10; ++i) ASSERT_TRUE(opt.step(ps, g));
    EXPECT_EQ(ps.at("w")(0, 0), 1.5);
    EXPECT_EQ(opt.eval_params(ps).at("w")(0, 0), 1.5);
  }
}

TEST(Optimizer, DecoupledDecayShrinks) {
  for (auto kind : {OptimizerKind::ScheduleFreeAdamW, OptimizerKind::AdamW}) {
    auto ps = one_param(2.0);
    OptimizerConfig cfg;
    cfg.kind = kind;
    cfg.weight_decay = 0.1;
    cfg.lr = 0.05;
    Optimizer<double> opt(cfg, ps);
    GradMap<double> g{{"w", Mat<double>::Zero(1, 1)}};
    double prev = 2.0;
    for (int i = 0; i < 20; ++i) {
      opt.step(ps, g);
      const double now = std::abs(ps.at("w")(0, 0));
      EXPECT_LT(now, prev);
      prev = now;
    }
  }
}

TEST(Optimizer, ConvergesOnQuadratic) {
  for (auto kind : {OptimizerKind::ScheduleFreeAdamW, OptimizerKind::AdamW}) {
    auto ps = one_param(5.0);
    OptimizerConfig cfg;
    cfg.kind = kind;
    cfg.lr = 0.05;
    cfg.weight_decay = 0.0;
    Optimizer<double> opt(cfg, ps);
    const double target = -1.25;
    for (int i = 0; i < 3000; ++i) {
      GradMap<double> g{{"w", Mat<double>::Constant(1, 1, 2.0 * (ps.at("w")(0, 0) - target))}};
      opt.step(ps, g);
    }
    EXPECT_NEAR(opt.eval_params(ps).at("w")(0, 0), target, 1e-2) << to_string(kind);
  }
}

TEST(Optimizer, RejectsNonFiniteGradient) {
  auto ps = one_param(1.0);
  Optimizer<double> opt(OptimizerConfig{}, ps);
  GradMap<double> g{{"w", Mat<double>::Constant(1, 1, std::numeric_limits<double>::infinity())}};
  EXPECT_FALSE(opt.step(ps, g));
  EXPECT_EQ(opt.step_count(), 0);
  EXPECT_EQ(ps.at("w")(0, 0), 1.0);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Checkpoint ck;
  ck.manifest = {{"d", 2}, {"q", 1}, {"width", 16}};
  Rng rng(3);
  Mat<float> a = random_mat(3, 4, rng).cast<float>();
  a(0, 0) = -0.0f;
  a(1, 1) = std::numeric_limits<float>::denorm_min();
  ck.arrays.emplace_back("a", a);
  ck.arrays.emplace_back("b", Mat<float>::Constant(1, 5, 2.5f));
  const std::string bytes = serialize_checkpoint(ck);
  Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back.manifest["width"], 16);
  ASSERT_EQ(back.arrays.size(), 2u);
  EXPECT_EQ(std::memcmp(back.at("a").data(), a.data(), sizeof(float) * 12), 0);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 1)), IoError);
  EXPECT_THROW(deserialize_checkpoint(bytes + "x"), IoError);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad), IoError);

  const auto path = std::filesystem::temp_directory_path() / "mixflow_ck_test.bin";
  save_checkpoint(path.string(), ck);
  EXPECT_EQ(serialize_checkpoint(load_checkpoint(path.string())), bytes);
  std::filesystem::remove(path);
}
