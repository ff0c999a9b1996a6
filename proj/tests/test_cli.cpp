#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mixflow/numerics/checkpoint.hpp"

namespace fs = std::filesystem;

namespace {

std::string cli() {
  const char* p = std::getenv("MIXFLOW_CLI");
  return p ? p : "";
}

// Shared scratch directory with a tiny trained model, built once.
class Cli : public ::testing::Test {
 protected:
  static fs::path dir;

  static int run(const std::string& args) {
    const std::string cmd = "'" + cli() + "' " + args + " > '" + (dir / "last.log").string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string path(const std::string& name) { return (dir / name).string(); }
  static std::string bytes(const std::string& name) { return mixflow::read_file_bytes(path(name)); }
  static std::string log() { return bytes("last.log"); }

  static void SetUpTestSuite() {
    dir = fs::temp_directory_path() / "mixflow_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    if (cli().empty()) return;
    std::ofstream(path("tiny.json"))
        << R"({"model":{"d":2,"q":1,"summary":{"width":8,"blocks":1,"heads":2,"dropout":0.0},"flow_blocks":2,)"
        << R"("flow_hidden":8},"sim":{"d":2,"q":1,"toy":true,"m_max":8,"n_max":12},"batch":4,"budget":40,)"
        << R"("eval_every":5,"validation_sets":8})";
    ASSERT_EQ(run("simulate --toy --count 6 --seed 5 --out " + path("sets.jsonl")), 0) << log();
    ASSERT_EQ(run("train --config " + path("tiny.json") + " --seed 2 --deterministic --out " + path("run")), 0) << log();
  }

  void SetUp() override {
    if (cli().empty()) GTEST_SKIP() << "MIXFLOW_CLI not set";
  }
};

fs::path Cli::dir;

}  // namespace

TEST_F(Cli, TrainWritesCheckpointCurveAndManifest) {
  EXPECT_TRUE(fs::exists(path("run/model.ckpt")));
  EXPECT_TRUE(fs::exists(path("run/state.ckpt")));
  EXPECT_TRUE(fs::exists(path("run/manifest.json")));
  const std::string curve = bytes("run/curve.csv");
  EXPECT_EQ(curve.rfind("step,global_loss,local_loss,val_loss,groups\n", 0), 0u);
  EXPECT_TRUE(fs::exists(path("sets.jsonl.manifest.json")));
}

TEST_F(Cli, SimulateIsDeterministic) {
  ASSERT_EQ(run("simulate --toy --count 6 --seed 5 --out " + path("again.jsonl")), 0) << log();
  EXPECT_EQ(bytes("sets.jsonl"), bytes("again.jsonl"));
  ASSERT_EQ(run("simulate --toy --count 6 --seed 6 --out " + path("other.jsonl")), 0) << log();
  EXPECT_NE(bytes("sets.jsonl"), bytes("other.jsonl"));
}

TEST_F(Cli, InferIsDeterministicAndLeavesInputsAlone) {
  const std::string before_sets = bytes("sets.jsonl"), before_ckpt = bytes("run/model.ckpt");
  const std::string base = "infer --checkpoint " + path("run") + " --data " + path("sets.jsonl") + " --k 50 --seed 9 ";
  ASSERT_EQ(run(base + "--refine is --out " + path("d1.jsonl")), 0) << log();
  ASSERT_EQ(run(base + "--refine is --out " + path("d2.jsonl")), 0) << log();
  EXPECT_EQ(bytes("d1.jsonl"), bytes("d2.jsonl"));
  EXPECT_TRUE(fs::exists(path("d1.jsonl.manifest.json")));
  EXPECT_EQ(bytes("sets.jsonl"), before_sets);
  EXPECT_EQ(bytes("run/model.ckpt"), before_ckpt);
  std::istringstream lines(bytes("d1.jsonl"));
  int n = 0;
  for (std::string l; std::getline(lines, l);) n += !l.empty();
  EXPECT_EQ(n, 6);
}

TEST_F(Cli, CalibrateThenConformalInference) {
  ASSERT_EQ(run("calibrate --checkpoint " + path("run/model.ckpt") + " --sets " + path("sets.jsonl") +
                " --k 40 --seed 3 --out " + path("table.json")),
            0)
      << log();
  ASSERT_EQ(run("infer --checkpoint " + path("run") + " --data " + path("sets.jsonl") + " --k 40 --refine both --table " +
                path("table.json") + " --out " + path("dc.jsonl")),
            0)
      << log();
  ASSERT_EQ(run("evaluate --checkpoint " + path("run") + " --sets " + path("sets.jsonl") +
                " --k 40 --refine conformal --table " + path("table.json") + " --out " + path("eval")),
            0)
      << log();
  EXPECT_TRUE(fs::exists(path("eval/report.csv")));
  ASSERT_EQ(run("report --draws " + path("d1.jsonl") + " --draws " + path("dc.jsonl") + " --labels is --labels both --truth " +
                path("sets.jsonl") + " --out " + path("rep")),
            0)
      << log();
  EXPECT_NE(bytes("rep/report.csv").find("both,"), std::string::npos);
}

TEST_F(Cli, InferOnCsvData) {
  std::ofstream(path("data.csv")) << "group_id,y,x\ng1,1.2,0.5\ng1,0.7,-0.3\ng2,2.5,1.1\ng2,1.9,0.4\ng3,-0.2,-1.0\n";
  ASSERT_EQ(run("infer --checkpoint " + path("run") + " --data " + path("data.csv") + " --k 20 --out " + path("csv.jsonl")), 0)
      << log();
  EXPECT_NE(bytes("csv.jsonl").find("\"intervals\""), std::string::npos);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("infer --checkpoint x --data " + path("missing.jsonl") + " --out " + path("x.jsonl")), 2);
  EXPECT_EQ(run("simulate --d 2 --q 3 --out " + path("bad.jsonl")), 2) << log();
  EXPECT_NE(log().find("q <= d"), std::string::npos) << log();
  std::ofstream(path("junk.ckpt")) << "not a checkpoint";
  EXPECT_EQ(run("infer --checkpoint " + path("junk.ckpt") + " --data " + path("sets.jsonl") + " --out " + path("x.jsonl")), 4)
      << log();
  EXPECT_EQ(run("infer --checkpoint " + path("run") + " --data " + path("sets.jsonl") + " --refine conformal --out " +
                path("x.jsonl")),
            2)
      << log();
  EXPECT_EQ(run("infer --checkpoint " + path("run") + " --data " + path("sets.jsonl") + " --refine maybe --out " +
                path("x.jsonl")),
            2)
      << log();
}

TEST_F(Cli, IngestSelectsChain) {
  std::ofstream f(path("ext.csv"));
  f << "chain,draw,parameter,value\n";
  for (int ch = 0; ch < 2; ++ch)
    for (int j = 0; j < 30; ++j) {
      const double wobble = 0.01 * ((j * 7) % 11);
      f << ch << ',' << j << ",beta[0]," << (ch == 0 && j == 4 ? 1e6 : 1.0 + wobble) << '\n';
      f << ch << ',' << j << ",sigma_alpha[0]," << 0.5 + wobble << '\n';
      f << ch << ',' << j << ",sigma_eps," << 1.0 + wobble << '\n';
      f << ch << ',' << j << ",alpha[0][0]," << wobble << '\n';
    }
  f.close();
  ASSERT_EQ(run("ingest --samples " + path("ext.csv") + " --out " + path("ext.jsonl")), 0) << log();
  EXPECT_NE(bytes("ext.jsonl.manifest.json").find("\"selected_chain\": 1"), std::string::npos)
      << bytes("ext.jsonl.manifest.json");
}
