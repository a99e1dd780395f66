#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path work = fs::temp_directory_path() / "mrunet_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(MRUNET_CLI) + " " + args + " > " + (work / "stdout.txt").string() + " 2> " +
                          (work / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    fs::remove_all(work);
    fs::create_directories(work);
  }
  void TearDown() override { fs::remove_all(work); }
};

}  // namespace

TEST_F(Cli, SummaryDefaultModel) {
  ASSERT_EQ(run("summary --out " + (work / "s").string()), 0);
  const auto j = nlohmann::json::parse(slurp(work / "s" / "summary.json"));
  EXPECT_EQ(j["architecture"], "multiresunet");
  EXPECT_EQ(j["input_shape"], nlohmann::json::array({256, 256, 3}));
  EXPECT_EQ(j["runspec"]["command"], "summary");
  const auto printed = nlohmann::json::parse(slurp(work / "stdout.txt"));
  EXPECT_EQ(printed, j);
}

TEST_F(Cli, SummaryRankThree) {
  ASSERT_EQ(run("summary --rank 3 --input 80x80x48x4 --out " + work.string()), 0);
  const auto j = nlohmann::json::parse(slurp(work / "summary.json"));
  EXPECT_EQ(j["rank"], 3);
  EXPECT_GT(j["total_params"].get<long long>(), 0);
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run("summary --arch resnet --out " + work.string()), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("summary --rank 4"), 2);
  EXPECT_EQ(run("summary --alpha 0"), 2);
  EXPECT_EQ(run("summary --no-such-flag 1"), 2);
  EXPECT_EQ(run("summary --input 100x100x3"), 2);
  EXPECT_EQ(run("gradcheck --ops ''"), 2);
}

TEST_F(Cli, HelpIsSuccess) { EXPECT_EQ(run("--help"), 0); }

TEST_F(Cli, MissingDatasetIsIoError) {
  EXPECT_EQ(run("train --data " + (work / "nope").string() + " --out " + (work / "o").string()), 3);
  EXPECT_EQ(run("summary --config " + (work / "missing.ini").string()), 3);
}

TEST_F(Cli, EvalWithoutCheckpointIsIoError) {
  EXPECT_EQ(run("eval --synth 10 --input 16x16x3 --ubase 4 --out " + (work / "empty").string()), 3);
}

TEST_F(Cli, DivergenceIsNumericError) {
  EXPECT_EQ(run("train --synth 10 --input 16x16x3 --ubase 4 --epochs 3 --batch 2 --lr 1e30 --out " +
                (work / "nan").string()),
            4);
  EXPECT_NE(slurp(work / "stderr.txt").find("epoch"), std::string::npos);
}

TEST_F(Cli, GradcheckSubset) {
  EXPECT_EQ(run("gradcheck --ops add,conv2d,maxpool2d"), 0);
  EXPECT_NE(slurp(work / "stdout.txt").find("maxpool2d"), std::string::npos);
}

TEST_F(Cli, ConfigFileWithFlagOverride) {
  {
    std::ofstream cfg(work / "run.cfg");
    cfg << "arch=unet\nubase=16\ninput=64x64x1\n";
  }
  const std::string base = "summary --config " + (work / "run.cfg").string();
  ASSERT_EQ(run(base + " --out " + (work / "a").string()), 0);
  auto j = nlohmann::json::parse(slurp(work / "a" / "summary.json"));
  EXPECT_EQ(j["architecture"], "unet");
  EXPECT_EQ(j["runspec"]["ubase"], 16);
  EXPECT_EQ(j["input_shape"], nlohmann::json::array({64, 64, 1}));

  ASSERT_EQ(run(base + " --ubase 8 --out " + (work / "b").string()), 0);
  j = nlohmann::json::parse(slurp(work / "b" / "summary.json"));
  EXPECT_EQ(j["architecture"], "unet");
  EXPECT_EQ(j["runspec"]["ubase"], 8);
}

TEST_F(Cli, TrainThenEvalAndDeterminism) {
  const std::string common = "--synth 16 --input 32x32x3 --ubase 4 --batch 4 --seed 9 --k 4";
  ASSERT_EQ(run("train " + common + " --epochs 2 --out " + (work / "r1").string()), 0);
  ASSERT_EQ(run("train " + common + " --epochs 2 --out " + (work / "r2").string()), 0);
  EXPECT_EQ(slurp(work / "r1" / "history.csv"), slurp(work / "r2" / "history.csv"));
  ASSERT_EQ(run("eval " + common + " --out " + (work / "r1").string()), 0);
  const auto rep = nlohmann::json::parse(slurp(work / "r1" / "report.json"));
  const auto ev = nlohmann::json::parse(slurp(work / "r1" / "eval.json"));
  EXPECT_NEAR(ev["val_jaccard"].get<double>(), rep["best_val_jaccard"].get<double>(), 1e-6);
}

TEST_F(Cli, SynthExportLoadsBack) {
  ASSERT_EQ(run("synth --synth 6 --input 16x16x3 --challenge outliers --out " + (work / "d").string()), 0);
  EXPECT_EQ(std::distance(fs::directory_iterator(work / "d" / "images"), fs::directory_iterator{}), 6);
  ASSERT_EQ(run("train --data " + (work / "d").string() + " --input 16x16x3 --ubase 4 --epochs 1 --k 3 --out " +
                (work / "t").string()),
            0);
}
