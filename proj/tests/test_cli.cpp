#include <cstdlib>
#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "qrl/io.hpp"

using namespace qrl;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(QRL_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("qrl_test_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<fs::path> files_with_prefix(const fs::path& dir, const std::string& prefix) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().filename().string().rfind(prefix, 0) == 0) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST(Cli, GenDataIsByteReproducible) {
  const auto a = fresh_dir("gen_a"), b = fresh_dir("gen_b");
  ASSERT_EQ(run("gen-data --run-dir " + a.string() + " --bins 16 --episodes 30 --seed 2"), 0);
  ASSERT_EQ(run("gen-data --run-dir " + b.string() + " --bins 16 --episodes 30 --seed 2"), 0);
  EXPECT_EQ(read_file(a / "dataset.qrld"), read_file(b / "dataset.qrld"));
  const auto summary = json::parse(read_file(a / "dataset_summary.json"));
  EXPECT_GT(summary["coverage_fraction"].get<double>(), 0.0);
  EXPECT_LE(summary["coverage_fraction"].get<double>(), 1.0);
  EXPECT_EQ(summary["episodes"], 30);
  const auto echo = json::parse(read_file(a / "gen-data.config.json"));
  EXPECT_EQ(echo["bins"], 16);
}

TEST(Cli, UnknownKeysAndBadValuesExitTwo) {
  const auto d = fresh_dir("bad");
  EXPECT_EQ(run("gen-data --run-dir " + d.string() + " --colour blue"), 2);
  EXPECT_EQ(run("train --run-dir " + d.string() + " --dataset missing.qrld"), 2);
  EXPECT_EQ(run("gen-data --run-dir " + d.string() + " --env lunar"), 2);
}

TEST(Cli, OracleDatasetDistancesDominateFullDistances) {
  const auto d = fresh_dir("oracle");
  ASSERT_EQ(run("gen-data --run-dir " + d.string() + " --bins 16 --episodes 40"), 0);
  ASSERT_EQ(run("oracle --run-dir " + d.string() + " --dataset dataset.qrld --goals top"), 0);
  const auto full = files_with_prefix(d, "oracle_top");
  const auto restricted = files_with_prefix(d, "oracle_dataset_top");
  ASSERT_EQ(full.size(), 1u);
  ASSERT_EQ(restricted.size(), 1u);
  const auto f = parse_csv_grid(read_file(full[0])), r = parse_csv_grid(read_file(restricted[0]));
  ASSERT_EQ(f.size(), 16u);
  for (std::size_t i = 0; i < f.size(); ++i) {
    ASSERT_EQ(f[i].size(), 16u);
    for (std::size_t j = 0; j < f[i].size(); ++j) EXPECT_GE(r[i][j] + 1e-9, f[i][j]);
  }
}

TEST(Cli, OraclePolicyScoresFullMarks) {
  const auto d = fresh_dir("eval_oracle");
  ASSERT_EQ(run("eval --run-dir " + d.string() + " --oracle-policy --bins 16 --goals top"), 0);
  const auto report = json::parse(read_file(d / "report.json"));
  EXPECT_DOUBLE_EQ(report["group_scores"]["top"].get<double>(), 100.0);
}

TEST(Cli, TrainEvalHeatmapPipeline) {
  const auto d = fresh_dir("pipeline");
  const std::string rd = " --run-dir " + d.string();
  ASSERT_EQ(run("gen-data" + rd + " --bins 16 --episodes 30"), 0);
  ASSERT_EQ(run("train" + rd + " --total-steps 20 --batch-size 32 --log-interval 10"), 0);
  ASSERT_TRUE(fs::exists(d / "checkpoint.qrlc"));
  const auto echo = json::parse(read_file(d / "train.config.json"));
  EXPECT_EQ(echo["total_steps"], 20);
  EXPECT_EQ(echo["algo"], "qrl");
  ASSERT_EQ(run("eval" + rd + " --goals top --budget 50"), 0);
  const auto report = json::parse(read_file(d / "report.json"));
  EXPECT_TRUE(report.contains("group_scores"));
  ASSERT_EQ(run("heatmap" + rd + " --goal top"), 0);
  const auto maps = files_with_prefix(d, "heatmap_");
  ASSERT_EQ(maps.size(), 1u);
  const auto grid = parse_csv_grid(read_file(maps[0]));
  ASSERT_EQ(grid.size(), 16u);
  EXPECT_EQ(grid[0].size(), 16u);

  ASSERT_EQ(run("train" + rd + " --algo qlearn --total-steps 5 --batch-size 16 --checkpoint q.qrlc"), 0);
  ASSERT_EQ(run("eval" + rd + " --checkpoint q.qrlc --goals top --budget 20 --report q.json"), 0);
}
