#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cacc/cli.hpp"
#include "cacc/config.hpp"

namespace fs = std::filesystem;
using cacc::cli::run;

namespace {

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("cacc_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string out(const std::string& sub = "out") const { return (dir_ / sub).string(); }

  fs::path dir_;
};

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fixture(const std::string& name) {
  return (fs::path(CACC_TEST_DATA_DIR) / name).string();
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

// Same header, same row labels, numeric cells equal to 1e-6 relative.
void expect_matches_golden(const fs::path& actual, const fs::path& golden) {
  const auto a = lines(actual);
  const auto g = lines(golden);
  ASSERT_FALSE(g.empty()) << golden;
  ASSERT_EQ(a.size(), g.size()) << actual;
  EXPECT_EQ(a[0], g[0]);
  for (std::size_t r = 1; r < g.size(); ++r) {
    const auto ca = split(a[r]);
    const auto cg = split(g[r]);
    ASSERT_EQ(ca.size(), cg.size()) << "row " << r;
    for (std::size_t c = 0; c < cg.size(); ++c) {
      char* end = nullptr;
      const double vg = std::strtod(cg[c].c_str(), &end);
      if (end == cg[c].c_str() || *end != '\0') {
        EXPECT_EQ(ca[c], cg[c]) << "row " << r << " col " << c;
        continue;
      }
      const double va = std::stod(ca[c]);
      EXPECT_NEAR(va, vg, 1e-6 * std::max(1.0, std::abs(vg))) << "row " << r << " col " << c;
    }
  }
}

}  // namespace

TEST_F(CliTest, FitEnergyWritesCoefficients) {
  ASSERT_EQ(run({"fit-energy", "--output-dir", out()}), 0);
  const auto l = lines(dir_ / "out" / "energy_poly.csv");
  ASSERT_EQ(l.size(), 2u);
  EXPECT_EQ(l[0].substr(0, 8), "p00,p01,");
  EXPECT_EQ(split(l[0]).size(), 25u);
  EXPECT_EQ(split(l[0]).back(), "p44");
  EXPECT_EQ(split(l[1]).size(), 25u);
  EXPECT_TRUE(fs::exists(dir_ / "out" / "run_config.json"));
}

TEST_F(CliTest, FitEnergyDegenerateGridFails) {
  EXPECT_NE(run({"fit-energy", "--grid", "2x2", "--output-dir", out()}), 0);
  EXPECT_EQ(run({"fit-energy", "--grid", "banana", "--output-dir", out()}), 1);
}

TEST_F(CliTest, UnwritableOutputDirFails) {
  const auto blocker = dir_ / "file";
  std::ofstream(blocker) << "x";
  EXPECT_EQ(run({"fit-energy", "--output-dir", (blocker / "sub").string()}), 2);
}

TEST_F(CliTest, OutputDirFromEnvironment) {
  const auto target = dir_ / "from_env";
  ::setenv("CACC_OUTPUT_DIR", target.string().c_str(), 1);
  const int code = run({"fit-energy"});
  ::unsetenv("CACC_OUTPUT_DIR");
  EXPECT_EQ(code, 0);
  EXPECT_TRUE(fs::exists(target / "energy_poly.csv"));
}

TEST_F(CliTest, UsageErrorsExitOne) {
  EXPECT_EQ(run({}), 1);
  EXPECT_EQ(run({"frobnicate"}), 1);
  EXPECT_EQ(run({"train", "--steps", "many", "--output-dir", out()}), 1);
  EXPECT_EQ(run({"train", "--protocol", "gossip", "--output-dir", out()}), 1);
  EXPECT_EQ(run({"train", "--n-vehicles", "1", "--output-dir", out()}), 1);
  EXPECT_EQ(run({"eval", "--config", (dir_ / "missing.json").string()}), 1);
  std::ofstream(dir_ / "bad.json") << R"({"train": {"gama": 0.9}})";
  EXPECT_EQ(run({"train", "--config", (dir_ / "bad.json").string(), "--output-dir", out()}), 1);
}

TEST_F(CliTest, TrainIsDeterministic) {
  ASSERT_EQ(run({"train", "--steps", "1000", "--seed", "7", "--output-dir", out("a")}), 0);
  ASSERT_EQ(run({"train", "--steps", "1000", "--seed", "7", "--output-dir", out("b")}), 0);
  const auto a = slurp(dir_ / "a" / "train_log_seed7.csv");
  EXPECT_EQ(a, slurp(dir_ / "b" / "train_log_seed7.csv"));
  const auto l = lines(dir_ / "a" / "train_log_seed7.csv");
  ASSERT_EQ(l.size(), 3u);
  EXPECT_EQ(l[0], "episode,steps,mean_reward,collisions,comm_bits_cum,wall_ms");
  EXPECT_TRUE(fs::exists(dir_ / "a" / "checkpoints" / "seed7" / "agent_3.ckpt"));
}

TEST_F(CliTest, EvalFiftySeeds) {
  ASSERT_EQ(run({"eval", "--eval-seeds", "50", "--output-dir", out()}), 0);
  const auto l = lines(dir_ / "out" / "eval_report.csv");
  ASSERT_EQ(l.size(), 52u);
  EXPECT_EQ(l[0],
            "seed,steps,ivs_mean_m,ivs_std_m,velocity_mean_mps,velocity_std_mps,accel_mean_mps2,"
            "accel_std_mps2,power_mean_kw,power_std_kw,energy_kwh,collisions");
  EXPECT_EQ(l.back().substr(0, 10), "aggregate,");
}

TEST_F(CliTest, EvalFromCheckpoints) {
  ASSERT_EQ(run({"train", "--steps", "600", "--seed", "3", "--output-dir", out("t")}), 0);
  const auto ckpt = (dir_ / "t" / "checkpoints" / "seed3").string();
  ASSERT_EQ(run({"eval", "--eval-seeds", "2", "--checkpoint-dir", ckpt, "--output-dir", out("e")}),
            0);
  EXPECT_EQ(lines(dir_ / "e" / "eval_report.csv").size(), 4u);
  EXPECT_EQ(run({"eval", "--checkpoint-dir", (dir_ / "nothing").string(), "--output-dir", out()}),
            2);
}

TEST_F(CliTest, ReplayWindowOutsideTrace) {
  EXPECT_EQ(run({"replay", "--trace", fixture("constant_1s.csv"), "--window", "316:376",
                 "--output-dir", out()}),
            2);
  EXPECT_EQ(run({"replay", "--trace", (dir_ / "missing.csv").string(), "--output-dir", out()}), 2);
  EXPECT_EQ(run({"replay", "--output-dir", out()}), 1);
  EXPECT_EQ(run({"replay", "--trace", fixture("three_rows.csv"), "--window", "oops",
                 "--output-dir", out()}),
            1);
}

TEST_F(CliTest, ReplayMatchesGoldenFiles) {
  ASSERT_EQ(run({"replay", "--trace", fixture("synthetic_trace_10hz.csv"), "--window", "316:376",
                 "--seed", "1", "--output-dir", out()}),
            0);
  const auto golden = fs::path(CACC_TEST_DATA_DIR) / "golden";
  expect_matches_golden(dir_ / "out" / "leader_profile.csv", golden / "leader_profile.csv");
  expect_matches_golden(dir_ / "out" / "replay_summary.csv", golden / "replay_summary.csv");
  const auto rollout = lines(dir_ / "out" / "rollout.csv");
  EXPECT_EQ(rollout[0], "step,vehicle,spacing_m,velocity_mps,accel_mps2,power_kw,reward");
  // Untrained followers may collide before the window ends; rows must match the summary.
  const auto summary = lines(dir_ / "out" / "replay_summary.csv");
  ASSERT_EQ(summary.size(), 5u);
  const auto steps = std::stoul(split(summary[1])[1]);
  EXPECT_LE(steps, 599u);
  EXPECT_EQ(rollout.size(), 1u + steps * 3u);
}

TEST_F(CliTest, ConsensusBench) {
  ASSERT_EQ(run({"consensus-bench", "--rounds", "50", "--output-dir", out()}), 0);
  const auto l = lines(dir_ / "out" / "consensus_bench.csv");
  EXPECT_EQ(l[0], "round,protocol,spread,bits_cumulative");
  EXPECT_EQ(l.size(), 1u + 3u * 51u);
  const auto q = lines(dir_ / "out" / "qsgd_bench.csv");
  EXPECT_EQ(q[0], "step,w,residual,distance");
  EXPECT_LE(std::stod(split(q.back())[3]), 0.1);
}

TEST_F(CliTest, CompareProtocols) {
  ASSERT_EQ(run({"compare", "--protocols", "bdc,wac", "--steps", "1200", "--eval-seeds", "2",
                 "--output-dir", out()}),
            0);
  const auto l = lines(dir_ / "out" / "protocol_comparison.csv");
  ASSERT_EQ(l.size(), 3u);
  const auto bdc = split(l[1]);
  const auto wac = split(l[2]);
  EXPECT_EQ(bdc[0], "bdc");
  EXPECT_EQ(wac[0], "wac");
  EXPECT_EQ(bdc[1], wac[1]);
  EXPECT_EQ(16 * std::stoull(bdc[4]), std::stoull(wac[4]));
  EXPECT_TRUE(fs::exists(dir_ / "out" / "train_log_bdc.csv"));
}

TEST_F(CliTest, SweepSize) {
  ASSERT_EQ(run({"sweep-size", "--steps", "600", "--eval-seeds", "1", "--output-dir", out()}), 0);
  const auto l = lines(dir_ / "out" / "sweep_size.csv");
  ASSERT_EQ(l.size(), 5u);
  EXPECT_EQ(split(l[1])[0], "2");
  EXPECT_EQ(split(l[4])[0], "8");
}

TEST_F(CliTest, RunConfigRoundTrips) {
  ASSERT_EQ(run({"fit-energy", "--n-vehicles", "6", "--output-dir", out()}), 0);
  const auto saved = dir_ / "out" / "run_config.json";
  const auto cfg = cacc::config::load_config(saved);
  EXPECT_EQ(cfg.scenario.n_vehicles, 6);
  ASSERT_EQ(run({"fit-energy", "--config", saved.string(), "--output-dir", out("again")}), 0);
  auto again = cacc::config::load_config(dir_ / "again" / "run_config.json");
  EXPECT_EQ(again.scenario.n_vehicles, 6);
  again.output_dir = cfg.output_dir;
  EXPECT_EQ(cacc::config::to_json(again), cacc::config::to_json(cfg));
}
