#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "spdelab/cli.hpp"

using namespace spdelab;
namespace fs = std::filesystem;

namespace {

const char* kMinimal = R"([problem]
family = constant
horizon = 0.25
f0 = 1

[grid]
points = 32
)";

RunConfig parse(const std::string& text, bool env = false) {
  std::istringstream in(text);
  return parse_config(in, "test.ini", env);
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("spdelab_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    write("a.ini", kMinimal);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write(const std::string& name, const std::string& text) {
    std::ofstream(dir_ / name) << text;
    return (dir_ / name).string();
  }

  int run(std::vector<std::string> args) {
    args.insert(args.begin(), "spdelab");
    out_.str("");
    err_.str("");
    return cli::run(args, out_, err_);
  }

  std::string config() const { return (dir_ / "a.ini").string(); }
  std::string out_dir() const { return (dir_ / "out").string(); }

  fs::path dir_;
  std::ostringstream out_, err_;
};

}  // namespace

TEST(Config, MinimalFileUsesDefaults) {
  const RunConfig c = parse(kMinimal);
  EXPECT_EQ(c.problem.family, "constant");
  EXPECT_EQ(c.problem.horizon, 0.25);
  EXPECT_EQ(c.problem.f0, 1.0);
  EXPECT_EQ(c.grid.points, 32u);
  EXPECT_EQ(c.run.seed, 1u);
  EXPECT_EQ(c.run.format, "csv");
  EXPECT_EQ(c.problem.holder.alpha, 0.5);
}

TEST(Config, UnknownNamesRejected) {
  EXPECT_NE(error_of(std::string(kMinimal) + "bogus = 1\n").find("unknown key 'bogus' in [grid]"), std::string::npos);
  EXPECT_NE(error_of(std::string(kMinimal) + "[extra]\nx = 1\n").find("unknown section [extra]"), std::string::npos);
}

TEST(Config, MissingRequiredKeyNamed) {
  const std::string msg = error_of("[problem]\nfamily = constant\n[grid]\npoints = 32\n");
  EXPECT_NE(msg.find("horizon"), std::string::npos) << msg;
  EXPECT_NE(msg.find("[problem]"), std::string::npos) << msg;
}

TEST(Config, BadValuesRejected) {
  EXPECT_FALSE(error_of(std::string(kMinimal) + "c_stab = fast\n").empty());
  EXPECT_FALSE(error_of(std::string(kMinimal) + "[run]\nformat = xml\n").empty());
  EXPECT_FALSE(error_of(std::string(kMinimal) + "[holder]\nalpha = 1.5\n").empty());
  EXPECT_FALSE(error_of(std::string(kMinimal) + "[ensemble]\nsamples = -3\n").empty());
}

TEST(Config, EnvironmentOverride) {
  ::setenv("SPDELAB_PROBLEM__HORIZON", "0.5", 1);
  ::setenv("SPDELAB_RUN__SEED", "17", 1);
  const RunConfig with = parse(kMinimal, true);
  const RunConfig without = parse(kMinimal, false);
  ::unsetenv("SPDELAB_PROBLEM__HORIZON");
  ::unsetenv("SPDELAB_RUN__SEED");
  EXPECT_EQ(with.problem.horizon, 0.5);
  EXPECT_EQ(with.run.seed, 17u);
  EXPECT_EQ(without.problem.horizon, 0.25);
}

TEST(Config, RoundTrip) {
  RunConfig c = parse(kMinimal);
  c.problem.a0 = 1.0 / 3.0;
  c.verify.oracle_tolerance = 0.1 + 0.2;
  c.cascade.center_x = 0.7853981633974483;
  std::ostringstream first;
  write_config(c, first);
  const RunConfig back = parse(first.str());
  std::ostringstream second;
  write_config(back, second);
  EXPECT_EQ(first.str(), second.str());
  EXPECT_EQ(back.problem.a0, c.problem.a0);
  EXPECT_EQ(back.verify.oracle_tolerance, c.verify.oracle_tolerance);
  EXPECT_EQ(config_digest(back), config_digest(c));
}

TEST(Config, OverridesAndDigest) {
  RunConfig c = parse(kMinimal);
  const std::string d0 = config_digest(c);
  apply_override(c, "run.workers=3");
  apply_override(c, "run.out=elsewhere");
  EXPECT_EQ(config_digest(c), d0);
  apply_override(c, "run.seed=2");
  EXPECT_NE(config_digest(c), d0);
  EXPECT_THROW(apply_override(c, "grid.nope=1"), ConfigError);
  EXPECT_THROW(apply_override(c, "no_equals"), ConfigError);
}

TEST_F(CliTest, SolveWritesSnapshotAndPath) {
  ASSERT_EQ(run({"--config", config(), "--out", out_dir(), "solve"}), cli::kPass) << err_.str();
  EXPECT_TRUE(fs::exists(fs::path(out_dir()) / "solution.csv"));
  EXPECT_TRUE(fs::exists(fs::path(out_dir()) / "path.csv"));
  EXPECT_TRUE(fs::exists(fs::path(out_dir()) / "effective_config.ini"));
  // f = 1 and no noise: u(T) = T at every node
  std::ifstream csv(fs::path(out_dir()) / "solution.csv");
  const std::vector<double> values = read_snapshot_csv_values(csv, 1);
  ASSERT_GE(values.size(), 32u);
  for (std::size_t i = values.size() - 32; i < values.size(); ++i) EXPECT_NEAR(values[i], 0.25, 1e-13);
  // the echoed config reproduces the run
  const RunConfig echoed = load_config((fs::path(out_dir()) / "effective_config.ini").string(), false);
  EXPECT_EQ(echoed.problem.f0, 1.0);
}

TEST_F(CliTest, BinaryFormat) {
  ASSERT_EQ(run({"--config", config(), "--out", out_dir(), "--format", "bin", "solve"}), cli::kPass) << err_.str();
  std::ifstream in(fs::path(out_dir()) / "solution.bin", std::ios::binary);
  const Snapshot snap = read_snapshot_bin(in);
  EXPECT_EQ(snap.dims.back(), 32u);
  EXPECT_NEAR(snap.values.back(), 0.25, 1e-13);
}

TEST_F(CliTest, ValidatePasses) {
  EXPECT_EQ(run({"--config", config(), "--out", out_dir(), "validate"}), cli::kPass) << err_.str();
  EXPECT_NE(out_.str().find("margin"), std::string::npos);
}

TEST_F(CliTest, FailingCriterionExitsOne) {
  EXPECT_EQ(run({"--config", config(), "--out", out_dir(), "--set", "verify.dini_tolerance=0", "verify", "--suite", "norms"}),
            cli::kFail);
  EXPECT_NE(out_.str().find("FAIL"), std::string::npos);
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(run({"solve"}), cli::kUsage);
  EXPECT_EQ(run({"--config", (dir_ / "missing.ini").string(), "solve"}), cli::kUsage);
  EXPECT_EQ(run({"--config", config(), "frobnicate"}), cli::kUsage);
  EXPECT_EQ(run({"--config", config(), "--format", "xml", "solve"}), cli::kUsage);
  const std::string bad = write("bad.ini", std::string(kMinimal) + "typo = 1\n");
  EXPECT_EQ(run({"--config", bad, "solve"}), cli::kUsage);
  EXPECT_NE(err_.str().find("typo"), std::string::npos);
  EXPECT_EQ(run({"--config", config(), "--set", "grid.c_stab=2", "solve"}), cli::kUsage);
  EXPECT_EQ(run({"--config", config(), "--out", out_dir(), "verify", "--suite", "nonsense"}), cli::kUsage);
}

TEST_F(CliTest, ParabolicityFailureExitsTwo) {
  const std::string degenerate = write("deg.ini", std::string(kMinimal) + "[noise]\nmodes = 1\n");
  EXPECT_EQ(run({"--config", degenerate, "--out", out_dir(), "--set", "problem.sigma0=2", "validate"}), cli::kUsage);
}

TEST_F(CliTest, BlowUpExitsThree) {
  EXPECT_EQ(run({"--config", config(), "--out", out_dir(), "--set", "grid.blowup_threshold=0.1", "solve"}),
            cli::kNumerical);
  EXPECT_NE(err_.str().find("numerical failure"), std::string::npos);
}

TEST_F(CliTest, SeedChangesOnlyTheNoise) {
  std::string text = kMinimal;
  text.insert(text.find("[grid]"), "g0 = 1\n");
  const std::string noisy = write("noisy.ini", text);
  ASSERT_EQ(run({"--config", noisy, "--out", out_dir() + "1", "--seed", "3", "solve"}), cli::kPass) << err_.str();
  ASSERT_EQ(run({"--config", noisy, "--out", out_dir() + "2", "--seed", "3", "--workers", "2", "solve"}), cli::kPass);
  ASSERT_EQ(run({"--config", noisy, "--out", out_dir() + "3", "--seed", "4", "solve"}), cli::kPass);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(fs::path(out_dir() + "1") / "solution.csv"), slurp(fs::path(out_dir() + "2") / "solution.csv"));
  EXPECT_NE(slurp(fs::path(out_dir() + "1") / "solution.csv"), slurp(fs::path(out_dir() + "3") / "solution.csv"));
}
