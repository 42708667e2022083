#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "spdelab/families.hpp"
#include "spdelab/verify.hpp"

using namespace spdelab;

namespace {

ProblemSpec transport_problem(double sigma0) {
  FamilyParams p;
  p.modes = 1;
  p.horizon = 0.25;
  p.sigma0 = sigma0;
  return build_family(p);
}

}  // namespace

TEST(Verify, OracleAtTimeZeroIsTheProfile) {
  const ProblemSpec spec = transport_problem(1.0);
  const SpaceTimeGrid grid(1, 32, spec.domain_length, 0.25, 100);
  const WienerPath path = sample_path(spec.noise_config(100), 1, 0);
  TrigProfile phi{{{1.0, 0.3, 1.0}, {3.0, 0.0, -0.5}}};
  const std::vector<double> sigma{1.0};
  const std::vector<std::size_t> steps{0};
  const GridSolution o = oracle_characteristics(1.0, sigma, 0.5, phi, path, grid, steps);
  for (std::size_t node = 0; node < grid.nodes(); ++node)
    EXPECT_EQ(o.at(0, node), phi(grid.coordinates(node)[0]));
}

TEST(Verify, OracleWithoutNoiseIsHeatKernel) {
  const ProblemSpec spec = transport_problem(0.0);
  const SpaceTimeGrid grid(1, 32, spec.domain_length, 0.25, 50);
  const WienerPath path = sample_path(spec.noise_config(50), 1, 0);
  const std::vector<double> sigma{0.0};
  const std::vector<std::size_t> steps{50};
  const GridSolution o = oracle_characteristics(1.0, sigma, 0.5, TrigProfile::sine(2.0), path, grid, steps);
  for (std::size_t node = 0; node < grid.nodes(); ++node)
    EXPECT_NEAR(o.at(0, node), std::exp(-4.0 * 0.25) * std::sin(2.0 * grid.coordinates(node)[0]), 1e-15);
}

TEST(Verify, OracleShiftsAlongThePath) {
  // a = σ²/2 + 0.5: profile sin(x + σW) damped by e^{-t/2}
  const SpaceTimeGrid grid(1, 16, 2.0 * std::numbers::pi, 1.0, 10);
  const WienerPath path = sample_path(NoiseConfig{1, 10, 1.0, 0.0}, 4, 0);
  const std::vector<double> sigma{1.0};
  const std::vector<std::size_t> steps{10};
  const GridSolution o = oracle_characteristics(1.0, sigma, 0.5, TrigProfile::sine(), path, grid, steps);
  const double w = path.cumulative(0, 10);
  for (std::size_t node = 0; node < grid.nodes(); ++node)
    EXPECT_NEAR(o.at(0, node), std::exp(-0.5) * std::sin(grid.coordinates(node)[0] + w), 1e-14);
}

TEST(Verify, DegenerateOracleRejected) {
  const SpaceTimeGrid grid(1, 16, 2.0 * std::numbers::pi, 1.0, 10);
  const WienerPath path = sample_path(NoiseConfig{1, 10, 1.0, 0.0}, 4, 0);
  const std::vector<std::size_t> steps{10};
  const std::vector<double> loud{1.5};
  EXPECT_THROW(oracle_characteristics(1.0, loud, 0.1, TrigProfile::sine(), path, grid, steps), ArgumentError);
  const std::vector<double> tight{1.2};
  EXPECT_THROW(oracle_characteristics(1.0, tight, 0.6, TrigProfile::sine(), path, grid, steps), StructuralError);
  const std::vector<double> ok{0.5};
  EXPECT_THROW(oracle_characteristics(1.0, ok, 0.5, TrigProfile::sine(0.5), path, grid, steps), ArgumentError);
}

TEST(Verify, LinearityWithUnitScalarIsExact) {
  FamilyParams p;
  p.family = "trig";
  p.modes = 2;
  p.horizon = 0.1;
  p.a_amp = 0.2;
  p.b0 = 0.3;
  p.c0 = -0.5;
  p.sigma0 = 0.5;
  p.nu0 = 0.3;
  p.f0 = 0.5;
  p.f_amp = 1.0;
  p.g_amp = 0.5;
  const ProblemSpec spec = build_family(p);
  const SpaceTimeGrid grid = make_certified_grid(spec, 32);
  const std::vector<double> scalars{1.0, 2.0, 0.1};
  const LinearityResult r = linearity_test(spec, grid, scalars, 3);
  EXPECT_EQ(r.deviations[0], 0.0);
  EXPECT_EQ(r.deviations[1], 0.0);  // powers of two scale exactly
  EXPECT_LT(r.deviations[2], 1e-13);
}

TEST(Verify, CoarsenedPathSumsIncrements) {
  const WienerPath fine = sample_path(NoiseConfig{2, 64, 1.0, 0.0}, 1, 0);
  const WienerPath coarse = detail::coarsen(fine, 16);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t j = 0; j <= 16; ++j) EXPECT_NEAR(coarse.cumulative(k, j), fine.cumulative(k, 4 * j), 1e-14);
  EXPECT_THROW(detail::coarsen(fine, 12), ArgumentError);
}

TEST(Verify, ConstantOracleAtRoundingFloor) {
  FamilyParams p;
  p.modes = 2;
  p.horizon = 0.25;
  p.sigma0 = 0.5;
  p.f0 = 1.0;
  p.g0 = 0.5;
  ConvergenceConfig cfg;
  cfg.oracle = OracleKind::kSpatiallyConstant;
  cfg.points = {16, 32};
  cfg.samples = 4;
  const ConvergenceTable t = convergence_study(build_family(p), cfg);
  for (const ConvergenceRow& row : t.rows) EXPECT_LT(row.relative_error, 1e-12);
}

TEST(Verify, CharacteristicsConvergence) {
  ConvergenceConfig cfg;
  cfg.points = {32, 64};
  cfg.samples = 16;
  cfg.tolerance = 0.2;
  const ConvergenceTable t = convergence_study(transport_problem(1.0), cfg);
  ASSERT_EQ(t.ratios.size(), 1u);
  EXPECT_TRUE(t.monotone);
  EXPECT_GT(t.ratios[0], 1.5);
  EXPECT_EQ(t.rows[1].n_steps, 4 * t.rows[0].n_steps);
  EXPECT_THROW(convergence_study(transport_problem(1.0), ConvergenceConfig{.points = {32, 48}}), ArgumentError);
}

TEST(Verify, SchauderRatioIsScaleInvariant) {
  FamilyParams p;
  p.family = "trig";
  p.modes = 1;
  p.horizon = 0.25;
  p.sigma0 = 0.5;
  p.f_amp = 1.0;
  p.f_k = 2.0;
  p.g_amp = 0.5;
  std::vector<SchauderMember> family{{"x1", build_family(p)}};
  p.f_amp *= 3.0;
  p.g_amp *= 3.0;
  family.push_back({"x3", build_family(p)});
  SchauderConfig cfg;
  cfg.points = 32;
  cfg.samples = 4;
  cfg.solution_time_levels = 8;
  cfg.data_time_levels = 4;
  const SchauderTable t = schauder_ratio_experiment(family, cfg);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_NEAR(t.rows[1].ratio, t.rows[0].ratio, 1e-12 * t.rows[0].ratio);
  EXPECT_NEAR(t.rows[1].u_norm, 3.0 * t.rows[0].u_norm, 1e-12 * t.rows[1].u_norm);
  EXPECT_TRUE(t.bounded);
}

TEST(Verify, SchauderSkipsZeroData) {
  SchauderConfig cfg;
  cfg.points = 16;
  cfg.samples = 2;
  cfg.solution_time_levels = 4;
  cfg.data_time_levels = 2;
  const SchauderTable t = schauder_ratio_experiment({{"zero", transport_problem(0.5)}}, cfg);
  EXPECT_TRUE(t.rows[0].skipped);
  EXPECT_FALSE(t.bounded);
}

TEST(Verify, ExperimentRecords) {
  ExperimentResult r;
  r.name = "demo";
  r.add("x", 1.5, 0.1);
  EXPECT_THROW(r.add("y", std::nan("")), InconsistencyError);
  r.runtime_seconds = 12.0;
  const std::string a = to_json(r).dump();
  r.runtime_seconds = 13.0;
  EXPECT_EQ(to_json(r).dump(), a);
  EXPECT_EQ(a.find("runtime"), std::string::npos);
  // FNV-1a reference values
  EXPECT_EQ(digest(""), "cbf29ce484222325");
  EXPECT_EQ(digest("a"), "af63dc4c8601ec8c");

  const auto dir = std::filesystem::temp_directory_path() / "spdelab_verify_log";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  append_run_log(dir.string(), r);
  append_run_log(dir.string(), r);
  std::ifstream runs(dir / "runs.jsonl");
  std::string line;
  std::size_t count = 0;
  while (std::getline(runs, line)) {
    EXPECT_EQ(line, a);
    ++count;
  }
  EXPECT_EQ(count, 2u);
  EXPECT_TRUE(std::filesystem::exists(dir / "timings.jsonl"));
  std::filesystem::remove_all(dir);
}
