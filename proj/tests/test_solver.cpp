#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "spdelab/families.hpp"
#include "spdelab/solver.hpp"

using namespace spdelab;

namespace {

ProblemSpec constant_problem(double f0, double g0, double sigma0 = 0.0, std::size_t modes = 1) {
  FamilyParams p;
  p.modes = modes;
  p.horizon = 0.25;
  p.f0 = f0;
  p.g0 = g0;
  p.sigma0 = sigma0;
  return build_family(p);
}

double sup_abs(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s = std::max(s, std::abs(x));
  return s;
}

}  // namespace

TEST(Solver, ConstantForcingGivesElapsedTime) {
  const ProblemSpec spec = constant_problem(1.0, 0.0);
  const SpaceTimeGrid grid = make_certified_grid(spec, 32);
  const WienerPath path = sample_path(spec.noise_config(grid.n_steps()), 1, 0);
  const GridSolution sol = solve_realization(spec, path, grid);
  ASSERT_EQ(sol.levels(), grid.n_steps() + 1);
  for (std::size_t level = 0; level < sol.levels(); ++level)
    for (std::size_t node = 0; node < grid.nodes(); ++node)
      EXPECT_NEAR(sol.at(level, node), sol.time(level), 1e-13);
}

TEST(Solver, AdditiveNoiseGivesWienerPath) {
  const ProblemSpec spec = constant_problem(0.0, 1.0, 0.0, 2);
  const SpaceTimeGrid grid = make_certified_grid(spec, 16);
  const WienerPath path = sample_path(spec.noise_config(grid.n_steps()), 3, 4);
  SolveOptions opt;
  opt.save_every = 0;
  const GridSolution sol = solve_realization(spec, path, grid, opt);
  ASSERT_EQ(sol.levels(), 2u);
  for (std::size_t node = 0; node < grid.nodes(); ++node)
    EXPECT_NEAR(sol.at(1, node), path.cumulative(0, grid.n_steps()), 1e-13);
}

TEST(Solver, HeatEquationSpatialRate) {
  // du = u_xx dt + cos(x) dt has u = (1 - e^{-t}) cos x
  FamilyParams p;
  p.family = "trig";
  p.modes = 1;
  p.horizon = 0.25;
  p.f_amp = 1.0;
  const ProblemSpec spec = build_family(p);
  std::vector<double> errors;
  for (std::size_t N : {16u, 32u, 64u}) {
    const SpaceTimeGrid grid = make_certified_grid(spec, N);
    const WienerPath path = sample_path(spec.noise_config(grid.n_steps()), 1, 0);
    SolveOptions opt;
    opt.save_every = 0;
    const GridSolution sol = solve_realization(spec, path, grid, opt);
    double err = 0.0;
    for (std::size_t node = 0; node < grid.nodes(); ++node) {
      const double x = grid.coordinates(node)[0];
      err = std::max(err, std::abs(sol.at(1, node) - (1.0 - std::exp(-0.25)) * std::cos(x)));
    }
    errors.push_back(err);
  }
  EXPECT_NEAR(std::log2(errors[0] / errors[1]), 2.0, 0.15);
  EXPECT_NEAR(std::log2(errors[1] / errors[2]), 2.0, 0.15);
}

TEST(Solver, StabilityCertificate) {
  FamilyParams p;
  p.modes = 1;
  p.a0 = 2.0;
  p.horizon = 0.25;
  const ProblemSpec spec = build_family(p);
  const SpaceTimeGrid grid = make_certified_grid(spec, 32, 0.5);
  const double h = 2.0 * std::numbers::pi / 32.0;
  ASSERT_TRUE(grid.certificate());
  EXPECT_NEAR(grid.certificate()->dt_max, 0.5 * h * h / (2.0 * 2.0), 1e-15);
  EXPECT_LE(grid.dt(), grid.certificate()->dt_max);
  EXPECT_THROW(make_certified_grid(spec, 32, 0.5, 4), ArgumentError);
  const SpaceTimeGrid bare(1, 32, spec.domain_length, spec.horizon, grid.n_steps());
  const WienerPath path = sample_path(spec.noise_config(grid.n_steps()), 1, 0);
  EXPECT_THROW(solve_realization(spec, path, bare), ArgumentError);
}

TEST(Solver, BlowUpIsReported) {
  const ProblemSpec spec = constant_problem(1.0, 0.0);
  const SpaceTimeGrid grid = make_certified_grid(spec, 16);
  const WienerPath path = sample_path(spec.noise_config(grid.n_steps()), 1, 0);
  SolveOptions opt;
  opt.blowup_threshold = 0.1;
  EXPECT_THROW(solve_realization(spec, path, grid, opt), BlowUpError);
}

TEST(Solver, MismatchedPathRejected) {
  const ProblemSpec spec = constant_problem(1.0, 0.0);
  const SpaceTimeGrid grid = make_certified_grid(spec, 16);
  const WienerPath path = sample_path(spec.noise_config(grid.n_steps() + 1), 1, 0);
  EXPECT_THROW(solve_realization(spec, path, grid), ArgumentError);
}

TEST(Solver, DerivativeStencils) {
  // discrete symbols: D sin(kx) = sin(kh)/h cos(kx), D² sin(kx) = -(2 - 2cos(kh))/h² sin(kx)
  const SpaceTimeGrid grid(1, 64, 2.0 * std::numbers::pi, 1.0, 1);
  const double h = grid.h();
  const double k = 3.0;
  std::vector<double> v(grid.nodes());
  for (std::size_t node = 0; node < grid.nodes(); ++node) v[node] = std::sin(k * grid.coordinates(node)[0]);
  for (std::size_t node = 0; node < grid.nodes(); ++node) {
    const double x = grid.coordinates(node)[0];
    EXPECT_NEAR(derivative_at(v, 1, grid, {0}, node), v[node], 0.0);
    EXPECT_NEAR(derivative_at(v, 1, grid, {1}, node), std::sin(k * h) / h * std::cos(k * x), 1e-12);
    EXPECT_NEAR(derivative_at(v, 1, grid, {2}, node), -(2.0 - 2.0 * std::cos(k * h)) / (h * h) * std::sin(k * x), 1e-10);
  }
  EXPECT_THROW(discrete_derivative(GridSolution{}, {3}), ArgumentError);
}

TEST(Solver, MixedStencilInTwoDimensions) {
  const SpaceTimeGrid grid(2, 32, 2.0 * std::numbers::pi, 1.0, 1);
  const double h = grid.h();
  std::vector<double> v(grid.nodes());
  for (std::size_t node = 0; node < grid.nodes(); ++node) {
    const auto x = grid.coordinates(node);
    v[node] = std::sin(x[0]) * std::sin(2.0 * x[1]);
  }
  const double s1 = std::sin(h) / h, s2 = std::sin(2.0 * h) / h;
  for (std::size_t node = 0; node < grid.nodes(); node += 37) {
    const auto x = grid.coordinates(node);
    EXPECT_NEAR(derivative_at(v, 1, grid, {1, 1}, node), s1 * s2 * std::cos(x[0]) * std::cos(2.0 * x[1]), 1e-12);
  }
  EXPECT_EQ(multi_indices(2, 2).size(), 3u);
  EXPECT_EQ(multi_indices(3, 1).size(), 3u);
}

TEST(Solver, SeamMask) {
  const SpaceTimeGrid grid(1, 16, 1.0, 1.0, 1);
  const auto mask = stencil_wraps(grid, {1});
  std::size_t count = 0;
  for (auto m : mask) count += m;
  EXPECT_EQ(count, 2u);
  EXPECT_EQ(mask[0], 1);
  EXPECT_EQ(mask[15], 1);
}

TEST(Solver, CsvAndBinaryCarryTheSameValues) {
  const ProblemSpec spec = constant_problem(0.5, 0.3, 0.5);
  const SpaceTimeGrid grid = make_certified_grid(spec, 16);
  const WienerPath path = sample_path(spec.noise_config(grid.n_steps()), 2, 0);
  SolveOptions opt;
  opt.save_every = grid.n_steps() / 4;
  const GridSolution sol = solve_realization(spec, path, grid, opt);
  std::stringstream csv, bin;
  write_snapshot_csv(sol, csv);
  write_snapshot_bin(sol, bin);
  const std::vector<double> from_csv = read_snapshot_csv_values(csv, 1);
  const Snapshot from_bin = read_snapshot_bin(bin);
  ASSERT_EQ(from_bin.dims.size(), 2u);
  EXPECT_EQ(from_bin.dims[0], sol.levels());
  EXPECT_EQ(from_bin.dims[1], 16u);
  ASSERT_EQ(from_csv.size(), sol.values.size());
  for (std::size_t i = 0; i < sol.values.size(); ++i) {
    EXPECT_EQ(from_csv[i], sol.values[i]);
    EXPECT_EQ(from_bin.values[i], sol.values[i]);
  }
}

TEST(Solver, CylinderSolveWithOwnBoundaryReproducesGlobal) {
  FamilyParams p;
  p.family = "trig";
  p.modes = 1;
  p.horizon = 0.5;
  p.sigma0 = 0.5;
  p.f_amp = 1.0;
  p.g_amp = 0.5;
  const ProblemSpec spec = build_family(p);
  const SpaceTimeGrid grid = make_certified_grid(spec, 64);
  const WienerPath path = sample_path(spec.noise_config(grid.n_steps()), 5, 0);
  const GridSolution global = solve_realization(spec, path, grid);
  const Cylinder cyl{{std::numbers::pi}, 0.5, 0.5};
  const GridSolution local = solve_on_cylinder(spec, path, grid, cyl, global);
  const CylinderGeometry geo = resolve_cylinder(grid, cyl);
  const std::size_t level = *global.level_of_step(geo.top_step);
  const std::size_t local_level = *local.level_of_step(geo.top_step);
  for (std::size_t node = 0; node < grid.nodes(); ++node) EXPECT_EQ(local.at(local_level, node), global.at(level, node));
}

TEST(Solver, EnsembleIsIndependentOfWorkerCount) {
  const ProblemSpec spec = constant_problem(0.0, 1.0, 0.5);
  const SpaceTimeGrid grid = make_certified_grid(spec, 16);
  SolveOptions opt;
  opt.save_every = 0;
  const Ensemble one = solve_ensemble(spec, grid, 9, 6, opt, 1);
  const Ensemble three = solve_ensemble(spec, grid, 9, 6, opt, 3);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(one.members[i].values, three.members[i].values);
  EXPECT_GT(sup_abs(one.members[0].values), 0.0);
}
