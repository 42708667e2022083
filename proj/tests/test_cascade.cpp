#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "spdelab/cascade.hpp"
#include "spdelab/families.hpp"

using namespace spdelab;

namespace {

ProblemSpec smooth_problem() {
  FamilyParams p;
  p.family = "trig";
  p.modes = 1;
  p.horizon = 1.0;
  p.sigma0 = 0.5;
  p.f_amp = 1.0;
  p.g_amp = 0.5;
  return build_family(p);
}

CascadeConfig small_config() {
  CascadeConfig c;
  c.levels = 3;
  c.base = Cylinder{{std::numbers::pi / 2.0}, 1.0, 1.0};
  c.samples = 2;
  c.points = 128;
  c.max_points = 512;
  c.probe_time_levels = 8;
  c.data_time_levels = 4;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(Cascade, FrozenDataAtCenter) {
  const ProblemSpec spec = smooth_problem();
  const std::vector<double> xc{1.0};
  const ProblemSpec frozen = freeze(spec, xc, 1e-3);
  const std::vector<double> x{2.5};
  EXPECT_NEAR(frozen.f(x, 0.3, PathView())[0], std::cos(1.0), 1e-15);
  // g frozen to its first-order expansion with a centered difference slope
  const double slope = 0.5 * (std::sin(1.001) - std::sin(0.999)) / 2e-3;
  EXPECT_NEAR(frozen.g(x, 0.3, PathView())[0], 0.5 * std::sin(1.0) + slope * 1.5, 1e-12);
  EXPECT_FALSE(frozen.f.varies_in_space());
  EXPECT_TRUE(frozen.is_model_equation());
}

TEST(Cascade, StreamingLevelsMatchCylinderSolves) {
  const ProblemSpec spec = smooth_problem();
  const CascadeConfig cfg = small_config();
  const CascadePlan plan = plan_cascade(spec, cfg);
  ASSERT_EQ(plan.levels, 3u);
  const WienerPath path = sample_path(plan.spec.noise_config(plan.grid.n_steps()), cfg.seed, 0);
  const CascadeSample rec = run_cascade_sample(plan, path, true);
  const GridSolution base = solve_realization(plan.spec, path, plan.grid);
  const std::size_t top = *base.level_of_step(plan.top_step);
  for (std::size_t node = 0; node < plan.grid.nodes(); ++node) EXPECT_EQ(rec.final_base[node], base.at(top, node));
  const std::vector<double> center = plan.grid.coordinates(plan.center_node);
  for (std::size_t l = 0; l <= plan.levels; ++l) {
    const Cylinder cyl{center, plan.spec.horizon, cfg.radius(l)};
    const GridSolution local = solve_on_cylinder(plan.frozen, path, plan.grid, cyl, base);
    const std::size_t level = *local.level_of_step(plan.top_step);
    std::size_t checked = 0;
    for (std::size_t node = 0; node < plan.grid.nodes(); ++node) {
      if (!plan.geometry[l].mask[node]) continue;
      ASSERT_EQ(rec.final_levels[l][node], local.at(level, node)) << "level " << l << " node " << node;
      ++checked;
    }
    EXPECT_EQ(checked, plan.geometry[l].interior.size() + plan.geometry[l].boundary.size());
  }
}

TEST(Cascade, ReportStructureAndResidual) {
  const ProblemSpec spec = smooth_problem();
  const CascadeReport r = run_cascade(spec, small_config());
  ASSERT_EQ(r.levels.size(), 4u);
  EXPECT_LE(r.homogeneous_residual, 1e-10 * std::max(1.0, r.homogeneous_scale));
  EXPECT_GT(r.homogeneous_scale, 0.0);
  for (std::size_t l = 0; l < 3; ++l) {
    EXPECT_TRUE(r.levels[l].I1.has_value());
    EXPECT_TRUE(r.levels[l].I2.has_value());
  }
  EXPECT_FALSE(r.levels[3].I2.has_value());
  // J shrinks from level to level
  for (std::size_t l = 1; l < 4; ++l) EXPECT_LT(r.levels[l].J, r.levels[l - 1].J);
}

TEST(Cascade, SpatiallyConstantDataIsTrivial) {
  FamilyParams p;
  p.modes = 1;
  p.horizon = 1.0;
  p.sigma0 = 0.5;
  p.f0 = 1.0;
  p.g0 = 0.5;
  const CascadeReport r = run_cascade(build_family(p), small_config());
  for (const CascadeLevel& lv : r.levels) {
    EXPECT_EQ(lv.J, 0.0);
    EXPECT_EQ(lv.omega, 0.0);
    EXPECT_EQ(lv.center_gap_l2, 0.0);
  }
  const Claim2Result c2 = check_claim2_decay(r);
  EXPECT_TRUE(c2.trivial);
  EXPECT_TRUE(c2.pass);
  const Claim3Result c3 = check_convergence_uxx(r);
  EXPECT_TRUE(c3.trivial);
  EXPECT_TRUE(c3.pass);
}

TEST(Cascade, NonModelEquationRejected) {
  FamilyParams p;
  p.family = "trig";
  p.modes = 1;
  p.horizon = 1.0;
  p.a_amp = 0.2;
  EXPECT_THROW(plan_cascade(build_family(p), small_config()), StructuralError);
  CascadeConfig c = small_config();
  c.base.center_t = 0.5;
  EXPECT_THROW(plan_cascade(smooth_problem(), c), DomainError);
}

TEST(Cascade, MisdeclaredModulusIsCaught) {
  // rough forcing |cos x|^0.3 on [0, π) with ω declared as r²: J decays like r^{2.3},
  // not like the r^4 a quadratic modulus implies
  FamilyParams p;
  p.modes = 1;
  p.horizon = 1.0;
  p.domain_length = std::numbers::pi;
  ProblemSpec spec = build_family(p);
  spec.f = CoefficientField(
      1, 1,
      [](std::span<const double> x, double, const PathView&, std::span<double> out) {
        out[0] = std::pow(std::abs(std::sin(x[0] - std::numbers::pi / 2.0)), 0.3);
      },
      kSpace);
  CascadeConfig cfg;
  cfg.levels = 6;
  cfg.base = Cylinder{{std::numbers::pi / 2.0}, 1.0, 1.0};
  cfg.samples = 2;
  cfg.points = 256;
  cfg.max_points = 1024;
  const CascadeReport r = run_cascade(spec, cfg);
  const DiniModulus quadratic = DiniModulus::from_function(log_radii(1e-4, 1.0, 100), [](double s) { return s * s; });
  const Claim2Result declared = check_claim2_decay(r, 1, 5, 10.0, &quadratic);
  EXPECT_FALSE(declared.pass);
  EXPECT_FALSE(declared.slope_pass);
  EXPECT_NEAR(declared.alpha_eff, 2.0, 1e-3);
  EXPECT_LT(declared.j_slope, 3.0);
  // ratios grow level by level under the wrong modulus
  for (std::size_t k = 1; k + 1 < declared.ratio_m2.size(); ++k) EXPECT_GT(declared.ratio_m2[k], declared.ratio_m2[k - 1]);
  const Claim2Result measured = check_claim2_decay(r, 1, 5, 10.0);
  EXPECT_TRUE(measured.pass);
  EXPECT_NEAR(measured.alpha_eff, 0.3, 0.05);
}

TEST(Cascade, EnergyRatiosBounded) {
  FamilyParams p;
  p.family = "trig";
  p.modes = 1;
  p.horizon = 0.25;
  p.sigma0 = 0.5;
  p.f0 = 0.5;
  p.f_amp = 1.0;
  p.g0 = 0.3;
  p.g_amp = 0.5;
  EnergyConfig cfg;
  cfg.samples = 16;
  const EnergyReport r = energy_estimate_check(build_family(p), cfg);
  EXPECT_TRUE(r.pass);
  ASSERT_EQ(r.f.rows.size(), 3u);
  EXPECT_LE(r.f.spread, 10.0);
  EXPECT_LE(r.g.spread, 10.0);
}

TEST(Cascade, EnergyWithZeroDataIsVacuous) {
  FamilyParams p;
  p.modes = 1;
  p.horizon = 0.25;
  EnergyConfig cfg;
  cfg.samples = 4;
  const EnergyReport r = energy_estimate_check(build_family(p), cfg);
  EXPECT_TRUE(r.f.vacuous);
  EXPECT_TRUE(r.g.vacuous);
}

TEST(Cascade, LemmaPairsAndDomain) {
  FamilyParams p;
  p.family = "trig";
  p.modes = 1;
  p.horizon = 1.0;
  p.domain_length = std::numbers::pi;
  p.sigma0 = 0.5;
  p.f_amp = 1.0;
  p.f_k = 2.0;
  p.g_k = 2.0;
  const ProblemSpec spec = build_family(p);
  LemmaConfig cfg;
  cfg.base = Cylinder{{std::numbers::pi / 2.0}, 1.0, 1.0};
  cfg.samples = 4;
  cfg.points = 128;
  cfg.pairs = 12;
  const SpaceTimeGrid grid = lemma_grid(spec, cfg);
  auto pairs = random_lemma_pairs(grid, cfg);
  ASSERT_EQ(pairs.size(), 12u);
  const Cylinder q{cfg.base.center_x, cfg.base.center_t, cfg.pair_radius};
  for (const auto& [X, Y] : pairs) {
    EXPECT_LT(std::abs(X.x[0] - q.center_x[0]), q.radius);
    EXPECT_GT(Y.t, q.start_time());
    EXPECT_LE(Y.t, q.center_t + 1e-12);
  }
  // a coincident pair contributes a zero left-hand side and no ratio
  pairs.push_back({pairs.front().first, pairs.front().first});
  const LemmaReport r = dini_lemma_check(spec, cfg, pairs);
  EXPECT_EQ(r.pairs.back().lhs, 0.0);
  EXPECT_EQ(r.pairs.back().delta, 0.0);
  EXPECT_GT(r.M1, 0.0);
  auto outside = pairs;
  outside.push_back({SpaceTimePoint{{0.0}, 0.99}, SpaceTimePoint{{0.1}, 0.99}});
  EXPECT_THROW(dini_lemma_check(spec, cfg, outside), DomainError);
}
