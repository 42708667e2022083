#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "spdelab/families.hpp"
#include "spdelab/model.hpp"

using namespace spdelab;

namespace {

FamilyParams constant_params(double a0, double sigma0) {
  FamilyParams p;
  p.modes = 2;
  p.a0 = a0;
  p.sigma0 = sigma0;
  return p;
}

}  // namespace

TEST(Model, ParabolicityMargin) {
  // 2a - σ² - λ with a = 1, σ = 1, λ = 0.5
  const ProblemSpec spec = build_family(constant_params(1.0, 1.0));
  const double times[] = {0.0, 0.25};
  const auto sites = sample_sites(spec, 8, times);
  const MarginReport r = validate_parabolicity(spec, sites);
  EXPECT_TRUE(r.pass);
  EXPECT_NEAR(r.margin, 0.5, 1e-14);
  EXPECT_EQ(r.samples, 16u);
}

TEST(Model, ParabolicityViolation) {
  const ProblemSpec spec = build_family(constant_params(0.5, 1.0));
  const double times[] = {0.0};
  const auto sites = sample_sites(spec, 4, times);
  const MarginReport r = validate_parabolicity(spec, sites);
  EXPECT_FALSE(r.pass);
  EXPECT_NEAR(r.margin, -0.5, 1e-14);
}

TEST(Model, TwoDimensionalMarginIsSmallestEigenvalue) {
  // a = [[1, .5], [.5, 1]] has eigenvalues 1.5 and .5; σ = (1, 0) in mode 1
  ProblemSpec spec = ProblemSpec::make(2, 1, 1.0);
  spec.a = CoefficientField::constant(2, 2, {1.0, 0.5, 0.5, 1.0});
  spec.sigma = CoefficientField::constant(2, 1, {1.0, 0.0});
  spec.bounds.lambda = 0.1;
  // 2a - σσ^T = [[1, 1], [1, 2]], smallest eigenvalue (3 - √5)/2
  const double times[] = {0.0};
  const auto sites = sample_sites(spec, 4, times);
  const MarginReport r = validate_parabolicity(spec, sites);
  EXPECT_NEAR(r.margin, (3.0 - std::sqrt(5.0)) / 2.0 - 0.1, 1e-12);
}

TEST(Model, AsymmetricDiffusionRejected) {
  ProblemSpec spec = ProblemSpec::make(2, 1, 1.0);
  spec.a = CoefficientField::constant(2, 2, {1.0, 0.2, 0.0, 1.0});
  const double times[] = {0.0};
  const auto sites = sample_sites(spec, 4, times);
  EXPECT_THROW(validate_parabolicity(spec, sites), StructuralError);
  EXPECT_THROW(check_symmetry(spec, sites), StructuralError);
}

TEST(Model, ShapeMismatchRejected) {
  ProblemSpec spec = ProblemSpec::make(1, 2, 1.0);
  spec.g = CoefficientField::zero(1, 1);
  EXPECT_THROW(spec.validate(), ArgumentError);
}

TEST(Model, CoefficientBounds) {
  FamilyParams p = constant_params(1.0, 0.5);
  const double times[] = {0.0, 0.1};
  const BoundsReport ok = check_coefficient_bounds(build_family(p), 16, times);
  EXPECT_TRUE(ok.pass);
  EXPECT_NEAR(ok.max_norm, 1.0, 1e-12);
  p.a0 = 20.0;
  const BoundsReport bad = check_coefficient_bounds(build_family(p), 16, times);
  EXPECT_FALSE(bad.pass);
  EXPECT_EQ(bad.worst_field, "a");
}

TEST(Model, TrigFamilyValues) {
  FamilyParams p;
  p.family = "trig";
  p.modes = 1;
  p.a0 = 1.0;
  p.a_amp = 0.25;
  p.f0 = 0.5;
  p.f_amp = 2.0;
  p.f_k = 3.0;
  p.g0 = 0.1;
  p.g_amp = 0.3;
  p.g_k = 2.0;
  const ProblemSpec spec = build_family(p);
  const std::vector<double> x{0.7};
  const auto a = spec.a(x, 0.0, PathView());
  const auto f = spec.f(x, 0.0, PathView());
  const auto g = spec.g(x, 0.0, PathView());
  EXPECT_NEAR(a[0], 1.0 + 0.25 * std::sin(0.7), 1e-15);
  EXPECT_NEAR(f[0], 0.5 + 2.0 * std::cos(2.1), 1e-15);
  EXPECT_NEAR(g[0], 0.1 + 0.3 * std::sin(1.4), 1e-15);
  EXPECT_TRUE(spec.f.varies_in_space());
  EXPECT_FALSE(spec.f.reads_path());
}

TEST(Model, NonPeriodicWavenumberRejected) {
  FamilyParams p;
  p.family = "trig";
  p.domain_length = std::numbers::pi;
  p.f_k = 1.0;
  EXPECT_THROW(build_family(p), ArgumentError);
  p.family = "nope";
  EXPECT_THROW(build_family(p), ArgumentError);
}

TEST(Model, RandomFamilyReadsOnlyThePast) {
  FamilyParams p;
  p.family = "random-ou";
  p.modes = 1;
  p.horizon = 1.0;
  p.a_amp = 0.2;
  p.f_amp = 1.0;
  const ProblemSpec spec = build_family(p);
  EXPECT_TRUE(spec.a.reads_path());
  const WienerPath w = sample_path(spec.noise_config(100), 5, 0);
  const PathView v = restrict(w, 0.5);
  const std::vector<double> x{0.0};
  const auto f = spec.f(x, 0.5, v);
  EXPECT_NEAR(f[0], std::cos(w.ou(0, 50)), 1e-15);
  EXPECT_THROW(spec.f(x, 0.75, v), AdaptednessViolation);
}

TEST(Model, CylinderAndDistance) {
  const SpaceTimePoint X{{0.0}, 1.0};
  const SpaceTimePoint Y{{0.3}, 0.96};
  EXPECT_NEAR(parabolic_distance(X, Y), 0.5, 1e-14);
  const Cylinder q = make_cylinder(X, 0.5);
  EXPECT_NEAR(q.start_time(), 0.75, 1e-15);
  EXPECT_TRUE(q.contains(Y));
  EXPECT_FALSE(q.contains(SpaceTimePoint{{0.6}, 0.9}));
  EXPECT_FALSE(q.contains(SpaceTimePoint{{0.0}, 0.7}));
  EXPECT_THROW(make_cylinder(X, 0.0), ArgumentError);
}

TEST(Model, ScaledField) {
  const CoefficientField f = CoefficientField::constant(1, 1, {1.5});
  EXPECT_EQ(f.scaled(2.0)(std::vector<double>{0.0}, 0.0, PathView())[0], 3.0);
  EXPECT_TRUE(f.scaled(0.0).is_zero());
}
