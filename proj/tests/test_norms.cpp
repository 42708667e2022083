#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "spdelab/norms.hpp"

using namespace spdelab;

namespace {

/// Ensemble of `members` copies of u(x, t) scaled by member-dependent factors.
template <class Fn>
Ensemble make_ensemble(std::size_t points, std::size_t levels, std::vector<double> factors, Fn&& u) {
  const SpaceTimeGrid grid(1, points, 2.0 * std::numbers::pi, 1.0, std::max<std::size_t>(levels - 1, 1));
  Ensemble ens;
  for (double c : factors) {
    GridSolution sol;
    sol.grid = grid;
    for (std::size_t s = 0; s < levels; ++s) sol.steps.push_back(s);
    sol.values.resize(levels * points);
    for (std::size_t s = 0; s < levels; ++s)
      for (std::size_t node = 0; node < points; ++node)
        sol.at(s, node) = c * u(grid.coordinates(node)[0], grid.time(s));
    ens.members.push_back(std::move(sol));
  }
  return ens;
}

double torus(double x, double y, double L) {
  const double d = std::abs(x - y);
  return std::min(d, L - d);
}

}  // namespace

TEST(Norms, MomentAndJackknife) {
  const std::vector<double> v{1.0, -2.0, 3.0, 4.0};
  const MomentEstimate m = lp_moment(v, 2.0);
  EXPECT_NEAR(m.value, std::sqrt(30.0 / 4.0), 1e-15);
  // leave-one-out values and their spread, written out
  std::vector<double> loo;
  for (std::size_t i = 0; i < v.size(); ++i) loo.push_back(std::sqrt((30.0 - v[i] * v[i]) / 3.0));
  double mean = 0.0;
  for (double x : loo) mean += x / 4.0;
  double ss = 0.0;
  for (double x : loo) ss += (x - mean) * (x - mean);
  EXPECT_NEAR(m.std_error, std::sqrt(3.0 / 4.0 * ss), 1e-14);
  EXPECT_EQ(lp_moment(std::vector<double>{5.0}, 3.0).std_error, 0.0);
  EXPECT_THROW(lp_moment(std::vector<double>{}, 2.0), ArgumentError);
}

TEST(Norms, SpatialSeminormAgainstBruteForce) {
  const std::size_t N = 24;
  const double alpha = 0.4;
  auto u = [](double x, double) { return std::sin(x) + 0.3 * std::cos(3.0 * x); };
  // members c_i u: ‖u(x) - u(y)‖_{L^2} = sqrt(mean c_i²) |u(x) - u(y)|
  const std::vector<double> c{1.0, -2.0, 0.5};
  const double rms = std::sqrt((1.0 + 4.0 + 0.25) / 3.0);
  const Ensemble ens = make_ensemble(N, 1, c, u);
  const HolderReport r = holder_norm_x(ens, 0, alpha);
  const double L = 2.0 * std::numbers::pi, h = L / N;
  double sup = 0.0, semi = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    sup = std::max(sup, rms * std::abs(u(i * h, 0.0)));
    for (std::size_t j = i + 1; j < N; ++j)
      semi = std::max(semi, rms * std::abs(u(i * h, 0.0) - u(j * h, 0.0)) / std::pow(torus(i * h, j * h, L), alpha));
  }
  EXPECT_NEAR(r.sup_part, sup, 1e-13);
  EXPECT_NEAR(r.seminorm_x, semi, 1e-13);
  EXPECT_FALSE(r.subsampled);
  EXPECT_NEAR(evaluate_witness(ens, r.x_witness, alpha, 2.0, false), r.seminorm_x, 1e-13);
}

TEST(Norms, ParabolicSeminormAgainstBruteForce) {
  const std::size_t N = 16, levels = 5;
  const double alpha = 0.5;
  auto u = [](double x, double t) { return std::exp(-t) * std::sin(x) + t; };
  const Ensemble ens = make_ensemble(N, levels, {1.0, 1.0}, u);
  const HolderReport r = parabolic_holder_norm(ens, 0, alpha);
  const double L = 2.0 * std::numbers::pi, h = L / N;
  double semi = 0.0;
  for (std::size_t a = 0; a < N * levels; ++a)
    for (std::size_t b = a + 1; b < N * levels; ++b) {
      const double xa = (a % N) * h, ta = (a / N) * 0.25;
      const double xb = (b % N) * h, tb = (b / N) * 0.25;
      const double d = torus(xa, xb, L) + std::sqrt(std::abs(ta - tb));
      semi = std::max(semi, std::abs(u(xa, ta) - u(xb, tb)) / std::pow(d, alpha));
    }
  EXPECT_NEAR(r.seminorm_parabolic, semi, 1e-13);
  EXPECT_GE(r.seminorm_parabolic, r.seminorm_x);
}

TEST(Norms, SecondOrderUsesCenteredDifferences) {
  const std::size_t N = 32;
  const Ensemble ens = make_ensemble(N, 1, {1.0, 1.0}, [](double x, double) { return std::sin(x); });
  const HolderReport r = holder_norm_x(ens, 2, 0.5);
  const double h = 2.0 * std::numbers::pi / N;
  // sup over |β| <= 2 is attained by |u| = 1; D²u = -(2 - 2cos h)/h² sin x
  EXPECT_NEAR(r.sup_part, 1.0, 1e-14);
  const double d2 = (2.0 - 2.0 * std::cos(h)) / (h * h);
  double semi = 0.0;
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = i + 1; j < N; ++j)
      semi = std::max(semi, d2 * std::abs(std::sin(i * h) - std::sin(j * h)) /
                                std::pow(torus(i * h, j * h, 2.0 * std::numbers::pi), 0.5));
  EXPECT_NEAR(r.seminorm_x, semi, 1e-11);
  EXPECT_THROW(holder_norm_x(ens, 3, 0.5), ArgumentError);
}

TEST(Norms, Homogeneity) {
  const Ensemble ens = make_ensemble(16, 3, {1.0, -0.7, 1.3}, [](double x, double t) { return std::cos(x) * (1 + t); });
  Ensemble twice = ens;
  for (auto& m : twice.members)
    for (double& v : m.values) v *= 2.0;
  const HolderReport a = parabolic_holder_norm(ens, 1, 0.3);
  const HolderReport b = parabolic_holder_norm(twice, 1, 0.3);
  EXPECT_EQ(b.sup_part, 2.0 * a.sup_part);
  EXPECT_EQ(b.seminorm_x, 2.0 * a.seminorm_x);
  EXPECT_EQ(b.seminorm_parabolic, 2.0 * a.seminorm_parabolic);
}

TEST(Norms, ConstantFieldHasZeroSeminorm) {
  const Ensemble ens = make_ensemble(16, 3, {1.0, 2.0}, [](double, double) { return 1.5; });
  const HolderReport r = parabolic_holder_norm(ens, 2, 0.5);
  EXPECT_NEAR(r.sup_part, 1.5 * std::sqrt(2.5), 1e-14);
  EXPECT_EQ(r.seminorm_x, 0.0);
  EXPECT_EQ(r.seminorm_parabolic, 0.0);
}

TEST(Norms, BudgetSubsamplesDeterministically) {
  const Ensemble ens = make_ensemble(64, 4, {1.0, 0.5}, [](double x, double t) { return std::sin(2 * x + t); });
  PairScanOptions opt;
  opt.budget = 500;
  const HolderReport a = parabolic_holder_norm(ens, 0, 0.5, 2.0, Region::full(), opt);
  opt.workers = 3;
  const HolderReport b = parabolic_holder_norm(ens, 0, 0.5, 2.0, Region::full(), opt);
  EXPECT_TRUE(a.subsampled);
  EXPECT_LE(a.pair_count + a.parabolic_pair_count, 2 * 500u);
  EXPECT_EQ(a.seminorm_parabolic, b.seminorm_parabolic);
  EXPECT_GE(a.seminorm_parabolic, a.seminorm_x);
  const HolderReport full = parabolic_holder_norm(ens, 0, 0.5);
  EXPECT_LE(a.seminorm_parabolic, full.seminorm_parabolic);
}

TEST(Norms, DiniIntegralsOfPowerLaw) {
  // ω = r^κ: ∫_0^δ ω/r = δ^κ/κ, δ ∫_δ^1 ω/r² = δ (1 - δ^{κ-1})/(κ - 1)
  for (double kappa : {0.3, 0.5, 1.0}) {
    const DiniModulus mod = DiniModulus::from_function(log_radii(1e-4, 1.0, 80), [&](double r) { return std::pow(r, kappa); });
    for (double delta : {0.01, 0.1, 0.5}) {
      const DiniIntegrals d = dini_integrals(mod, delta);
      const double small = std::pow(delta, kappa) / kappa;
      const double large = std::abs(kappa - 1.0) < 1e-12 ? -delta * std::log(delta)
                                                         : delta * (1.0 - std::pow(delta, kappa - 1.0)) / (kappa - 1.0);
      EXPECT_NEAR(d.small, small, 0.01 * small);
      EXPECT_NEAR(d.large, large, 0.01 * large);
    }
  }
}

TEST(Norms, DiniModulusOfCosine) {
  const std::size_t N = 32;
  const Ensemble f = make_ensemble(N, 2, {1.0, 1.0}, [](double x, double) { return std::cos(x); });
  const Ensemble g = make_ensemble(N, 2, {0.0, 0.0}, [](double, double) { return 0.0; });
  const SpaceTimeGrid& grid = f.grid();
  const std::vector<double> radii = grid_radii(grid, 1.0);
  const DiniModulus mod = dini_modulus(f, g, radii);
  const double h = grid.h();
  for (std::size_t k = 0; k < radii.size(); ++k) {
    double best = 0.0;
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j)
        if (torus(i * h, j * h, 2.0 * std::numbers::pi) <= radii[k] + 1e-12)
          best = std::max(best, std::abs(std::cos(i * h) - std::cos(j * h)));
    EXPECT_NEAR(mod.omega[k], best, 1e-13);
  }
}

TEST(Norms, ModulusValidation) {
  EXPECT_THROW(DiniModulus::from_function(std::vector<double>{1.0, 0.5}, [](double r) { return 1.0 / r; }),
               InconsistencyError);
  EXPECT_THROW(DiniModulus::from_function(std::vector<double>{0.5, 1.0}, [](double r) { return r; }), ArgumentError);
  const DiniModulus ok = DiniModulus::from_function(std::vector<double>{1.0, 0.5}, [](double r) { return r; });
  EXPECT_THROW(dini_integrals(ok, 0.0), ArgumentError);
}

TEST(Norms, LocalizedSup) {
  const Ensemble ens = make_ensemble(32, 5, {1.0, 3.0}, [](double, double t) { return 1.0 + t; });
  const std::vector<double> x{1.0};
  // E|u|² = 5 (1 + t)², maximal at the last level with t <= τ
  const MomentEstimate m = localized_sup(ens, x, 0.5, 0.5);
  EXPECT_NEAR(m.value, std::sqrt(5.0) * 1.5, 1e-14);
  EXPECT_THROW(localized_sup(ens, x, 0.5, 2.0), ArgumentError);
}
