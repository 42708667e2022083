#pragma once

// Acceptance criteria as functions. Each one builds its own problem, runs the
// experiment with thresholds from VerifySettings and returns one outcome.
// Criterion 9 (determinism across worker counts) drives the command line and
// lives in cli.hpp.

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "spdelab/cascade.hpp"
#include "spdelab/config.hpp"
#include "spdelab/families.hpp"
#include "spdelab/norms.hpp"
#include "spdelab/solver.hpp"
#include "spdelab/verify.hpp"

namespace spdelab {

struct CriterionOutcome {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double runtime_seconds = 0.0;
  double budget_seconds = 0.0;
  ExperimentResult result;
};

namespace acceptance {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

/// a = 1, σ = 1, one noise mode, f = g = 0 on [0, 2π), T = 0.25.
inline ProblemSpec oracle_problem() {
  FamilyParams p;
  p.modes = 1;
  p.horizon = 0.25;
  p.sigma0 = 1.0;
  return build_family(p);
}

/// Every coefficient switched on, data affine in (f, g).
inline ProblemSpec linearity_problem() {
  FamilyParams p;
  p.family = "trig";
  p.modes = 2;
  p.horizon = 0.25;
  p.a0 = 1.0;
  p.a_amp = 0.2;
  p.b0 = 0.3;
  p.c0 = -0.5;
  p.sigma0 = 0.5;
  p.nu0 = 0.3;
  p.nu_amp = 0.2;
  p.f0 = 0.5;
  p.f_amp = 1.0;
  p.g0 = 0.2;
  p.g_amp = 0.5;
  return build_family(p);
}

/// Model equation a = 1, σ = 0.5, M = 1 with f = f0 + f_amp cos(x), g = g0 + g_amp sin(x).
inline ProblemSpec model_problem(double f0, double f_amp, double g0, double g_amp, double horizon = 0.25,
                                 double f_k = 1.0, double g_k = 1.0, double L = 2.0 * std::numbers::pi) {
  FamilyParams p;
  p.family = "trig";
  p.modes = 1;
  p.horizon = horizon;
  p.domain_length = L;
  p.sigma0 = 0.5;
  p.f0 = f0;
  p.f_amp = f_amp;
  p.f_k = f_k;
  p.g0 = g0;
  p.g_amp = g_amp;
  p.g_k = g_k;
  return build_family(p);
}

/// Cascade and lemma problem: L = π, f = cos(2x), g = 0, a = 1, σ = 0.5, horizon 1.
inline ProblemSpec cascade_problem() { return model_problem(0.0, 1.0, 0.0, 0.0, 1.0, 2.0, 2.0, std::numbers::pi); }

inline CascadeConfig cascade_config(const VerifySettings& v, std::uint64_t seed, unsigned workers) {
  CascadeConfig c;
  c.levels = 6;
  c.base = Cylinder{{std::numbers::pi / 4.0}, 1.0, 1.0};
  c.samples = 8;
  c.points = 256;
  c.max_points = 1024;
  c.threshold = v.spread;
  c.seed = seed;
  c.workers = workers;
  return c;
}

inline CriterionOutcome finish(CriterionOutcome out, const Stopwatch& clock, std::uint64_t seed) {
  out.runtime_seconds = clock.seconds();
  out.result.name = out.name;
  out.result.master_seed = seed;
  out.result.runtime_seconds = out.runtime_seconds;
  out.result.verdict = out.pass ? Verdict::kPass : Verdict::kFail;
  if (out.runtime_seconds > out.budget_seconds) {
    out.pass = false;
    out.result.verdict = Verdict::kFail;
    out.detail += "; over runtime budget";
  }
  return out;
}

}  // namespace acceptance

/// 1: strong L² error against the characteristics oracle, one (h/2, dt/4) refinement.
inline CriterionOutcome criterion_oracle(const VerifySettings& v, std::uint64_t seed, unsigned workers) {
  Stopwatch clock;
  CriterionOutcome out{1, "oracle", false, "", 0.0, 300.0, {}};
  ConvergenceConfig cfg;
  cfg.points = {v.oracle_points, 2 * v.oracle_points};
  cfg.samples = v.oracle_samples;
  cfg.seed = seed;
  cfg.tolerance = v.oracle_tolerance;
  cfg.min_ratio = v.oracle_min_ratio;
  cfg.workers = workers;
  const ConvergenceTable t = convergence_study(acceptance::oracle_problem(), cfg);
  const double coarse = t.rows.front().relative_error;
  out.pass = coarse <= v.oracle_tolerance && t.pass;
  out.detail = "relative error " + acceptance::fmt("%.4f", coarse) + " -> " +
               acceptance::fmt("%.4f", t.rows.back().relative_error) + ", refinement ratio " +
               acceptance::fmt("%.2f", t.ratios.front());
  out.result.add("relative_error_coarse", coarse);
  out.result.add("relative_error_fine", t.rows.back().relative_error);
  out.result.add("error_coarse", t.rows.front().error, t.rows.front().error_std_error);
  out.result.add("error_fine", t.rows.back().error, t.rows.back().error_std_error);
  out.result.add("refinement_ratio", t.ratios.front());
  return acceptance::finish(out, clock, seed);
}

/// 2: solve(c f, c g) against c solve(f, g) on the same paths.
inline CriterionOutcome criterion_linearity(const VerifySettings& v, std::uint64_t seed, unsigned workers) {
  Stopwatch clock;
  CriterionOutcome out{2, "linearity", false, "", 0.0, 60.0, {}};
  const ProblemSpec spec = acceptance::linearity_problem();
  const SpaceTimeGrid grid = make_certified_grid(spec, 64);
  const std::vector<double> scalars{0.1, 2.0, 10.0};
  const LinearityResult r = linearity_test(spec, grid, scalars, seed, 4, workers);
  out.pass = r.max_deviation <= v.linearity_tolerance;
  out.detail = "max relative deviation " + acceptance::fmt("%.3g", r.max_deviation);
  for (std::size_t k = 0; k < scalars.size(); ++k)
    out.result.add("deviation_c=" + acceptance::fmt("%g", scalars[k]), r.deviations[k]);
  return acceptance::finish(out, clock, seed);
}

/// 3: local energy ratios across radii, plus the f ≡ 1 closed form 1/√3 and the
/// g ≡ 1 discrete expectation.
inline CriterionOutcome criterion_energy(const VerifySettings& v, std::uint64_t seed, unsigned workers) {
  Stopwatch clock;
  CriterionOutcome out{3, "energy", false, "", 0.0, 300.0, {}};
  EnergyConfig cfg;
  cfg.samples = v.energy_samples;
  cfg.points = v.energy_points;
  cfg.seed = seed;
  cfg.threshold = v.spread;
  cfg.workers = workers;
  cfg.center_x = {std::numbers::pi / 3.0};
  const EnergyReport general = energy_estimate_check(acceptance::model_problem(0.5, 1.0, 0.3, 0.5), cfg);
  const EnergyReport unit = energy_estimate_check(acceptance::model_problem(1.0, 0.0, 1.0, 0.0), cfg);

  const double closed = 1.0 / std::sqrt(3.0);
  double worst_f = 0.0;
  for (const EnergyRow& row : unit.f.rows) worst_f = std::max(worst_f, std::abs(row.ratio / closed - 1.0));
  // With g ≡ 1 the solution is W_t at every node: E ∫ u² = Σ w_j t_j dt per node.
  const ProblemSpec unit_spec = acceptance::model_problem(0.0, 0.0, 1.0, 0.0);
  ProblemSpec grid_spec = unit_spec;
  grid_spec.horizon = 0.25;
  const SpaceTimeGrid grid = make_certified_grid(grid_spec, cfg.points);
  double worst_g = 0.0;
  for (const EnergyRow& row : unit.g.rows) {
    const auto last = static_cast<std::size_t>(std::llround(row.r * row.r / grid.dt()));
    double swt = 0.0, sw = 0.0;
    for (std::size_t j = 0; j <= last; ++j) {
      const double w = (j == 0 || j == last) ? 0.5 : 1.0;
      swt += w * grid.time(j);
      sw += w;
    }
    const double expected = std::sqrt(swt / sw) / row.r;
    const double se = row.u_std_error / row.data_norm / row.r;
    worst_g = std::max(worst_g, std::abs(row.ratio - expected) / se);
  }
  const bool closed_ok = worst_f <= v.closed_form_tolerance;
  const bool g_ok = worst_g <= v.se_multiplier;
  out.pass = general.pass && closed_ok && g_ok;
  out.detail = "spread rho_f " + acceptance::fmt("%.3f", general.f.spread) + ", rho_g " +
               acceptance::fmt("%.3f", general.g.spread) + "; f=1 closed form off by " +
               acceptance::fmt("%.2f%%", 100.0 * worst_f) + "; g=1 within " + acceptance::fmt("%.2f", worst_g) + " SE";
  out.result.add("spread_rho_f", general.f.spread);
  out.result.add("spread_rho_g", general.g.spread);
  out.result.add("closed_form_relative_error", worst_f);
  out.result.add("unit_g_standard_errors", worst_g);
  return acceptance::finish(out, clock, seed);
}

/// Shared cascade run for criteria 4 and 5.
struct CascadeRun {
  CascadeReport report;
  double runtime_seconds = 0.0;
};

inline CascadeRun run_acceptance_cascade(const VerifySettings& v, std::uint64_t seed, unsigned workers) {
  Stopwatch clock;
  CascadeRun run;
  run.report = run_cascade(acceptance::cascade_problem(), acceptance::cascade_config(v, seed, workers));
  run.runtime_seconds = clock.seconds();
  return run;
}

/// 4: ratios I_{ℓ,m} / (r^{2-m} ω(r)) bounded over ℓ = 1..5 and J_ℓ ~ r^{2+α_eff}.
inline CriterionOutcome criterion_claim2(const VerifySettings& v, const CascadeRun& run, std::uint64_t seed) {
  Stopwatch clock;
  CriterionOutcome out{4, "claim2-decay", false, "", 0.0, 600.0, {}};
  const Claim2Result c = check_claim2_decay(run.report, 1, 5, v.spread, nullptr, 1e-9, v.slope_tolerance);
  out.pass = c.pass && c.levels.size() == 5;
  out.detail = "max/median r_l2 " + acceptance::fmt("%.3f", c.spread_m2) + " (r_l1 " +
               acceptance::fmt("%.3f", c.spread_m1) + "), J slope " + acceptance::fmt("%.3f", c.j_slope) +
               " vs 2+alpha_eff " + acceptance::fmt("%.3f", 2.0 + c.alpha_eff) +
               (run.report.truncated ? "; truncated: " + run.report.note : "");
  out.result.add("spread_m2", c.spread_m2);
  out.result.add("spread_m1", c.spread_m1);
  out.result.add("j_slope", c.j_slope);
  out.result.add("alpha_eff", c.alpha_eff);
  out = acceptance::finish(out, clock, seed);
  out.runtime_seconds += run.runtime_seconds;
  out.result.runtime_seconds = out.runtime_seconds;
  if (out.runtime_seconds > out.budget_seconds) out.pass = false;
  return out;
}

/// 5: tails of I_{ℓ,2} against C ∫_0^{r_ℓ} ω/r with stable C; deepest gap against the tail.
inline CriterionOutcome criterion_claim3(const VerifySettings& v, const CascadeRun& run, std::uint64_t seed) {
  Stopwatch clock;
  CriterionOutcome out{5, "claim3-convergence", false, "", 0.0, 600.0, {}};
  const Claim3Result c = check_convergence_uxx(run.report, 1, v.claim3_spread, v.claim3_gap_factor);
  out.pass = c.pass;
  out.detail = "constant spread " + acceptance::fmt("%.3f", c.constant_spread) + ", deepest gap " +
               acceptance::fmt("%.3g", c.gap_deepest) + " vs tail bound " + acceptance::fmt("%.3g", c.tail_bound) +
               (c.diverging ? "; diverging" : "");
  out.result.add("constant_spread", c.constant_spread);
  out.result.add("constant_median", c.constant_median);
  out.result.add("gap_deepest", c.gap_deepest);
  out.result.add("tail_bound", c.tail_bound);
  out = acceptance::finish(out, clock, seed);
  out.runtime_seconds += run.runtime_seconds;
  out.result.runtime_seconds = out.runtime_seconds;
  if (out.runtime_seconds > out.budget_seconds) out.pass = false;
  return out;
}

/// 6: ratio of the u_xx increment to the Dini bound over random pairs in Q_{1/4}.
inline CriterionOutcome criterion_lemma(const VerifySettings& v, std::uint64_t seed, unsigned workers) {
  Stopwatch clock;
  CriterionOutcome out{6, "lemma", false, "", 0.0, 600.0, {}};
  LemmaConfig cfg;
  cfg.base = Cylinder{{std::numbers::pi / 4.0}, 1.0, 1.0};
  cfg.pair_radius = v.lemma_pair_radius;
  cfg.pairs = v.lemma_pairs;
  cfg.samples = v.lemma_samples;
  cfg.points = v.lemma_points;
  cfg.seed = seed;
  cfg.threshold = v.spread;
  cfg.slope_tolerance = v.slope_tolerance;
  cfg.workers = workers;
  const ProblemSpec spec = acceptance::cascade_problem();
  const SpaceTimeGrid grid = lemma_grid(spec, cfg);
  const LemmaReport r = dini_lemma_check(spec, cfg, random_lemma_pairs(grid, cfg));
  out.pass = r.pass;
  out.detail = "max/median " + acceptance::fmt("%.3f", r.spread) + ", slope of log ratio vs log delta " +
               acceptance::fmt("%.3f", r.slope);
  out.result.add("spread", r.spread);
  out.result.add("slope", r.slope);
  out.result.add("median_ratio", r.median_ratio);
  return acceptance::finish(out, clock, seed);
}

/// 7: Schauder ratios over f = cos(kx), over g = sin(kx) e_1, and over pure scalings.
inline CriterionOutcome criterion_schauder(const VerifySettings& v, std::uint64_t seed, unsigned workers) {
  Stopwatch clock;
  CriterionOutcome out{7, "schauder", false, "", 0.0, 900.0, {}};
  SchauderConfig cfg;
  cfg.tau = v.schauder_tau;
  cfg.points = v.schauder_points;
  cfg.samples = v.schauder_samples;
  cfg.spread = v.spread;
  cfg.seed = seed;
  cfg.workers = workers;
  std::vector<SchauderMember> f_family, g_family, scalings;
  for (double k : {1.0, 2.0, 4.0, 8.0}) {
    f_family.push_back({"f=cos(" + acceptance::fmt("%g", k) + "x)", acceptance::model_problem(0.0, 1.0, 0.0, 0.0, cfg.tau, k)});
    g_family.push_back({"g=sin(" + acceptance::fmt("%g", k) + "x)", acceptance::model_problem(0.0, 0.0, 0.0, 1.0, cfg.tau, 1.0, k)});
  }
  const ProblemSpec base = acceptance::model_problem(0.0, 1.0, 0.0, 0.5, cfg.tau, 2.0, 1.0);
  for (double c : {1.0, 0.5, 2.0, 10.0}) {
    ProblemSpec s = base;
    s.f = base.f.scaled(c);
    s.g = base.g.scaled(c);
    scalings.push_back({"scale=" + acceptance::fmt("%g", c), s});
  }
  const SchauderTable tf = schauder_ratio_experiment(f_family, cfg);
  const SchauderTable tg = schauder_ratio_experiment(g_family, cfg);
  const SchauderTable ts = schauder_ratio_experiment(scalings, cfg);
  double scaling_dev = 0.0;
  for (const SchauderRow& r : ts.rows)
    scaling_dev = std::max(scaling_dev, std::abs(r.ratio - ts.rows.front().ratio) / ts.rows.front().ratio);
  out.pass = tf.bounded && tg.bounded && scaling_dev <= v.scaling_tolerance;
  out.detail = "spread f-family " + acceptance::fmt("%.3f", tf.spread) + ", g-family " +
               acceptance::fmt("%.3f", tg.spread) + ", scaling deviation " + acceptance::fmt("%.3g", scaling_dev);
  out.result.add("spread_f_family", tf.spread);
  out.result.add("spread_g_family", tg.spread);
  out.result.add("scaling_deviation", scaling_dev);
  return acceptance::finish(out, clock, seed);
}

namespace acceptance {

/// Small ensemble of smooth random fields (level, node) on a 1-D grid.
inline Ensemble random_ensemble(std::size_t members, std::size_t points, std::size_t levels, std::uint64_t seed) {
  const SpaceTimeGrid grid(1, points, 2.0 * std::numbers::pi, 1.0, levels - 1);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Ensemble ens;
  for (std::size_t i = 0; i < members; ++i) {
    GridSolution s;
    s.grid = grid;
    s.sample_index = i;
    for (std::size_t l = 0; l < levels; ++l) s.steps.push_back(l);
    s.values.resize(levels * points);
    const double a1 = normal(rng), a2 = normal(rng), a3 = normal(rng);
    for (std::size_t l = 0; l < levels; ++l)
      for (std::size_t n = 0; n < points; ++n) {
        const double x = grid.coordinates(n)[0], t = grid.time(l);
        s.at(l, n) = a1 * std::sin(x + t) + a2 * std::cos(2.0 * x) * std::sqrt(t + 0.1) + a3 * std::sin(3.0 * x);
      }
    ens.members.push_back(std::move(s));
  }
  return ens;
}

inline Ensemble scaled(Ensemble ens, double c) {
  for (GridSolution& m : ens.members)
    for (double& v : m.values) v *= c;
  return ens;
}

inline Ensemble constant_ensemble(std::size_t members, std::size_t points, std::size_t levels, double value) {
  Ensemble ens = random_ensemble(members, points, levels, 1);
  for (GridSolution& m : ens.members) std::fill(m.values.begin(), m.values.end(), value);
  return ens;
}

}  // namespace acceptance

/// 8: homogeneity and constant-field cases of the Hölder estimators, Dini integrals
/// against closed forms, triangle inequality of the parabolic distance.
inline CriterionOutcome criterion_norms(const VerifySettings& v, std::uint64_t seed, unsigned workers) {
  Stopwatch clock;
  CriterionOutcome out{8, "norm-properties", false, "", 0.0, 60.0, {}};
  PairScanOptions scan;
  scan.workers = workers;
  scan.budget = 20000;

  // Power-of-two scalings commute with every rounding step, so equality is bitwise.
  const Ensemble base = acceptance::random_ensemble(8, 32, 6, seed);
  const HolderReport hx = holder_norm_x(base, 1, 0.5, 2.0, Region::full(), scan);
  const HolderReport hp = parabolic_holder_norm(base, 2, 0.5, 4.0, Region::full(), scan);
  bool homogeneous = true;
  for (double c : {2.0, 0.5, -4.0}) {
    const Ensemble s = acceptance::scaled(base, c);
    const HolderReport sx = holder_norm_x(s, 1, 0.5, 2.0, Region::full(), scan);
    const HolderReport sp = parabolic_holder_norm(s, 2, 0.5, 4.0, Region::full(), scan);
    const double a = std::abs(c);
    homogeneous = homogeneous && sx.sup_part == a * hx.sup_part && sx.seminorm_x == a * hx.seminorm_x &&
                  sp.sup_part == a * hp.sup_part && sp.seminorm_parabolic == a * hp.seminorm_parabolic;
  }

  bool constant_ok = true;
  for (double value : {0.0, 3.0, -1.5}) {
    const Ensemble k = acceptance::constant_ensemble(4, 16, 4, value);
    const HolderReport r = parabolic_holder_norm(k, 2, 0.5, 2.0, Region::full(), scan);
    constant_ok = constant_ok && r.seminorm_x == 0.0 && r.seminorm_parabolic == 0.0 &&
                  std::abs(r.sup_part - std::abs(value)) <= 4.0 * std::numeric_limits<double>::epsilon() * std::abs(value);
  }

  double dini_err = 0.0;
  const std::vector<double> radii = log_radii(1e-5, 1.0, 200);
  for (double alpha : {0.3, 0.5, 0.8}) {
    const DiniModulus mod = DiniModulus::from_function(radii, [alpha](double r) { return std::pow(r, alpha); });
    for (double delta : {0.5, 0.1, 0.01}) {
      const DiniIntegrals d = dini_integrals(mod, delta);
      const double small = std::pow(delta, alpha) / alpha;
      const double large = (std::pow(delta, alpha) - delta) / (1.0 - alpha);
      dini_err = std::max({dini_err, std::abs(d.small / small - 1.0), std::abs(d.large / large - 1.0)});
    }
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0), ut(0.0, 1.0);
  std::size_t violations = 0;
  for (std::size_t q = 0; q < v.triangle_triples; ++q) {
    const SpaceTimePoint X{{u(rng), u(rng)}, ut(rng)}, Y{{u(rng), u(rng)}, ut(rng)}, Z{{u(rng), u(rng)}, ut(rng)};
    const double lhs = parabolic_distance(X, Z);
    const double rhs = parabolic_distance(X, Y) + parabolic_distance(Y, Z);
    if (lhs > rhs * (1.0 + 4.0 * std::numeric_limits<double>::epsilon())) ++violations;
  }

  out.pass = homogeneous && constant_ok && dini_err <= v.dini_tolerance && violations == 0;
  out.detail = std::string("homogeneity ") + (homogeneous ? "exact" : "BROKEN") + ", constant fields " +
               (constant_ok ? "exact" : "BROKEN") + ", Dini integrals within " + acceptance::fmt("%.3g%%", 100.0 * dini_err) +
               ", triangle violations " + std::to_string(violations) + "/" + std::to_string(v.triangle_triples);
  out.result.add("homogeneous", homogeneous ? 1.0 : 0.0);
  out.result.add("constant_exact", constant_ok ? 1.0 : 0.0);
  out.result.add("dini_relative_error", dini_err);
  out.result.add("triangle_violations", static_cast<double>(violations));
  return acceptance::finish(out, clock, seed);
}

}  // namespace spdelab
