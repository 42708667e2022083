#pragma once

// Experiments: the stochastic-characteristics oracle, exact linearity,
// convergence studies against oracles, and Schauder-ratio families.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spdelab/errors.hpp"
#include "spdelab/model.hpp"
#include "spdelab/noise.hpp"
#include "spdelab/norms.hpp"
#include "spdelab/parallel.hpp"
#include "spdelab/solver.hpp"

namespace spdelab {

/// Trigonometric polynomial Σ_k A_k cos(k x) + B_k sin(k x) in one variable.
struct TrigProfile {
  struct Mode {
    double k = 1.0;
    double cos_coef = 0.0;
    double sin_coef = 0.0;
  };
  std::vector<Mode> modes;

  static TrigProfile sine(double k = 1.0, double amplitude = 1.0) { return {{{k, 0.0, amplitude}}}; }

  double operator()(double x) const {
    double v = 0.0;
    for (const Mode& m : modes) v += m.cos_coef * std::cos(m.k * x) + m.sin_coef * std::sin(m.k * x);
    return v;
  }
};

/// u(x, t) = φ(x + Σ_k σ_k W^k_t, t) with φ_t = (a - |σ|²/2) φ_xx and φ(·, 0) = φ₀,
/// mode by mode. Solves du = a u_xx dt + σ_k u_x dW^k exactly.
inline GridSolution oracle_characteristics(double a, std::span<const double> sigma, double lambda,
                                           const TrigProfile& phi0, const WienerPath& path,
                                           const SpaceTimeGrid& grid, std::span<const std::size_t> steps) {
  if (grid.dim() != 1) throw ArgumentError("oracle_characteristics: one space dimension only");
  if (sigma.size() > path.modes()) throw ArgumentError("oracle_characteristics: more sigma entries than noise modes");
  double s2 = 0.0;
  for (double s : sigma) s2 += s * s;
  const double diffusivity = a - 0.5 * s2;
  if (!(diffusivity > 0.0)) throw ArgumentError("oracle_characteristics: a - |sigma|^2/2 must be positive");
  if (2.0 * a - s2 < lambda) throw StructuralError("oracle_characteristics: 2a - |sigma|^2 < lambda");
  for (const TrigProfile::Mode& m : phi0.modes) {
    const double cycles = m.k * grid.length() / (2.0 * std::numbers::pi);
    if (std::abs(cycles - std::round(cycles)) > 1e-9)
      throw ArgumentError("oracle_characteristics: profile wavenumber is not periodic on the grid");
  }
  GridSolution sol;
  sol.grid = grid;
  sol.steps.assign(steps.begin(), steps.end());
  sol.values.resize(steps.size() * grid.nodes());
  sol.master_seed = path.master_seed();
  sol.sample_index = path.sample_index();
  for (std::size_t level = 0; level < steps.size(); ++level) {
    const std::size_t j = steps[level];
    if (j > path.n_steps()) throw ArgumentError("oracle_characteristics: step beyond the path");
    const double t = path.time(j);
    double shift = 0.0;
    for (std::size_t k = 0; k < sigma.size(); ++k) shift += sigma[k] * path.cumulative(k, j);
    for (std::size_t node = 0; node < grid.nodes(); ++node) {
      const double y = grid.coordinates(node)[0] + shift;
      double v = 0.0;
      for (const TrigProfile::Mode& m : phi0.modes) {
        const double decay = std::exp(-m.k * m.k * diffusivity * t);
        v += decay * (m.cos_coef * std::cos(m.k * y) + m.sin_coef * std::sin(m.k * y));
      }
      sol.at(level, node) = v;
    }
  }
  return sol;
}

// Linearity -----------------------------------------------------------------------

struct LinearityResult {
  std::vector<double> scalars;
  std::vector<double> deviations;
  double max_deviation = 0.0;
};

/// max over nodes and saved levels of |u_c - c u| / (|c| sup|u|), u_c solving
/// with (c f, c g) on the same paths; worst over `samples` paths.
inline LinearityResult linearity_test(const ProblemSpec& spec, const SpaceTimeGrid& grid,
                                      std::span<const double> scalars, std::uint64_t master_seed,
                                      std::size_t samples = 2, unsigned workers = 0) {
  spec.validate();
  LinearityResult res;
  res.scalars.assign(scalars.begin(), scalars.end());
  res.deviations.assign(scalars.size(), 0.0);
  SolveOptions opt;
  opt.save_every = std::max<std::size_t>(1, grid.n_steps() / 16);
  std::vector<std::vector<double>> per_sample(samples, std::vector<double>(scalars.size(), 0.0));
  parallel_for(samples, workers, [&](std::size_t i) {
    const WienerPath path = sample_path(spec.noise_config(grid.n_steps()), master_seed, i);
    const GridSolution base = solve_realization(spec, path, grid, opt);
    double sup = 0.0;
    for (double v : base.values) sup = std::max(sup, std::abs(v));
    for (std::size_t k = 0; k < scalars.size(); ++k) {
      const double c = scalars[k];
      ProblemSpec scaled = spec;
      scaled.f = spec.f.scaled(c);
      scaled.g = spec.g.scaled(c);
      const GridSolution sol = solve_realization(scaled, path, grid, opt);
      double worst = 0.0;
      for (std::size_t q = 0; q < sol.values.size(); ++q) worst = std::max(worst, std::abs(sol.values[q] - c * base.values[q]));
      const double scale = std::abs(c) * sup;
      per_sample[i][k] = scale > 0.0 ? worst / scale : worst;
    }
  });
  for (std::size_t k = 0; k < scalars.size(); ++k)
    for (std::size_t i = 0; i < samples; ++i) res.deviations[k] = std::max(res.deviations[k], per_sample[i][k]);
  for (double d : res.deviations) res.max_deviation = std::max(res.max_deviation, d);
  return res;
}

// Convergence studies --------------------------------------------------------------

enum class OracleKind { kCharacteristics, kSpatiallyConstant };

struct ConvergenceConfig {
  OracleKind oracle = OracleKind::kCharacteristics;
  /// Points per axis, coarse to fine, each twice the previous; dt shrinks by 4 per refinement.
  std::vector<std::size_t> points{128, 256};
  /// Initial profile (characteristics oracle only).
  TrigProfile profile = TrigProfile::sine();
  std::size_t samples = 200;
  std::uint64_t seed = 1;
  double c_stab = 0.5;
  double tolerance = 0.05;
  double min_ratio = 1.5;
  unsigned workers = 0;
};

struct ConvergenceRow {
  std::size_t points = 0;
  std::size_t n_steps = 0;
  double h = 0.0;
  double dt = 0.0;
  double error = 0.0;           // sqrt(E h^n Σ (u - u*)²) at the final time
  double error_std_error = 0.0;
  double oracle_norm = 0.0;     // sqrt(E h^n Σ u*²)
  double relative_error = 0.0;  // error / oracle_norm (error itself when the oracle vanishes)
};

struct ConvergenceTable {
  std::vector<ConvergenceRow> rows;
  std::vector<double> ratios;  // error_k / error_{k+1}
  std::vector<double> rates;   // log2 of the ratios
  bool monotone = true;
  bool instability = false;
  bool pass = false;
};

namespace detail {

/// Path on a coarser grid obtained by summing groups of fine increments.
inline WienerPath coarsen(const WienerPath& fine, std::size_t n_steps) {
  if (fine.n_steps() % n_steps != 0) throw ArgumentError("coarsen: step counts are not nested");
  const std::size_t group = fine.n_steps() / n_steps;
  NoiseConfig cfg = fine.config();
  cfg.n_steps = n_steps;
  std::vector<double> inc(cfg.modes * n_steps, 0.0);
  for (std::size_t k = 0; k < cfg.modes; ++k)
    for (std::size_t j = 0; j < n_steps; ++j) {
      double s = 0.0;
      for (std::size_t q = 0; q < group; ++q) s += fine.increment(k, j * group + q);
      inc[k * n_steps + j] = s;
    }
  return WienerPath(cfg, std::move(inc), fine.master_seed(), fine.sample_index());
}

}  // namespace detail

/// Strong L² error at the final time against an exact oracle, over nested grids
/// sharing one Brownian path per sample (sampled on the finest grid).
inline ConvergenceTable convergence_study(const ProblemSpec& spec, const ConvergenceConfig& cfg) {
  spec.validate();
  if (cfg.points.empty()) throw ArgumentError("convergence_study: no grids");
  if (cfg.samples < 2) throw ArgumentError("convergence_study: need at least 2 samples");
  for (std::size_t k = 1; k < cfg.points.size(); ++k)
    if (cfg.points[k] != 2 * cfg.points[k - 1]) throw ArgumentError("convergence_study: grids must double");

  double a = 0.0;
  std::vector<double> sigma(spec.modes, 0.0);
  std::vector<double> g0(spec.modes, 0.0);
  double f0 = 0.0;
  const std::vector<double> origin(spec.dim, 0.0);
  if (cfg.oracle == OracleKind::kCharacteristics) {
    if (spec.dim != 1 || !spec.is_model_equation() || !spec.a.is_static() || !spec.sigma.is_static() ||
        !spec.f.is_zero() || !spec.g.is_zero())
      throw ArgumentError("convergence_study: characteristics oracle needs constant a, sigma and f = g = 0 in 1-D");
    a = spec.a(origin, 0.0, PathView())[0];
    sigma = spec.sigma(origin, 0.0, PathView());
  } else {
    auto constant = [](const CoefficientField& c) { return c.is_zero() || (c.is_static() && !c.varies_in_space()); };
    if (!constant(spec.f) || !constant(spec.g) || !spec.c.is_zero() || !spec.nu.is_zero())
      throw ArgumentError("convergence_study: constant oracle needs constant f, g and c = nu = 0");
    f0 = spec.f(origin, 0.0, PathView())[0];
    g0 = spec.g(origin, 0.0, PathView());
  }

  std::vector<SpaceTimeGrid> grids;
  const SpaceTimeGrid first = make_certified_grid(spec, cfg.points.front(), cfg.c_stab);
  for (std::size_t k = 0; k < cfg.points.size(); ++k) {
    const std::size_t factor = std::size_t{1} << (2 * k);
    SpaceTimeGrid g(spec.dim, cfg.points[k], spec.domain_length, spec.horizon, first.n_steps() * factor);
    const StabilityReport rep = stability_check(spec, g, cfg.c_stab);
    if (!rep.certified) throw ArgumentError("convergence_study: refined grid fails the stability check");
    g.attach(*rep.certificate);
    grids.push_back(g);
  }
  const std::size_t G = grids.size();
  std::vector<std::vector<double>> err2(G, std::vector<double>(cfg.samples));
  std::vector<std::vector<double>> ref2(G, std::vector<double>(cfg.samples));
  parallel_for(cfg.samples, cfg.workers, [&](std::size_t i) {
    const WienerPath fine = sample_path(spec.noise_config(grids.back().n_steps()), cfg.seed, i);
    for (std::size_t k = 0; k < G; ++k) {
      const SpaceTimeGrid& grid = grids[k];
      const WienerPath path = k + 1 == G ? fine : detail::coarsen(fine, grid.n_steps());
      SolveOptions opt;
      opt.save_every = 0;
      if (cfg.oracle == OracleKind::kCharacteristics)
        opt.initial = [&](std::span<const double> x) { return cfg.profile(x[0]); };
      const GridSolution sol = solve_realization(spec, path, grid, opt);
      const std::size_t last = sol.levels() - 1;
      const std::vector<std::size_t> final_step{grid.n_steps()};
      std::vector<double> exact(grid.nodes());
      if (cfg.oracle == OracleKind::kCharacteristics) {
        const GridSolution o = oracle_characteristics(a, sigma, 0.0, cfg.profile, path, grid, final_step);
        exact = o.values;
      } else {
        double v = f0 * grid.horizon();
        for (std::size_t m = 0; m < spec.modes; ++m) v += g0[m] * path.cumulative(m, grid.n_steps());
        std::fill(exact.begin(), exact.end(), v);
      }
      const double cell = std::pow(grid.h(), static_cast<double>(grid.dim()));
      double e = 0.0, r = 0.0;
      for (std::size_t node = 0; node < grid.nodes(); ++node) {
        const double d = sol.at(last, node) - exact[node];
        e += d * d;
        r += exact[node] * exact[node];
      }
      err2[k][i] = std::sqrt(e * cell);
      ref2[k][i] = std::sqrt(r * cell);
    }
  });
  ConvergenceTable table;
  for (std::size_t k = 0; k < G; ++k) {
    ConvergenceRow row;
    row.points = grids[k].points();
    row.n_steps = grids[k].n_steps();
    row.h = grids[k].h();
    row.dt = grids[k].dt();
    const MomentEstimate e = lp_moment(err2[k], 2.0);
    row.error = e.value;
    row.error_std_error = e.std_error;
    row.oracle_norm = lp_moment(ref2[k], 2.0).value;
    row.relative_error = row.oracle_norm > 0.0 ? row.error / row.oracle_norm : row.error;
    table.rows.push_back(row);
  }
  for (std::size_t k = 0; k + 1 < G; ++k) {
    const double ratio = table.rows[k + 1].error > 0.0 ? table.rows[k].error / table.rows[k + 1].error
                                                       : std::numeric_limits<double>::infinity();
    table.ratios.push_back(ratio);
    table.rates.push_back(std::log2(ratio));
    if (!(table.rows[k + 1].error < table.rows[k].error)) table.monotone = false;
  }
  table.instability = !table.monotone && G >= 3;
  bool ratios_ok = true;
  for (double r : table.ratios) ratios_ok = ratios_ok && r >= cfg.min_ratio;
  table.pass = table.monotone && ratios_ok && table.rows.back().relative_error <= cfg.tolerance;
  return table;
}

// Schauder ratios ------------------------------------------------------------------

struct SchauderMember {
  std::string name;
  ProblemSpec spec;
};

struct SchauderConfig {
  double tau = 0.25;
  std::size_t points = 128;
  std::size_t samples = 32;
  double c_stab = 0.5;
  /// Saved time levels of each solution ensemble and of the sampled data.
  std::size_t solution_time_levels = 48;
  std::size_t data_time_levels = 16;
  double spread = 10.0;
  double norm_floor = 1e-12;
  std::size_t pair_budget = kDefaultPairBudget;
  std::uint64_t seed = 1;
  std::uint64_t pair_seed = 0x9A1C0DEull;
  unsigned workers = 0;
};

struct SchauderRow {
  std::string name;
  double u_norm = 0.0;      // |u|_{(2+α, α/2)} on (0, τ]: sup over |β| <= 2 plus parabolic seminorm of D²u
  double u_sup = 0.0;
  double u_seminorm = 0.0;
  double f_norm = 0.0;      // |f|_α
  double g_norm = 0.0;      // |g|_{1+α}
  double ratio = 0.0;
  bool skipped = false;
  std::string notice;
};

struct SchauderTable {
  std::vector<SchauderRow> rows;
  double max_ratio = 0.0;
  double min_ratio = 0.0;
  double spread = 0.0;
  bool bounded = false;
};

/// Ratio |u|_{(2+α,α/2)} / (|f|_α + |g|_{1+α}) per member, zero initial data on (0, τ].
/// α and p come from each member's HolderParams.
inline SchauderTable schauder_ratio_experiment(const std::vector<SchauderMember>& family, const SchauderConfig& cfg) {
  if (family.empty()) throw ArgumentError("schauder_ratio_experiment: empty family");
  if (cfg.samples < 2) throw ArgumentError("schauder_ratio_experiment: need at least 2 samples");
  SchauderTable table;
  std::vector<double> ratios;
  for (const SchauderMember& member : family) {
    ProblemSpec spec = member.spec;
    spec.horizon = cfg.tau;
    spec.validate();
    const double alpha = spec.holder.alpha;
    const double p = spec.holder.p;
    const SpaceTimeGrid grid = make_certified_grid(spec, cfg.points, cfg.c_stab);
    {
      const std::vector<double> times{0.0, 0.5 * cfg.tau, cfg.tau};
      const std::vector<WienerPath> paths = sample_paths(spec, grid, cfg.seed, 2);
      const MarginReport margin = validate_parabolicity(spec, sample_sites(spec, 16, times, paths));
      if (!margin.pass) throw StructuralError("schauder_ratio_experiment: member '" + member.name + "' is not parabolic");
    }
    SolveOptions opt;
    opt.save_every = std::max<std::size_t>(1, grid.n_steps() / cfg.solution_time_levels);
    const Ensemble u = solve_ensemble(spec, grid, cfg.seed, cfg.samples, opt, cfg.workers);
    PairScanOptions scan;
    scan.budget = cfg.pair_budget;
    scan.seed = cfg.pair_seed;
    scan.workers = cfg.workers;
    const HolderReport ur = parabolic_holder_norm(u, 2, alpha, p, Region::full(), scan);

    const std::vector<std::size_t> steps = step_lattice(0, grid.n_steps(), cfg.data_time_levels);
    const DataEnsembles data = sample_data(spec, grid, cfg.seed, cfg.samples, steps, cfg.workers);
    SchauderRow row;
    row.name = member.name;
    row.u_sup = ur.sup_part;
    row.u_seminorm = ur.seminorm_parabolic;
    row.u_norm = ur.norm_parabolic();
    row.f_norm = holder_norm_x(data.f, 0, alpha, p, Region::full(), scan).norm_x();
    row.g_norm = holder_norm_x(data.g, 1, alpha, p, Region::full(), scan).norm_x();
    const double denom = row.f_norm + row.g_norm;
    if (denom < cfg.norm_floor) {
      row.skipped = true;
      row.notice = "data norms below floor; member skipped";
    } else {
      row.ratio = row.u_norm / denom;
      ratios.push_back(row.ratio);
    }
    table.rows.push_back(row);
  }
  if (!ratios.empty()) {
    table.max_ratio = *std::max_element(ratios.begin(), ratios.end());
    table.min_ratio = *std::min_element(ratios.begin(), ratios.end());
    table.spread = table.min_ratio > 0.0 ? table.max_ratio / table.min_ratio : std::numeric_limits<double>::infinity();
    table.bounded = table.spread <= cfg.spread;
  }
  return table;
}

inline nlohmann::json to_json(const SchauderTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const SchauderRow& r : t.rows)
    rows.push_back({{"name", r.name}, {"u_norm", r.u_norm}, {"u_sup", r.u_sup}, {"u_seminorm", r.u_seminorm},
                    {"f_norm", r.f_norm}, {"g_norm", r.g_norm}, {"ratio", r.ratio}, {"skipped", r.skipped},
                    {"notice", r.notice}});
  return nlohmann::json{{"rows", rows}, {"max_ratio", t.max_ratio}, {"min_ratio", t.min_ratio},
                        {"spread", t.spread}, {"bounded", t.bounded}};
}

inline nlohmann::json to_json(const ConvergenceTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const ConvergenceRow& r : t.rows)
    rows.push_back({{"points", r.points}, {"n_steps", r.n_steps}, {"h", r.h}, {"dt", r.dt}, {"error", r.error},
                    {"error_std_error", r.error_std_error}, {"oracle_norm", r.oracle_norm},
                    {"relative_error", r.relative_error}});
  return nlohmann::json{{"rows", rows},         {"ratios", t.ratios},         {"rates", t.rates},
                        {"monotone", t.monotone}, {"instability", t.instability}, {"pass", t.pass}};
}

// Experiment records -----------------------------------------------------------------

enum class Verdict { kPass, kFail, kReportOnly };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::kPass: return "pass";
    case Verdict::kFail: return "fail";
    case Verdict::kReportOnly: return "report-only";
  }
  return "?";
}

struct Metric {
  std::string name;
  double value = 0.0;
  std::optional<double> std_error;
};

struct ExperimentResult {
  std::string name;
  std::string config_digest;
  std::uint64_t master_seed = 0;
  std::vector<Metric> metrics;
  Verdict verdict = Verdict::kReportOnly;
  double runtime_seconds = 0.0;

  void add(std::string metric, double value, std::optional<double> se = std::nullopt) {
    if (!std::isfinite(value)) throw InconsistencyError("experiment " + name + ": metric " + metric + " is not finite");
    metrics.push_back({std::move(metric), value, se});
  }
};

/// FNV-1a 64-bit digest, hex-encoded.
inline std::string digest(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Deterministic part of a result (runtime excluded).
inline nlohmann::json to_json(const ExperimentResult& r) {
  nlohmann::json metrics = nlohmann::json::array();
  for (const Metric& m : r.metrics) {
    nlohmann::json j{{"name", m.name}, {"value", m.value}};
    if (m.std_error) j["std_error"] = *m.std_error;
    metrics.push_back(j);
  }
  return nlohmann::json{{"name", r.name},
                        {"config_digest", r.config_digest},
                        {"master_seed", r.master_seed},
                        {"metrics", metrics},
                        {"verdict", to_string(r.verdict)}};
}

/// Appends the result to `runs.jsonl`; the runtime goes to `timings.jsonl` next to it,
/// so the run log stays byte-reproducible.
inline void append_run_log(const std::string& dir, const ExperimentResult& r) {
  std::ofstream runs(dir + "/runs.jsonl", std::ios::app);
  if (!runs) throw ArgumentError("cannot open run log in " + dir);
  runs << to_json(r).dump() << '\n';
  std::ofstream timings(dir + "/timings.jsonl", std::ios::app);
  timings << nlohmann::json{{"name", r.name}, {"runtime_seconds", r.runtime_seconds}}.dump() << '\n';
}

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace spdelab
