#pragma once

// Dyadic frozen-coefficient cascade on shrinking parabolic cylinders and the
// quantitative checks built on it: level distances J_ℓ, difference sizes
// I_{ℓ,m}, convergence of u^ℓ_xx at the center, the pointwise Dini bound for
// u_xx, and the local energy estimate.
//
// Geometry: the base cylinder B_{R0}(x_c) x (t_top - R0², t_top] is placed so
// that t_top is the grid horizon. Level ℓ uses radius R0 ρ^ℓ, rounded outward
// to the grid; every level shares the top time t_top.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
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

struct CascadeConfig {
  double rho = 0.5;
  /// Deepest solved level L (levels 0..L are solved).
  std::size_t levels = 5;
  /// Q^0: center_x, top time center_t, radius R0 <= 1.
  Cylinder base{{0.0}, 1.0, 1.0};
  std::size_t samples = 16;
  /// Starting grid size per axis; doubled until the deepest level resolves, up to max_points.
  std::size_t points = 256;
  std::size_t max_points = 2048;
  double c_stab = 0.5;
  /// Time levels per cylinder on which sup-norms over Q^{ℓ+2} are sampled.
  std::size_t probe_time_levels = 64;
  /// Time levels of sampled data used for the measured Dini modulus.
  std::size_t data_time_levels = 16;
  double threshold = 10.0;
  std::uint64_t seed = 1;
  unsigned workers = 0;
  /// Extra points Y (solver coordinates) for the three-term decomposition at the center.
  std::vector<SpaceTimePoint> decomposition_probes;
  /// Keep the top-time states of sample 0 in the report.
  bool keep_final_states = false;

  void validate() const {
    if (!(rho > 0.0 && rho < 1.0)) throw ArgumentError("cascade: rho must lie in (0, 1)");
    if (levels < 2) throw ArgumentError("cascade: need at least 2 levels");
    if (!(base.radius > 0.0 && base.radius <= 1.0)) throw ArgumentError("cascade: base radius must lie in (0, 1]");
    if (base.center_t < base.radius * base.radius * (1.0 - 1e-12))
      throw DomainError("cascade: base cylinder starts before t = 0");
    if (samples < 2) throw ArgumentError("cascade: need at least 2 samples");
    if (points < 8 || max_points < points) throw ArgumentError("cascade: invalid grid sizes");
    if (probe_time_levels < 2 || data_time_levels < 1) throw ArgumentError("cascade: invalid probe lattice sizes");
  }

  double radius(std::size_t level) const { return base.radius * std::pow(rho, static_cast<double>(level)); }
};

/// Model equation with f and g frozen at x_c: f(x_c, t) and g(x_c, t) + g_x(x_c, t)·(x - x_c),
/// with g_x a centered difference of step h and x - x_c the minimal-image displacement.
inline ProblemSpec freeze(const ProblemSpec& spec, std::span<const double> x_c, double h) {
  if (x_c.size() != spec.dim) throw ArgumentError("freeze: center has wrong dimension");
  ProblemSpec frozen = spec;
  const std::vector<double> center(x_c.begin(), x_c.end());
  const double L = spec.domain_length;
  const std::size_t n = spec.dim;
  if (!spec.f.is_zero() && spec.f.varies_in_space()) {
    CoefficientField f = spec.f;
    frozen.f = CoefficientField(
        1, 1, [f, center](std::span<const double>, double t, const PathView& w, std::span<double> out) {
          f.evaluate(center, t, w, out);
        },
        spec.f.dependence() & ~static_cast<unsigned>(kSpace));
  }
  if (!spec.g.is_zero() && spec.g.varies_in_space()) {
    CoefficientField g = spec.g;
    const std::size_t M = spec.modes;
    frozen.g = CoefficientField(
        M, 1,
        [g, center, h, L, n, M](std::span<const double> x, double t, const PathView& w, std::span<double> out) {
          g.evaluate(center, t, w, out);
          std::vector<double> plus(M), minus(M), xp(center), xm(center);
          for (std::size_t i = 0; i < n; ++i) {
            xp[i] = center[i] + h;
            xm[i] = center[i] - h;
            g.evaluate(xp, t, w, plus);
            g.evaluate(xm, t, w, minus);
            xp[i] = xm[i] = center[i];
            double d = std::remainder(x[i] - center[i], L);
            for (std::size_t k = 0; k < M; ++k) out[k] += (plus[k] - minus[k]) / (2.0 * h) * d;
          }
        },
        spec.g.dependence());
  }
  return frozen;
}

namespace detail {

/// Magnitude of D^m v at `node` (Euclidean over all |β| = m).
inline double derivative_magnitude(std::span<const double> v, const SpaceTimeGrid& grid,
                                   std::span<const MultiIndex> betas, std::size_t node) {
  double sq = 0.0;
  for (const MultiIndex& beta : betas) {
    const double d = derivative_at(v, 1, grid, beta, node);
    sq += d * d;
  }
  return std::sqrt(sq);
}

inline void append_hessian(std::span<const double> v, const SpaceTimeGrid& grid, std::span<const MultiIndex> betas,
                           std::size_t node, std::vector<double>& out) {
  for (const MultiIndex& beta : betas) out.push_back(derivative_at(v, 1, grid, beta, node));
}

/// ‖a_i - b_i‖_{L^p} over samples for stacked component vectors.
inline double lp_gap(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b, double p) {
  std::vector<double> mags(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    double sq = 0.0;
    for (std::size_t c = 0; c < a[i].size(); ++c) sq += (a[i][c] - b[i][c]) * (a[i][c] - b[i][c]);
    mags[i] = std::sqrt(sq);
  }
  return lp_moment(mags, p).value;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Least-squares slope of y against x.
inline double fit_slope(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

}  // namespace detail

using detail::fit_slope;

/// Resolved cascade geometry on a certified grid.
struct CascadePlan {
  SpaceTimeGrid grid;
  ProblemSpec spec;    // horizon = top time
  ProblemSpec frozen;  // data frozen at the (snapped) center
  std::size_t levels = 0;
  /// Levels 0..levels+1; the last one only delimits where I_{levels,m} would be sampled.
  std::vector<CylinderGeometry> geometry;
  std::size_t top_step = 0;
  std::size_t center_node = 0;
  std::vector<std::size_t> tried_points;
  bool truncated = false;
  std::string note;

  /// Sup-norm lattice of Q^{ℓ+2} for ℓ = 0..levels-1.
  std::vector<std::vector<std::size_t>> probe_steps;
  std::vector<std::vector<std::uint32_t>> probe_nodes;
  std::vector<std::size_t> residual_steps;

  struct Decomposition {
    std::size_t step = 0;
    std::size_t node = 0;
    std::size_t level = 0;
    double delta = 0.0;
  };
  std::vector<Decomposition> decomposition;
};

inline CascadePlan plan_cascade(const ProblemSpec& spec, const CascadeConfig& cfg) {
  cfg.validate();
  spec.validate();
  if (!spec.is_model_equation())
    throw StructuralError("cascade: needs the model equation (a, sigma independent of x; b, c, nu zero)");
  if (cfg.base.center_x.size() != spec.dim) throw ArgumentError("cascade: base center has wrong dimension");
  if (spec.horizon < cfg.base.center_t * (1.0 - 1e-12))
    throw DomainError("cascade: base cylinder top lies beyond the problem horizon");

  CascadePlan plan;
  plan.spec = spec;
  plan.spec.horizon = cfg.base.center_t;
  std::size_t deepest = cfg.levels;
  std::size_t points = cfg.points;
  for (;;) {
    plan.tried_points.push_back(points);
    const double h = spec.domain_length / static_cast<double>(points);
    const bool fits = 2 * static_cast<std::size_t>(std::ceil(cfg.base.radius / h - 1e-9)) + 2 <= points;
    const bool deep_ok = 2 * static_cast<std::size_t>(std::ceil(cfg.radius(cfg.levels) / h - 1e-9)) - 1 >= 8;
    if (fits && deep_ok) break;
    if (points * 2 > cfg.max_points) {
      if (!fits) throw ResolutionError("cascade: base cylinder does not fit on the torus");
      // deepest resolvable level at the cap
      deepest = 0;
      while (deepest + 1 <= cfg.levels &&
             2 * static_cast<std::size_t>(std::ceil(cfg.radius(deepest + 1) / h - 1e-9)) - 1 >= 8)
        ++deepest;
      if (deepest < 2) throw ResolutionError("cascade: fewer than 3 levels resolvable at the grid cap");
      plan.truncated = true;
      plan.note = "levels truncated to " + std::to_string(deepest) + " (grid cap " + std::to_string(cfg.max_points) +
                  " reached)";
      break;
    }
    points *= 2;
  }
  plan.levels = deepest;
  plan.grid = make_certified_grid(plan.spec, points, cfg.c_stab);
  const SpaceTimeGrid& grid = plan.grid;

  // snap the center to a node so frozen data sits at a grid point
  plan.center_node = grid.nearest_node(cfg.base.center_x);
  const std::vector<double> center = grid.coordinates(plan.center_node);
  plan.frozen = freeze(plan.spec, center, grid.h());

  for (std::size_t l = 0; l <= deepest + 1; ++l) {
    const Cylinder cyl{center, plan.spec.horizon, cfg.radius(l)};
    plan.geometry.push_back(resolve_cylinder(grid, cyl, l <= deepest));
  }
  plan.top_step = plan.geometry.front().top_step;
  for (std::size_t l = 0; l < deepest; ++l) {
    const CylinderGeometry& probe = plan.geometry[l + 2];
    plan.probe_steps.push_back(step_lattice(probe.start_step, probe.top_step, cfg.probe_time_levels));
    plan.probe_nodes.push_back(probe.interior);
  }
  if (plan.geometry[deepest].start_step < plan.top_step)
    plan.residual_steps = step_lattice(plan.geometry[deepest].start_step, plan.top_step - 1, 8);

  const SpaceTimePoint origin{center, plan.spec.horizon};
  for (const SpaceTimePoint& y : cfg.decomposition_probes) {
    if (y.x.size() != spec.dim) throw ArgumentError("cascade: decomposition probe has wrong dimension");
    CascadePlan::Decomposition d;
    d.node = grid.nearest_node(y.x);
    const double s = std::round(y.t / grid.dt());
    if (s < 0.0 || s > static_cast<double>(plan.top_step)) throw DomainError("cascade: decomposition probe outside [0, t_top]");
    d.step = static_cast<std::size_t>(s);
    const SpaceTimePoint snapped{grid.coordinates(d.node), grid.time(d.step)};
    double dx = grid.torus_distance(plan.center_node, d.node);
    d.delta = dx + std::sqrt(std::abs(origin.t - snapped.t));
    if (d.delta <= 0.0) {
      d.level = deepest;
    } else {
      const double q = std::log(d.delta / cfg.base.radius) / std::log(cfg.rho);
      const double l = std::ceil(q) - 2.0;
      if (l < 0.0) throw DomainError("cascade: decomposition probe too far from the center");
      d.level = std::min<std::size_t>(static_cast<std::size_t>(l), deepest);
    }
    if (!plan.geometry[d.level].active(d.step) || plan.geometry[d.level].mask[d.node] != 1)
      throw DomainError("cascade: decomposition probe lies outside its level cylinder");
    plan.decomposition.push_back(d);
  }
  return plan;
}

/// Per-sample output of the lockstep engine.
struct CascadeSample {
  std::vector<double> J2;                       // mean of (u^ℓ - u)² over Q^ℓ
  std::vector<std::vector<double>> probe1;      // |D(u^ℓ - u^{ℓ+1})| on the Q^{ℓ+2} lattice
  std::vector<std::vector<double>> probe2;      // |D²(u^ℓ - u^{ℓ+1})|
  std::vector<std::vector<double>> center_xx;   // D²u^ℓ at (x_c, t_top)
  std::vector<double> base_center_xx;           // D²u at (x_c, t_top)
  std::vector<std::vector<double>> decomp_level_xx;
  std::vector<std::vector<double>> decomp_base_xx;
  double residual = 0.0;
  double residual_scale = 0.0;
  std::vector<std::vector<double>> final_levels;
  std::vector<double> final_base;
};

/// Marches the base solution and every level together for one path. Level
/// ℓ starts as a copy of the base at its start step; its lateral boundary
/// nodes are overwritten with the base values at every step.
inline CascadeSample run_cascade_sample(const CascadePlan& plan, const WienerPath& path, bool keep_final) {
  const SpaceTimeGrid& grid = plan.grid;
  const std::size_t nodes = grid.nodes();
  const std::size_t L = plan.levels;
  const std::size_t top = plan.top_step;
  const std::vector<MultiIndex> first = multi_indices(grid.dim(), 1);
  const std::vector<MultiIndex> second = multi_indices(grid.dim(), 2);

  Stepper base_stepper(plan.spec, grid);
  Stepper frozen_stepper(plan.frozen, grid);
  const std::vector<std::uint32_t> all = detail::all_nodes(grid);

  std::vector<double> u(nodes, 0.0), u_next(nodes, 0.0);
  std::vector<std::vector<double>> ul(L + 1, std::vector<double>(nodes, 0.0));
  std::vector<std::vector<double>> ul_next(L + 1, std::vector<double>(nodes, 0.0));
  std::vector<double> scratch(nodes, 0.0);

  CascadeSample rec;
  rec.J2.assign(L + 1, 0.0);
  std::vector<std::size_t> J_count(L + 1, 0);
  rec.probe1.resize(L);
  rec.probe2.resize(L);
  std::vector<std::size_t> cursor(L, 0);
  rec.decomp_level_xx.resize(plan.decomposition.size());
  rec.decomp_base_xx.resize(plan.decomposition.size());
  std::size_t residual_cursor = 0;

  auto on_state = [&](std::size_t s) {
    for (std::size_t l = 0; l <= L; ++l)
      if (plan.geometry[l].start_step == s) ul[l] = u;
    for (std::size_t l = 0; l <= L; ++l) {
      const CylinderGeometry& g = plan.geometry[l];
      if (s <= g.start_step || s > g.top_step) continue;
      double acc = 0.0;
      for (const std::uint32_t node : g.interior) {
        const double d = ul[l][node] - u[node];
        acc += d * d;
      }
      rec.J2[l] += acc;
      J_count[l] += g.interior.size();
    }
    for (std::size_t l = 0; l < L; ++l) {
      if (cursor[l] >= plan.probe_steps[l].size() || plan.probe_steps[l][cursor[l]] != s) continue;
      ++cursor[l];
      const CylinderGeometry& outer = plan.geometry[l + 1];
      for (std::size_t node = 0; node < nodes; ++node)
        if (outer.mask[node]) scratch[node] = ul[l][node] - ul[l + 1][node];
      for (const std::uint32_t node : plan.probe_nodes[l]) {
        rec.probe1[l].push_back(detail::derivative_magnitude(scratch, grid, first, node));
        rec.probe2[l].push_back(detail::derivative_magnitude(scratch, grid, second, node));
      }
    }
    for (std::size_t k = 0; k < plan.decomposition.size(); ++k) {
      const auto& d = plan.decomposition[k];
      if (d.step != s) continue;
      detail::append_hessian(ul[d.level], grid, second, d.node, rec.decomp_level_xx[k]);
      detail::append_hessian(u, grid, second, d.node, rec.decomp_base_xx[k]);
    }
    if (s == top) {
      rec.center_xx.resize(L + 1);
      for (std::size_t l = 0; l <= L; ++l) detail::append_hessian(ul[l], grid, second, plan.center_node, rec.center_xx[l]);
      detail::append_hessian(u, grid, second, plan.center_node, rec.base_center_xx);
    }
  };

  for (std::size_t s = 0; s < top; ++s) {
    on_state(s);
    base_stepper.advance(u, u_next, all, s, path);
    for (std::size_t l = 0; l <= L; ++l) {
      const CylinderGeometry& g = plan.geometry[l];
      if (s < g.start_step) continue;
      for (const std::uint32_t node : g.boundary) ul_next[l][node] = u_next[node];
      frozen_stepper.advance(ul[l], ul_next[l], g.interior, s, path);
    }
    u.swap(u_next);
    for (std::size_t l = 0; l <= L; ++l)
      if (s >= plan.geometry[l].start_step) ul[l].swap(ul_next[l]);

    // discrete homogeneous equation for h = u^ℓ - u^{ℓ-1} on the interior of Q^ℓ
    if (residual_cursor < plan.residual_steps.size() && plan.residual_steps[residual_cursor] == s) {
      ++residual_cursor;
      for (std::size_t l = 1; l <= L; ++l) {
        const CylinderGeometry& g = plan.geometry[l];
        if (s < g.start_step) continue;
        for (std::size_t node = 0; node < nodes; ++node)
          if (g.mask[node]) scratch[node] = ul_next[l][node] - ul_next[l - 1][node];
        for (const std::uint32_t node : g.interior) {
          const double step_change = (ul[l][node] - ul[l - 1][node]) - scratch[node];
          const double predicted = frozen_stepper.homogeneous_increment(scratch, node, s, path);
          rec.residual = std::max(rec.residual, std::abs(step_change - predicted));
          rec.residual_scale = std::max(rec.residual_scale, std::abs(step_change));
        }
      }
    }
  }
  on_state(top);
  for (std::size_t l = 0; l <= L; ++l) rec.J2[l] = J_count[l] ? rec.J2[l] / static_cast<double>(J_count[l]) : 0.0;
  if (keep_final) {
    rec.final_levels = ul;
    rec.final_base = u;
  }
  return rec;
}

struct CascadeLevel {
  std::size_t level = 0;
  double radius_nominal = 0.0;
  double radius_effective = 0.0;
  std::size_t start_step = 0;
  std::size_t interior_per_axis = 0;
  double J = 0.0;
  double J_std_error = 0.0;
  /// I_{ℓ,1}, I_{ℓ,2}: sup over the Q^{ℓ+2} lattice of ‖D^m(u^ℓ - u^{ℓ+1})‖_{L^p}; absent at ℓ = L.
  std::optional<double> I1;
  std::optional<double> I2;
  double omega = 0.0;  // measured ω(r_ℓ)
  std::optional<double> ratio_m1;
  std::optional<double> ratio_m2;
  double center_gap_l2 = 0.0;  // ‖u^ℓ_xx - u_xx‖_{L²} at (x_c, t_top)
  double center_gap_lp = 0.0;
};

struct DecompositionValues {
  SpaceTimePoint y;
  std::size_t level = 0;
  double delta = 0.0;
  double I1 = 0.0;  // ‖u^ℓ_xx(Y) - u^ℓ_xx(0)‖
  double I2 = 0.0;  // ‖u^ℓ_xx(0) - u_xx(0)‖
  double I3 = 0.0;  // ‖u^ℓ_xx(Y) - u_xx(Y)‖
  double total = 0.0;  // ‖u_xx(Y) - u_xx(0)‖
};

struct CascadeReport {
  CascadeConfig config;
  SpaceTimeGrid grid;
  double p = 2.0;
  std::vector<CascadeLevel> levels;
  DiniModulus omega;
  std::vector<std::size_t> tried_points;
  bool truncated = false;
  std::string note;
  double homogeneous_residual = 0.0;
  double homogeneous_scale = 0.0;
  std::vector<DecompositionValues> decomposition;
  /// Per sample: D²u^ℓ and D²u at (x_c, t_top).
  std::vector<std::vector<std::vector<double>>> center_xx;
  std::vector<std::vector<double>> base_center_xx;
  std::vector<std::vector<double>> final_levels;
  std::vector<double> final_base;

  std::size_t deepest() const { return levels.empty() ? 0 : levels.size() - 1; }
};

/// Solves every level for cfg.samples paths (paths sample_path(·, cfg.seed, i))
/// and reduces the per-sample records in index order.
inline CascadeReport run_cascade(const ProblemSpec& spec, const CascadeConfig& cfg) {
  const CascadePlan plan = plan_cascade(spec, cfg);
  const SpaceTimeGrid& grid = plan.grid;
  const std::size_t L = plan.levels;
  const double p = spec.holder.p;

  std::vector<CascadeSample> records(cfg.samples);
  parallel_for(cfg.samples, cfg.workers, [&](std::size_t i) {
    const WienerPath path = sample_path(plan.spec.noise_config(grid.n_steps()), cfg.seed, i);
    records[i] = run_cascade_sample(plan, path, cfg.keep_final_states && i == 0);
  });

  CascadeReport report;
  report.config = cfg;
  report.grid = grid;
  report.p = p;
  report.tried_points = plan.tried_points;
  report.truncated = plan.truncated;
  report.note = plan.note;

  // measured Dini modulus of the data
  {
    const std::vector<std::size_t> steps = step_lattice(0, plan.top_step, cfg.data_time_levels);
    const DataEnsembles data = sample_data(plan.spec, grid, cfg.seed, cfg.samples, steps, cfg.workers);
    std::vector<double> radii = grid_radii(grid, std::min(1.0, grid.length() / 2.0));
    for (std::size_t l = 0; l <= L + 1; ++l) radii.push_back(cfg.radius(l));
    std::sort(radii.begin(), radii.end(), std::greater<>());
    radii.erase(std::unique(radii.begin(), radii.end(),
                            [](double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(a, b); }),
                radii.end());
    report.omega = dini_modulus(data.f, data.g, radii, p, cfg.workers);
  }
  auto omega_at = [&](double r) {
    for (std::size_t k = 0; k < report.omega.radii.size(); ++k)
      if (std::abs(report.omega.radii[k] - r) <= 1e-12 * r) return report.omega.omega[k];
    throw InconsistencyError("cascade: radius missing from the modulus table");
  };

  for (std::size_t l = 0; l <= L; ++l) {
    CascadeLevel lv;
    const CylinderGeometry& g = plan.geometry[l];
    lv.level = l;
    lv.radius_nominal = cfg.radius(l);
    lv.radius_effective = g.radius_effective;
    lv.start_step = g.start_step;
    lv.interior_per_axis = g.interior_per_axis;
    std::vector<double> mags(cfg.samples);
    for (std::size_t i = 0; i < cfg.samples; ++i) mags[i] = std::sqrt(records[i].J2[l]);
    const MomentEstimate J = lp_moment(mags, p);
    lv.J = J.value;
    lv.J_std_error = J.std_error;
    lv.omega = omega_at(lv.radius_nominal);
    if (l < L) {
      const std::size_t count = records.front().probe2[l].size();
      double best1 = 0.0, best2 = 0.0;
      std::vector<double> v1(cfg.samples), v2(cfg.samples);
      for (std::size_t k = 0; k < count; ++k) {
        for (std::size_t i = 0; i < cfg.samples; ++i) {
          v1[i] = records[i].probe1[l][k];
          v2[i] = records[i].probe2[l][k];
        }
        best1 = std::max(best1, lp_moment(v1, p).value);
        best2 = std::max(best2, lp_moment(v2, p).value);
      }
      lv.I1 = best1;
      lv.I2 = best2;
      if (lv.omega > 0.0) {
        lv.ratio_m1 = best1 / (lv.radius_nominal * lv.omega);
        lv.ratio_m2 = best2 / lv.omega;
      }
    }
    std::vector<std::vector<double>> a(cfg.samples), b(cfg.samples);
    for (std::size_t i = 0; i < cfg.samples; ++i) {
      a[i] = records[i].center_xx[l];
      b[i] = records[i].base_center_xx;
    }
    lv.center_gap_l2 = detail::lp_gap(a, b, 2.0);
    lv.center_gap_lp = detail::lp_gap(a, b, p);
    report.levels.push_back(lv);
  }

  for (std::size_t k = 0; k < plan.decomposition.size(); ++k) {
    const auto& d = plan.decomposition[k];
    DecompositionValues dv;
    dv.y = SpaceTimePoint{grid.coordinates(d.node), grid.time(d.step)};
    dv.level = d.level;
    dv.delta = d.delta;
    std::vector<std::vector<double>> lvY(cfg.samples), lv0(cfg.samples), uY(cfg.samples), u0(cfg.samples);
    for (std::size_t i = 0; i < cfg.samples; ++i) {
      lvY[i] = records[i].decomp_level_xx[k];
      lv0[i] = records[i].center_xx[d.level];
      uY[i] = records[i].decomp_base_xx[k];
      u0[i] = records[i].base_center_xx;
    }
    dv.I1 = detail::lp_gap(lvY, lv0, p);
    dv.I2 = detail::lp_gap(lv0, u0, p);
    dv.I3 = detail::lp_gap(lvY, uY, p);
    dv.total = detail::lp_gap(uY, u0, p);
    report.decomposition.push_back(dv);
  }

  for (const CascadeSample& r : records) {
    report.homogeneous_residual = std::max(report.homogeneous_residual, r.residual);
    report.homogeneous_scale = std::max(report.homogeneous_scale, r.residual_scale);
    report.center_xx.push_back(r.center_xx);
    report.base_center_xx.push_back(r.base_center_xx);
  }
  if (cfg.keep_final_states) {
    report.final_levels = records.front().final_levels;
    report.final_base = records.front().final_base;
  }
  return report;
}

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const CascadeReport& r) {
  nlohmann::json levels = nlohmann::json::array();
  for (const CascadeLevel& l : r.levels)
    levels.push_back({{"level", l.level},
                      {"radius_nominal", l.radius_nominal},
                      {"radius_effective", l.radius_effective},
                      {"start_time", r.grid.time(l.start_step)},
                      {"interior_per_axis", l.interior_per_axis},
                      {"J", l.J},
                      {"J_std_error", l.J_std_error},
                      {"I_1", optional_json(l.I1)},
                      {"I_2", optional_json(l.I2)},
                      {"omega", l.omega},
                      {"ratio_claim2_m1", optional_json(l.ratio_m1)},
                      {"ratio_claim2_m2", optional_json(l.ratio_m2)},
                      {"center_gap_l2", l.center_gap_l2},
                      {"center_gap_lp", l.center_gap_lp}});
  nlohmann::json decomposition = nlohmann::json::array();
  for (const DecompositionValues& d : r.decomposition)
    decomposition.push_back({{"x", d.y.x}, {"t", d.y.t}, {"level", d.level}, {"delta", d.delta},
                             {"I1", d.I1}, {"I2", d.I2}, {"I3", d.I3}, {"total", d.total}});
  return nlohmann::json{
      {"rho", r.config.rho},
      {"samples", r.config.samples},
      {"seed", r.config.seed},
      {"p", r.p},
      {"grid", {{"points", r.grid.points()}, {"n_steps", r.grid.n_steps()}, {"h", r.grid.h()}, {"dt", r.grid.dt()}}},
      {"tried_points", r.tried_points},
      {"truncated", r.truncated},
      {"note", r.note},
      {"levels", levels},
      {"omega", {{"r", r.omega.radii}, {"omega", r.omega.omega}}},
      {"homogeneous_residual", r.homogeneous_residual},
      {"homogeneous_scale", r.homogeneous_scale},
      {"decomposition", decomposition},
      {"bound_kind", "grid lower bound"}};
}

/// level,J,I_1,I_2,ratio_claim2_m1,ratio_claim2_m2 (empty cells where undefined).
inline void write_csv(const CascadeReport& r, std::ostream& out) {
  out << "level,J,I_1,I_2,ratio_claim2_m1,ratio_claim2_m2\n";
  char buf[48];
  auto cell = [&](const std::optional<double>& v) {
    if (!v) return std::string(",");
    std::snprintf(buf, sizeof buf, ",%.17g", *v);
    return std::string(buf);
  };
  for (const CascadeLevel& l : r.levels) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g", l.level, l.J);
    out << buf << cell(l.I1) << cell(l.I2) << cell(l.ratio_m1) << cell(l.ratio_m2) << '\n';
  }
}

// Claim 2 --------------------------------------------------------------------------

struct Claim2Result {
  std::vector<std::size_t> levels;
  std::vector<double> ratio_m1;
  std::vector<double> ratio_m2;
  double spread_m1 = 0.0;  // max / median
  double spread_m2 = 0.0;
  /// Slope of log J_ℓ against log of the effective radius, and the exponent it is compared with.
  double j_slope = 0.0;
  double alpha_eff = 0.0;
  bool bounded = false;     // both spreads within the threshold
  bool slope_pass = false;
  bool trivial = false;
  bool pass = false;        // bounded and slope_pass
};

/// r_{ℓ,m} = I_{ℓ,m} / (r_ℓ^{2-m} ω(r_ℓ)) for ℓ in [first, last] (clipped to
/// levels where I exists). `declared` replaces the measured ω.
inline Claim2Result check_claim2_decay(const CascadeReport& report, std::size_t first = 1,
                                       std::size_t last = std::numeric_limits<std::size_t>::max(),
                                       double threshold = 10.0, const DiniModulus* declared = nullptr,
                                       double zero_tolerance = 1e-9, double slope_tolerance = 0.3) {
  if (report.levels.size() < 3) throw ArgumentError("check_claim2_decay: need at least 3 levels");
  last = std::min(last, report.deepest() - 1);
  if (first > last) throw ArgumentError("check_claim2_decay: empty level range");
  auto omega_of = [&](const CascadeLevel& l) {
    if (!declared) return l.omega;
    const detail::ModulusEval eval{*declared, 1.0};
    return eval(l.radius_nominal);
  };
  Claim2Result res;
  bool all_zero = true;
  std::vector<double> log_r, log_J, log_w, log_rn;
  for (std::size_t l = first; l <= last; ++l) {
    const CascadeLevel& lv = report.levels[l];
    const double w = omega_of(lv);
    const double i1 = lv.I1.value_or(0.0), i2 = lv.I2.value_or(0.0);
    if (i1 > zero_tolerance || i2 > zero_tolerance) all_zero = false;
    if (w <= 0.0) {
      if (i1 > zero_tolerance || i2 > zero_tolerance)
        throw InconsistencyError("check_claim2_decay: omega(r) = 0 at level " + std::to_string(l) +
                                 " but the level difference is nonzero");
      continue;
    }
    res.levels.push_back(l);
    res.ratio_m1.push_back(i1 / (lv.radius_nominal * w));
    res.ratio_m2.push_back(i2 / w);
    if (lv.J > 0.0) {
      log_r.push_back(std::log(lv.radius_effective));
      log_J.push_back(std::log(lv.J));
    }
    log_rn.push_back(std::log(lv.radius_nominal));
    log_w.push_back(std::log(w));
  }
  res.trivial = all_zero;
  if (all_zero) {
    res.pass = res.bounded = res.slope_pass = true;
    return res;
  }
  auto spread = [](const std::vector<double>& v) {
    const double med = detail::median(v);
    const double mx = *std::max_element(v.begin(), v.end());
    return med > 0.0 ? mx / med : std::numeric_limits<double>::infinity();
  };
  res.spread_m1 = spread(res.ratio_m1);
  res.spread_m2 = spread(res.ratio_m2);
  res.j_slope = fit_slope(log_r, log_J);
  res.alpha_eff = fit_slope(log_rn, log_w);
  res.slope_pass = std::abs(res.j_slope - (2.0 + res.alpha_eff)) <= slope_tolerance;
  res.bounded = res.spread_m1 <= threshold && res.spread_m2 <= threshold;
  res.pass = res.bounded && res.slope_pass;
  return res;
}

// Claim 3 --------------------------------------------------------------------------

struct Claim3Result {
  std::vector<std::size_t> levels;
  std::vector<double> tails;      // Σ_{j>=ℓ} I_{j,2}, geometric remainder included
  std::vector<double> dini;       // ∫_0^{r_ℓ} ω(r)/r dr
  std::vector<double> constants;  // tails / dini
  double remainder = 0.0;         // extrapolated Σ_{j>=L} I_{j,2}
  double constant_spread = 0.0;   // max / min of the fitted constants
  double constant_median = 0.0;
  double gap_deepest = 0.0;       // ‖u^L_xx - u_xx‖_{L²} at the center
  double tail_bound = 0.0;        // median constant x ∫_0^{r_L} ω/r
  bool diverging = false;
  bool trivial = false;
  bool spread_pass = false;
  bool gap_pass = false;
  bool pass = false;
  std::string trace;
};

inline Claim3Result check_convergence_uxx(const CascadeReport& report, std::size_t first = 1,
                                          double spread_threshold = 3.0, double gap_factor = 2.0,
                                          double zero_tolerance = 1e-9) {
  if (report.levels.size() < 3) throw ArgumentError("check_convergence_uxx: need at least 3 levels");
  const std::size_t L = report.deepest();
  Claim3Result res;
  std::vector<double> I2;
  for (std::size_t l = 0; l < L; ++l) I2.push_back(report.levels[l].I2.value_or(0.0));
  res.gap_deepest = report.levels[L].center_gap_l2;
  char buf[96];
  for (std::size_t l = 0; l < L; ++l) {
    std::snprintf(buf, sizeof buf, "l=%zu I2=%.6g gap=%.6g; ", l, I2[l], report.levels[l].center_gap_l2);
    res.trace += buf;
  }
  if (std::all_of(I2.begin(), I2.end(), [&](double v) { return v <= zero_tolerance; }) &&
      res.gap_deepest <= zero_tolerance) {
    res.trivial = res.spread_pass = res.gap_pass = res.pass = true;
    return res;
  }
  if (L >= 3) res.diverging = I2[L - 1] >= I2[L - 2] && I2[L - 2] >= I2[L - 3];
  if (L >= 2 && I2[L - 2] > 0.0) {
    const double q = I2[L - 1] / I2[L - 2];
    if (q < 1.0) res.remainder = I2[L - 1] * q / (1.0 - q);
  }
  for (std::size_t l = first; l < L; ++l) {
    double tail = res.remainder;
    for (std::size_t j = l; j < L; ++j) tail += I2[j];
    const double d = dini_integrals(report.omega, std::min(1.0, report.levels[l].radius_nominal)).small;
    res.levels.push_back(l);
    res.tails.push_back(tail);
    res.dini.push_back(d);
    res.constants.push_back(d > 0.0 ? tail / d : std::numeric_limits<double>::infinity());
  }
  if (res.constants.empty()) throw ArgumentError("check_convergence_uxx: empty level range");
  const double mx = *std::max_element(res.constants.begin(), res.constants.end());
  const double mn = *std::min_element(res.constants.begin(), res.constants.end());
  res.constant_spread = mn > 0.0 ? mx / mn : std::numeric_limits<double>::infinity();
  res.constant_median = detail::median(res.constants);
  res.tail_bound = res.constant_median * dini_integrals(report.omega, report.levels[L].radius_nominal).small;
  res.spread_pass = res.constant_spread <= spread_threshold;
  res.gap_pass = res.gap_deepest <= gap_factor * res.tail_bound;
  res.pass = res.spread_pass && res.gap_pass && !res.diverging;
  return res;
}

// Pointwise Dini bound for u_xx ----------------------------------------------------

struct LemmaConfig {
  /// Q_1: center, top time and radius (radius 1 by default).
  Cylinder base{{0.0}, 1.0, 1.0};
  /// Pairs are drawn in Q_{pair_radius} with the same top.
  double pair_radius = 0.25;
  std::size_t pairs = 100;
  std::size_t samples = 16;
  std::size_t points = 256;
  double c_stab = 0.5;
  /// Time levels of Q_1 used for M_1 and of sampled data used for ω.
  std::size_t sup_time_levels = 32;
  std::size_t data_time_levels = 16;
  std::uint64_t seed = 1;
  std::uint64_t pair_seed = 7;
  double threshold = 10.0;
  double slope_tolerance = 0.3;
  unsigned workers = 0;
};

struct LemmaPair {
  SpaceTimePoint x;
  SpaceTimePoint y;
  double delta = 0.0;
  double lhs = 0.0;
  double m1_term = 0.0;  // δ M_1
  double small = 0.0;    // ∫_0^δ ω/r
  double large = 0.0;    // δ ∫_δ^1 ω/r²
  double rhs = 0.0;
  double ratio = 0.0;
};

struct LemmaReport {
  std::vector<LemmaPair> pairs;
  double u_sup = 0.0;
  double f_sup = 0.0;
  double g_sup = 0.0;
  double gx_sup = 0.0;
  double M1 = 0.0;
  double max_ratio = 0.0;
  double median_ratio = 0.0;
  double spread = 0.0;
  double slope = 0.0;
  bool pass = false;
  DiniModulus omega;
  SpaceTimeGrid grid;
};

/// Grid points (node, step) of `count` random pairs in Q_{pair_radius}: X uniform,
/// Y at a log-uniform parabolic scale in a random space-time direction. Pairs
/// leaving the cylinder or collapsing to X = Y are redrawn.
inline std::vector<std::pair<SpaceTimePoint, SpaceTimePoint>> random_lemma_pairs(const SpaceTimeGrid& grid,
                                                                                   const LemmaConfig& cfg) {
  const Cylinder q{cfg.base.center_x, cfg.base.center_t, cfg.pair_radius};
  const CylinderGeometry geo = resolve_cylinder(grid, q, false);
  std::vector<std::uint32_t> nodes = geo.interior;
  std::mt19937_64 rng(cfg.pair_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double s_min = 2.0 * grid.h();
  const double s_max = cfg.pair_radius;
  const std::size_t center = grid.nearest_node(q.center_x);
  auto inside = [&](std::size_t node, double step) {
    return step > static_cast<double>(geo.start_step) && step <= static_cast<double>(geo.top_step) &&
           geo.mask[node] == 1 && grid.torus_distance(center, node) < q.radius - 1e-9 * grid.h() &&
           grid.time(static_cast<std::size_t>(step)) > q.start_time() + 1e-12;
  };
  std::vector<std::pair<SpaceTimePoint, SpaceTimePoint>> out;
  std::size_t attempts = 0;
  while (out.size() < cfg.pairs) {
    if (++attempts > 1000 * cfg.pairs) throw ResolutionError("random_lemma_pairs: cannot place pairs in the cylinder");
    const std::size_t xn = nodes[static_cast<std::size_t>(unit(rng) * static_cast<double>(nodes.size())) % nodes.size()];
    const double xs = std::floor(static_cast<double>(geo.start_step) + 1.0 +
                                 unit(rng) * static_cast<double>(geo.top_step - geo.start_step));
    const double scale = s_min * std::exp(unit(rng) * std::log(s_max / s_min));
    const double theta = unit(rng) * 0.5 * std::numbers::pi;
    const double sign_x = unit(rng) < 0.5 ? -1.0 : 1.0;
    const double sign_t = unit(rng) < 0.5 ? -1.0 : 1.0;
    std::vector<double> yx = grid.coordinates(xn);
    yx[0] += sign_x * scale * std::cos(theta);
    for (std::size_t i = 1; i < grid.dim(); ++i) yx[i] += (unit(rng) - 0.5) * scale * std::cos(theta);
    const std::size_t yn = grid.nearest_node(yx);
    const double tdist = std::pow(scale * std::sin(theta), 2.0);
    const double ys = std::round(std::min(xs + sign_t * tdist / grid.dt(), static_cast<double>(geo.top_step)));
    if (!inside(xn, xs) || !inside(yn, ys)) continue;
    if (yn == xn && ys == xs) continue;
    out.emplace_back(SpaceTimePoint{grid.coordinates(xn), grid.time(static_cast<std::size_t>(xs))},
                     SpaceTimePoint{grid.coordinates(yn), grid.time(static_cast<std::size_t>(ys))});
  }
  return out;
}

/// Certified grid for a lemma check on `spec` (horizon set to the top of Q_1).
inline SpaceTimeGrid lemma_grid(const ProblemSpec& spec, const LemmaConfig& cfg) {
  ProblemSpec s = spec;
  s.horizon = cfg.base.center_t;
  return make_certified_grid(s, cfg.points, cfg.c_stab);
}

/// Ratios ‖u_xx(X) - u_xx(Y)‖_{L^p} / (δ M_1 + ∫_0^δ ω/r + δ ∫_δ^1 ω/r²) over
/// the given pairs (grid points of lemma_grid). `declared` replaces the measured ω.
inline LemmaReport dini_lemma_check(const ProblemSpec& spec, const LemmaConfig& cfg,
                                    const std::vector<std::pair<SpaceTimePoint, SpaceTimePoint>>& pairs,
                                    const DiniModulus* declared = nullptr) {
  spec.validate();
  if (!spec.is_model_equation())
    throw StructuralError("dini_lemma_check: needs the model equation (a, sigma independent of x; b, c, nu zero)");
  if (cfg.samples < 2) throw ArgumentError("dini_lemma_check: need at least 2 samples");
  ProblemSpec s = spec;
  s.horizon = cfg.base.center_t;
  const SpaceTimeGrid grid = lemma_grid(spec, cfg);
  const double p = spec.holder.p;
  const std::size_t n = grid.dim();
  const Cylinder q{cfg.base.center_x, cfg.base.center_t, cfg.pair_radius};
  const Cylinder q1 = cfg.base;
  const CylinderGeometry geo1 = resolve_cylinder(grid, q1, false);
  const std::size_t top = geo1.top_step;
  const double tol = 1e-9 * grid.h();

  // probe points for u_xx: pair endpoints, snapped
  struct Probe {
    std::size_t step;
    std::size_t node;
  };
  std::vector<Probe> probes;
  auto snap = [&](const SpaceTimePoint& X) {
    const std::size_t node = grid.nearest_node(X.x);
    const double st = std::round(X.t / grid.dt());
    const SpaceTimePoint c{q.center_x, q.center_t};
    const double dx = grid.torus_distance(grid.nearest_node(c.x), node);
    if (st < 0.0 || st > static_cast<double>(top) || dx >= q.radius - tol ||
        grid.time(static_cast<std::size_t>(st)) <= q.start_time() + 1e-12)
      throw DomainError("dini_lemma_check: pair point outside Q_{1/4}");
    return Probe{static_cast<std::size_t>(st), node};
  };
  for (const auto& [X, Y] : pairs) {
    probes.push_back(snap(X));
    probes.push_back(snap(Y));
  }
  std::vector<std::size_t> order(probes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probes[a].step < probes[b].step; });

  const std::vector<std::size_t> sup_steps = step_lattice(geo1.start_step + 1, top, cfg.sup_time_levels);
  std::vector<std::uint32_t> ball;
  for (std::size_t node = 0; node < grid.nodes(); ++node)
    if (geo1.mask[node] == 1) ball.push_back(static_cast<std::uint32_t>(node));
  const std::vector<MultiIndex> second = multi_indices(n, 2);

  struct Record {
    std::vector<std::vector<double>> xx;  // per probe
    std::vector<double> u;                // |u| on the Q_1 lattice
  };
  std::vector<Record> records(cfg.samples);
  parallel_for(cfg.samples, cfg.workers, [&](std::size_t i) {
    const WienerPath path = sample_path(s.noise_config(grid.n_steps()), cfg.seed, i);
    Record& rec = records[i];
    rec.xx.resize(probes.size());
    std::size_t cursor = 0, sup_cursor = 0;
    SolveOptions opt;
    opt.save_every = 0;
    opt.observer = [&](std::size_t step, std::span<const double> u) {
      while (cursor < order.size() && probes[order[cursor]].step == step) {
        detail::append_hessian(u, grid, second, probes[order[cursor]].node, rec.xx[order[cursor]]);
        ++cursor;
      }
      if (sup_cursor < sup_steps.size() && sup_steps[sup_cursor] == step) {
        ++sup_cursor;
        for (const std::uint32_t node : ball) rec.u.push_back(std::abs(u[node]));
      }
    };
    solve_realization(s, path, grid, opt);
  });

  LemmaReport report;
  report.grid = grid;
  // M_1 = |u|_0 + |f|_0 + |g|_0 + |g_x|_0 over the Q_1 lattice
  {
    std::vector<double> v(cfg.samples);
    for (std::size_t k = 0; k < records.front().u.size(); ++k) {
      for (std::size_t i = 0; i < cfg.samples; ++i) v[i] = records[i].u[k];
      report.u_sup = std::max(report.u_sup, lp_moment(v, p).value);
    }
    const DataEnsembles data = sample_data(s, grid, cfg.seed, cfg.samples, sup_steps, cfg.workers);
    Region region;
    region.node_mask.assign(grid.nodes(), 0);
    for (const std::uint32_t node : ball) region.node_mask[node] = 1;
    PairScanOptions scan;
    scan.workers = cfg.workers;
    report.f_sup = holder_norm_x(data.f, 0, 0.5, p, region, scan).sup_part;
    const HolderReport g0 = holder_norm_x(data.g, 0, 0.5, p, region, scan);
    report.g_sup = g0.sup_part;
    double gx = 0.0;
    for (const MultiIndex& beta : multi_indices(n, 1))
      for (const GridPoint& pt : detail::region_points(data.g.front(), region)) {
        std::vector<double> mags(cfg.samples);
        for (std::size_t i = 0; i < cfg.samples; ++i) {
          double sq = 0.0;
          for (std::size_t c = 0; c < data.g.components(); ++c) {
            const double d = derivative_at(data.g.members[i].slice(pt.level), data.g.components(), grid, beta, pt.node, c);
            sq += d * d;
          }
          mags[i] = std::sqrt(sq);
        }
        gx = std::max(gx, lp_moment(mags, p).value);
      }
    report.gx_sup = gx;
    report.M1 = report.u_sup + report.f_sup + report.g_sup + report.gx_sup;
  }
  if (declared) {
    report.omega = *declared;
  } else {
    const std::vector<std::size_t> steps = step_lattice(0, top, cfg.data_time_levels);
    const DataEnsembles data = sample_data(s, grid, cfg.seed, cfg.samples, steps, cfg.workers);
    report.omega = dini_modulus(data.f, data.g, grid_radii(grid, std::min(1.0, grid.length() / 2.0)), p, cfg.workers);
  }

  std::vector<double> ratios, log_delta, log_ratio;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    LemmaPair lp;
    const Probe a = probes[2 * k], b = probes[2 * k + 1];
    lp.x = SpaceTimePoint{grid.coordinates(a.node), grid.time(a.step)};
    lp.y = SpaceTimePoint{grid.coordinates(b.node), grid.time(b.step)};
    lp.delta = grid.torus_distance(a.node, b.node) + std::sqrt(std::abs(lp.x.t - lp.y.t));
    std::vector<std::vector<double>> xa(cfg.samples), xb(cfg.samples);
    for (std::size_t i = 0; i < cfg.samples; ++i) {
      xa[i] = records[i].xx[2 * k];
      xb[i] = records[i].xx[2 * k + 1];
    }
    lp.lhs = detail::lp_gap(xa, xb, p);
    if (lp.delta > 0.0) {
      const DiniIntegrals ints = dini_integrals(report.omega, std::min(1.0, lp.delta));
      lp.m1_term = lp.delta * report.M1;
      lp.small = ints.small;
      lp.large = ints.large;
      lp.rhs = lp.m1_term + lp.small + lp.large;
      lp.ratio = lp.rhs > 0.0 ? lp.lhs / lp.rhs : (lp.lhs > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
      ratios.push_back(lp.ratio);
      if (lp.ratio > 0.0 && std::isfinite(lp.ratio)) {
        log_delta.push_back(std::log(lp.delta));
        log_ratio.push_back(std::log(lp.ratio));
      }
    }
    report.pairs.push_back(lp);
  }
  if (ratios.empty() || std::all_of(ratios.begin(), ratios.end(), [](double r) { return r == 0.0; })) {
    report.pass = true;
    return report;
  }
  report.max_ratio = *std::max_element(ratios.begin(), ratios.end());
  report.median_ratio = detail::median(ratios);
  report.spread = report.median_ratio > 0.0 ? report.max_ratio / report.median_ratio
                                            : std::numeric_limits<double>::infinity();
  report.slope = log_delta.size() >= 2 ? fit_slope(log_delta, log_ratio) : 0.0;
  report.pass = report.spread <= cfg.threshold && std::abs(report.slope) <= cfg.slope_tolerance;
  return report;
}

inline nlohmann::json to_json(const LemmaReport& r) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const LemmaPair& p : r.pairs)
    pairs.push_back({{"X", {{"x", p.x.x}, {"t", p.x.t}}}, {"Y", {{"x", p.y.x}, {"t", p.y.t}}}, {"delta", p.delta},
                     {"lhs", p.lhs}, {"m1_term", p.m1_term}, {"dini_small", p.small}, {"dini_large", p.large},
                     {"rhs", p.rhs}, {"ratio", p.ratio}});
  return nlohmann::json{{"M1", r.M1},           {"u_sup", r.u_sup},   {"f_sup", r.f_sup},
                        {"g_sup", r.g_sup},     {"gx_sup", r.gx_sup}, {"max_ratio", r.max_ratio},
                        {"median_ratio", r.median_ratio}, {"spread", r.spread}, {"slope", r.slope},
                        {"pass", r.pass},       {"pairs", pairs},     {"bound_kind", "grid lower bound"}};
}

// Local energy estimate -------------------------------------------------------------

struct EnergyConfig {
  std::vector<double> radii{0.5, 0.25, 0.125};
  std::vector<double> center_x{0.0};
  std::size_t samples = 64;
  std::size_t points = 128;
  double c_stab = 0.5;
  std::uint64_t seed = 1;
  double threshold = 10.0;
  unsigned workers = 0;
};

struct EnergyRow {
  double r = 0.0;
  double u_norm = 0.0;  // ‖u‖_{L^p(Ω; L²(Q_r))}
  double u_std_error = 0.0;
  double data_norm = 0.0;
  double ratio = 0.0;
  bool vacuous = false;
};

struct EnergyFamily {
  std::vector<EnergyRow> rows;
  double spread = 0.0;  // max / min over non-vacuous rows
  bool vacuous = false;
  bool pass = false;
};

struct EnergyReport {
  EnergyFamily f;  // ρ_f(r) = ‖u‖ / (r² ‖f‖), g = 0
  EnergyFamily g;  // ρ_g(r) = ‖u‖ / (r ‖g‖), f = 0
  bool pass = false;
};

namespace detail {

/// One ratio family: u solved with zero initial data on the torus; norms over
/// Q_r = B_r(x_c) x (0, r²] by the nodal rule in space and trapezoid in time.
inline EnergyFamily energy_family(const ProblemSpec& spec, const EnergyConfig& cfg, bool forcing_f) {
  ProblemSpec s = spec;
  double r_max = 0.0;
  for (double r : cfg.radii) r_max = std::max(r_max, r);
  s.horizon = r_max * r_max;
  const SpaceTimeGrid grid = make_certified_grid(s, cfg.points, cfg.c_stab);
  const double h = grid.h();
  const double cell = std::pow(h, static_cast<double>(grid.dim()));
  const std::size_t center = grid.nearest_node(cfg.center_x);
  const CoefficientField& data = forcing_f ? s.f : s.g;
  const std::size_t R = cfg.radii.size();

  std::vector<std::size_t> last_step(R);
  std::vector<std::vector<std::uint32_t>> balls(R);
  for (std::size_t k = 0; k < R; ++k) {
    const double r = cfg.radii[k];
    if (!(r > 0.0)) throw ArgumentError("energy check: radii must be positive");
    last_step[k] = static_cast<std::size_t>(std::llround(r * r / grid.dt()));
    if (last_step[k] < 2) throw ResolutionError("energy check: radius below the time resolution");
    for (std::size_t node = 0; node < grid.nodes(); ++node)
      if (grid.torus_distance(center, node) < r - 1e-9 * h) balls[k].push_back(static_cast<std::uint32_t>(node));
    if (balls[k].size() < 2) throw ResolutionError("energy check: ball contains fewer than 2 nodes");
  }

  struct Sums {
    std::vector<double> u2, d2;
  };
  std::vector<Sums> sums(cfg.samples);
  parallel_for(cfg.samples, cfg.workers, [&](std::size_t i) {
    const WienerPath path = sample_path(s.noise_config(grid.n_steps()), cfg.seed, i);
    Sums& out = sums[i];
    out.u2.assign(R, 0.0);
    out.d2.assign(R, 0.0);
    std::vector<double> value(data.size());
    SolveOptions opt;
    opt.save_every = 0;
    opt.observer = [&](std::size_t step, std::span<const double> u) {
      const PathView w = restrict_to_step(path, step);
      const double t = grid.time(step);
      for (std::size_t k = 0; k < R; ++k) {
        if (step > last_step[k]) continue;
        const double weight = (step == 0 || step == last_step[k]) ? 0.5 : 1.0;
        double su = 0.0, sd = 0.0;
        for (const std::uint32_t node : balls[k]) {
          su += u[node] * u[node];
          data.evaluate(grid.coordinates(node), t, w, value);
          for (double v : value) sd += v * v;
        }
        out.u2[k] += weight * su * cell * grid.dt();
        out.d2[k] += weight * sd * cell * grid.dt();
      }
    };
    solve_realization(s, path, grid, opt);
  });

  EnergyFamily fam;
  std::vector<double> ratios;
  for (std::size_t k = 0; k < R; ++k) {
    EnergyRow row;
    row.r = cfg.radii[k];
    std::vector<double> mu(cfg.samples), md(cfg.samples);
    for (std::size_t i = 0; i < cfg.samples; ++i) {
      mu[i] = std::sqrt(sums[i].u2[k]);
      md[i] = std::sqrt(sums[i].d2[k]);
    }
    const double p = spec.holder.p;
    const MomentEstimate u = lp_moment(mu, p);
    row.u_norm = u.value;
    row.u_std_error = u.std_error;
    row.data_norm = lp_moment(md, p).value;
    const double scale = forcing_f ? row.r * row.r : row.r;
    if (row.data_norm == 0.0) {
      if (row.u_norm > 0.0) throw InconsistencyError("energy check: zero data with nonzero solution");
      row.vacuous = true;
    } else {
      row.ratio = row.u_norm / (scale * row.data_norm);
      ratios.push_back(row.ratio);
    }
    fam.rows.push_back(row);
  }
  fam.vacuous = ratios.empty();
  if (fam.vacuous) {
    fam.pass = true;
    return fam;
  }
  const double mx = *std::max_element(ratios.begin(), ratios.end());
  const double mn = *std::min_element(ratios.begin(), ratios.end());
  fam.spread = mn > 0.0 ? mx / mn : std::numeric_limits<double>::infinity();
  fam.pass = fam.spread <= cfg.threshold;
  return fam;
}

}  // namespace detail

/// ρ_f(r) with g switched off and ρ_g(r) with f switched off.
inline EnergyReport energy_estimate_check(const ProblemSpec& spec, const EnergyConfig& cfg) {
  spec.validate();
  if (cfg.center_x.size() != spec.dim) throw ArgumentError("energy check: center has wrong dimension");
  if (cfg.samples < 2) throw ArgumentError("energy check: need at least 2 samples");
  ProblemSpec only_f = spec;
  only_f.g = CoefficientField::zero(spec.modes, 1);
  ProblemSpec only_g = spec;
  only_g.f = CoefficientField::zero(1, 1);
  EnergyReport report;
  report.f = detail::energy_family(only_f, cfg, true);
  report.g = detail::energy_family(only_g, cfg, false);
  report.pass = report.f.pass && report.g.pass;
  return report;
}

inline nlohmann::json to_json(const EnergyFamily& fam) {
  nlohmann::json rows = nlohmann::json::array();
  for (const EnergyRow& r : fam.rows)
    rows.push_back({{"r", r.r}, {"u_norm", r.u_norm}, {"u_std_error", r.u_std_error}, {"data_norm", r.data_norm},
                    {"ratio", r.ratio}, {"vacuous", r.vacuous}});
  return nlohmann::json{{"rows", rows}, {"spread", fam.spread}, {"vacuous", fam.vacuous}, {"pass", fam.pass}};
}

inline nlohmann::json to_json(const EnergyReport& r) {
  return nlohmann::json{{"rho_f", to_json(r.f)}, {"rho_g", to_json(r.g)}, {"pass", r.pass}};
}

}  // namespace spdelab
