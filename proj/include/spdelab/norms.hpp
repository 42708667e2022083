#pragma once

// L^p(Ω) moment norms, L^p-valued Hölder seminorms (spatial and parabolic),
// Dini moduli and their integrals, and the localized sup M^τ_{x,r}.
//
// Every supremum is taken over grid points, so reported seminorms are grid
// lower bounds of their continuum counterparts.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "spdelab/errors.hpp"
#include "spdelab/model.hpp"
#include "spdelab/parallel.hpp"
#include "spdelab/solver.hpp"

namespace spdelab {

struct MomentEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
};

/// ((1/N) Σ |v_i|^p)^{1/p} with a leave-one-out jackknife standard error.
inline MomentEstimate lp_moment(std::span<const double> magnitudes, double p) {
  const std::size_t n = magnitudes.size();
  if (n == 0) throw ArgumentError("lp_moment: empty ensemble");
  if (!(p >= 1.0)) throw ArgumentError("lp_moment: p must be >= 1");
  std::vector<double> powered(n);
  for (std::size_t i = 0; i < n; ++i) powered[i] = std::pow(std::abs(magnitudes[i]), p);
  const double total = pairwise_sum(powered);
  MomentEstimate est;
  est.samples = n;
  est.value = std::pow(total / static_cast<double>(n), 1.0 / p);
  if (n < 2) return est;
  std::vector<double> loo(n);
  for (std::size_t i = 0; i < n; ++i)
    loo[i] = std::pow(std::max(0.0, total - powered[i]) / static_cast<double>(n - 1), 1.0 / p);
  const double mean = pairwise_mean(loo);
  for (double& v : loo) v = (v - mean) * (v - mean);
  est.std_error = std::sqrt(static_cast<double>(n - 1) / static_cast<double>(n) * pairwise_sum(loo));
  return est;
}

namespace detail {

inline void require_ensemble(const Ensemble& ens) {
  if (ens.members.empty()) throw ArgumentError("norm estimator: empty ensemble");
  ens.validate();
}

/// |D^β u_i(level, node)| (Euclidean over components) for every member i.
inline std::vector<double> member_magnitudes(const Ensemble& ens, const MultiIndex& beta, std::size_t level,
                                             std::size_t node) {
  std::vector<double> out(ens.size());
  const std::size_t C = ens.components();
  for (std::size_t i = 0; i < ens.size(); ++i) {
    double sq = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double v = derivative_at(ens.members[i].slice(level), C, ens.grid(), beta, node, c);
      sq += v * v;
    }
    out[i] = std::sqrt(sq);
  }
  return out;
}

}  // namespace detail

/// L^p(Ω) norm of D^β u at a grid point (level index into the saved steps).
inline MomentEstimate lp_norm_point(const Ensemble& ens, const MultiIndex& beta, std::size_t level, std::size_t node,
                                    double p) {
  if (ens.members.empty()) throw ArgumentError("lp_norm_point: empty ensemble");
  if (ens.size() < 2) throw ArgumentError("lp_norm_point: need N >= 2 samples");
  detail::require_ensemble(ens);
  if (level >= ens.front().levels() || node >= ens.grid().nodes())
    throw ArgumentError("lp_norm_point: point not on the grid");
  return lp_moment(detail::member_magnitudes(ens, beta, level, node), p);
}

/// Set of grid points (saved level, node) over which a norm is taken.
struct Region {
  /// Nodes included; empty means every node.
  std::vector<std::uint8_t> node_mask;
  double t_min = -std::numeric_limits<double>::infinity();
  double t_max = std::numeric_limits<double>::infinity();

  static Region full() { return {}; }
  static Region time_window(double t0, double t1) {
    Region r;
    r.t_min = t0;
    r.t_max = t1;
    return r;
  }
};

/// Nodes with |x - x_c| <= r (torus distance) and times in [t_c - r², t_c].
inline Region cylinder_region(const SpaceTimeGrid& grid, const Cylinder& cyl) {
  Region region;
  region.node_mask.assign(grid.nodes(), 0);
  const std::size_t center = grid.nearest_node(cyl.center_x);
  const double tol = 1e-9 * grid.h();
  for (std::size_t node = 0; node < grid.nodes(); ++node)
    region.node_mask[node] = grid.torus_distance(center, node) <= cyl.radius + tol;
  region.t_min = cyl.center_t - cyl.radius * cyl.radius - 1e-12;
  region.t_max = cyl.center_t + 1e-12;
  return region;
}

struct GridPoint {
  std::size_t level = 0;
  std::size_t node = 0;
};

namespace detail {

inline std::vector<GridPoint> region_points(const GridSolution& layout, const Region& region) {
  std::vector<GridPoint> points;
  for (std::size_t level = 0; level < layout.levels(); ++level) {
    const double t = layout.time(level);
    if (t < region.t_min || t > region.t_max) continue;
    for (std::size_t node = 0; node < layout.grid.nodes(); ++node)
      if (region.node_mask.empty() || region.node_mask[node]) points.push_back({level, node});
  }
  return points;
}

/// Sample-major table of D^β u at the given points: [(point * N + i) * C + c].
struct SampleTable {
  std::size_t samples = 0;
  std::size_t components = 0;
  std::vector<double> values;

  std::span<const double> at(std::size_t point) const {
    return std::span<const double>(values).subspan(point * samples * components, samples * components);
  }
};

inline SampleTable build_table(const Ensemble& ens, const MultiIndex& beta, std::span<const GridPoint> points,
                               unsigned workers) {
  SampleTable table;
  table.samples = ens.size();
  table.components = ens.components();
  table.values.resize(points.size() * table.samples * table.components);
  const std::size_t C = table.components;
  const std::size_t N = table.samples;
  parallel_for(points.size(), workers, [&](std::size_t k) {
    const GridPoint& pt = points[k];
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t c = 0; c < C; ++c)
        table.values[(k * N + i) * C + c] =
            derivative_at(ens.members[i].slice(pt.level), C, ens.grid(), beta, pt.node, c);
  });
  return table;
}

/// ‖u(X) - u(Y)‖_{L^p} from two sample rows.
inline double lp_difference(std::span<const double> a, std::span<const double> b, std::size_t C, double p,
                            std::vector<double>& scratch) {
  const std::size_t N = a.size() / C;
  scratch.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    double sq = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double d = a[i * C + c] - b[i * C + c];
      sq += d * d;
    }
    scratch[i] = p == 2.0 ? sq : std::pow(sq, 0.5 * p);
  }
  const double mean = pairwise_mean(scratch);
  return p == 2.0 ? std::sqrt(mean) : std::pow(mean, 1.0 / p);
}

inline double lp_value(std::span<const double> a, std::size_t C, double p, std::vector<double>& scratch) {
  const std::size_t N = a.size() / C;
  scratch.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    double sq = 0.0;
    for (std::size_t c = 0; c < C; ++c) sq += a[i * C + c] * a[i * C + c];
    scratch[i] = std::pow(sq, 0.5 * p);
  }
  return std::pow(pairwise_mean(scratch), 1.0 / p);
}

}  // namespace detail

/// A pair (or single point for the sup part) attaining a reported supremum.
struct Witness {
  GridPoint x;
  GridPoint y;
  MultiIndex beta;
  double value = 0.0;
  double distance = 0.0;
  bool valid = false;
};

inline constexpr std::size_t kDefaultPairBudget = 1'000'000;

struct PairScanOptions {
  std::size_t budget = kDefaultPairBudget;
  std::uint64_t seed = 0x9A1C0DEull;
  unsigned workers = 0;
};

struct HolderReport {
  double sup_part = 0.0;
  double seminorm_x = 0.0;
  double seminorm_parabolic = 0.0;
  Witness sup_witness;
  Witness x_witness;
  Witness parabolic_witness;
  std::size_t pair_count = 0;
  std::size_t parabolic_pair_count = 0;
  bool subsampled = false;
  std::uint64_t pair_seed = 0;
  std::size_t pair_budget = kDefaultPairBudget;
  std::size_t samples = 0;
  HolderParams params;
  /// Sup over spatial pairs is the spatial seminorm; together with the sup part this gives the norm.
  double norm_x() const { return sup_part + seminorm_x; }
  double norm_parabolic() const { return sup_part + seminorm_parabolic; }
};

inline nlohmann::json to_json(const Witness& w, const SpaceTimeGrid& grid, const GridSolution& layout) {
  auto point = [&](const GridPoint& p) {
    return nlohmann::json{{"t", layout.time(p.level)}, {"x", grid.coordinates(p.node)}, {"node", p.node}};
  };
  return nlohmann::json{{"valid", w.valid}, {"X", point(w.x)},          {"Y", point(w.y)},
                        {"beta", w.beta},   {"value", w.value},         {"distance", w.distance}};
}

inline nlohmann::json to_json(const HolderReport& r, const GridSolution& layout) {
  return nlohmann::json{
      {"sup_part", r.sup_part},
      {"seminorm_x", r.seminorm_x},
      {"seminorm_parabolic", r.seminorm_parabolic},
      {"bound_kind", "grid lower bound"},
      {"witnesses",
       {{"sup", to_json(r.sup_witness, layout.grid, layout)},
        {"x", to_json(r.x_witness, layout.grid, layout)},
        {"parabolic", to_json(r.parabolic_witness, layout.grid, layout)}}},
      {"pair_count", r.pair_count},
      {"parabolic_pair_count", r.parabolic_pair_count},
      {"subsampled", r.subsampled},
      {"pair_seed", r.pair_seed},
      {"pair_budget", r.pair_budget},
      {"samples", r.samples},
      {"params", {{"alpha", r.params.alpha}, {"p", r.params.p}, {"m", r.params.m}}}};
}

namespace detail {

struct PairResult {
  double value = 0.0;
  std::size_t a = 0;
  std::size_t b = 0;
  bool valid = false;
};

inline bool better(const PairResult& cand, const PairResult& best) {
  return cand.valid && (!best.valid || cand.value > best.value);
}

/// Parabolic or spatial distance between two region points.
inline double point_distance(const GridSolution& layout, const GridPoint& X, const GridPoint& Y, bool parabolic) {
  const double dx = layout.grid.torus_distance(X.node, Y.node);
  if (!parabolic) return dx;
  return dx + std::sqrt(std::abs(layout.time(X.level) - layout.time(Y.level)));
}

/// Candidate pairs when the full scan exceeds the budget: stratified by offset
/// class (integer spatial displacement and, for parabolic scans, level lag).
inline std::vector<std::pair<std::size_t, std::size_t>> stratified_pairs(const GridSolution& layout,
                                                                         std::span<const GridPoint> points,
                                                                         bool parabolic, std::size_t budget,
                                                                         std::uint64_t seed) {
  const SpaceTimeGrid& grid = layout.grid;
  const std::size_t n = grid.dim();
  // index of points by (level, node)
  std::vector<std::size_t> first_level_point(layout.levels() + 1, points.size());
  std::vector<std::int64_t> lookup(layout.levels() * grid.nodes(), -1);
  std::size_t lvl_lo = layout.levels(), lvl_hi = 0;
  for (std::size_t k = 0; k < points.size(); ++k) {
    lookup[points[k].level * grid.nodes() + points[k].node] = static_cast<std::int64_t>(k);
    lvl_lo = std::min(lvl_lo, points[k].level);
    lvl_hi = std::max(lvl_hi, points[k].level);
  }
  // spatial extent of the region per axis (in cells, capped at half the torus)
  std::vector<long> extent(n, 0);
  {
    std::vector<long> lo(n, std::numeric_limits<long>::max()), hi(n, std::numeric_limits<long>::min());
    for (const GridPoint& p : points)
      for (std::size_t i = 0; i < n; ++i) {
        const long v = static_cast<long>(grid.index(p.node, i));
        lo[i] = std::min(lo[i], v);
        hi[i] = std::max(hi[i], v);
      }
    for (std::size_t i = 0; i < n; ++i) extent[i] = std::min<long>(hi[i] - lo[i], static_cast<long>(grid.points()) / 2);
  }
  struct OffsetClass {
    std::vector<long> d;
    std::size_t lag;
  };
  std::vector<OffsetClass> classes;
  const std::size_t max_lag = parabolic ? lvl_hi - lvl_lo : 0;
  std::vector<long> d(n);
  for (std::size_t lag = 0; lag <= max_lag; ++lag) {
    for (std::size_t i = 0; i < n; ++i) d[i] = -extent[i];
    for (;;) {
      // canonical sign: lag > 0 any d, lag == 0 lexicographically positive d
      bool keep = lag > 0;
      if (lag == 0)
        for (std::size_t i = n; i-- > 0;)
          if (d[i] != 0) {
            keep = d[i] > 0;
            break;
          }
      if (keep) classes.push_back({d, lag});
      std::size_t axis = 0;
      while (axis < n && ++d[axis] > extent[axis]) {
        d[axis] = -extent[axis];
        ++axis;
      }
      if (axis == n) break;
    }
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> chosen(classes.size());
  for (std::size_t i = 0; i < chosen.size(); ++i) chosen[i] = i;
  std::size_t quota = 1;
  if (classes.size() > budget) {
    std::shuffle(chosen.begin(), chosen.end(), rng);
    chosen.resize(budget);
    std::sort(chosen.begin(), chosen.end());
  } else if (!classes.empty()) {
    quota = budget / classes.size();
  }
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(chosen.size() * quota);
  std::uniform_int_distribution<std::size_t> pick(0, points.empty() ? 0 : points.size() - 1);
  std::vector<long> idx(n);
  for (std::size_t c : chosen) {
    const OffsetClass& cls = classes[c];
    std::size_t found = 0;
    for (std::size_t attempt = 0; attempt < 4 * quota + 8 && found < quota; ++attempt) {
      const std::size_t a = pick(rng);
      const GridPoint& X = points[a];
      const std::size_t level_y = X.level + cls.lag;
      if (level_y >= layout.levels()) continue;
      for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<long>(grid.index(X.node, i)) + cls.d[i];
      const std::int64_t b = lookup[level_y * grid.nodes() + grid.node_of(idx)];
      if (b < 0 || static_cast<std::size_t>(b) == a) continue;
      pairs.emplace_back(a, static_cast<std::size_t>(b));
      ++found;
    }
  }
  return pairs;
}

inline PairResult scan_pairs(const GridSolution& layout, std::span<const GridPoint> points, const SampleTable& table,
                             double alpha, double p, bool parabolic, const PairScanOptions& options,
                             std::size_t& pair_count, bool& subsampled) {
  const std::size_t P = points.size();
  // full pair count
  std::size_t total = 0;
  std::vector<std::size_t> level_start;
  if (parabolic) {
    total = P * (P - 1) / 2;
  } else {
    for (std::size_t k = 0; k < P; ++k)
      if (k == 0 || points[k].level != points[k - 1].level) level_start.push_back(k);
    level_start.push_back(P);
    for (std::size_t s = 0; s + 1 < level_start.size(); ++s) {
      const std::size_t K = level_start[s + 1] - level_start[s];
      total += K * (K - 1) / 2;
    }
  }
  const std::size_t C = table.components;
  auto quotient = [&](std::size_t a, std::size_t b, std::vector<double>& scratch) {
    const double dist = point_distance(layout, points[a], points[b], parabolic);
    if (dist <= 0.0) return PairResult{};
    const double diff = lp_difference(table.at(a), table.at(b), C, p, scratch);
    return PairResult{diff / std::pow(dist, alpha), a, b, true};
  };

  if (total <= options.budget) {
    subsampled = false;
    pair_count = total;
    std::vector<PairResult> best(P);
    parallel_for(P, options.workers, [&](std::size_t a) {
      std::vector<double> scratch;
      std::size_t end = P;
      if (!parabolic) end = *std::upper_bound(level_start.begin(), level_start.end(), a);
      for (std::size_t b = a + 1; b < end; ++b) {
        const PairResult r = quotient(a, b, scratch);
        if (better(r, best[a])) best[a] = r;
      }
    });
    PairResult out;
    for (const PairResult& r : best)
      if (better(r, out)) out = r;
    return out;
  }

  subsampled = true;
  const auto pairs = stratified_pairs(layout, points, parabolic, options.budget, options.seed);
  pair_count = pairs.size();
  const std::size_t chunk = 4096;
  const std::size_t chunks = (pairs.size() + chunk - 1) / chunk;
  std::vector<PairResult> best(chunks);
  parallel_for(chunks, options.workers, [&](std::size_t c) {
    std::vector<double> scratch;
    for (std::size_t k = c * chunk; k < std::min(pairs.size(), (c + 1) * chunk); ++k) {
      const PairResult r = quotient(pairs[k].first, pairs[k].second, scratch);
      if (better(r, best[c])) best[c] = r;
    }
  });
  PairResult out;
  for (const PairResult& r : best)
    if (better(r, out)) out = r;
  return out;
}

inline HolderReport holder_norm(const Ensemble& ens, int m, double alpha, double p, const Region& region,
                                bool parabolic, const PairScanOptions& options) {
  require_ensemble(ens);
  if (m < 0) throw ArgumentError("holder norm: m must be nonnegative");
  if (m > 2) throw ArgumentError("holder norm: unsupported order m > 2");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ArgumentError("holder norm: alpha must lie in (0, 1]");
  const GridSolution& layout = ens.front();
  const std::vector<GridPoint> points = region_points(layout, region);
  {
    std::vector<std::uint8_t> seen(layout.grid.nodes(), 0);
    std::size_t distinct = 0;
    std::size_t levels = 0;
    std::size_t last_level = std::numeric_limits<std::size_t>::max();
    for (const GridPoint& pt : points) {
      distinct += seen[pt.node] ? 0 : 1;
      seen[pt.node] = 1;
      if (pt.level != last_level) ++levels;
      last_level = pt.level;
    }
    if (distinct < 2) throw DomainError("holder norm: degenerate region (fewer than 2 spatial nodes)");
    if (parabolic && levels < 2) throw DomainError("holder norm: parabolic region needs at least 2 time levels");
  }

  HolderReport report;
  report.params = HolderParams{alpha, p, m};
  report.samples = ens.size();
  report.pair_budget = options.budget;
  report.pair_seed = options.seed;

  std::vector<double> scratch;
  for (int k = 0; k <= m; ++k) {
    for (const MultiIndex& beta : multi_indices(layout.grid.dim(), k)) {
      const SampleTable table = build_table(ens, beta, points, options.workers);
      for (std::size_t a = 0; a < points.size(); ++a) {
        const double v = lp_value(table.at(a), table.components, p, scratch);
        if (!report.sup_witness.valid || v > report.sup_part) {
          report.sup_part = v;
          report.sup_witness = Witness{points[a], points[a], beta, v, 0.0, true};
        }
      }
      if (k != m) continue;
      std::size_t count = 0;
      bool subsampled = false;
      const PairResult spatial = scan_pairs(layout, points, table, alpha, p, false, options, count, subsampled);
      report.pair_count += count;
      report.subsampled = report.subsampled || subsampled;
      if (spatial.valid && (!report.x_witness.valid || spatial.value > report.seminorm_x)) {
        report.seminorm_x = spatial.value;
        report.x_witness = Witness{points[spatial.a], points[spatial.b], beta, spatial.value,
                                   point_distance(layout, points[spatial.a], points[spatial.b], false), true};
      }
      if (!parabolic) continue;
      const PairResult para = scan_pairs(layout, points, table, alpha, p, true, options, count, subsampled);
      report.parabolic_pair_count += count;
      report.subsampled = report.subsampled || subsampled;
      // same-time pairs are parabolic pairs too; under subsampling the two scans draw different pairs
      const PairResult& best = spatial.valid && (!para.valid || spatial.value > para.value) ? spatial : para;
      if (best.valid && (!report.parabolic_witness.valid || best.value > report.seminorm_parabolic)) {
        report.seminorm_parabolic = best.value;
        report.parabolic_witness = Witness{points[best.a], points[best.b], beta, best.value,
                                           point_distance(layout, points[best.a], points[best.b], true), true};
      }
    }
  }
  return report;
}

}  // namespace detail

/// Spatial L^p-Hölder norm: sup over |β| <= m of ‖D^β u‖_{L^p} and the α-seminorm
/// of D^β u (|β| = m) over same-time spatial pairs.
inline HolderReport holder_norm_x(const Ensemble& ens, int m, double alpha, double p = 2.0,
                                  const Region& region = Region::full(), const PairScanOptions& options = {}) {
  return detail::holder_norm(ens, m, alpha, p, region, false, options);
}

/// As holder_norm_x, plus the seminorm over all space-time pairs in the
/// parabolic distance |x - y| + |t - s|^{1/2}.
inline HolderReport parabolic_holder_norm(const Ensemble& ens, int m, double alpha, double p = 2.0,
                                          const Region& region = Region::full(),
                                          const PairScanOptions& options = {}) {
  return detail::holder_norm(ens, m, alpha, p, region, true, options);
}

/// Recomputes the quotient of a witness pair directly from the ensemble.
inline double evaluate_witness(const Ensemble& ens, const Witness& w, double alpha, double p, bool parabolic) {
  const GridSolution& layout = ens.front();
  const std::vector<double> a = [&] {
    std::vector<double> v;
    for (const GridSolution& member : ens.members)
      for (std::size_t c = 0; c < ens.components(); ++c)
        v.push_back(derivative_at(member.slice(w.x.level), ens.components(), ens.grid(), w.beta, w.x.node, c));
    return v;
  }();
  if (w.x.level == w.y.level && w.x.node == w.y.node) {
    std::vector<double> scratch;
    return detail::lp_value(a, ens.components(), p, scratch);
  }
  std::vector<double> b;
  for (const GridSolution& member : ens.members)
    for (std::size_t c = 0; c < ens.components(); ++c)
      b.push_back(derivative_at(member.slice(w.y.level), ens.components(), ens.grid(), w.beta, w.y.node, c));
  std::vector<double> scratch;
  const double diff = detail::lp_difference(a, b, ens.components(), p, scratch);
  return diff / std::pow(detail::point_distance(layout, w.x, w.y, parabolic), alpha);
}

/// Tabulated modulus of continuity: radii strictly decreasing, omega nondecreasing in r.
struct DiniModulus {
  std::vector<double> radii;
  std::vector<double> omega;

  void validate() const {
    if (radii.size() != omega.size() || radii.empty()) throw ArgumentError("DiniModulus: radii/omega size mismatch");
    for (std::size_t i = 0; i < radii.size(); ++i) {
      if (!(radii[i] > 0.0)) throw ArgumentError("DiniModulus: radii must be positive");
      if (!(omega[i] >= 0.0)) throw ArgumentError("DiniModulus: omega must be nonnegative");
      if (i > 0 && !(radii[i] < radii[i - 1])) throw ArgumentError("DiniModulus: radii must be strictly decreasing");
      if (i > 0 && omega[i] > omega[i - 1]) throw InconsistencyError("DiniModulus: omega is not monotone in r");
    }
  }

  /// Modulus tabulated from a closed form (declared rather than measured).
  template <class Fn>
  static DiniModulus from_function(std::vector<double> radii, Fn&& fn) {
    DiniModulus mod;
    mod.radii = std::move(radii);
    for (double r : mod.radii) mod.omega.push_back(fn(r));
    mod.validate();
    return mod;
  }
};

inline void write_csv(const DiniModulus& mod, std::ostream& out) {
  out << "r,omega\n";
  char buf[64];
  for (std::size_t i = 0; i < mod.radii.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", mod.radii[i], mod.omega[i]);
    out << buf;
  }
}

/// `count` log-spaced radii between r_min and r_max, strictly decreasing.
inline std::vector<double> log_radii(double r_min, double r_max, std::size_t count) {
  if (!(r_min > 0.0) || !(r_max > r_min) || count < 2) throw ArgumentError("log_radii: need 0 < r_min < r_max, count >= 2");
  std::vector<double> radii(count);
  const double ratio = std::log(r_max / r_min);
  for (std::size_t i = 0; i < count; ++i)
    radii[i] = r_max * std::exp(-ratio * static_cast<double>(i) / static_cast<double>(count - 1));
  radii.back() = r_min;
  return radii;
}

/// Radii k h for distinct integers k, roughly log-spaced from h to r_max, decreasing.
inline std::vector<double> grid_radii(const SpaceTimeGrid& grid, double r_max, std::size_t count = 48) {
  const double h = grid.h();
  const auto k_max = static_cast<long>(std::floor(r_max / h + 1e-9));
  if (k_max < 1) throw ArgumentError("grid_radii: r_max below the grid spacing");
  std::vector<long> ks;
  for (std::size_t i = 0; i < count; ++i) {
    const double frac = count == 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(count - 1);
    ks.push_back(std::lround(std::pow(static_cast<double>(k_max), frac)));
  }
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  std::vector<double> radii;
  for (auto it = ks.rbegin(); it != ks.rend(); ++it) radii.push_back(static_cast<double>(*it) * h);
  return radii;
}

/// ω(r) = sup_{t, |x - y| <= r} ‖f(x) - f(y)‖_{L^p} + ‖g_x(x) - g_x(y)‖_{L^p} on the
/// grid. f and g are sampled-data ensembles (g with one component per mode);
/// g_x uses centered differences. Radii are rounded down to grid offsets.
inline DiniModulus dini_modulus(const Ensemble& f, const Ensemble& g, std::vector<double> radii, double p = 2.0,
                                unsigned workers = 0) {
  detail::require_ensemble(f);
  detail::require_ensemble(g);
  if (!f.grid().same_shape(g.grid()) || f.front().steps != g.front().steps || f.size() != g.size())
    throw ArgumentError("dini_modulus: f and g ensembles differ in layout");
  if (radii.empty()) throw ArgumentError("dini_modulus: no radii");
  for (std::size_t i = 1; i < radii.size(); ++i)
    if (!(radii[i] < radii[i - 1])) throw ArgumentError("dini_modulus: radii must be strictly decreasing");
  const SpaceTimeGrid& grid = f.grid();
  const std::size_t n = grid.dim();
  const double h = grid.h();
  const GridSolution& layout = f.front();
  std::vector<GridPoint> points;
  for (std::size_t level = 0; level < layout.levels(); ++level)
    for (std::size_t node = 0; node < grid.nodes(); ++node) points.push_back({level, node});
  const std::size_t N = f.size();

  const detail::SampleTable ftab = detail::build_table(f, MultiIndex(n, 0), points, workers);
  // g_x: n x M components stacked per point
  const std::size_t Mg = g.components();
  detail::SampleTable gtab;
  gtab.samples = N;
  gtab.components = n * Mg;
  gtab.values.assign(points.size() * N * n * Mg, 0.0);
  for (std::size_t axis = 0; axis < n; ++axis) {
    MultiIndex e(n, 0);
    e[axis] = 1;
    const detail::SampleTable part = detail::build_table(g, e, points, workers);
    for (std::size_t k = 0; k < points.size(); ++k)
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t c = 0; c < Mg; ++c)
          gtab.values[(k * N + i) * n * Mg + axis * Mg + c] = part.values[(k * N + i) * Mg + c];
  }
  // offsets up to the largest radius (canonical sign), distance-tagged
  const auto k_max = static_cast<long>(std::min<double>(std::floor(radii.front() / h + 1e-9),
                                                        static_cast<double>(grid.points() / 2)));
  struct Offset {
    std::vector<long> d;
    double dist;
  };
  std::vector<Offset> offsets;
  std::vector<long> d(n, -k_max);
  for (;;) {
    long sq = 0;
    bool positive = false;
    for (std::size_t i = n; i-- > 0;)
      if (d[i] != 0) {
        positive = d[i] > 0;
        break;
      }
    for (long v : d) sq += v * v;
    const double dist = std::sqrt(static_cast<double>(sq)) * h;
    if (positive && dist <= radii.front() + 1e-9 * h) offsets.push_back({d, dist});
    std::size_t axis = 0;
    while (axis < n && ++d[axis] > k_max) d[axis++] = -k_max;
    if (axis == n) break;
  }
  std::vector<double> D(offsets.size(), 0.0);
  parallel_for(offsets.size(), workers, [&](std::size_t o) {
    std::vector<double> scratch;
    std::vector<long> idx(n);
    double best = 0.0;
    for (std::size_t k = 0; k < points.size(); ++k) {
      const GridPoint& X = points[k];
      for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<long>(grid.index(X.node, i)) + offsets[o].d[i];
      const std::size_t y = X.level * grid.nodes() + grid.node_of(idx);
      const double v = detail::lp_difference(ftab.at(k), ftab.at(y), ftab.components, p, scratch) +
                       detail::lp_difference(gtab.at(k), gtab.at(y), gtab.components, p, scratch);
      best = std::max(best, v);
    }
    D[o] = best;
  });
  DiniModulus mod;
  mod.radii = std::move(radii);
  for (double r : mod.radii) {
    double w = 0.0;
    for (std::size_t o = 0; o < offsets.size(); ++o)
      if (offsets[o].dist <= r + 1e-9 * h) w = std::max(w, D[o]);
    mod.omega.push_back(w);
  }
  for (std::size_t i = 1; i < mod.omega.size(); ++i)
    if (mod.omega[i] > mod.omega[i - 1]) throw InconsistencyError("dini_modulus: internal monotonicity violation");
  return mod;
}

struct DiniIntegrals {
  double small = 0.0;  // ∫_0^δ ω(r)/r dr
  double large = 0.0;  // δ ∫_δ^1 ω(r)/r² dr
  /// Exponent of the power law ω(r) ∝ r^κ used below the smallest radius.
  double tail_exponent = 0.0;
  /// The fitted exponent was below kMinTailExponent and got raised to it.
  bool tail_clamped = false;
};

inline constexpr double kMinTailExponent = 0.05;

namespace detail {

/// ω at r: power law below the table, constant above it, linear in log r between nodes.
struct ModulusEval {
  const DiniModulus& mod;
  double kappa;

  double operator()(double r) const {
    const auto& R = mod.radii;
    const auto& W = mod.omega;
    if (r >= R.front()) return W.front();
    if (r <= R.back()) return W.back() * std::pow(r / R.back(), kappa);
    std::size_t i = 1;
    while (R[i] > r) ++i;
    const double s = (std::log(r) - std::log(R[i])) / (std::log(R[i - 1]) - std::log(R[i]));
    return W[i] + s * (W[i - 1] - W[i]);
  }
};

/// ∫_{lo}^{hi} ω(r) r^{-q} dr (q = 1 or 2) for r_min <= lo < hi, trapezoid in log r
/// over the tabulated radii plus the endpoints; beyond the table ω is constant.
inline double log_trapezoid(const ModulusEval& w, double lo, double hi, int q) {
  if (!(hi > lo)) return 0.0;
  std::vector<double> nodes{lo, hi};
  for (double r : w.mod.radii)
    if (r > lo && r < hi) nodes.push_back(r);
  std::sort(nodes.begin(), nodes.end());
  const double r_top = w.mod.radii.front();
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
    const double a = nodes[i], b = nodes[i + 1];
    if (a >= r_top) {
      // constant ω: exact
      total += q == 1 ? w.mod.omega.front() * std::log(b / a) : w.mod.omega.front() * (1.0 / a - 1.0 / b);
      continue;
    }
    // refine each interval so the log step is at most 0.05
    const double span = std::log(b / a);
    const auto pieces = static_cast<std::size_t>(std::max(1.0, std::ceil(span / 0.05)));
    for (std::size_t k = 0; k < pieces; ++k) {
      const double s0 = std::log(a) + span * static_cast<double>(k) / static_cast<double>(pieces);
      const double s1 = std::log(a) + span * static_cast<double>(k + 1) / static_cast<double>(pieces);
      const double f0 = w(std::exp(s0)) * std::exp((1 - q) * s0);
      const double f1 = w(std::exp(s1)) * std::exp((1 - q) * s1);
      total += 0.5 * (f0 + f1) * (s1 - s0);
    }
  }
  return total;
}

}  // namespace detail

/// I_small = ∫_0^δ ω(r)/r dr and I_large = δ ∫_δ^1 ω(r)/r² dr. Below the smallest
/// tabulated radius ω is extended by the power law through the two smallest radii.
inline DiniIntegrals dini_integrals(const DiniModulus& mod, double delta) {
  if (!(delta > 0.0 && delta <= 1.0)) throw ArgumentError("dini_integrals: delta must lie in (0, 1]");
  mod.validate();
  DiniIntegrals out;
  const std::size_t n = mod.radii.size();
  const double r_min = mod.radii.back();
  const double w_min = mod.omega.back();
  double kappa = 1.0;
  if (n >= 2 && w_min > 0.0) {
    const double w2 = mod.omega[n - 2];
    kappa = std::log(w2 / w_min) / std::log(mod.radii[n - 2] / r_min);
  }
  if (w_min > 0.0 && !(kappa >= kMinTailExponent)) {
    kappa = kMinTailExponent;
    out.tail_clamped = true;
  }
  out.tail_exponent = kappa;
  const detail::ModulusEval w{mod, kappa};

  // ∫_0^δ ω/r: analytic power-law part below r_min
  if (delta <= r_min) {
    out.small = w_min > 0.0 ? w_min * std::pow(delta / r_min, kappa) / kappa : 0.0;
  } else {
    out.small = (w_min > 0.0 ? w_min / kappa : 0.0) + detail::log_trapezoid(w, r_min, delta, 1);
  }
  // δ ∫_δ^1 ω/r²
  double large = 0.0;
  double lo = delta;
  if (delta < r_min && w_min > 0.0) {
    // ∫_δ^{r_min} w_min (r/r_min)^κ r^{-2} dr
    const double e = kappa - 1.0;
    large += std::abs(e) < 1e-12 ? w_min / r_min * std::log(r_min / delta)
                                 : w_min * std::pow(r_min, -kappa) * (std::pow(r_min, e) - std::pow(delta, e)) / e;
    lo = r_min;
  } else if (delta < r_min) {
    lo = r_min;
  }
  large += detail::log_trapezoid(w, lo, 1.0, 2);
  out.large = delta * large;
  return out;
}

/// M^τ_{x,r}(u) = sup_{t <= τ} ( mean over nodes of B_r(x) of E|u(t, y)|^p )^{1/p}.
/// The standard error is the jackknife error at the maximizing level.
inline MomentEstimate localized_sup(const Ensemble& ens, std::span<const double> x, double r, double tau,
                                    double p = 2.0) {
  if (ens.members.empty()) throw ArgumentError("localized_sup: empty ensemble");
  detail::require_ensemble(ens);
  const GridSolution& layout = ens.front();
  const SpaceTimeGrid& grid = ens.grid();
  if (tau > grid.horizon() * (1.0 + 1e-12)) throw ArgumentError("localized_sup: tau exceeds the horizon");
  if (x.size() != grid.dim()) throw ArgumentError("localized_sup: dimension mismatch");
  const std::size_t center = grid.nearest_node(x);
  std::vector<std::size_t> ball;
  for (std::size_t node = 0; node < grid.nodes(); ++node)
    if (grid.torus_distance(center, node) < r + 1e-9 * grid.h()) ball.push_back(node);
  if (ball.empty()) throw ResolutionError("localized_sup: ball contains no grid node");
  const std::size_t C = ens.components();
  MomentEstimate best;
  bool any = false;
  std::vector<double> per_sample(ens.size());
  std::vector<double> per_node(ball.size());
  for (std::size_t level = 0; level < layout.levels(); ++level) {
    if (layout.time(level) > tau + 1e-12) continue;
    for (std::size_t i = 0; i < ens.size(); ++i) {
      const auto values = ens.members[i].slice(level);
      for (std::size_t k = 0; k < ball.size(); ++k) {
        double sq = 0.0;
        for (std::size_t c = 0; c < C; ++c) sq += values[ball[k] * C + c] * values[ball[k] * C + c];
        per_node[k] = std::pow(sq, 0.5 * p);
      }
      // (spatial mean of |u|^p)^{1/p} per sample, so the moment estimator applies unchanged
      per_sample[i] = std::pow(pairwise_mean(per_node), 1.0 / p);
    }
    const MomentEstimate est = lp_moment(per_sample, p);
    if (!any || est.value > best.value) best = est;
    any = true;
  }
  if (!any) throw ArgumentError("localized_sup: no saved level with t <= tau");
  return best;
}

}  // namespace spdelab
