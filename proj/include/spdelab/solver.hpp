#pragma once

// Explicit Euler-Maruyama / centered finite differences on the periodic torus,
// plus the Dirichlet sub-solver on parabolic cylinders.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <functional>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "spdelab/errors.hpp"
#include "spdelab/model.hpp"
#include "spdelab/noise.hpp"
#include "spdelab/parallel.hpp"

namespace spdelab {

inline constexpr std::size_t kMaxDim = 4;

struct StabilityCertificate {
  double dt_max = 0.0;
  double c_stab = 0.5;
  double sup_a = 0.0;
};

/// Uniform grid on [0, L)^n x [0, T].
class SpaceTimeGrid {
 public:
  SpaceTimeGrid() = default;
  SpaceTimeGrid(std::size_t dim, std::size_t points, double length, double horizon, std::size_t n_steps)
      : dim_(dim), points_(points), length_(length), horizon_(horizon), n_steps_(n_steps) {
    if (dim == 0 || dim > kMaxDim) throw ArgumentError("grid: dimension must lie in [1, 4]");
    if (points < 8) throw ArgumentError("grid: need at least 8 points per axis");
    if (!(length > 0.0) || !(horizon > 0.0)) throw ArgumentError("grid: length and horizon must be positive");
    if (n_steps == 0) throw ArgumentError("grid: n_steps must be >= 1");
    nodes_ = 1;
    for (std::size_t i = 0; i < dim; ++i) nodes_ *= points;
  }

  std::size_t dim() const { return dim_; }
  std::size_t points() const { return points_; }
  double length() const { return length_; }
  double horizon() const { return horizon_; }
  std::size_t n_steps() const { return n_steps_; }
  std::size_t nodes() const { return nodes_; }
  double h() const { return length_ / static_cast<double>(points_); }
  double dt() const { return horizon_ / static_cast<double>(n_steps_); }
  double time(std::size_t step) const { return horizon_ * static_cast<double>(step) / static_cast<double>(n_steps_); }

  std::size_t index(std::size_t node, std::size_t axis) const {
    for (std::size_t i = 0; i < axis; ++i) node /= points_;
    return node % points_;
  }
  std::size_t node_of(std::span<const long> idx) const {
    std::size_t node = 0;
    std::size_t stride = 1;
    const long n = static_cast<long>(points_);
    for (std::size_t i = 0; i < dim_; ++i) {
      const long wrapped = ((idx[i] % n) + n) % n;
      node += static_cast<std::size_t>(wrapped) * stride;
      stride *= points_;
    }
    return node;
  }
  std::vector<double> coordinates(std::size_t node) const {
    std::vector<double> x(dim_);
    for (std::size_t i = 0; i < dim_; ++i) {
      x[i] = static_cast<double>(node % points_) * h();
      node /= points_;
    }
    return x;
  }
  /// Nearest node to x (coordinates taken modulo L).
  std::size_t nearest_node(std::span<const double> x) const {
    std::vector<long> idx(dim_);
    for (std::size_t i = 0; i < dim_; ++i) idx[i] = std::lround(x[i] / h());
    return node_of(idx);
  }
  /// Minimal-image displacement y - x on the torus.
  std::vector<double> displacement(std::size_t from, std::size_t to) const {
    std::vector<double> d(dim_);
    const long n = static_cast<long>(points_);
    for (std::size_t i = 0; i < dim_; ++i) {
      long k = static_cast<long>(to % points_) - static_cast<long>(from % points_);
      k = ((k % n) + n) % n;
      if (2 * k > n) k -= n;
      d[i] = static_cast<double>(k) * h();
      from /= points_;
      to /= points_;
    }
    return d;
  }
  double torus_distance(std::size_t a, std::size_t b) const {
    double sq = 0.0;
    for (double v : displacement(a, b)) sq += v * v;
    return std::sqrt(sq);
  }

  const std::optional<StabilityCertificate>& certificate() const { return certificate_; }
  void attach(const StabilityCertificate& cert) {
    if (dt() > cert.dt_max * (1.0 + 1e-12)) throw ArgumentError("grid: dt exceeds the certified maximum");
    certificate_ = cert;
  }

  bool same_shape(const SpaceTimeGrid& other) const {
    return dim_ == other.dim_ && points_ == other.points_ && length_ == other.length_ &&
           horizon_ == other.horizon_ && n_steps_ == other.n_steps_;
  }

 private:
  std::size_t dim_ = 1;
  std::size_t points_ = 8;
  double length_ = 1.0;
  double horizon_ = 1.0;
  std::size_t n_steps_ = 1;
  std::size_t nodes_ = 8;
  std::optional<StabilityCertificate> certificate_;
};

struct StabilityReport {
  bool certified = false;
  double dt_max = 0.0;
  double sup_a = 0.0;
  double dt = 0.0;
  std::optional<StabilityCertificate> certificate;
};

namespace detail {

inline double spectral_norm(std::span<const double> a, std::size_t n) {
  if (n == 1) return std::abs(a[0]);
  Eigen::MatrixXd m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a[i * n + j];
  const auto ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m, Eigen::EigenvaluesOnly).eigenvalues();
  return std::max(std::abs(ev(0)), std::abs(ev(static_cast<Eigen::Index>(n) - 1)));
}

}  // namespace detail

/// Advisory CFL check: dt <= c_stab h^2 / (2 n sup|a|), with sup|a| (spectral
/// norm) taken over sampled nodes, five times in [0, T] and, when a reads the
/// noise, four reference paths.
inline StabilityReport stability_check(const ProblemSpec& spec, const SpaceTimeGrid& grid, double c_stab = 0.5) {
  if (!(c_stab > 0.0)) throw ArgumentError("stability_check: c_stab must be positive");
  const std::size_t n = spec.dim;
  std::vector<WienerPath> paths;
  if (spec.a.reads_path())
    for (std::uint64_t i = 0; i < 4; ++i) paths.push_back(sample_path(spec.noise_config(grid.n_steps()), 0x5EEDull, i));
  const std::size_t stride = std::max<std::size_t>(1, grid.nodes() / 1024);
  std::vector<double> a(n * n);
  double sup = 0.0;
  for (std::size_t node = 0; node < grid.nodes(); node += stride) {
    const std::vector<double> x = grid.coordinates(node);
    for (int q = 0; q <= 4; ++q) {
      const double t = grid.horizon() * q / 4.0;
      if (paths.empty()) {
        spec.a.evaluate(x, t, PathView(), a);
        sup = std::max(sup, detail::spectral_norm(a, n));
      } else {
        for (const WienerPath& path : paths) {
          spec.a.evaluate(x, t, restrict(path, t), a);
          sup = std::max(sup, detail::spectral_norm(a, n));
        }
      }
      if (!spec.a.varies_in_time() && !spec.a.reads_path()) break;
    }
    if (!spec.a.varies_in_space()) break;
  }
  StabilityReport report;
  report.sup_a = sup;
  report.dt = grid.dt();
  const double h = grid.h();
  report.dt_max = sup > 0.0 ? c_stab * h * h / (2.0 * static_cast<double>(n) * sup)
                            : std::numeric_limits<double>::infinity();
  report.certified = grid.dt() <= report.dt_max * (1.0 + 1e-12);
  if (report.certified) report.certificate = StabilityCertificate{report.dt_max, c_stab, sup};
  return report;
}

/// Grid with n_steps chosen from the stability bound (or given) and a certificate attached.
inline SpaceTimeGrid make_certified_grid(const ProblemSpec& spec, std::size_t points, double c_stab = 0.5,
                                         std::size_t n_steps = 0) {
  SpaceTimeGrid probe(spec.dim, points, spec.domain_length, spec.horizon, 1);
  const StabilityReport advisory = stability_check(spec, probe, c_stab);
  if (n_steps == 0) {
    n_steps = std::isfinite(advisory.dt_max)
                  ? static_cast<std::size_t>(std::ceil(spec.horizon / advisory.dt_max * (1.0 - 1e-12)))
                  : 1;
    n_steps = std::max<std::size_t>(n_steps, 1);
  }
  SpaceTimeGrid grid(spec.dim, points, spec.domain_length, spec.horizon, n_steps);
  const StabilityReport report = stability_check(spec, grid, c_stab);
  if (!report.certified)
    throw ArgumentError("make_certified_grid: dt=" + std::to_string(grid.dt()) + " exceeds dt_max=" +
                        std::to_string(report.dt_max));
  grid.attach(*report.certificate);
  return grid;
}

/// Grid values of one realization (or of any sampled field).
struct GridSolution {
  SpaceTimeGrid grid;
  std::size_t components = 1;
  std::vector<std::size_t> steps;
  std::vector<double> values;
  std::uint64_t master_seed = 0;
  std::uint64_t sample_index = 0;
  /// Nodes on which the values are defined by the producing solve; empty means all.
  std::vector<std::uint8_t> support;

  std::size_t levels() const { return steps.size(); }
  std::size_t level_size() const { return grid.nodes() * components; }
  double time(std::size_t level) const { return grid.time(steps[level]); }
  double& at(std::size_t level, std::size_t node, std::size_t comp = 0) {
    return values[(level * grid.nodes() + node) * components + comp];
  }
  double at(std::size_t level, std::size_t node, std::size_t comp = 0) const {
    return values[(level * grid.nodes() + node) * components + comp];
  }
  std::span<const double> slice(std::size_t level) const {
    return std::span<const double>(values).subspan(level * level_size(), level_size());
  }
  std::span<double> slice(std::size_t level) {
    return std::span<double>(values).subspan(level * level_size(), level_size());
  }
  std::optional<std::size_t> level_of_step(std::size_t step) const {
    auto it = std::lower_bound(steps.begin(), steps.end(), step);
    if (it == steps.end() || *it != step) return std::nullopt;
    return static_cast<std::size_t>(it - steps.begin());
  }
};

/// One explicit step of the scheme on a chosen node list. Holds coefficient
/// caches, so one Stepper per thread.
class Stepper {
 public:
  Stepper(const ProblemSpec& spec, const SpaceTimeGrid& grid) : spec_(&spec), grid_(grid) {
    spec.validate();
    if (spec.dim != grid.dim()) throw ArgumentError("Stepper: grid and problem dimensions differ");
    const std::size_t n = grid.dim();
    const std::size_t nodes = grid.nodes();
    plus_.assign(n, std::vector<std::uint32_t>(nodes));
    minus_.assign(n, std::vector<std::uint32_t>(nodes));
    std::size_t stride = 1;
    for (std::size_t axis = 0; axis < n; ++axis) {
      for (std::size_t node = 0; node < nodes; ++node) {
        const std::size_t i = (node / stride) % grid.points();
        const std::size_t base = node - i * stride;
        plus_[axis][node] = static_cast<std::uint32_t>(base + ((i + 1) % grid.points()) * stride);
        minus_[axis][node] = static_cast<std::uint32_t>(base + ((i + grid.points() - 1) % grid.points()) * stride);
      }
      stride *= grid.points();
    }
    coords_.resize(nodes * n);
    for (std::size_t node = 0; node < nodes; ++node) {
      const auto x = grid.coordinates(node);
      std::copy(x.begin(), x.end(), coords_.begin() + static_cast<std::ptrdiff_t>(node * n));
    }
    slots_ = {Slot{&spec.a}, Slot{&spec.b}, Slot{&spec.c}, Slot{&spec.sigma},
              Slot{&spec.nu}, Slot{&spec.f}, Slot{&spec.g}};
  }

  const SpaceTimeGrid& grid() const { return grid_; }
  const ProblemSpec& spec() const { return *spec_; }
  std::span<const std::uint32_t> plus(std::size_t axis) const { return plus_[axis]; }
  std::span<const std::uint32_t> minus(std::size_t axis) const { return minus_[axis]; }

  /// out[i] = u[i] + dt L u[i] + Σ_k S_k u[i] ΔW^k_step for every i in `nodes`,
  /// with coefficients evaluated at (x_i, t_step) against the path restricted to t_step.
  /// Returns max |out[i]| over the nodes; throws BlowUpError when non-finite or above threshold.
  double advance(std::span<const double> u, std::span<double> out, std::span<const std::uint32_t> nodes,
                 std::size_t step, const WienerPath& path, double blowup_threshold = 1e12) {
    prepare(step, nodes, path);
    const std::size_t n = grid_.dim();
    const std::size_t M = spec_->modes;
    const double dt = grid_.dt();
    const double h = grid_.h();
    const double inv_h2 = 1.0 / (h * h);
    const double inv_2h = 0.5 / h;
    const double inv_4h2 = 0.25 * inv_h2;
    dw_.resize(M);
    for (std::size_t k = 0; k < M; ++k) dw_[k] = path.increment(k, step);

    const Slot& A = slots_[0];
    const Slot& B = slots_[1];
    const Slot& C = slots_[2];
    const Slot& S = slots_[3];
    const Slot& NU = slots_[4];
    const Slot& F = slots_[5];
    const Slot& G = slots_[6];
    const bool need_d1 = !B.zero() || !S.zero();

    double max_abs = 0.0;
    std::array<double, kMaxDim> d1{};
    for (const std::uint32_t i : nodes) {
      const double ui = u[i];
      double drift = 0.0;
      const double* a = A.at(i);
      for (std::size_t p = 0; p < n; ++p) {
        const std::uint32_t ip = plus_[p][i];
        const std::uint32_t im = minus_[p][i];
        drift += a[p * n + p] * (u[ip] - 2.0 * ui + u[im]) * inv_h2;
        if (need_d1) d1[p] = (u[ip] - u[im]) * inv_2h;
        for (std::size_t q = p + 1; q < n; ++q) {
          const double apq = a[p * n + q];
          if (apq == 0.0) continue;
          const double mixed =
              (u[plus_[q][ip]] - u[minus_[q][ip]] - u[plus_[q][im]] + u[minus_[q][im]]) * inv_4h2;
          drift += 2.0 * apq * mixed;
        }
      }
      if (!B.zero()) {
        const double* b = B.at(i);
        for (std::size_t p = 0; p < n; ++p) drift += b[p] * d1[p];
      }
      if (!C.zero()) drift += C.at(i)[0] * ui;
      if (!F.zero()) drift += F.at(i)[0];
      double value = ui + dt * drift;
      if (!S.zero() || !NU.zero() || !G.zero()) {
        const double* s = S.zero() ? nullptr : S.at(i);
        const double* nu = NU.zero() ? nullptr : NU.at(i);
        const double* g = G.zero() ? nullptr : G.at(i);
        for (std::size_t k = 0; k < M; ++k) {
          double diffusion = 0.0;
          if (s)
            for (std::size_t p = 0; p < n; ++p) diffusion += s[p * M + k] * d1[p];
          if (nu) diffusion += nu[k] * ui;
          if (g) diffusion += g[k];
          value += diffusion * dw_[k];
        }
      }
      out[i] = value;
      const double mag = std::abs(value);
      if (!(mag <= blowup_threshold)) throw BlowUpError(step + 1, mag);
      max_abs = std::max(max_abs, mag);
    }
    return max_abs;
  }

  /// dt a:D²v + Σ_k (σ^{·k}·Dv) ΔW^k at `node`, using the a and σ prepared by the
  /// last advance() call for `step` (the homogeneous model operator).
  double homogeneous_increment(std::span<const double> v, std::uint32_t node, std::size_t step,
                               const WienerPath& path) const {
    const std::size_t n = grid_.dim();
    const std::size_t M = spec_->modes;
    const double h = grid_.h();
    const double* a = slots_[0].at(node);
    double drift = 0.0;
    std::array<double, kMaxDim> d1{};
    for (std::size_t p = 0; p < n; ++p) {
      const std::uint32_t ip = plus_[p][node];
      const std::uint32_t im = minus_[p][node];
      drift += a[p * n + p] * (v[ip] - 2.0 * v[node] + v[im]) / (h * h);
      d1[p] = (v[ip] - v[im]) / (2.0 * h);
      for (std::size_t q = p + 1; q < n; ++q)
        drift += 2.0 * a[p * n + q] * (v[plus_[q][ip]] - v[minus_[q][ip]] - v[plus_[q][im]] + v[minus_[q][im]]) /
                 (4.0 * h * h);
    }
    double value = grid_.dt() * drift;
    if (!slots_[3].zero()) {
      const double* s = slots_[3].at(node);
      for (std::size_t k = 0; k < M; ++k) {
        double diffusion = 0.0;
        for (std::size_t p = 0; p < n; ++p) diffusion += s[p * M + k] * d1[p];
        value += diffusion * path.increment(k, step);
      }
    }
    return value;
  }

 private:
  struct Slot {
    explicit Slot(const CoefficientField* f = nullptr) : field(f) {}

    const CoefficientField* field = nullptr;
    std::vector<double> data;
    std::size_t stride = 0;
    bool filled = false;

    bool zero() const { return field->is_zero(); }
    const double* at(std::size_t node) const { return data.data() + node * stride; }
  };

  void prepare(std::size_t step, std::span<const std::uint32_t> nodes, const WienerPath& path) {
    const std::size_t n = grid_.dim();
    const double t = grid_.time(step);
    const PathView w = restrict_to_step(path, step);
    for (Slot& slot : slots_) {
      const CoefficientField& field = *slot.field;
      if (field.is_zero()) continue;
      const std::size_t size = field.size();
      if (!field.varies_in_space()) {
        if (slot.filled && field.is_static()) continue;
        slot.data.resize(size);
        slot.stride = 0;
        field.evaluate(std::span<const double>(coords_.data(), n), t, w, slot.data);
        slot.filled = true;
        continue;
      }
      slot.stride = size;
      if (field.is_static()) {
        if (slot.filled) continue;
        slot.data.resize(grid_.nodes() * size);
        for (std::size_t node = 0; node < grid_.nodes(); ++node)
          field.evaluate(std::span<const double>(coords_.data() + node * n, n), t, w,
                         std::span<double>(slot.data.data() + node * size, size));
        slot.filled = true;
        continue;
      }
      slot.data.resize(grid_.nodes() * size);
      for (const std::uint32_t node : nodes)
        field.evaluate(std::span<const double>(coords_.data() + node * n, n), t, w,
                       std::span<double>(slot.data.data() + node * size, size));
    }
  }

  const ProblemSpec* spec_;
  SpaceTimeGrid grid_;
  std::vector<std::vector<std::uint32_t>> plus_;
  std::vector<std::vector<std::uint32_t>> minus_;
  std::vector<double> coords_;
  std::array<Slot, 7> slots_;
  std::vector<double> dw_;
};

struct SolveOptions {
  /// Save every k-th time level (first and last always); 0 keeps only those two.
  std::size_t save_every = 1;
  /// Nonzero initial data. Verification entry point only: the equation is posed with u(·,0) = 0.
  std::function<double(std::span<const double> x)> initial;
  /// Called with (step, values) for every time level, including 0 and the last.
  std::function<void(std::size_t, std::span<const double>)> observer;
  double blowup_threshold = 1e12;
};

namespace detail {

inline void require_solvable(const ProblemSpec& spec, const WienerPath& path, const SpaceTimeGrid& grid) {
  if (!grid.certificate()) throw ArgumentError("solve: grid carries no stability certificate");
  if (path.n_steps() != grid.n_steps()) throw ArgumentError("solve: path and grid have different n_steps");
  if (std::abs(path.config().horizon - grid.horizon()) > 1e-12 * grid.horizon())
    throw ArgumentError("solve: path and grid have different horizons");
  if (path.modes() != spec.modes) throw ArgumentError("solve: path has a different number of modes than the problem");
  if (spec.dim != grid.dim()) throw ArgumentError("solve: grid and problem dimensions differ");
}

inline std::vector<std::uint32_t> all_nodes(const SpaceTimeGrid& grid) {
  std::vector<std::uint32_t> nodes(grid.nodes());
  for (std::size_t i = 0; i < nodes.size(); ++i) nodes[i] = static_cast<std::uint32_t>(i);
  return nodes;
}

inline bool keep_level(std::size_t step, std::size_t last, std::size_t save_every) {
  if (step == 0 || step == last) return true;
  return save_every != 0 && step % save_every == 0;
}

}  // namespace detail

/// One realization of the equation with zero initial data (see SolveOptions::initial).
inline GridSolution solve_realization(const ProblemSpec& spec, const WienerPath& path, const SpaceTimeGrid& grid,
                                      const SolveOptions& options = {}) {
  detail::require_solvable(spec, path, grid);
  const std::size_t nodes = grid.nodes();
  const std::size_t last = grid.n_steps();
  GridSolution sol;
  sol.grid = grid;
  sol.master_seed = path.master_seed();
  sol.sample_index = path.sample_index();

  std::vector<double> u(nodes, 0.0);
  std::vector<double> next(nodes, 0.0);
  if (options.initial)
    for (std::size_t node = 0; node < nodes; ++node) u[node] = options.initial(grid.coordinates(node));

  std::size_t kept = 0;
  for (std::size_t j = 0; j <= last; ++j) kept += detail::keep_level(j, last, options.save_every) ? 1 : 0;
  sol.steps.reserve(kept);
  sol.values.reserve(kept * nodes);

  auto record = [&](std::size_t step) {
    if (options.observer) options.observer(step, u);
    if (!detail::keep_level(step, last, options.save_every)) return;
    sol.steps.push_back(step);
    sol.values.insert(sol.values.end(), u.begin(), u.end());
  };

  Stepper stepper(spec, grid);
  const std::vector<std::uint32_t> all = detail::all_nodes(grid);
  record(0);
  for (std::size_t j = 0; j < last; ++j) {
    stepper.advance(u, next, all, j, path, options.blowup_threshold);
    u.swap(next);
    record(j + 1);
  }
  return sol;
}

/// Grid-resolved parabolic cylinder. The spatial radius is rounded outward to
/// a multiple of h and the time extent is that radius squared, rounded outward
/// to a multiple of dt (clipped at t = 0).
struct CylinderGeometry {
  std::size_t center_node = 0;
  std::size_t radius_cells = 0;
  double radius_nominal = 0.0;
  double radius_effective = 0.0;
  std::size_t start_step = 0;
  std::size_t top_step = 0;
  std::size_t interior_per_axis = 0;
  std::vector<std::uint32_t> interior;
  std::vector<std::uint32_t> boundary;
  /// 0 outside, 1 interior, 2 lateral boundary.
  std::vector<std::uint8_t> mask;

  bool active(std::size_t step) const { return step >= start_step && step <= top_step; }
};

inline CylinderGeometry resolve_cylinder(const SpaceTimeGrid& grid, const Cylinder& cyl,
                                         bool require_resolution = true) {
  if (cyl.center_x.size() != grid.dim()) throw ArgumentError("resolve_cylinder: dimension mismatch");
  if (!(cyl.radius > 0.0)) throw ArgumentError("resolve_cylinder: radius must be positive");
  const std::size_t n = grid.dim();
  const double h = grid.h();
  CylinderGeometry geo;
  geo.radius_nominal = cyl.radius;
  geo.radius_cells = static_cast<std::size_t>(std::max(1.0, std::ceil(cyl.radius / h - 1e-9)));
  geo.radius_effective = static_cast<double>(geo.radius_cells) * h;
  geo.interior_per_axis = 2 * geo.radius_cells - 1;
  if (2 * geo.radius_cells + 2 > grid.points())
    throw ResolutionError("cylinder of radius " + std::to_string(cyl.radius) + " does not fit on the torus");
  if (require_resolution && geo.interior_per_axis < 8)
    throw ResolutionError("cylinder of radius " + std::to_string(cyl.radius) + " has only " +
                          std::to_string(geo.interior_per_axis) + " interior nodes per axis (need 8)");
  geo.center_node = grid.nearest_node(cyl.center_x);

  const double top = std::round(cyl.center_t / grid.dt());
  if (top < 0.0 || top > static_cast<double>(grid.n_steps()))
    throw DomainError("cylinder top time lies outside [0, T]");
  geo.top_step = static_cast<std::size_t>(top);
  const double extent = geo.radius_effective * geo.radius_effective / grid.dt();
  const auto extent_steps = static_cast<std::size_t>(std::ceil(extent - 1e-9));
  geo.start_step = extent_steps >= geo.top_step ? 0 : geo.top_step - extent_steps;

  geo.mask.assign(grid.nodes(), 0);
  const long k = static_cast<long>(geo.radius_cells);
  std::vector<long> center(n), idx(n), offset(n, -k);
  for (std::size_t i = 0; i < n; ++i) center[i] = static_cast<long>(grid.index(geo.center_node, i));
  // interior: |d| < R (strict) in grid units
  for (;;) {
    long sq = 0;
    for (std::size_t i = 0; i < n; ++i) sq += offset[i] * offset[i];
    if (sq < k * k) {
      for (std::size_t i = 0; i < n; ++i) idx[i] = center[i] + offset[i];
      geo.mask[grid.node_of(idx)] = 1;
    }
    std::size_t axis = 0;
    while (axis < n && ++offset[axis] > k) offset[axis++] = -k;
    if (axis == n) break;
  }
  // lateral boundary: non-interior nodes within one cell (Chebyshev) of the interior
  std::vector<std::uint32_t> interior;
  for (std::size_t node = 0; node < grid.nodes(); ++node)
    if (geo.mask[node] == 1) interior.push_back(static_cast<std::uint32_t>(node));
  for (const std::uint32_t node : interior) {
    std::vector<long> base(n), step(n, -1);
    for (std::size_t i = 0; i < n; ++i) base[i] = static_cast<long>(grid.index(node, i));
    for (;;) {
      for (std::size_t i = 0; i < n; ++i) idx[i] = base[i] + step[i];
      const std::size_t nb = grid.node_of(idx);
      if (geo.mask[nb] == 0) geo.mask[nb] = 2;
      std::size_t axis = 0;
      while (axis < n && ++step[axis] > 1) step[axis++] = -1;
      if (axis == n) break;
    }
  }
  for (std::size_t node = 0; node < grid.nodes(); ++node) {
    if (geo.mask[node] == 1) geo.interior.push_back(static_cast<std::uint32_t>(node));
    if (geo.mask[node] == 2) geo.boundary.push_back(static_cast<std::uint32_t>(node));
  }
  return geo;
}

/// Solves on the cylinder with lateral and initial values copied from
/// `boundary_data`, which must hold every time level of the cylinder. Outside
/// the cylinder the result equals boundary_data; `support` marks cylinder nodes.
inline GridSolution solve_on_cylinder(const ProblemSpec& spec, const WienerPath& path, const SpaceTimeGrid& grid,
                                      const Cylinder& cyl, const GridSolution& boundary_data,
                                      double blowup_threshold = 1e12) {
  detail::require_solvable(spec, path, grid);
  if (!boundary_data.grid.same_shape(grid) || boundary_data.components != 1)
    throw ArgumentError("solve_on_cylinder: boundary data lives on a different grid");
  const CylinderGeometry geo = resolve_cylinder(grid, cyl);
  const std::size_t nodes = grid.nodes();
  GridSolution sol;
  sol.grid = grid;
  sol.master_seed = path.master_seed();
  sol.sample_index = path.sample_index();
  sol.support.resize(nodes);
  for (std::size_t i = 0; i < nodes; ++i) sol.support[i] = geo.mask[i] != 0;

  auto boundary_level = [&](std::size_t step) {
    const auto level = boundary_data.level_of_step(step);
    if (!level) throw ArgumentError("solve_on_cylinder: boundary data misses step " + std::to_string(step));
    return boundary_data.slice(*level);
  };

  Stepper stepper(spec, grid);
  std::vector<double> u(boundary_level(geo.start_step).begin(), boundary_level(geo.start_step).end());
  std::vector<double> next(nodes);
  sol.steps.push_back(geo.start_step);
  sol.values.insert(sol.values.end(), u.begin(), u.end());
  for (std::size_t j = geo.start_step; j < geo.top_step; ++j) {
    const auto bd = boundary_level(j + 1);
    std::copy(bd.begin(), bd.end(), next.begin());
    stepper.advance(u, next, geo.interior, j, path, blowup_threshold);
    u.swap(next);
    sol.steps.push_back(j + 1);
    sol.values.insert(sol.values.end(), u.begin(), u.end());
  }
  return sol;
}

using MultiIndex = std::vector<int>;

inline int order(const MultiIndex& beta) {
  int s = 0;
  for (int b : beta) s += b;
  return s;
}

/// All multi-indices of length `dim` with |β| = k, in lexicographic order.
inline std::vector<MultiIndex> multi_indices(std::size_t dim, int k) {
  std::vector<MultiIndex> out;
  MultiIndex beta(dim, 0);
  std::function<void(std::size_t, int)> rec = [&](std::size_t axis, int left) {
    if (axis + 1 == dim) {
      beta[axis] = left;
      out.push_back(beta);
      return;
    }
    for (int v = left; v >= 0; --v) {
      beta[axis] = v;
      rec(axis + 1, left - v);
    }
  };
  rec(0, k);
  return out;
}

namespace detail {

inline void check_beta(const SpaceTimeGrid& grid, const MultiIndex& beta) {
  if (beta.size() != grid.dim()) throw ArgumentError("derivative: multi-index has wrong length");
  for (int b : beta)
    if (b < 0) throw ArgumentError("derivative: negative multi-index entry");
  if (order(beta) > 2) throw ArgumentError("derivative: unsupported order |beta| > 2");
}

inline std::size_t shift(const SpaceTimeGrid& grid, std::size_t node, std::size_t axis, int by) {
  std::size_t stride = 1;
  for (std::size_t i = 0; i < axis; ++i) stride *= grid.points();
  const std::size_t N = grid.points();
  const std::size_t i = (node / stride) % N;
  const std::size_t j = (i + N + static_cast<std::size_t>(by + static_cast<int>(N))) % N;
  return node - i * stride + j * stride;
}

}  // namespace detail

/// Centered difference D^β of one level (all components), |β| <= 2, periodic wrap.
inline double derivative_at(std::span<const double> level_values, std::size_t components, const SpaceTimeGrid& grid,
                            const MultiIndex& beta, std::size_t node, std::size_t comp = 0) {
  auto v = [&](std::size_t nd) { return level_values[nd * components + comp]; };
  const double h = grid.h();
  std::size_t first = grid.dim(), second = grid.dim();
  for (std::size_t i = 0; i < beta.size(); ++i) {
    if (beta[i] == 2) first = second = i;
    if (beta[i] == 1) (first == grid.dim() ? first : second) = i;
  }
  const int k = order(beta);
  if (k == 0) return v(node);
  if (k == 1)
    return (v(detail::shift(grid, node, first, 1)) - v(detail::shift(grid, node, first, -1))) / (2.0 * h);
  if (first == second)
    return (v(detail::shift(grid, node, first, 1)) - 2.0 * v(node) + v(detail::shift(grid, node, first, -1))) / (h * h);
  const std::size_t pp = detail::shift(grid, detail::shift(grid, node, first, 1), second, 1);
  const std::size_t pm = detail::shift(grid, detail::shift(grid, node, first, 1), second, -1);
  const std::size_t mp = detail::shift(grid, detail::shift(grid, node, first, -1), second, 1);
  const std::size_t mm = detail::shift(grid, detail::shift(grid, node, first, -1), second, -1);
  return (v(pp) - v(pm) - v(mp) + v(mm)) / (4.0 * h * h);
}

/// Second-order centered D^β u for every saved level; |β| = 0 returns a copy.
inline GridSolution discrete_derivative(const GridSolution& sol, const MultiIndex& beta) {
  detail::check_beta(sol.grid, beta);
  if (order(beta) == 0) return sol;
  GridSolution out = sol;
  for (std::size_t level = 0; level < sol.levels(); ++level) {
    const auto in = sol.slice(level);
    for (std::size_t node = 0; node < sol.grid.nodes(); ++node)
      for (std::size_t c = 0; c < sol.components; ++c)
        out.at(level, node, c) = derivative_at(in, sol.components, sol.grid, beta, node, c);
  }
  return out;
}

/// Nodes whose D^β stencil straddles the periodic seam (index 0 <-> N-1 along
/// an axis of β). A non-periodic profile such as u(x) = x is wrong exactly there.
inline std::vector<std::uint8_t> stencil_wraps(const SpaceTimeGrid& grid, const MultiIndex& beta) {
  detail::check_beta(grid, beta);
  std::vector<std::uint8_t> mask(grid.nodes(), 0);
  for (std::size_t node = 0; node < grid.nodes(); ++node)
    for (std::size_t axis = 0; axis < grid.dim(); ++axis) {
      if (beta[axis] == 0) continue;
      const std::size_t i = grid.index(node, axis);
      if (i == 0 || i + 1 == grid.points()) mask[node] = 1;
    }
  return mask;
}

/// Seeded realizations sharing one grid.
struct Ensemble {
  std::vector<GridSolution> members;

  std::size_t size() const { return members.size(); }
  const GridSolution& front() const { return members.front(); }
  const SpaceTimeGrid& grid() const { return members.front().grid; }
  std::size_t components() const { return members.front().components; }

  void validate() const {
    if (members.size() < 2) throw ArgumentError("ensemble: need at least 2 members");
    for (const GridSolution& m : members) {
      if (!m.grid.same_shape(grid()) || m.steps != members.front().steps || m.components != components())
        throw ArgumentError("ensemble: members do not share a grid");
    }
  }
};

inline std::vector<WienerPath> sample_paths(const ProblemSpec& spec, const SpaceTimeGrid& grid,
                                            std::uint64_t master_seed, std::size_t count, unsigned workers = 0) {
  std::vector<std::optional<WienerPath>> slots(count);
  parallel_for(count, workers, [&](std::size_t i) { slots[i] = sample_path(spec.noise_config(grid.n_steps()), master_seed, i); });
  std::vector<WienerPath> paths;
  paths.reserve(count);
  for (auto& p : slots) paths.push_back(std::move(*p));
  return paths;
}

/// Members 0..count-1 with paths sample_path(·, master_seed, i).
inline Ensemble solve_ensemble(const ProblemSpec& spec, const SpaceTimeGrid& grid, std::uint64_t master_seed,
                               std::size_t count, const SolveOptions& options = {}, unsigned workers = 0) {
  Ensemble ens;
  ens.members.resize(count);
  parallel_for(count, workers, [&](std::size_t i) {
    const WienerPath path = sample_path(spec.noise_config(grid.n_steps()), master_seed, i);
    ens.members[i] = solve_realization(spec, path, grid, options);
  });
  return ens;
}

/// Values of a coefficient field at the grid nodes for the requested steps.
inline GridSolution sample_field(const CoefficientField& field, const SpaceTimeGrid& grid,
                                 std::span<const std::size_t> steps, const WienerPath* path) {
  GridSolution sol;
  sol.grid = grid;
  sol.components = field.size();
  sol.steps.assign(steps.begin(), steps.end());
  sol.values.assign(steps.size() * grid.nodes() * field.size(), 0.0);
  if (path) {
    sol.master_seed = path->master_seed();
    sol.sample_index = path->sample_index();
  }
  for (std::size_t level = 0; level < steps.size(); ++level) {
    const double t = grid.time(steps[level]);
    const PathView w = path ? restrict_to_step(*path, steps[level]) : PathView();
    for (std::size_t node = 0; node < grid.nodes(); ++node) {
      const auto x = grid.coordinates(node);
      field.evaluate(x, t, w, std::span<double>(sol.values).subspan((level * grid.nodes() + node) * field.size(), field.size()));
    }
  }
  return sol;
}

/// f and g sampled on the grid for members 0..count-1.
struct DataEnsembles {
  Ensemble f;
  Ensemble g;
};

inline DataEnsembles sample_data(const ProblemSpec& spec, const SpaceTimeGrid& grid, std::uint64_t master_seed,
                                 std::size_t count, std::span<const std::size_t> steps, unsigned workers = 0) {
  DataEnsembles data;
  data.f.members.resize(count);
  data.g.members.resize(count);
  const bool random = spec.f.reads_path() || spec.g.reads_path();
  parallel_for(count, workers, [&](std::size_t i) {
    std::optional<WienerPath> path;
    if (random) path = sample_path(spec.noise_config(grid.n_steps()), master_seed, i);
    data.f.members[i] = sample_field(spec.f, grid, steps, path ? &*path : nullptr);
    data.g.members[i] = sample_field(spec.g, grid, steps, path ? &*path : nullptr);
    data.f.members[i].sample_index = data.g.members[i].sample_index = i;
    data.f.members[i].master_seed = data.g.members[i].master_seed = master_seed;
  });
  return data;
}

/// Evenly spaced steps in [first, last] (both included), at most `count` of them.
inline std::vector<std::size_t> step_lattice(std::size_t first, std::size_t last, std::size_t count) {
  std::vector<std::size_t> steps;
  if (last < first) return steps;
  const std::size_t span = last - first;
  if (count <= 1 || span == 0) return {last};
  const std::size_t stride = std::max<std::size_t>(1, (span + count - 2) / (count - 1));
  for (std::size_t s = last + stride; s >= first + stride; s -= stride) {
    steps.push_back(s - stride);
    if (s - stride < first + stride) break;
  }
  std::reverse(steps.begin(), steps.end());
  return steps;
}

// Snapshot export ----------------------------------------------------------------

/// CSV with header t,x1..xn,u (u1..uC when several components); rows ordered by
/// level then node; %.17g formatting.
inline void write_snapshot_csv(const GridSolution& sol, std::ostream& out) {
  const std::size_t n = sol.grid.dim();
  out << "t";
  for (std::size_t i = 0; i < n; ++i) out << ",x" << (i + 1);
  if (sol.components == 1) {
    out << ",u";
  } else {
    for (std::size_t c = 0; c < sol.components; ++c) out << ",u" << (c + 1);
  }
  out << '\n';
  char buf[40];
  for (std::size_t level = 0; level < sol.levels(); ++level) {
    for (std::size_t node = 0; node < sol.grid.nodes(); ++node) {
      std::snprintf(buf, sizeof buf, "%.17g", sol.time(level));
      out << buf;
      for (double x : sol.grid.coordinates(node)) {
        std::snprintf(buf, sizeof buf, ",%.17g", x);
        out << buf;
      }
      for (std::size_t c = 0; c < sol.components; ++c) {
        std::snprintf(buf, sizeof buf, ",%.17g", sol.at(level, node, c));
        out << buf;
      }
      out << '\n';
    }
  }
}

/// Flat little-endian binary: u64 rank, u64 dims[rank] (levels, N per axis,
/// components when > 1), then row-major float64 values.
inline void write_snapshot_bin(const GridSolution& sol, std::ostream& out) {
  std::vector<std::uint64_t> dims{sol.levels()};
  for (std::size_t i = 0; i < sol.grid.dim(); ++i) dims.push_back(sol.grid.points());
  if (sol.components > 1) dims.push_back(sol.components);
  // spatial axes are stored with axis 0 fastest; row-major order over
  // (level, x_n, ..., x_1, comp) is what the flat node numbering gives
  std::reverse(dims.begin() + 1, dims.begin() + 1 + static_cast<std::ptrdiff_t>(sol.grid.dim()));
  const std::uint64_t rank = dims.size();
  out.write(reinterpret_cast<const char*>(&rank), sizeof rank);
  out.write(reinterpret_cast<const char*>(dims.data()), static_cast<std::streamsize>(dims.size() * sizeof(std::uint64_t)));
  out.write(reinterpret_cast<const char*>(sol.values.data()), static_cast<std::streamsize>(sol.values.size() * sizeof(double)));
}

struct Snapshot {
  std::vector<std::uint64_t> dims;
  std::vector<double> values;
};

inline Snapshot read_snapshot_bin(std::istream& in) {
  Snapshot snap;
  std::uint64_t rank = 0;
  if (!in.read(reinterpret_cast<char*>(&rank), sizeof rank) || rank == 0 || rank > 16)
    throw ArgumentError("read_snapshot_bin: bad header");
  snap.dims.resize(rank);
  in.read(reinterpret_cast<char*>(snap.dims.data()), static_cast<std::streamsize>(rank * sizeof(std::uint64_t)));
  std::uint64_t count = 1;
  for (auto d : snap.dims) count *= d;
  snap.values.resize(count);
  if (!in.read(reinterpret_cast<char*>(snap.values.data()), static_cast<std::streamsize>(count * sizeof(double))))
    throw ArgumentError("read_snapshot_bin: truncated payload");
  return snap;
}

/// Values column(s) of a snapshot CSV, in file order.
inline std::vector<double> read_snapshot_csv_values(std::istream& in, std::size_t dim) {
  std::string line;
  if (!std::getline(in, line)) throw ArgumentError("read_snapshot_csv: empty file");
  std::vector<double> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    std::size_t column = 0;
    while (std::getline(row, cell, ',')) {
      if (column > dim) values.push_back(std::stod(cell));
      ++column;
    }
  }
  return values;
}

}  // namespace spdelab
