#pragma once

// Problem definition: coefficient fields of
//   du = (a^{ij} u_{ij} + b^i u_i + c u + f) dt + (σ^{ik} u_i + ν^k u + g^k) dW^k,
// parabolic geometry, and sampling checks of the structural hypotheses.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "spdelab/errors.hpp"
#include "spdelab/noise.hpp"

namespace spdelab {

/// What a coefficient field may depend on. Used by the solver to decide how
/// often a field has to be re-evaluated.
enum Dependence : unsigned {
  kConstant = 0,
  kSpace = 1u << 0,
  kTime = 1u << 1,
  kPath = 1u << 2,
};

/// A (rows x cols)-valued field of (x, t, path). Row-major output.
class CoefficientField {
 public:
  using Fn = std::function<void(std::span<const double> x, double t, const PathView& w, std::span<double> out)>;

  CoefficientField() = default;
  CoefficientField(std::size_t rows, std::size_t cols, Fn fn, unsigned deps)
      : rows_(rows), cols_(cols), fn_(std::move(fn)), deps_(deps), zero_(false) {}

  static CoefficientField zero(std::size_t rows, std::size_t cols) {
    CoefficientField field;
    field.rows_ = rows;
    field.cols_ = cols;
    return field;
  }

  static CoefficientField constant(std::size_t rows, std::size_t cols, std::vector<double> values) {
    if (values.size() != rows * cols) throw ArgumentError("CoefficientField::constant: size mismatch");
    if (std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; })) return zero(rows, cols);
    return CoefficientField(
        rows, cols,
        [values = std::move(values)](std::span<const double>, double, const PathView&, std::span<double> out) {
          std::copy(values.begin(), values.end(), out.begin());
        },
        kConstant);
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return rows_ * cols_; }
  unsigned dependence() const { return deps_; }
  bool is_zero() const { return zero_; }
  bool varies_in_space() const { return !zero_ && (deps_ & kSpace); }
  bool varies_in_time() const { return !zero_ && (deps_ & kTime); }
  bool reads_path() const { return !zero_ && (deps_ & kPath); }
  /// Neither time nor the path matter, so one evaluation per node suffices.
  bool is_static() const { return !varies_in_time() && !reads_path(); }

  void evaluate(std::span<const double> x, double t, const PathView& w, std::span<double> out) const {
    if (zero_) {
      std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(size()), 0.0);
      return;
    }
    fn_(x, t, w, out);
  }

  std::vector<double> operator()(std::span<const double> x, double t, const PathView& w) const {
    std::vector<double> out(size());
    evaluate(x, t, w, out);
    return out;
  }

  /// c * field (same dependence).
  CoefficientField scaled(double c) const {
    if (zero_ || c == 0.0) return zero(rows_, cols_);
    auto fn = fn_;
    return CoefficientField(
        rows_, cols_,
        [fn, c](std::span<const double> x, double t, const PathView& w, std::span<double> out) {
          fn(x, t, w, out);
          for (double& v : out) v *= c;
        },
        deps_);
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Fn fn_;
  unsigned deps_ = kConstant;
  bool zero_ = true;
};

struct EllipticityBounds {
  double lambda = 0.5;
  double K = 10.0;

  void validate() const {
    if (!(lambda > 0.0)) throw ArgumentError("bounds: lambda must be positive");
    if (!(K >= lambda)) throw ArgumentError("bounds: K must be >= lambda");
  }
};

struct HolderParams {
  double alpha = 0.5;
  double p = 2.0;
  int m = 2;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ArgumentError("holder: alpha must lie in (0, 1)");
    if (!(p >= 2.0)) throw ArgumentError("holder: p must be >= 2");
    if (m < 0) throw ArgumentError("holder: m must be nonnegative");
  }
};

/// Coefficients of the equation on the torus [0, L)^n with M noise modes.
struct ProblemSpec {
  std::size_t dim = 1;
  std::size_t modes = 1;
  double horizon = 1.0;
  double domain_length = 2.0 * std::numbers::pi;
  /// Rate of the OU companion processes exposed through PathView::ou.
  double ou_rate = 0.0;

  CoefficientField a;      // n x n, symmetric
  CoefficientField b;      // n
  CoefficientField c;      // scalar
  CoefficientField sigma;  // n x M
  CoefficientField nu;     // M
  CoefficientField f;      // scalar
  CoefficientField g;      // M

  EllipticityBounds bounds;
  HolderParams holder;

  /// All-zero coefficients of the right shapes except a = I.
  static ProblemSpec make(std::size_t dim, std::size_t modes, double horizon) {
    ProblemSpec spec;
    spec.dim = dim;
    spec.modes = modes;
    spec.horizon = horizon;
    std::vector<double> identity(dim * dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) identity[i * dim + i] = 1.0;
    spec.a = CoefficientField::constant(dim, dim, identity);
    spec.b = CoefficientField::zero(dim, 1);
    spec.c = CoefficientField::zero(1, 1);
    spec.sigma = CoefficientField::zero(dim, modes);
    spec.nu = CoefficientField::zero(modes, 1);
    spec.f = CoefficientField::zero(1, 1);
    spec.g = CoefficientField::zero(modes, 1);
    return spec;
  }

  NoiseConfig noise_config(std::size_t n_steps) const { return NoiseConfig{modes, n_steps, horizon, ou_rate}; }

  void validate() const {
    if (dim == 0) throw ArgumentError("problem: dim must be positive");
    if (modes == 0) throw ArgumentError("problem: modes must be positive");
    if (!(horizon > 0.0)) throw ArgumentError("problem: horizon must be positive");
    if (!(domain_length > 0.0)) throw ArgumentError("problem: domain_length must be positive");
    auto shape = [](const CoefficientField& field, std::size_t r, std::size_t c, const char* name) {
      if (field.rows() != r || field.cols() != c) {
        std::ostringstream msg;
        msg << "problem: coefficient " << name << " must be " << r << "x" << c << ", got " << field.rows() << "x"
            << field.cols();
        throw ArgumentError(msg.str());
      }
    };
    shape(a, dim, dim, "a");
    shape(b, dim, 1, "b");
    shape(c, 1, 1, "c");
    shape(sigma, dim, modes, "sigma");
    shape(nu, modes, 1, "nu");
    shape(f, 1, 1, "f");
    shape(g, modes, 1, "g");
    bounds.validate();
    holder.validate();
  }

  /// True when a and σ do not depend on x and b, c, ν vanish.
  bool is_model_equation() const {
    return !a.varies_in_space() && !sigma.varies_in_space() && b.is_zero() && c.is_zero() && nu.is_zero();
  }
};

/// Point (x, t) of space-time.
struct SpaceTimePoint {
  std::vector<double> x;
  double t = 0.0;
};

/// |x - y| + sqrt(|t - s|).
inline double parabolic_distance(const SpaceTimePoint& X, const SpaceTimePoint& Y) {
  if (X.x.size() != Y.x.size()) throw ArgumentError("parabolic_distance: dimension mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < X.x.size(); ++i) sq += (X.x[i] - Y.x[i]) * (X.x[i] - Y.x[i]);
  return std::sqrt(sq) + std::sqrt(std::abs(X.t - Y.t));
}

/// B_r(x) x (t - r^2, t).
struct Cylinder {
  std::vector<double> center_x;
  double center_t = 0.0;
  double radius = 1.0;

  double start_time() const { return center_t - radius * radius; }

  bool contains(const SpaceTimePoint& point) const {
    if (point.x.size() != center_x.size()) throw ArgumentError("Cylinder::contains: dimension mismatch");
    double sq = 0.0;
    for (std::size_t i = 0; i < center_x.size(); ++i) sq += (point.x[i] - center_x[i]) * (point.x[i] - center_x[i]);
    return std::sqrt(sq) < radius && point.t > start_time() && point.t < center_t;
  }
};

inline Cylinder make_cylinder(const SpaceTimePoint& center, double r) {
  if (!(r > 0.0) || !std::isfinite(r)) throw ArgumentError("make_cylinder: radius must be positive");
  return Cylinder{center.x, center.t, r};
}

/// Evaluation site for the sampled hypothesis checks.
struct SamplePoint {
  std::vector<double> x;
  double t = 0.0;
  const WienerPath* path = nullptr;
};

struct MarginReport {
  double margin = std::numeric_limits<double>::infinity();
  SamplePoint worst;
  std::size_t samples = 0;
  bool pass = false;
};

namespace detail {

inline PathView view_for(const SamplePoint& point) {
  return point.path ? restrict(*point.path, point.t) : PathView();
}

inline std::string describe(const SamplePoint& point) {
  std::ostringstream s;
  s << "(x=(";
  for (std::size_t i = 0; i < point.x.size(); ++i) s << (i ? "," : "") << point.x[i];
  s << "), t=" << point.t << ")";
  return s.str();
}

}  // namespace detail

/// Smallest eigenvalue of 2a - σσ^T minus λ, minimized over the sample points.
inline MarginReport validate_parabolicity(const ProblemSpec& spec, std::span<const SamplePoint> points) {
  if (points.empty()) throw ArgumentError("validate_parabolicity: no sample points");
  const std::size_t n = spec.dim;
  const std::size_t m = spec.modes;
  MarginReport report;
  std::vector<double> a(n * n);
  std::vector<double> s(n * m);
  for (const SamplePoint& point : points) {
    if (point.x.size() != n) throw ArgumentError("validate_parabolicity: sample point has wrong dimension");
    const PathView w = detail::view_for(point);
    spec.a.evaluate(point.x, point.t, w, a);
    spec.sigma.evaluate(point.x, point.t, w, s);
    Eigen::MatrixXd q(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double aij = a[i * n + j];
        const double aji = a[j * n + i];
        if (std::abs(aij - aji) > 1e-12 * std::max({1.0, std::abs(aij), std::abs(aji)}))
          throw StructuralError("diffusion matrix a is not symmetric at " + detail::describe(point));
        double ss = 0.0;
        for (std::size_t k = 0; k < m; ++k) ss += s[i * m + k] * s[j * m + k];
        q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 2.0 * aij - ss;
      }
    }
    const double smallest =
        n == 1 ? q(0, 0) : Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(q, Eigen::EigenvaluesOnly).eigenvalues()(0);
    const double margin = smallest - spec.bounds.lambda;
    ++report.samples;
    if (margin < report.margin) {
      report.margin = margin;
      report.worst = point;
    }
  }
  report.pass = report.margin >= 0.0;
  return report;
}

/// Regular sample sites: points_per_axis^n nodes of the torus at `times`,
/// each combined with every path in `paths` (or no path when empty).
inline std::vector<SamplePoint> sample_sites(const ProblemSpec& spec, std::size_t points_per_axis,
                                             std::span<const double> times,
                                             std::span<const WienerPath> paths = {}) {
  std::size_t total = 1;
  for (std::size_t i = 0; i < spec.dim; ++i) total *= points_per_axis;
  const double h = spec.domain_length / static_cast<double>(points_per_axis);
  std::vector<SamplePoint> sites;
  for (std::size_t node = 0; node < total; ++node) {
    std::vector<double> x(spec.dim);
    std::size_t rest = node;
    for (std::size_t i = 0; i < spec.dim; ++i) {
      x[i] = static_cast<double>(rest % points_per_axis) * h;
      rest /= points_per_axis;
    }
    for (double t : times) {
      if (paths.empty()) {
        sites.push_back({x, t, nullptr});
      } else {
        for (const WienerPath& path : paths) sites.push_back({x, t, &path});
      }
    }
  }
  return sites;
}

struct BoundsReport {
  double max_norm = 0.0;
  std::string worst_field;
  bool pass = true;
};

/// Sampled classical C^α_x norms of a, b, c, σ, σ_x, ν, ν_x on a regular grid
/// of the torus (sup plus Hölder quotient over same-time node pairs). This is a
/// sampling check only; it cannot certify a bound for arbitrary fields.
inline BoundsReport check_coefficient_bounds(const ProblemSpec& spec, std::size_t points_per_axis,
                                             std::span<const double> times, std::span<const WienerPath> paths = {}) {
  const std::size_t n = spec.dim;
  const double alpha = spec.holder.alpha;
  const double L = spec.domain_length;
  const double eta = 1e-6 * L;
  std::size_t total = 1;
  for (std::size_t i = 0; i < n; ++i) total *= points_per_axis;
  const double h = L / static_cast<double>(points_per_axis);

  std::vector<std::vector<double>> coords(total, std::vector<double>(n));
  for (std::size_t node = 0; node < total; ++node) {
    std::size_t rest = node;
    for (std::size_t i = 0; i < n; ++i) {
      coords[node][i] = static_cast<double>(rest % points_per_axis) * h;
      rest /= points_per_axis;
    }
  }
  auto torus_distance = [&](const std::vector<double>& x, const std::vector<double>& y) {
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = std::abs(x[i] - y[i]);
      d = std::min(d, L - d);
      sq += d * d;
    }
    return std::sqrt(sq);
  };

  struct Named {
    const CoefficientField* field;
    const char* name;
    bool differentiate;
  };
  const Named fields[] = {{&spec.a, "a", false},     {&spec.b, "b", false},  {&spec.c, "c", false},
                          {&spec.sigma, "sigma", false}, {&spec.sigma, "sigma_x", true},
                          {&spec.nu, "nu", false},   {&spec.nu, "nu_x", true}};

  BoundsReport report;
  std::vector<const WienerPath*> path_list;
  if (paths.empty()) path_list.push_back(nullptr);
  for (const WienerPath& p : paths) path_list.push_back(&p);

  for (const Named& entry : fields) {
    const CoefficientField& field = *entry.field;
    if (field.is_zero()) continue;
    const std::size_t comps = field.size() * (entry.differentiate ? n : 1);
    for (const WienerPath* path : path_list) {
      for (double t : times) {
        const PathView w = path ? restrict(*path, t) : PathView();
        std::vector<double> values(total * comps);
        std::vector<double> tmp(field.size()), tmp2(field.size());
        for (std::size_t node = 0; node < total; ++node) {
          std::span<double> out(values.data() + node * comps, comps);
          if (!entry.differentiate) {
            field.evaluate(coords[node], t, w, out);
          } else {
            for (std::size_t i = 0; i < n; ++i) {
              std::vector<double> xp = coords[node], xm = coords[node];
              xp[i] += eta;
              xm[i] -= eta;
              field.evaluate(xp, t, w, tmp);
              field.evaluate(xm, t, w, tmp2);
              for (std::size_t q = 0; q < field.size(); ++q) out[i * field.size() + q] = (tmp[q] - tmp2[q]) / (2 * eta);
            }
          }
        }
        double sup = 0.0;
        double quotient = 0.0;
        for (std::size_t p = 0; p < total; ++p) {
          double sq = 0.0;
          for (std::size_t q = 0; q < comps; ++q) sq += values[p * comps + q] * values[p * comps + q];
          sup = std::max(sup, std::sqrt(sq));
          if (!field.varies_in_space()) continue;
          for (std::size_t r = p + 1; r < total; ++r) {
            double dq = 0.0;
            for (std::size_t q = 0; q < comps; ++q) {
              const double d = values[p * comps + q] - values[r * comps + q];
              dq += d * d;
            }
            quotient = std::max(quotient, std::sqrt(dq) / std::pow(torus_distance(coords[p], coords[r]), alpha));
          }
        }
        const double norm = sup + quotient;
        if (norm > report.max_norm) {
          report.max_norm = norm;
          report.worst_field = entry.name;
        }
      }
    }
  }
  report.pass = report.max_norm <= spec.bounds.K;
  return report;
}

/// Symmetry of a checked on sample sites; throws StructuralError on failure.
inline void check_symmetry(const ProblemSpec& spec, std::span<const SamplePoint> points) {
  const std::size_t n = spec.dim;
  std::vector<double> a(n * n);
  for (const SamplePoint& point : points) {
    spec.a.evaluate(point.x, point.t, detail::view_for(point), a);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (std::abs(a[i * n + j] - a[j * n + i]) > 1e-12 * std::max({1.0, std::abs(a[i * n + j]), std::abs(a[j * n + i])}))
          throw StructuralError("diffusion matrix a is not symmetric at " + detail::describe(point));
  }
}

}  // namespace spdelab
