#pragma once

// Built-in coefficient families selectable by name from a configuration file.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "spdelab/model.hpp"

namespace spdelab {

/// Parameters shared by the built-in families. Which ones matter depends on the family:
///
///  constant   a = a0 I, b = b0, c = c0, σ^{1,1} = sigma0, ν^1 = nu0, f = f0, g^1 = g0
///  trig       as constant, plus a += a_amp sin(2π x1/L) I, ν^1 += nu_amp sin(2π x1/L),
///             f += f_amp cos(f_k x1), g^1 += g_amp sin(g_k x1)
///  random-ou  as trig, but a = (a0 + a_amp tanh(Y_t)) I and f = f0 + f_amp cos(f_k x1 + Y_t),
///             where Y is the OU companion of W^1 with rate ou_theta
struct FamilyParams {
  std::string family = "constant";
  std::size_t dim = 1;
  std::size_t modes = 4;
  double horizon = 0.25;
  double domain_length = 2.0 * std::numbers::pi;
  double a0 = 1.0;
  double a_amp = 0.0;
  double b0 = 0.0;
  double c0 = 0.0;
  double sigma0 = 0.0;
  double nu0 = 0.0;
  double nu_amp = 0.0;
  double f0 = 0.0;
  double f_amp = 0.0;
  double f_k = 1.0;
  double g0 = 0.0;
  double g_amp = 0.0;
  double g_k = 1.0;
  double ou_theta = 1.0;
  EllipticityBounds bounds;
  HolderParams holder;
};

inline const std::vector<std::string>& family_names() {
  static const std::vector<std::string> names{"constant", "trig", "random-ou"};
  return names;
}

namespace detail {

inline void require_periodic(double k, double L, const char* name) {
  const double cycles = k * L / (2.0 * std::numbers::pi);
  if (std::abs(cycles - std::round(cycles)) > 1e-9)
    throw ArgumentError(std::string("family: wavenumber ") + name + " is not periodic on the torus of length L");
}

inline std::vector<double> diagonal(std::size_t n, double v) {
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) m[i * n + i] = v;
  return m;
}

}  // namespace detail

inline ProblemSpec build_family(const FamilyParams& p) {
  const bool trig = p.family == "trig";
  const bool ou = p.family == "random-ou";
  if (!trig && !ou && p.family != "constant") throw ArgumentError("unknown coefficient family '" + p.family + "'");
  if (p.dim == 0 || p.modes == 0) throw ArgumentError("family: dim and modes must be positive");

  ProblemSpec spec = ProblemSpec::make(p.dim, p.modes, p.horizon);
  spec.domain_length = p.domain_length;
  spec.bounds = p.bounds;
  spec.holder = p.holder;
  const std::size_t n = p.dim;
  const std::size_t m = p.modes;
  const double L = p.domain_length;
  const double base_k = 2.0 * std::numbers::pi / L;

  std::vector<double> sigma(n * m, 0.0);
  sigma[0] = p.sigma0;
  spec.sigma = CoefficientField::constant(n, m, sigma);
  spec.b = CoefficientField::constant(n, 1, std::vector<double>(n, p.b0));
  spec.c = CoefficientField::constant(1, 1, {p.c0});

  auto mode_one = [m](double v) {
    std::vector<double> out(m, 0.0);
    out[0] = v;
    return out;
  };

  if (!trig && !ou) {
    spec.a = CoefficientField::constant(n, n, detail::diagonal(n, p.a0));
    spec.nu = CoefficientField::constant(m, 1, mode_one(p.nu0));
    spec.f = CoefficientField::constant(1, 1, {p.f0});
    spec.g = CoefficientField::constant(m, 1, mode_one(p.g0));
    return spec;
  }

  detail::require_periodic(p.f_k, L, "f_k");
  detail::require_periodic(p.g_k, L, "g_k");

  if (ou) {
    if (!(p.ou_theta > 0.0)) throw ArgumentError("family random-ou: ou_theta must be positive");
    spec.ou_rate = p.ou_theta;
    const double a0 = p.a0, amp = p.a_amp;
    spec.a = CoefficientField(
        n, n,
        [n, a0, amp](std::span<const double>, double t, const PathView& w, std::span<double> out) {
          const double v = a0 + amp * std::tanh(w.ou(0, t));
          std::fill(out.begin(), out.end(), 0.0);
          for (std::size_t i = 0; i < n; ++i) out[i * n + i] = v;
        },
        kTime | kPath);
  } else if (p.a_amp != 0.0) {
    const double a0 = p.a0, amp = p.a_amp;
    spec.a = CoefficientField(
        n, n,
        [n, a0, amp, base_k](std::span<const double> x, double, const PathView&, std::span<double> out) {
          const double v = a0 + amp * std::sin(base_k * x[0]);
          std::fill(out.begin(), out.end(), 0.0);
          for (std::size_t i = 0; i < n; ++i) out[i * n + i] = v;
        },
        kSpace);
  } else {
    spec.a = CoefficientField::constant(n, n, detail::diagonal(n, p.a0));
  }

  if (p.nu_amp != 0.0) {
    const double nu0 = p.nu0, amp = p.nu_amp;
    spec.nu = CoefficientField(
        m, 1,
        [nu0, amp, base_k](std::span<const double> x, double, const PathView&, std::span<double> out) {
          std::fill(out.begin(), out.end(), 0.0);
          out[0] = nu0 + amp * std::sin(base_k * x[0]);
        },
        kSpace);
  } else {
    spec.nu = CoefficientField::constant(m, 1, mode_one(p.nu0));
  }

  if (p.f_amp != 0.0) {
    const double f0 = p.f0, amp = p.f_amp, k = p.f_k;
    if (ou) {
      spec.f = CoefficientField(
          1, 1,
          [f0, amp, k](std::span<const double> x, double t, const PathView& w, std::span<double> out) {
            out[0] = f0 + amp * std::cos(k * x[0] + w.ou(0, t));
          },
          kSpace | kTime | kPath);
    } else {
      spec.f = CoefficientField(
          1, 1,
          [f0, amp, k](std::span<const double> x, double, const PathView&, std::span<double> out) {
            out[0] = f0 + amp * std::cos(k * x[0]);
          },
          kSpace);
    }
  } else {
    spec.f = CoefficientField::constant(1, 1, {p.f0});
  }

  if (p.g_amp != 0.0) {
    const double g0 = p.g0, amp = p.g_amp, k = p.g_k;
    spec.g = CoefficientField(
        m, 1,
        [g0, amp, k](std::span<const double> x, double, const PathView&, std::span<double> out) {
          std::fill(out.begin(), out.end(), 0.0);
          out[0] = g0 + amp * std::sin(k * x[0]);
        },
        kSpace);
  } else {
    spec.g = CoefficientField::constant(m, 1, mode_one(p.g0));
  }
  return spec;
}

}  // namespace spdelab
