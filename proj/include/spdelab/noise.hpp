#pragma once

// Seeded truncated Wiener paths and the adapted (time-restricted) view that
// coefficient fields receive.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <vector>

#include "spdelab/errors.hpp"

namespace spdelab {

struct NoiseConfig {
  std::size_t modes = 4;
  std::size_t n_steps = 1;
  double horizon = 1.0;
  /// Mean-reversion rate of the companion Ornstein-Uhlenbeck processes; 0 disables them.
  double ou_rate = 0.0;

  double dt() const { return horizon / static_cast<double>(n_steps); }

  void validate() const {
    if (modes == 0) throw ArgumentError("noise: modes must be positive");
    if (n_steps == 0) throw ArgumentError("noise: n_steps must be >= 1");
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ArgumentError("noise: horizon must be positive");
    if (ou_rate < 0.0) throw ArgumentError("noise: ou_rate must be >= 0");
  }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Portable standard normal generator (Box-Muller on 53-bit uniforms), so that
/// paths do not depend on the standard library's distribution implementation.
class GaussianStream {
 public:
  explicit GaussianStream(std::uint64_t seed) : engine_(seed) {}

  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform_open();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  // uniform on (0, 1]
  double uniform_open() {
    return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
  }

  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace detail

/// Stable per-sample stream seed derived from (master_seed, sample_index).
inline std::uint64_t stream_seed(std::uint64_t master_seed, std::uint64_t sample_index) {
  return detail::splitmix64(master_seed ^ detail::splitmix64(sample_index + 0x5851F42D4C957F2Dull));
}

/// One realization of M independent Wiener processes on a uniform time grid.
class WienerPath {
 public:
  WienerPath(NoiseConfig config, std::vector<double> increments, std::uint64_t master_seed = 0,
             std::uint64_t sample_index = 0)
      : config_(config),
        increments_(std::move(increments)),
        master_seed_(master_seed),
        sample_index_(sample_index) {
    config_.validate();
    if (increments_.size() != config_.modes * config_.n_steps)
      throw ArgumentError("WienerPath: increments must have modes * n_steps entries");
    const std::size_t stride = config_.n_steps + 1;
    cumulative_.assign(config_.modes * stride, 0.0);
    for (std::size_t k = 0; k < config_.modes; ++k) {
      double acc = 0.0;
      for (std::size_t j = 0; j < config_.n_steps; ++j) {
        acc += increments_[k * config_.n_steps + j];
        cumulative_[k * stride + j + 1] = acc;
      }
    }
    if (config_.ou_rate > 0.0) {
      ou_.assign(config_.modes * stride, 0.0);
      const double decay = std::exp(-config_.ou_rate * config_.dt());
      for (std::size_t k = 0; k < config_.modes; ++k)
        for (std::size_t j = 0; j < config_.n_steps; ++j)
          ou_[k * stride + j + 1] = decay * ou_[k * stride + j] + increments_[k * config_.n_steps + j];
    }
  }

  const NoiseConfig& config() const { return config_; }
  std::size_t modes() const { return config_.modes; }
  std::size_t n_steps() const { return config_.n_steps; }
  double dt() const { return config_.dt(); }
  double time(std::size_t step) const { return config_.horizon * static_cast<double>(step) / static_cast<double>(config_.n_steps); }
  std::uint64_t master_seed() const { return master_seed_; }
  std::uint64_t sample_index() const { return sample_index_; }

  /// ΔW^k over [t_j, t_{j+1}].
  double increment(std::size_t mode, std::size_t step) const { return increments_[mode * config_.n_steps + step]; }
  /// W^k(t_j); cumulative(k, 0) == 0.
  double cumulative(std::size_t mode, std::size_t step) const { return cumulative_[mode * (config_.n_steps + 1) + step]; }
  /// Companion OU process Y^k(t_j) = e^{-θ dt} Y^k(t_{j-1}) + ΔW^k_{j-1}; requires ou_rate > 0.
  double ou(std::size_t mode, std::size_t step) const {
    if (ou_.empty()) throw ArgumentError("WienerPath: OU companion requested but ou_rate == 0");
    return ou_[mode * (config_.n_steps + 1) + step];
  }

  /// Grid step whose time is the largest grid time <= t.
  std::size_t step_at(double t) const {
    const double x = t / config_.dt();
    const double r = std::round(x);
    const double idx = std::abs(x - r) < 1e-9 ? r : std::floor(x);
    if (idx < 0.0) return 0;
    return std::min<std::size_t>(static_cast<std::size_t>(idx), config_.n_steps);
  }

 private:
  NoiseConfig config_;
  std::vector<double> increments_;
  std::vector<double> cumulative_;
  std::vector<double> ou_;
  std::uint64_t master_seed_;
  std::uint64_t sample_index_;
};

/// Deterministic function of (config, master_seed, sample_index).
inline WienerPath sample_path(const NoiseConfig& config, std::uint64_t master_seed, std::uint64_t sample_index) {
  config.validate();
  detail::GaussianStream normal(stream_seed(master_seed, sample_index));
  const double scale = std::sqrt(config.dt());
  std::vector<double> increments(config.modes * config.n_steps);
  for (double& dw : increments) dw = scale * normal();
  return WienerPath(config, std::move(increments), master_seed, sample_index);
}

/// Read-only view of a path that refuses reads beyond a limit time.
///
/// A default-constructed view is bound to no path; any read throws. Coefficients
/// that do not depend on the noise never read it.
class PathView {
 public:
  PathView() = default;
  PathView(const WienerPath& path, std::size_t limit_step) : path_(&path), limit_step_(limit_step) {}

  bool bound() const { return path_ != nullptr; }
  const WienerPath* path() const { return path_; }
  std::size_t limit_step() const { return limit_step_; }
  double limit_time() const { return path_ ? path_->time(limit_step_) : 0.0; }
  std::size_t modes() const { return path_ ? path_->modes() : 0; }

  /// W^k at time t (value at the last grid time <= t).
  double value(std::size_t mode, double t) const { return require(t) ? path_->cumulative(mode, path_->step_at(t)) : 0.0; }
  double at_step(std::size_t mode, std::size_t step) const {
    require_step(step);
    return path_->cumulative(mode, step);
  }
  double ou(std::size_t mode, double t) const { return require(t) ? path_->ou(mode, path_->step_at(t)) : 0.0; }

 private:
  bool require(double t) const {
    if (!path_) throw ArgumentError("PathView: no path bound to this view");
    const double limit = limit_time();
    if (t > limit + 1e-12 * std::max(1.0, path_->config().horizon)) throw AdaptednessViolation(t, limit);
    return true;
  }
  void require_step(std::size_t step) const {
    if (!path_) throw ArgumentError("PathView: no path bound to this view");
    if (step > limit_step_) throw AdaptednessViolation(path_->time(step), limit_time());
  }

  const WienerPath* path_ = nullptr;
  std::size_t limit_step_ = 0;
};

/// View of `path` restricted to [0, t]; t must lie in [0, T].
inline PathView restrict(const WienerPath& path, double t) {
  const double horizon = path.config().horizon;
  if (t < -1e-12 * horizon || t > horizon * (1.0 + 1e-12))
    throw ArgumentError("restrict: t outside [0, T]");
  return PathView(path, path.step_at(std::clamp(t, 0.0, horizon)));
}

inline PathView restrict_to_step(const WienerPath& path, std::size_t step) {
  if (step > path.n_steps()) throw ArgumentError("restrict_to_step: step beyond horizon");
  return PathView(path, step);
}

/// CSV dump with columns step, t, W1..WM.
inline void write_path_csv(const WienerPath& path, std::ostream& out) {
  out << "step,t";
  for (std::size_t k = 0; k < path.modes(); ++k) out << ",W" << (k + 1);
  out << '\n';
  char buf[64];
  for (std::size_t j = 0; j <= path.n_steps(); ++j) {
    out << j;
    std::snprintf(buf, sizeof buf, ",%.17g", path.time(j));
    out << buf;
    for (std::size_t k = 0; k < path.modes(); ++k) {
      std::snprintf(buf, sizeof buf, ",%.17g", path.cumulative(k, j));
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace spdelab
