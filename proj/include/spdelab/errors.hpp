#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace spdelab {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or violated precondition.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A hypothesis of the equation does not hold (e.g. non-symmetric diffusion).
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// A coefficient tried to read the noise path beyond its evaluation time.
class AdaptednessViolation : public Error {
 public:
  AdaptednessViolation(double requested, double limit)
      : Error("adaptedness violation: path read at t=" + std::to_string(requested) +
              " beyond restriction t=" + std::to_string(limit)),
        requested_(requested),
        limit_(limit) {}
  double requested_time() const { return requested_; }
  double limit_time() const { return limit_; }

 private:
  double requested_;
  double limit_;
};

/// Non-finite or exploding values during time stepping.
class BlowUpError : public Error {
 public:
  BlowUpError(std::size_t step, double magnitude)
      : Error("solver blow-up at step " + std::to_string(step) +
              " (max |u| = " + std::to_string(magnitude) + ")"),
        step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// A cylinder or region is too small for the grid.
class ResolutionError : public Error {
 public:
  using Error::Error;
};

/// A point lies outside the domain an operation is defined on.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Measured quantities contradict each other (e.g. zero modulus, nonzero increments).
class InconsistencyError : public Error {
 public:
  using Error::Error;
};

/// Configuration file or command-line problem.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace spdelab
