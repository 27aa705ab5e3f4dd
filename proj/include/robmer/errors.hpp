#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace robmer {

// Every failure names the violated invariant in its message. Input-shaped
// problems derive from InputError (CLI exit code 1); mathematically meaningful
// non-success is reported through structured results, not exceptions.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class InputError : public Error {
 public:
  using Error::Error;
};

struct NonSPDCovariance : InputError {
  using InputError::InputError;
};

struct InconsistentBox : InputError {
  using InputError::InputError;
};

struct CapBelowSpectrum : InputError {
  using InputError::InputError;
};

struct DeltaTooLarge : InputError {
  using InputError::InputError;
};

struct BadPreferences : InputError {
  using InputError::InputError;
};

struct BadAmbiguity : InputError {
  using InputError::InputError;
};

struct ZeroPortfolio : InputError {
  using InputError::InputError;
};

struct UnsupportedVariant : InputError {
  using InputError::InputError;
};

// Raised when an operation requiring a well-posed solution is fed an
// ill-posed one (the solvers themselves report ill-posedness structurally).
struct IllPosed : InputError {
  using InputError::InputError;
};

struct HorizonMismatch : InputError {
  using InputError::InputError;
};

struct DegenerateSample : InputError {
  using InputError::InputError;
};

// Carries the 1-based line number of the offending row.
struct MalformedCsv : InputError {
  MalformedCsv(const std::string& what, std::int64_t line)
      : InputError(what + " (line " + std::to_string(line) + ")"), line_number(line) {}
  std::int64_t line_number;
};

struct NoConvergence : Error {
  NoConvergence(const std::string& what, std::int64_t iters, double residual)
      : Error(what + " after " + std::to_string(iters) +
              " iterations, last residual " + std::to_string(residual)),
        iterations(iters),
        last_residual(residual) {}
  std::int64_t iterations;
  double last_residual;
};

struct IoFailure : Error {
  using Error::Error;
};

}  // namespace robmer
