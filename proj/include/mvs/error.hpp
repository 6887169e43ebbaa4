#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mvs {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition violated by the caller (grid mismatch, t <= 0, bad sizes).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Configuration rejected at load time (schema, unsupported preset,
/// coefficients outside their admissible class).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A computation produced a non-finite or otherwise inadmissible value.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Fixed-point iteration did not reach its tolerance.
class ConvergenceError : public NumericalError {
 public:
  ConvergenceError(const std::string& what, std::vector<double> residuals)
      : NumericalError(what), residuals_(std::move(residuals)) {}
  const std::vector<double>& residuals() const { return residuals_; }

 private:
  std::vector<double> residuals_;
};

/// Solution mass reached the edges of the truncated domain.
class DomainTruncationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// A characteristic left the region where the noise field is defined.
class FlowExitError : public NumericalError {
 public:
  FlowExitError(const std::string& what, double start, double exit_time)
      : NumericalError(what), start_(start), exit_time_(exit_time) {}
  double start() const { return start_; }
  double exit_time() const { return exit_time_; }

 private:
  double start_;
  double exit_time_;
};

}  // namespace mvs
