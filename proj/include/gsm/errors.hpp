#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace gsm {

/// Non-fatal diagnostics collected while computing a result.
using Warnings = std::vector<std::string>;

/// Base for failures of a numerical procedure (as opposed to bad input).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InsufficientSamplesError : NumericalError {
  using NumericalError::NumericalError;
};

struct ZeroPowerError : NumericalError {
  using NumericalError::NumericalError;
};

struct ConvergenceError : NumericalError {
  using NumericalError::NumericalError;
};

struct SolverError : NumericalError {
  using NumericalError::NumericalError;
};

struct HermiteOrderError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

/// Two collections were expected to share an index set and do not.
struct IndexMismatchError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Malformed input file (CSV, dump sidecar). Carries the 1-based line number, 0 if unknown.
struct FormatError : std::runtime_error {
  FormatError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what), line(line) {}
  std::size_t line;
};

}  // namespace gsm
