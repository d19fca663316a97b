// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace scalabl {

/// Operand shapes do not agree with what an operation requires.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical failure: non-finite values, a non positive-definite matrix,
/// a diverging loss. Maps to exit code 2 on the command line.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Cholesky hit a non-positive pivot.
class NotPositiveDefinite : public NumericError {
 public:
  NotPositiveDefinite(std::size_t pivot, double value)
      : NumericError("matrix is not positive definite: pivot " + std::to_string(pivot) +
                     " has value " + std::to_string(value)),
        pivot_(pivot) {}
  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

/// Bad user input: invalid config values, unknown method names, bad flags.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A file that cannot be parsed or does not match what the caller expects.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A checkpoint that does not fit the model or method it is loaded into.
class IncompatibleCheckpoint : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace scalabl
