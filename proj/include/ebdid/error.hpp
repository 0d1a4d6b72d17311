#pragma once

#include <stdexcept>
#include <string>

namespace ebdid {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input: bad panel rows, bad configuration, invalid overrides.
class InputError : public Error {
 public:
  using Error::Error;
};

// Numerical failures. The CLI maps these to exit code 2.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Iteration budget exhausted before the constraint residual fell below tolerance.
class NonConvergence : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Targets lie outside the convex hull of the comparison constraint rows.
class InfeasibleTargets : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Constraint columns are collinear after standardization.
class DegenerateConstraints : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Regression design does not have full column rank.
class RankDeficient : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Matching produced no pairs, so there is no matched sample to estimate on.
class EmptyMatchSet : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace ebdid
