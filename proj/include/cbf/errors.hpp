#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cbf {

/// Base class for all toolkit errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Expression text could not be parsed; `position` is a 0-based byte offset.
struct ParseError : Error {
  ParseError(const std::string& what, std::size_t position)
      : Error(what), position(position) {}
  std::size_t position = 0;
};

/// Evaluation hit a singularity (log of nonpositive, division by zero, ...).
struct DomainError : Error {
  DomainError(const std::string& what, std::string subexpression)
      : Error(what), subexpression(std::move(subexpression)) {}
  std::string subexpression;
};

/// A system document violates the input schema.
struct SchemaError : Error {
  using Error::Error;
};

/// Declared dimensions disagree with the supplied data.
struct DimensionMismatch : SchemaError {
  using SchemaError::SchemaError;
};

/// The barrier condition is unsatisfiable at a state inside the safe set:
/// N(x) < 0 while ||grad h(x) G(x)|| is numerically zero.
struct CBFViolation : Error {
  CBFViolation(const std::string& what, std::vector<double> state, double N,
               double lgh_norm)
      : Error(what), state(std::move(state)), N(N), lgh_norm(lgh_norm) {}
  std::vector<double> state;
  double N = 0;
  double lgh_norm = 0;
};

/// Two barriers handed to the independence check disagree in sign, so they
/// cannot share a superlevel set.
struct SignDisagreement : Error {
  SignDisagreement(const std::string& what, std::vector<double> state)
      : Error(what), state(std::move(state)) {}
  std::vector<double> state;
};

/// A test matrix was requested away from the discontinuity set.
struct NotAZPoint : Error {
  using Error::Error;
};

/// Symbolic and finite-difference derivative rows disagree.
struct CrossCheckFailure : Error {
  using Error::Error;
};

/// Every sample along a probed ray was outside the controller's domain.
struct AllUndefined : Error {
  using Error::Error;
};

/// simulate() was handed an initial state with h(x0) < 0.
struct InitialStateUnsafe : Error {
  using Error::Error;
};

}  // namespace cbf
