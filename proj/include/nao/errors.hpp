#pragma once

#include <stdexcept>
#include <string>

namespace nao {

// Shape/dimension mismatches between operands. Messages name both shapes.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Non-finite values produced where the contract promises finite results,
// and division guards (zero-norm denominators).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operation called out of order (e.g. backward before forward).
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

// Invalid configuration: unknown kernel family, L < 2, unsupported variant,
// malformed config file (message carries line info where applicable).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Adaptive quadrature failed to reach the requested tolerance within budget.
struct QuadratureError : std::runtime_error {
  double achieved_error;
  QuadratureError(const std::string& msg, double err)
      : std::runtime_error(msg), achieved_error(err) {}
};

// Linear-algebra failure (singular or non-PD system); carries a condition
// estimate when one is available.
struct SolveError : std::runtime_error {
  double condition_estimate;
  explicit SolveError(const std::string& msg, double cond = 0.0)
      : std::runtime_error(msg), condition_estimate(cond) {}
};

// Degenerate data: all-zero empirical measure, constant row-sum histogram.
struct DegenerateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace nao
