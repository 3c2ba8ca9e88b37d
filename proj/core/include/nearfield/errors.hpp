#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace nearfield {

/// Evaluation requested outside a surface piece's horizontal domain.
struct OutOfDomain : std::domain_error {
  using std::domain_error::domain_error;
};

/// A ray failed to intersect the target within the configured range.
struct RayMiss : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A ray crossed the target graph more than once inside its domain.
struct AmbiguousHit : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An iterative method exhausted its budget; carries the last residual.
struct ConvergenceFailure : std::runtime_error {
  double last_residual;
  ConvergenceFailure(const std::string& what, double residual)
      : std::runtime_error(what), last_residual(residual) {}
};

/// Wedge-curve construction failed for a subset of the lambda grid.
struct WedgeMiss : std::runtime_error {
  std::vector<double> bad_lambdas;
  WedgeMiss(const std::string& what, std::vector<double> bad)
      : std::runtime_error(what), bad_lambdas(std::move(bad)) {}
};

}  // namespace nearfield
