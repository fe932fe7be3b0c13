#pragma once

#include <stdexcept>
#include <string>

namespace cdlab {

/// Malformed or schema-invalid experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A constraint set or composition that cannot be satisfied (empty support
/// intersection, runaway multipliers, infinite divergences).
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical blow-up: non-finite states, diverging losses or chains.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Path-wise quantities requested on a step with zero injected noise.
class DeterministicStepError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace cdlab
