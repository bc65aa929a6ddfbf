#pragma once

#include <cstdint>

#include "cforge/io.hpp"

// Numerical self-checks behind `cforge verify`.
namespace cforge::selfcheck {

struct GradientCheck {
  std::uint64_t seed = 0;
  double max_relative_error = 0.0;  // max |analytic - fd| / max |fd|
};

/// grad_soft against central differences on a random reference-encoder instance.
GradientCheck check_gradient(std::uint64_t seed, double step = 1e-5);

struct KlCheckResult {
  std::uint64_t seed = 0;
  double analytic = 0.0;
  double empirical = 0.0;
  double standard_error = 0.0;
  bool within_3se = false;
};

/// Random 3-D means, sigma = 0.7.
KlCheckResult check_kl(std::uint64_t seed, int n_samples = 100000);

/// Runs both families; "passed" is true when every instance is in tolerance.
json run_all(int gradient_instances = 20, int kl_instances = 10);

}  // namespace cforge::selfcheck
