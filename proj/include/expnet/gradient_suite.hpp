#pragma once

#include "expnet/gradcheck.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace expnet {

/// Result of checking one registered operation over several random instances.
struct OpGradCheck {
  std::string op;
  int instances = 0;
  Index coordinates = 0;  // compared coordinates over all instances
  Index kinks = 0;        // skipped as non-differentiable
  double max_rel_error = 0;
  std::string worst;  // "<leaf>[<index>] analytic=... numeric=..."
};

/// Names of the operations the finite-difference suite covers, in run order.
std::vector<std::string> gradient_suite_ops();

/// Check `op` on `instances` random double-precision instances. Each
/// instance reduces the op's output with a fixed random weighting to a
/// scalar and compares reverse-mode gradients of every input and parameter
/// against central differences.
OpGradCheck check_op_gradients(const std::string& op, int instances, std::uint64_t seed);

std::vector<OpGradCheck> run_gradient_suite(int instances = 10, std::uint64_t seed = 0);

}  // namespace expnet
