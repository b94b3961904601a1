#pragma once

#include "expnet/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace expnet {

/// Outcome of comparing reverse-mode gradients with central differences.
struct GradCheckReport {
  double max_rel_error = 0.0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  Index coordinates = 0;
  Index kinks = 0;  // coordinates skipped as non-differentiable
  std::string worst;  // "<name>[<flat index>]"
};

/// |analytic - numeric| / max(|analytic|, |numeric|, floor). The floor keeps
/// structurally zero gradients, whose central differences are pure roundoff,
/// from reading as a 100% error.
double relative_error(double analytic, double numeric, double floor = 1e-12);

/// Max relative error of d fn / d point over every coordinate of `point`.
/// `fn` must return a single-element tensor.
double finite_difference_check(const std::function<Tensor<double>(const Tensor<double>&)>& fn,
                               const Tensor<double>& point, double eps = 1e-6);

/// Same comparison for a loss closed over several leaves (for example model
/// parameters). Leaf values are perturbed in place and restored. When
/// `samples` is positive only that many coordinates, drawn uniformly over all
/// leaf coordinates, are checked; otherwise every coordinate is. The
/// relative-error floor is `floor` times the largest analytic gradient
/// magnitude (at least 1), so it tracks the scale of the loss.
///
/// A coordinate whose forward and backward one-sided slopes disagree by more
/// than 1e-4 (relative) sits on a kink (relu, max, bilinear cell edge) where
/// the derivative does not exist; it is counted in `kinks` and not compared.
/// A kink crossed on one side only shifts the central difference by half the
/// slope gap, so undetected kinks stay below 5e-5 relative error.
GradCheckReport check_leaf_gradients(const std::function<Tensor<double>()>& loss,
                                     const std::vector<std::pair<std::string, Tensor<double>>>& leaves,
                                     double eps = 1e-6, Index samples = 0, std::uint64_t seed = 0,
                                     double floor = 1e-12);

}  // namespace expnet
