#pragma once

// Test-local oracles: a plain central-difference gradient and a brute-force
// relative comparison, kept independent of the library's gradcheck module.

#include "expnet/layers.hpp"
#include "expnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace expnet::testing {

inline Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double scale = 1.0,
                                    bool requires_grad = true) {
  std::normal_distribution<double> n(0.0, scale);
  Array<double> v(shape_size(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = n(rng);
  return Tensor<double>(shape, std::move(v), requires_grad);
}

/// d loss / d leaf by central differences, perturbing the leaf in place.
inline std::vector<double> central_difference(const std::function<double()>& loss, Tensor<double> leaf,
                                              double eps = 1e-6) {
  std::vector<double> g(static_cast<std::size_t>(leaf.size()));
  for (Index i = 0; i < leaf.size(); ++i) {
    double& v = leaf.mutable_values()[i];
    const double saved = v;
    v = saved + eps;
    const double up = loss();
    v = saved - eps;
    const double down = loss();
    v = saved;
    g[static_cast<std::size_t>(i)] = (up - down) / (2 * eps);
  }
  return g;
}

/// Reverse-mode gradients of every leaf (flushed into the leaves).
inline void run_backward(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> leaves) {
  for (auto& l : leaves) l.zero_grad();
  Tape<double> tape;
  Tensor<double> out = loss();
  tape.backward(out);
}

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor * max(1, max|a|))
inline double max_relative_error(const Array<double>& analytic, const std::vector<double>& numeric,
                                 double floor = 1e-5) {
  double scale = 1.0;
  for (Index i = 0; i < analytic.size(); ++i) scale = std::max(scale, std::abs(analytic[i]));
  double worst = 0;
  for (Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[static_cast<std::size_t>(i)];
    worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor * scale}));
  }
  return worst;
}

/// Largest relative error over all leaves of `loss`.
inline double gradient_error(const std::function<Tensor<double>()>& loss, const std::vector<Tensor<double>>& leaves,
                             double floor = 1e-5) {
  run_backward(loss, leaves);
  double worst = 0;
  for (const auto& leaf : leaves) {
    const Array<double> analytic = leaf.grad();
    const auto numeric = central_difference([&] { return loss().item(); }, leaf);
    worst = std::max(worst, max_relative_error(analytic, numeric, floor));
  }
  return worst;
}

/// Adds Gaussian noise to every parameter, moving zero-initialized ones
/// (offset predictors in particular) off the integer sampling grid.
inline void jitter(ParameterSet<double>& ps, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  for (auto& entry : ps.entries()) {
    Tensor<double> t = entry.second;
    for (Index i = 0; i < t.size(); ++i) t.mutable_values()[i] += n(rng);
  }
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("expnet_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace expnet::testing
