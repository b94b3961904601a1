#include "expnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace expnet {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

double finite_difference_check(const std::function<Tensor<double>(const Tensor<double>&)>& fn,
                               const Tensor<double>& point, double eps) {
  Tensor<double> x(point.shape(), point.values(), true);
  GradCheckReport report = check_leaf_gradients([&] { return fn(x); }, {{"x", x}}, eps);
  return report.max_rel_error;
}

GradCheckReport check_leaf_gradients(const std::function<Tensor<double>()>& loss,
                                     const std::vector<std::pair<std::string, Tensor<double>>>& leaves,
                                     double eps, Index samples, std::uint64_t seed, double floor) {
  std::vector<Array<double>> analytic;
  {
    Tape<double> tape;
    Tensor<double> value = loss();
    if (value.size() != 1) throw std::invalid_argument("gradient check needs a scalar function");
    if (value.requires_grad()) tape.backward(value, false);
    analytic.reserve(leaves.size());
    for (const auto& [name, leaf] : leaves) {
      Array<double> g = Array<double>::Zero(leaf.size());
      for (const auto& [node, lg] : tape.leaf_gradients())
        if (node == leaf.node()) g = lg;
      analytic.push_back(std::move(g));
    }
  }

  std::vector<std::pair<std::size_t, Index>> coords;
  Index total = 0;
  for (const auto& [name, leaf] : leaves) total += leaf.size();
  if (samples > 0 && samples < total) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Index> pick(0, total - 1);
    for (Index s = 0; s < samples; ++s) {
      Index flat = pick(rng);
      std::size_t li = 0;
      while (flat >= leaves[li].second.size()) flat -= leaves[li++].second.size();
      coords.emplace_back(li, flat);
    }
  } else {
    for (std::size_t li = 0; li < leaves.size(); ++li)
      for (Index i = 0; i < leaves[li].second.size(); ++i) coords.emplace_back(li, i);
  }

  double scale = 1.0;
  for (const auto& g : analytic)
    if (g.size() > 0) scale = std::max(scale, g.abs().maxCoeff());
  const double effective_floor = floor * scale;

  GradCheckReport report;
  const double center = loss().item();
  for (const auto& [li, i] : coords) {
    Tensor<double> leaf = leaves[li].second;
    double& v = leaf.mutable_values()[i];
    const double saved = v;
    v = saved + eps;
    const double up = loss().item();
    v = saved - eps;
    const double down = loss().item();
    v = saved;
    const double forward = (up - center) / eps, backward = (center - down) / eps;
    if (std::abs(forward - backward) > 1e-4 * std::max({std::abs(forward), std::abs(backward), effective_floor})) {
      ++report.kinks;
      continue;
    }
    const double numeric = (up - down) / (2.0 * eps);
    const double err = relative_error(analytic[li][i], numeric, effective_floor);
    ++report.coordinates;
    if (err > report.max_rel_error || report.worst.empty()) {
      report.max_rel_error = std::max(report.max_rel_error, err);
      report.analytic_at_worst = analytic[li][i];
      report.numeric_at_worst = numeric;
      report.worst = leaves[li].first + "[" + std::to_string(i) + "]";
    }
  }
  return report;
}

}  // namespace expnet
