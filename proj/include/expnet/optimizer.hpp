#pragma once

#include "expnet/config.hpp"
#include "expnet/layers.hpp"
#include "expnet/tensor.hpp"

#include <vector>

namespace expnet {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamWConfig from(const TrainConfig& c);
};

template <typename Scalar>
struct AdamState {
  Array<Scalar> m;
  Array<Scalar> v;
  long long step = 0;
};

/// Learning rate for optimizer step `step` (0-based) of `total_steps`.
/// Cosine runs from the base rate at step 0 down towards 0 at the last step.
double scheduled_learning_rate(const TrainConfig& config, long long step, long long total_steps);

/// One AdamW update of `param` in place: bias-corrected moments, then
/// param -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * param).
template <typename Scalar>
void adamw_update(Array<Scalar>& param, const Array<Scalar>& grad, AdamState<Scalar>& state, const AdamWConfig& config);

/// AdamW over a parameter set, one state slot per parameter.
template <typename Scalar>
class AdamW {
 public:
  explicit AdamW(const AdamWConfig& config) : config_(config) {}

  /// Apply `grads` (aligned with params.entries()) to the parameters.
  void step(ParameterSet<Scalar>& params, const std::vector<Array<Scalar>>& grads);
  /// Apply the gradients accumulated on the parameters themselves.
  void step(ParameterSet<Scalar>& params);

  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  double learning_rate() const { return config_.learning_rate; }

  const std::vector<AdamState<Scalar>>& state() const { return state_; }

 private:
  AdamWConfig config_;
  std::vector<AdamState<Scalar>> state_;
};

}  // namespace expnet
