#include "expnet/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace expnet {

AdamWConfig AdamWConfig::from(const TrainConfig& c) {
  return {c.learning_rate, c.weight_decay, c.beta1, c.beta2, c.epsilon};
}

double scheduled_learning_rate(const TrainConfig& config, long long step, long long total_steps) {
  if (step < 0 || step >= total_steps)
    throw std::invalid_argument("scheduled_learning_rate: step " + std::to_string(step) + " outside [0, " +
                                std::to_string(total_steps) + ")");
  if (config.lr_schedule == LrSchedule::constant) return config.learning_rate;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return 0.5 * config.learning_rate * (1.0 + std::cos(std::acos(-1.0) * t));
}

template <typename Scalar>
void adamw_update(Array<Scalar>& param, const Array<Scalar>& grad, AdamState<Scalar>& state, const AdamWConfig& config) {
  if (grad.size() != param.size())
    throw std::invalid_argument("adamw: gradient has " + std::to_string(grad.size()) + " values, parameter has " +
                                std::to_string(param.size()));
  if (state.m.size() == 0) {
    state.m = Array<Scalar>::Zero(param.size());
    state.v = Array<Scalar>::Zero(param.size());
  }
  if (state.m.size() != param.size()) throw std::invalid_argument("adamw: optimizer state does not match parameter");
  ++state.step;
  const Scalar b1 = static_cast<Scalar>(config.beta1), b2 = static_cast<Scalar>(config.beta2);
  state.m = b1 * state.m + (Scalar(1) - b1) * grad;
  state.v = b2 * state.v + (Scalar(1) - b2) * grad.square();
  const Scalar c1 = Scalar(1) - static_cast<Scalar>(std::pow(config.beta1, static_cast<double>(state.step)));
  const Scalar c2 = Scalar(1) - static_cast<Scalar>(std::pow(config.beta2, static_cast<double>(state.step)));
  const Scalar lr = static_cast<Scalar>(config.learning_rate);
  const Scalar eps = static_cast<Scalar>(config.epsilon);
  const Scalar decay = lr * static_cast<Scalar>(config.weight_decay);
  param *= Scalar(1) - decay;
  param -= lr * (state.m / c1) / ((state.v / c2).sqrt() + eps);
}

template <typename Scalar>
void AdamW<Scalar>::step(ParameterSet<Scalar>& params, const std::vector<Array<Scalar>>& grads) {
  if (grads.size() != params.size())
    throw std::invalid_argument("adamw: " + std::to_string(grads.size()) + " gradients for " +
                                std::to_string(params.size()) + " parameters");
  state_.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<Scalar> p = params.entries()[i].second;
    try {
      adamw_update(p.mutable_values(), grads[i], state_[i], config_);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(params.entries()[i].first + ": " + e.what());
    }
  }
}

template <typename Scalar>
void AdamW<Scalar>::step(ParameterSet<Scalar>& params) {
  std::vector<Array<Scalar>> grads;
  for (const auto& [name, t] : params.entries()) grads.push_back(t.grad());
  step(params, grads);
}

template void adamw_update(Array<float>&, const Array<float>&, AdamState<float>&, const AdamWConfig&);
template void adamw_update(Array<double>&, const Array<double>&, AdamState<double>&, const AdamWConfig&);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace expnet
