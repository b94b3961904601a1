#pragma once

#include "expnet/ops.hpp"
#include "expnet/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace expnet {

/// Named, ordered collection of learnable leaves.
template <typename Scalar>
class ParameterSet {
 public:
  using Entry = std::pair<std::string, Tensor<Scalar>>;

  Tensor<Scalar> add(const std::string& name, Tensor<Scalar> tensor) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name " + name);
    tensor.set_requires_grad(true);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, tensor);
    return tensor;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  Index scalar_count() const {
    Index n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
  }

  const Tensor<Scalar>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second].second;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Seeded parameter factory. Values are drawn in double precision and then
/// cast, so float and double models built from one seed agree up to rounding.
template <typename Scalar>
class ParamFactory {
 public:
  ParamFactory(ParameterSet<Scalar>& params, std::uint64_t seed) : params_(&params), rng_(std::make_shared<std::mt19937_64>(seed)) {}

  ParamFactory scope(const std::string& name) const {
    ParamFactory child(*this);
    child.prefix_ = prefix_.empty() ? name : prefix_ + "." + name;
    return child;
  }

  Tensor<Scalar> normal(const std::string& name, Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Array<Scalar> v(shape_size(shape));
    for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(stddev * dist(*rng_));
    return register_tensor(name, Tensor<Scalar>(std::move(shape), std::move(v)));
  }

  Tensor<Scalar> uniform(const std::string& name, Shape shape, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Array<Scalar> v(shape_size(shape));
    for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(dist(*rng_));
    return register_tensor(name, Tensor<Scalar>(std::move(shape), std::move(v)));
  }

  Tensor<Scalar> constant(const std::string& name, Shape shape, double value) {
    return register_tensor(name, Tensor<Scalar>::full(std::move(shape), static_cast<Scalar>(value)));
  }

  Tensor<Scalar> from_values(const std::string& name, Shape shape, const std::vector<double>& values) {
    Array<Scalar> v(static_cast<Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) v[static_cast<Index>(i)] = static_cast<Scalar>(values[i]);
    return register_tensor(name, Tensor<Scalar>(std::move(shape), std::move(v)));
  }

 private:
  Tensor<Scalar> register_tensor(const std::string& name, Tensor<Scalar> t) {
    return params_->add(prefix_.empty() ? name : prefix_ + "." + name, std::move(t));
  }

  ParameterSet<Scalar>* params_;
  std::shared_ptr<std::mt19937_64> rng_;
  std::string prefix_;
};

template <typename Scalar>
struct Conv2d {
  Tensor<Scalar> weight;  // [kh,kw,Cin,Cout]
  Tensor<Scalar> bias;    // [Cout]
  Index stride = 1;
  Index padding = 0;

  /// He-normal weights, zero bias.
  static Conv2d make(ParamFactory<Scalar> f, Index kernel, Index in, Index out, Index stride, Index padding,
                     double gain = 1.0) {
    const double std = gain * std::sqrt(2.0 / static_cast<double>(kernel * kernel * in));
    return {f.normal("weight", {kernel, kernel, in, out}, std), f.constant("bias", {out}, 0.0), stride, padding};
  }

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return conv2d(x, weight, bias, stride, padding); }
  Index out_channels() const { return weight.dim(3); }
};

template <typename Scalar>
struct Linear {
  Tensor<Scalar> weight;  // [in,out]
  Tensor<Scalar> bias;    // [out]

  static Linear make(ParamFactory<Scalar> f, Index in, Index out, double gain = 1.0) {
    return {f.normal("weight", {in, out}, gain / std::sqrt(static_cast<double>(in))), f.constant("bias", {out}, 0.0)};
  }

  /// Rows of x[n,in] -> [n,out].
  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return linear(x, weight, bias); }

  /// A 1-D embedding [in] -> [out].
  Tensor<Scalar> vector(const Tensor<Scalar>& x) const {
    return reshape(linear(reshape(x, {1, x.size()}), weight, bias), {weight.dim(1)});
  }
};

/// Learned per-channel scale and shift around a normalization.
template <typename Scalar>
struct Norm {
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;

  static Norm make(ParamFactory<Scalar> f, Index channels) {
    return {f.constant("gamma", {channels}, 1.0), f.constant("beta", {channels}, 0.0)};
  }
};

/// Two-layer perceptron with a ReLU between the layers.
template <typename Scalar>
struct Mlp {
  Linear<Scalar> first;
  Linear<Scalar> second;

  static Mlp make(ParamFactory<Scalar> f, Index in, Index hidden, Index out) {
    return {Linear<Scalar>::make(f.scope("fc1"), in, hidden, std::sqrt(2.0)), Linear<Scalar>::make(f.scope("fc2"), hidden, out)};
  }

  Tensor<Scalar> vector(const Tensor<Scalar>& x) const { return second.vector(relu(first.vector(x))); }
};

/// Deformable convolution: a regular convolution predicts per-tap sampling
/// offsets, which then steer the main kernel.
template <typename Scalar>
struct DeformableConv {
  Conv2d<Scalar> offset;  // emits 2*kh*kw channels
  Tensor<Scalar> weight;  // [kh,kw,Cin,Cout]
  Tensor<Scalar> bias;
  Index stride = 1;
  Index padding = 1;

  /// Offset predictor starts at zero so the layer begins as a plain convolution.
  static DeformableConv make(ParamFactory<Scalar> f, Index kernel, Index in, Index out, Index stride, Index padding) {
    DeformableConv d;
    auto fo = f.scope("offset");
    d.offset = {fo.constant("weight", {kernel, kernel, in, 2 * kernel * kernel}, 0.0),
                fo.constant("bias", {2 * kernel * kernel}, 0.0), stride, padding};
    d.weight = f.normal("weight", {kernel, kernel, in, out}, std::sqrt(2.0 / static_cast<double>(kernel * kernel * in)));
    d.bias = f.constant("bias", {out}, 0.0);
    d.stride = stride;
    d.padding = padding;
    return d;
  }

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const {
    return deformable_conv2d(x, offset(x), weight, bias, stride, padding);
  }
};

}  // namespace expnet
