#pragma once

#include "expnet/config.hpp"
#include "expnet/gaze_shift.hpp"
#include "expnet/layers.hpp"
#include "expnet/nefirf.hpp"
#include "expnet/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace expnet {

/// Pre-activation residual block: x + conv(relu(norm(conv(relu(norm(x)))))).
template <typename Scalar>
struct ResidualBlock {
  Norm<Scalar> norm1;
  Conv2d<Scalar> conv1;
  Norm<Scalar> norm2;
  Conv2d<Scalar> conv2;

  static ResidualBlock make(ParamFactory<Scalar> f, Index channels);
  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const;
};

template <typename Scalar>
Tensor<Scalar> residual_stage_forward(const Tensor<Scalar>& f, const std::vector<ResidualBlock<Scalar>>& blocks);

template <typename Scalar>
struct FusionParams {
  std::vector<Mlp<Scalar>> adapters;        // mlp_add: [focal, impression 1, ...]
  std::vector<Linear<Scalar>> projections;  // cross_attention: [focal, impression 1, ...]
  CrossAttnParams<Scalar> attention;        // cross_attention only

  static FusionParams make(ParamFactory<Scalar> f, FusionMode mode, Index focal_width, Index impression_width,
                           Index impressions, Index fusion_width, Index heads);
};

/// Fuse the final focal embedding with the stage impressions.
/// mlp_add: sum of per-source two-layer perceptrons. cross_attention: the
/// projected focal embedding queries the projected impressions; the attended
/// result is added to the projected focal embedding.
template <typename Scalar>
Tensor<Scalar> fuse_embeddings(const Tensor<Scalar>& focal, const std::vector<Tensor<Scalar>>& impressions,
                               const FusionParams<Scalar>& params, FusionMode mode);

template <typename Scalar>
struct ExpNetParams {
  ParameterSet<Scalar> params;
  Conv2d<Scalar> stem;
  std::vector<std::vector<ResidualBlock<Scalar>>> stages;
  std::vector<GazeShiftParams<Scalar>> gaze;  // S-1 entries unless focal is off
  std::vector<Conv2d<Scalar>> transitions;    // focal off: plain channel-doubling convs
  FusionParams<Scalar> fusion;
  Linear<Scalar> head;

  static ExpNetParams make(const ModelConfig& config, std::uint64_t seed);
};

template <typename Scalar>
struct ExpNetOutput {
  Tensor<Scalar> logits;
  std::vector<Tensor<Scalar>> impressions;
  std::vector<SaliencyMap<Scalar>> saliency_maps;
  Tensor<Scalar> focal_embedding;
};

/// Stem, stages interleaved with Gaze-Shift, GAP, fusion, linear head.
template <typename Scalar>
ExpNetOutput<Scalar> expnet_forward(const Tensor<Scalar>& image, const ExpNetParams<Scalar>& params,
                                    const ModelConfig& config,
                                    ThresholdGradient gradient = ThresholdGradient::straight_through);

template <typename Scalar>
Tensor<Scalar> training_loss(const ExpNetOutput<Scalar>& output, Index label);

/// Argmax of the logits; ties resolve to the lowest class index.
template <typename Scalar>
Index predict_class(const Tensor<Scalar>& logits);

/// Directory with manifest.txt (config keys, epoch, seed) and one
/// `<parameter>.expt` tensor file per parameter.
void save_checkpoint(const std::string& dir, const ModelConfig& config, const ExpNetParams<float>& params, int epoch,
                     std::uint64_t seed);

struct Checkpoint {
  ModelConfig config;
  ExpNetParams<float> params;
  int epoch = 0;
  std::uint64_t seed = 0;
};

Checkpoint load_checkpoint(const std::string& dir);

}  // namespace expnet
