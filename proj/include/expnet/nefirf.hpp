#pragma once

#include "expnet/layers.hpp"
#include "expnet/tensor.hpp"

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

// Neural Firing Fields: a small convolutional field over patch-center
// coordinates whose sine activations take their amplitude and frequency from
// the stage feature map. The field's sigmoid output, thresholded at 0.5, is
// the binary patch-level saliency map that drives Gaze-Shift.

namespace expnet {

enum class Band { low, middle, high };

/// How gradients cross the 0.5 threshold of the saliency map.
enum class ThresholdGradient {
  straight_through,  // backward treats the threshold as identity on the scores
  exact,             // true derivative of a step function: zero
};

/// [p,p,2] grid of patch centers in (-1,1): entry (i,j) = ((2i+1)/p - 1, (2j+1)/p - 1).
template <typename Scalar>
Tensor<Scalar> coordinate_grid(Index p);

/// Per-site conditioning: patch-average pooled features through a 1x1 conv
/// to two channels (amplitude, frequency).
template <typename Scalar>
struct ConditioningHead {
  Tensor<Scalar> weight;  // [1,1,C,2]
  Tensor<Scalar> bias;    // [2]

  static ConditioningHead make(ParamFactory<Scalar> f, Index channels);
};

/// Amplitude/frequency map [p,p,2] of `f` under `head`.
template <typename Scalar>
Tensor<Scalar> encode_condition(const Tensor<Scalar>& f, Index k, const ConditioningHead<Scalar>& head);
/// Same, from an already patch-average pooled [p,p,C] map.
template <typename Scalar>
Tensor<Scalar> encode_pooled_condition(const Tensor<Scalar>& pooled, const ConditioningHead<Scalar>& head);

/// Patches a band filter keeps, given the per-patch frequency values.
/// Patches are ranked by frequency (ties: earlier index ranks lower); low
/// drops the floor(0.2N) highest, middle the floor(0.1N) highest and
/// floor(0.1N) lowest, high the floor(0.2N) lowest.
std::vector<bool> band_keep_mask(const std::vector<double>& frequencies, Band band);

/// Zero both channels of every patch the band filter drops. Gradient flows
/// only through surviving patches.
template <typename Scalar>
Tensor<Scalar> bandpass(const Tensor<Scalar>& ampfreq, Band band);

/// Mean amplitude and mean frequency over all p*p patches, as two [1] tensors.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> condition_to_scalars(const Tensor<Scalar>& filtered);

template <typename Scalar>
struct SaliencyMap {
  Index p = 0;
  int stage_index = 0;
  std::vector<std::uint8_t> binary;  // row-major p*p, 1 = focus
  Tensor<Scalar> scores;             // [p,p] sigmoid outputs
  Tensor<Scalar> mask;               // [p,p] copy of `binary` wired to `scores` for backward

  bool focus(Index flat) const { return binary[static_cast<std::size_t>(flat)] != 0; }
  Index focus_count() const;
  std::vector<Index> focus_positions() const;
  std::vector<Index> context_positions() const;
};

/// Threshold scores at >= 0.5, then guarantee at least one focus and one
/// context patch: an all-focus map loses its lowest-scoring patch (ties: the
/// largest row-major index), an all-context map gains its highest-scoring
/// patch (ties: the smallest index).
template <typename Scalar>
SaliencyMap<Scalar> threshold_saliency(const Tensor<Scalar>& scores, ThresholdGradient rule, int stage_index = 0);

/// Six 3x3 field convolutions (one low, four middle, one high), each followed
/// by a sine activation with its own conditioning head. Never shared across
/// backbone stages.
template <typename Scalar>
struct NefirfParams {
  static constexpr int kLayers = 6;
  std::array<Conv2d<Scalar>, kLayers> layers;
  std::array<ConditioningHead<Scalar>, kLayers> heads;

  static NefirfParams make(ParamFactory<Scalar> f, Index feature_channels, Index field_width);
};

struct NefirfOptions {
  bool band_pass = true;
  ThresholdGradient gradient = ThresholdGradient::straight_through;
};

/// Band applied to the conditioning of field layer `layer` (0..5).
Band layer_band(int layer);

/// Pre-threshold saliency scores [p,p] for a square feature map f[H,W,C].
template <typename Scalar>
Tensor<Scalar> nefirf_scores(const Tensor<Scalar>& f, const NefirfParams<Scalar>& params, Index k,
                             const NefirfOptions& options = {});

template <typename Scalar>
SaliencyMap<Scalar> nefirf_forward(const Tensor<Scalar>& f, const NefirfParams<Scalar>& params, Index k,
                                   const NefirfOptions& options = {}, int stage_index = 0);

/// Mean absolute score difference between 4-neighbour patches; a smoothness
/// diagnostic for the field output.
template <typename Scalar>
double spatial_coherence(const Tensor<Scalar>& scores);

}  // namespace expnet
