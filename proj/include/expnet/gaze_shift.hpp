#pragma once

#include "expnet/config.hpp"
#include "expnet/layers.hpp"
#include "expnet/nefirf.hpp"
#include "expnet/tensor.hpp"

#include <utility>
#include <vector>

namespace expnet {

/// Lossless tiling of a square [H,W,C] map into p x p tiles of k x k x C.
template <typename Scalar>
struct PatchGrid {
  Tensor<Scalar> tokens;  // [p*p, k*k*C], row r = tile at (r / p, r % p)
  Index p = 0;
  Index k = 0;
  Index channels = 0;

  Index extent() const { return p * k; }
};

/// Tiles carried together with their row-major grid positions.
template <typename Scalar>
struct PatchSet {
  Tensor<Scalar> tokens;  // [n, k*k*C]
  std::vector<Index> positions;

  Index size() const { return static_cast<Index>(positions.size()); }
};

template <typename Scalar>
PatchGrid<Scalar> patchify(const Tensor<Scalar>& f, Index k);

template <typename Scalar>
Tensor<Scalar> reassemble(const PatchGrid<Scalar>& grid);

/// Partition the grid by saliency into (focal, context). Focal tiles are
/// scaled by the saliency mask and context tiles by its complement; both
/// factors are exactly 1, so values are untouched while the loss can reach
/// the saliency scores.
template <typename Scalar>
std::pair<PatchSet<Scalar>, PatchSet<Scalar>> split_patches(const PatchGrid<Scalar>& grid,
                                                            const SaliencyMap<Scalar>& saliency);

/// Zero canvas of the grid's extent holding `patches` at their positions.
template <typename Scalar>
Tensor<Scalar> place_patches(const PatchSet<Scalar>& patches, Index p, Index k, Index channels);

/// Focal tiles re-placed on a zero canvas, 2x2/2 max pooled, then a 3x3
/// deformable convolution doubling the channels: [H,W,C] -> [H/2,W/2,2C].
template <typename Scalar>
Tensor<Scalar> spatial_organize(const PatchSet<Scalar>& focal, Index p, Index k, Index channels,
                                const DeformableConv<Scalar>& deform);

/// 3x3 convolution over the token grid; the condition is both token sets
/// scattered back to their grid positions.
template <typename Scalar>
struct PositionEncoder {
  Conv2d<Scalar> generator;

  static PositionEncoder make(ParamFactory<Scalar> f, Index hidden);
};

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> conditional_position_encoding(
    const Tensor<Scalar>& focal, const std::vector<Index>& focal_positions, const Tensor<Scalar>& context,
    const std::vector<Index>& context_positions, Index p, const PositionEncoder<Scalar>& encoder);

template <typename Scalar>
struct CrossAttnParams {
  Index heads = 1;
  Norm<Scalar> query_norm;
  Norm<Scalar> context_norm;
  Linear<Scalar> query;
  Linear<Scalar> key;
  Linear<Scalar> value;
  Linear<Scalar> output;

  Index hidden() const { return query.weight.dim(1); }
  static CrossAttnParams make(ParamFactory<Scalar> f, Index in, Index hidden, Index heads);
};

template <typename Scalar>
struct AttentionResult {
  std::vector<Tensor<Scalar>> weights;  // per head [n_query, n_context]
  Tensor<Scalar> mixed;                 // [n_query, hidden], heads concatenated before the output projection
  Tensor<Scalar> output;                // [n_query, hidden]
  Tensor<Scalar> embedding;             // [hidden], mean over queries
};

/// Multi-head scaled dot-product attention with queries from `queries` and
/// keys/values from `context`; no class token.
template <typename Scalar>
AttentionResult<Scalar> cross_attention(const Tensor<Scalar>& queries, const Tensor<Scalar>& context,
                                        const CrossAttnParams<Scalar>& params);

/// Stand-in saliency generator for ablations: channel mean/max of the pooled
/// map through a 3x3 conv and a sigmoid.
template <typename Scalar>
struct SpatialAttentionParams {
  Conv2d<Scalar> conv;

  static SpatialAttentionParams make(ParamFactory<Scalar> f);
};

template <typename Scalar>
Tensor<Scalar> spatial_attention_scores(const Tensor<Scalar>& f, Index k, const SpatialAttentionParams<Scalar>& params);

/// Convolutional context embedding for ablations: context canvas, patch
/// average pooled, 3x3 conv, ReLU, global average.
template <typename Scalar>
struct ContextCnnParams {
  Conv2d<Scalar> conv;

  static ContextCnnParams make(ParamFactory<Scalar> f, Index channels, Index hidden);
};

struct GazeShiftOptions {
  bool context_impression = true;  // off: convolutional context embedding
  bool conditional_sine = true;    // off: spatial-attention saliency
  bool band_pass = true;
  ThresholdGradient gradient = ThresholdGradient::straight_through;
  TokenEmbedding token_embedding = TokenEmbedding::max_pool;
};

/// Only the branches selected by the options are allocated, so every
/// registered parameter is live.
template <typename Scalar>
struct GazeShiftParams {
  NefirfParams<Scalar> nefirf;
  SpatialAttentionParams<Scalar> spatial_attention;
  Linear<Scalar> embed;  // tile token -> hidden
  PositionEncoder<Scalar> position;
  CrossAttnParams<Scalar> attention;
  ContextCnnParams<Scalar> context_cnn;
  DeformableConv<Scalar> organize;

  static GazeShiftParams make(ParamFactory<Scalar> f, Index channels, Index k, Index hidden, Index heads,
                              Index field_width, const GazeShiftOptions& options = {});
};

template <typename Scalar>
struct StageOutput {
  Tensor<Scalar> focal_next;  // [H/2, W/2, 2C]
  Tensor<Scalar> impression;  // [hidden]
  SaliencyMap<Scalar> saliency;
};

template <typename Scalar>
StageOutput<Scalar> gaze_shift_forward(const Tensor<Scalar>& f, const GazeShiftParams<Scalar>& params, Index k,
                                       const GazeShiftOptions& options = {}, int stage_index = 0);

}  // namespace expnet
