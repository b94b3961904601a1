#include "expnet/gaze_shift.hpp"

#include "expnet/ops.hpp"

#include <cmath>
#include <stdexcept>
#include <tuple>

namespace expnet {

template <typename Scalar>
PatchGrid<Scalar> patchify(const Tensor<Scalar>& f, Index k) {
  Tensor<Scalar> tokens = patch_tokens(f, k);
  return {tokens, f.dim(0) / k, k, f.dim(2)};
}

template <typename Scalar>
Tensor<Scalar> reassemble(const PatchGrid<Scalar>& grid) {
  return tokens_to_image(grid.tokens, grid.p, grid.k, grid.channels);
}

template <typename Scalar>
std::pair<PatchSet<Scalar>, PatchSet<Scalar>> split_patches(const PatchGrid<Scalar>& grid,
                                                            const SaliencyMap<Scalar>& saliency) {
  if (saliency.p != grid.p)
    throw std::invalid_argument("split_patches: saliency map is " + std::to_string(saliency.p) + "x" +
                                std::to_string(saliency.p) + " but the grid is " + std::to_string(grid.p) + "x" +
                                std::to_string(grid.p));
  const Tensor<Scalar> keep = reshape(saliency.mask, {grid.p * grid.p});
  const Tensor<Scalar> drop = affine(keep, Scalar(-1), Scalar(1));
  PatchSet<Scalar> focal{{}, saliency.focus_positions()};
  PatchSet<Scalar> context{{}, saliency.context_positions()};
  if (focal.size() > 0) focal.tokens = gather_rows(scale_rows(grid.tokens, keep), focal.positions);
  if (context.size() > 0) context.tokens = gather_rows(scale_rows(grid.tokens, drop), context.positions);
  return {std::move(focal), std::move(context)};
}

template <typename Scalar>
Tensor<Scalar> place_patches(const PatchSet<Scalar>& patches, Index p, Index k, Index channels) {
  if (patches.size() == 0) throw std::invalid_argument("place_patches: empty patch set");
  return tokens_to_image(scatter_rows(patches.tokens, patches.positions, p * p), p, k, channels);
}

template <typename Scalar>
Tensor<Scalar> spatial_organize(const PatchSet<Scalar>& focal, Index p, Index k, Index channels,
                                const DeformableConv<Scalar>& deform) {
  if (focal.size() == 0) throw std::invalid_argument("spatial_organize: no focal patches");
  if ((p * k) % 2 != 0) throw std::invalid_argument("spatial_organize: extent must be even to halve");
  return deform(max_pool2d(place_patches(focal, p, k, channels), 2, 2));
}

template <typename Scalar>
PositionEncoder<Scalar> PositionEncoder<Scalar>::make(ParamFactory<Scalar> f, Index hidden) {
  auto g = f.scope("generator");
  return {{g.normal("weight", {3, 3, hidden, hidden}, 0.02), g.constant("bias", {hidden}, 0.0), 1, 1}};
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> conditional_position_encoding(
    const Tensor<Scalar>& focal, const std::vector<Index>& focal_positions, const Tensor<Scalar>& context,
    const std::vector<Index>& context_positions, Index p, const PositionEncoder<Scalar>& encoder) {
  const Index d = focal.dim(1);
  if (context.dim(1) != d) throw std::invalid_argument("conditional_position_encoding: token widths differ");
  const Tensor<Scalar> condition =
      add(scatter_rows(focal, focal_positions, p * p), scatter_rows(context, context_positions, p * p));
  const Tensor<Scalar> encoded = reshape(encoder.generator(reshape(condition, {p, p, d})), {p * p, d});
  return {gather_rows(encoded, focal_positions), gather_rows(encoded, context_positions)};
}

template <typename Scalar>
CrossAttnParams<Scalar> CrossAttnParams<Scalar>::make(ParamFactory<Scalar> f, Index in, Index hidden, Index heads) {
  if (heads < 1 || hidden % heads != 0)
    throw std::invalid_argument("cross attention: hidden size " + std::to_string(hidden) +
                                " is not divisible by head count " + std::to_string(heads));
  CrossAttnParams p;
  p.heads = heads;
  p.query_norm = Norm<Scalar>::make(f.scope("query_norm"), in);
  p.context_norm = Norm<Scalar>::make(f.scope("context_norm"), in);
  p.query = Linear<Scalar>::make(f.scope("query"), in, hidden);
  p.key = Linear<Scalar>::make(f.scope("key"), in, hidden);
  p.value = Linear<Scalar>::make(f.scope("value"), in, hidden);
  p.output = Linear<Scalar>::make(f.scope("output"), hidden, hidden);
  return p;
}

template <typename Scalar>
AttentionResult<Scalar> cross_attention(const Tensor<Scalar>& queries, const Tensor<Scalar>& context,
                                        const CrossAttnParams<Scalar>& params) {
  if (queries.rank() != 2 || context.rank() != 2 || queries.dim(1) != context.dim(1))
    throw std::invalid_argument("cross_attention: expected [n,d] token matrices of equal width, got " +
                                shape_string(queries.shape()) + " and " + shape_string(context.shape()));
  const Tensor<Scalar> q = params.query(layer_norm(queries, params.query_norm.gamma, params.query_norm.beta));
  const Tensor<Scalar> kv = layer_norm(context, params.context_norm.gamma, params.context_norm.beta);
  const Tensor<Scalar> k = params.key(kv);
  const Tensor<Scalar> v = params.value(kv);
  const Index head_dim = params.hidden() / params.heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim));

  AttentionResult<Scalar> r;
  std::vector<Tensor<Scalar>> heads;
  for (Index h = 0; h < params.heads; ++h) {
    const Tensor<Scalar> qh = slice_cols(q, h * head_dim, head_dim);
    const Tensor<Scalar> kh = slice_cols(k, h * head_dim, head_dim);
    const Tensor<Scalar> vh = slice_cols(v, h * head_dim, head_dim);
    Tensor<Scalar> weights = softmax(affine(matmul(qh, transpose(kh)), scale, Scalar(0)), -1);
    heads.push_back(matmul(weights, vh));
    r.weights.push_back(std::move(weights));
  }
  r.mixed = concat_cols(heads);
  r.output = params.output(r.mixed);
  r.embedding = mean_rows(r.output);
  return r;
}

template <typename Scalar>
SpatialAttentionParams<Scalar> SpatialAttentionParams<Scalar>::make(ParamFactory<Scalar> f) {
  return {Conv2d<Scalar>::make(f.scope("conv"), 3, 2, 1, 1, 1)};
}

template <typename Scalar>
Tensor<Scalar> spatial_attention_scores(const Tensor<Scalar>& f, Index k, const SpatialAttentionParams<Scalar>& params) {
  const Tensor<Scalar> pooled = patch_average_pool(f, k);
  const Index p = pooled.dim(0);
  return reshape(sigmoid(params.conv(channel_stats(pooled))), {p, p});
}

template <typename Scalar>
ContextCnnParams<Scalar> ContextCnnParams<Scalar>::make(ParamFactory<Scalar> f, Index channels, Index hidden) {
  return {Conv2d<Scalar>::make(f.scope("conv"), 3, channels, hidden, 1, 1)};
}

template <typename Scalar>
GazeShiftParams<Scalar> GazeShiftParams<Scalar>::make(ParamFactory<Scalar> f, Index channels, Index k, Index hidden,
                                                      Index heads, Index field_width, const GazeShiftOptions& options) {
  GazeShiftParams g;
  if (options.conditional_sine)
    g.nefirf = NefirfParams<Scalar>::make(f.scope("nefirf"), channels, field_width);
  else
    g.spatial_attention = SpatialAttentionParams<Scalar>::make(f.scope("spatial_attention"));
  if (options.context_impression) {
    const Index token = options.token_embedding == TokenEmbedding::flatten ? k * k * channels : channels;
    g.embed = Linear<Scalar>::make(f.scope("embed"), token, hidden);
    g.position = PositionEncoder<Scalar>::make(f.scope("position"), hidden);
    g.attention = CrossAttnParams<Scalar>::make(f.scope("attention"), hidden, hidden, heads);
  } else {
    g.context_cnn = ContextCnnParams<Scalar>::make(f.scope("context_cnn"), channels, hidden);
  }
  g.organize = DeformableConv<Scalar>::make(f.scope("organize"), 3, channels, 2 * channels, 1, 1);
  return g;
}

template <typename Scalar>
StageOutput<Scalar> gaze_shift_forward(const Tensor<Scalar>& f, const GazeShiftParams<Scalar>& params, Index k,
                                       const GazeShiftOptions& options, int stage_index) {
  if (f.rank() != 3 || f.dim(0) != f.dim(1) || f.dim(0) % k != 0)
    throw std::invalid_argument("gaze_shift: need a square [H,W,C] map divisible by patch size " + std::to_string(k) +
                                ", got " + shape_string(f.shape()));
  const Index p = f.dim(0) / k;
  const Index c = f.dim(2);

  StageOutput<Scalar> out;
  if (options.conditional_sine) {
    out.saliency = nefirf_forward(f, params.nefirf, k, NefirfOptions{options.band_pass, options.gradient}, stage_index);
  } else {
    out.saliency = threshold_saliency(spatial_attention_scores(f, k, params.spatial_attention), options.gradient,
                                      stage_index);
  }

  const PatchGrid<Scalar> grid = patchify(f, k);
  auto [focal, context] = split_patches(grid, out.saliency);
  out.focal_next = spatial_organize(focal, p, k, c, params.organize);

  if (options.context_impression) {
    PatchSet<Scalar> focal_tokens = focal, context_tokens = context;
    if (options.token_embedding != TokenEmbedding::flatten) {
      const Tensor<Scalar> summary =
          options.token_embedding == TokenEmbedding::max_pool ? max_pool2d(f, k, k) : patch_average_pool(f, k);
      std::tie(focal_tokens, context_tokens) = split_patches(patchify(summary, Index{1}), out.saliency);
    }
    const Tensor<Scalar> focal_emb = params.embed(focal_tokens.tokens);
    const Tensor<Scalar> context_emb = params.embed(context_tokens.tokens);
    auto [focal_pe, context_pe] = conditional_position_encoding(focal_emb, focal.positions, context_emb,
                                                                context.positions, p, params.position);
    out.impression = cross_attention(add(focal_emb, focal_pe), add(context_emb, context_pe), params.attention).embedding;
  } else {
    const Tensor<Scalar> canvas = place_patches(context, p, k, c);
    out.impression = global_average_pool(relu(params.context_cnn.conv(patch_average_pool(canvas, k))));
  }
  return out;
}

#define EXPNET_INSTANTIATE(S)                                                                                   \
  template struct PatchGrid<S>;                                                                                \
  template struct PatchSet<S>;                                                                                 \
  template PatchGrid<S> patchify(const Tensor<S>&, Index);                                                     \
  template Tensor<S> reassemble(const PatchGrid<S>&);                                                          \
  template std::pair<PatchSet<S>, PatchSet<S>> split_patches(const PatchGrid<S>&, const SaliencyMap<S>&);      \
  template Tensor<S> place_patches(const PatchSet<S>&, Index, Index, Index);                                   \
  template Tensor<S> spatial_organize(const PatchSet<S>&, Index, Index, Index, const DeformableConv<S>&);       \
  template struct PositionEncoder<S>;                                                                          \
  template std::pair<Tensor<S>, Tensor<S>> conditional_position_encoding(                                      \
      const Tensor<S>&, const std::vector<Index>&, const Tensor<S>&, const std::vector<Index>&, Index,         \
      const PositionEncoder<S>&);                                                                              \
  template struct CrossAttnParams<S>;                                                                          \
  template AttentionResult<S> cross_attention(const Tensor<S>&, const Tensor<S>&, const CrossAttnParams<S>&);  \
  template struct SpatialAttentionParams<S>;                                                                   \
  template Tensor<S> spatial_attention_scores(const Tensor<S>&, Index, const SpatialAttentionParams<S>&);      \
  template struct ContextCnnParams<S>;                                                                         \
  template struct GazeShiftParams<S>;                                                                          \
  template StageOutput<S> gaze_shift_forward(const Tensor<S>&, const GazeShiftParams<S>&, Index,               \
                                             const GazeShiftOptions&, int);

EXPNET_INSTANTIATE(float)
EXPNET_INSTANTIATE(double)

#undef EXPNET_INSTANTIATE

}  // namespace expnet
