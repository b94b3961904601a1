#include "expnet/nefirf.hpp"

#include "expnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace expnet {

namespace {
constexpr double kHalfPi = 1.57079632679489661923;
}  // namespace

template <typename Scalar>
Tensor<Scalar> coordinate_grid(Index p) {
  if (p < 2) throw std::invalid_argument("coordinate_grid: need p >= 2, got " + std::to_string(p));
  Tensor<Scalar> grid({p, p, 2});
  auto& v = grid.mutable_values();
  for (Index i = 0; i < p; ++i) {
    for (Index j = 0; j < p; ++j) {
      v[(i * p + j) * 2] = static_cast<Scalar>(static_cast<double>(2 * i + 1) / static_cast<double>(p) - 1.0);
      v[(i * p + j) * 2 + 1] = static_cast<Scalar>(static_cast<double>(2 * j + 1) / static_cast<double>(p) - 1.0);
    }
  }
  return grid;
}

template <typename Scalar>
ConditioningHead<Scalar> ConditioningHead<Scalar>::make(ParamFactory<Scalar> f, Index channels) {
  // Starts near a unit-amplitude, unit-frequency sine with a weak feature dependence.
  return {f.normal("weight", {1, 1, channels, 2}, 0.1 / std::sqrt(static_cast<double>(channels))),
          f.from_values("bias", {2}, {1.0, 1.0})};
}

template <typename Scalar>
Tensor<Scalar> encode_pooled_condition(const Tensor<Scalar>& pooled, const ConditioningHead<Scalar>& head) {
  return conv2d(pooled, head.weight, head.bias, 1, 0);
}

template <typename Scalar>
Tensor<Scalar> encode_condition(const Tensor<Scalar>& f, Index k, const ConditioningHead<Scalar>& head) {
  if (f.rank() != 3 || f.dim(0) != f.dim(1))
    throw std::invalid_argument("encode_condition: feature map must be square [H,W,C], got " + shape_string(f.shape()));
  return encode_pooled_condition(patch_average_pool(f, k), head);
}

std::vector<bool> band_keep_mask(const std::vector<double>& frequencies, Band band) {
  const std::size_t n = frequencies.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frequencies[a] < frequencies[b]; });
  const auto fifth = static_cast<std::size_t>(std::floor(0.2 * static_cast<double>(n)));
  const auto tenth = static_cast<std::size_t>(std::floor(0.1 * static_cast<double>(n)));
  std::size_t drop_low = 0, drop_high = 0;
  switch (band) {
    case Band::low: drop_high = fifth; break;
    case Band::middle: drop_low = tenth; drop_high = tenth; break;
    case Band::high: drop_low = fifth; break;
  }
  std::vector<bool> keep(n, true);
  for (std::size_t r = 0; r < drop_low; ++r) keep[order[r]] = false;
  for (std::size_t r = 0; r < drop_high; ++r) keep[order[n - 1 - r]] = false;
  return keep;
}

template <typename Scalar>
Tensor<Scalar> bandpass(const Tensor<Scalar>& ampfreq, Band band) {
  if (ampfreq.rank() != 3 || ampfreq.dim(2) != 2)
    throw std::invalid_argument("bandpass: expected [p,p,2], got " + shape_string(ampfreq.shape()));
  const Index n = ampfreq.dim(0) * ampfreq.dim(1);
  std::vector<double> freq(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) freq[static_cast<std::size_t>(i)] = static_cast<double>(ampfreq[2 * i + 1]);
  const std::vector<bool> keep = band_keep_mask(freq, band);
  Array<Scalar> gate(2 * n);
  for (Index i = 0; i < n; ++i) gate[2 * i] = gate[2 * i + 1] = keep[static_cast<std::size_t>(i)] ? Scalar(1) : Scalar(0);
  Tensor<Scalar> out(ampfreq.shape(), ampfreq.values() * gate);
  record_op("bandpass", out, {&ampfreq}, [xn = ampfreq.node(), on = out.node(), gate = std::move(gate)](Tape<Scalar>& t) {
    t.grad(xn) += t.grad(on) * gate;
  });
  return out;
}

template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> condition_to_scalars(const Tensor<Scalar>& filtered) {
  const Tensor<Scalar> pooled = reshape(global_average_pool(filtered), {1, 2});
  return {reshape(slice_cols(pooled, 0, 1), {1}), reshape(slice_cols(pooled, 1, 1), {1})};
}

template <typename Scalar>
Index SaliencyMap<Scalar>::focus_count() const {
  return static_cast<Index>(std::count(binary.begin(), binary.end(), std::uint8_t{1}));
}

template <typename Scalar>
std::vector<Index> SaliencyMap<Scalar>::focus_positions() const {
  std::vector<Index> out;
  for (std::size_t i = 0; i < binary.size(); ++i)
    if (binary[i]) out.push_back(static_cast<Index>(i));
  return out;
}

template <typename Scalar>
std::vector<Index> SaliencyMap<Scalar>::context_positions() const {
  std::vector<Index> out;
  for (std::size_t i = 0; i < binary.size(); ++i)
    if (!binary[i]) out.push_back(static_cast<Index>(i));
  return out;
}

template <typename Scalar>
SaliencyMap<Scalar> threshold_saliency(const Tensor<Scalar>& scores, ThresholdGradient rule, int stage_index) {
  if (scores.rank() != 2 || scores.dim(0) != scores.dim(1) || scores.dim(0) < 2)
    throw std::invalid_argument("threshold_saliency: expected square [p,p] scores with p >= 2, got " +
                                shape_string(scores.shape()));
  const Index n = scores.size();
  SaliencyMap<Scalar> m;
  m.p = scores.dim(0);
  m.stage_index = stage_index;
  m.scores = scores;
  m.binary.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) m.binary[static_cast<std::size_t>(i)] = scores[i] >= Scalar(0.5) ? 1 : 0;

  const Index focus = m.focus_count();
  if (focus == n) {
    Index lowest = 0;
    for (Index i = 1; i < n; ++i)
      if (scores[i] <= scores[lowest]) lowest = i;
    m.binary[static_cast<std::size_t>(lowest)] = 0;
  } else if (focus == 0) {
    Index highest = 0;
    for (Index i = 1; i < n; ++i)
      if (scores[i] > scores[highest]) highest = i;
    m.binary[static_cast<std::size_t>(highest)] = 1;
  }

  Array<Scalar> bits(n);
  for (Index i = 0; i < n; ++i) bits[i] = m.binary[static_cast<std::size_t>(i)] ? Scalar(1) : Scalar(0);
  m.mask = Tensor<Scalar>(scores.shape(), std::move(bits));
  if (rule == ThresholdGradient::straight_through) {
    record_op("threshold_ste", m.mask, {&scores}, [sn = scores.node(), on = m.mask.node()](Tape<Scalar>& t) {
      t.grad(sn) += t.grad(on);
    });
  }
  return m;
}

template <typename Scalar>
NefirfParams<Scalar> NefirfParams<Scalar>::make(ParamFactory<Scalar> f, Index feature_channels, Index field_width) {
  NefirfParams p;
  for (int l = 0; l < kLayers; ++l) {
    const Index in = l == 0 ? 2 : field_width;
    const Index out = l == kLayers - 1 ? 1 : field_width;
    auto fl = f.scope("field" + std::to_string(l));
    // Uniform init keeping pre-activations near unit scale under a unit-frequency sine.
    const double bound = std::sqrt(6.0 / static_cast<double>(9 * in));
    // The last layer's bias starts at pi/2 so that the initial map is mostly focus and the
    // network begins close to the plain backbone.
    const double bias = l == kLayers - 1 ? kHalfPi : 0.0;
    p.layers[l] = {fl.uniform("weight", {3, 3, in, out}, bound), fl.constant("bias", {out}, bias), 1, 1};
    p.heads[l] = ConditioningHead<Scalar>::make(fl.scope("head"), feature_channels);
  }
  return p;
}

Band layer_band(int layer) {
  if (layer == 0) return Band::low;
  if (layer == NefirfParams<double>::kLayers - 1) return Band::high;
  return Band::middle;
}

template <typename Scalar>
Tensor<Scalar> nefirf_scores(const Tensor<Scalar>& f, const NefirfParams<Scalar>& params, Index k,
                             const NefirfOptions& options) {
  if (f.rank() != 3 || f.dim(0) != f.dim(1))
    throw std::invalid_argument("nefirf: feature map must be square [H,W,C], got " + shape_string(f.shape()));
  const Tensor<Scalar> pooled = patch_average_pool(f, k);
  const Index p = pooled.dim(0);

  auto activate = [&](const Tensor<Scalar>& x, int layer) {
    Tensor<Scalar> cond = encode_pooled_condition(pooled, params.heads[layer]);
    if (options.band_pass) cond = bandpass(cond, layer_band(layer));
    auto [a, w] = condition_to_scalars(cond);
    return sine(x, a, w);
  };

  const Tensor<Scalar> low = activate(params.layers[0](coordinate_grid<Scalar>(p)), 0);
  Tensor<Scalar> h = low;
  for (int l = 1; l < NefirfParams<Scalar>::kLayers - 1; ++l) h = activate(params.layers[l](h), l);
  h = add(h, low);
  const int last = NefirfParams<Scalar>::kLayers - 1;
  const Tensor<Scalar> field = activate(params.layers[last](h), last);
  return reshape(sigmoid(field), {p, p});
}

template <typename Scalar>
SaliencyMap<Scalar> nefirf_forward(const Tensor<Scalar>& f, const NefirfParams<Scalar>& params, Index k,
                                   const NefirfOptions& options, int stage_index) {
  return threshold_saliency(nefirf_scores(f, params, k, options), options.gradient, stage_index);
}

template <typename Scalar>
double spatial_coherence(const Tensor<Scalar>& scores) {
  const Index p = scores.dim(0);
  double total = 0;
  Index pairs = 0;
  for (Index i = 0; i < p; ++i) {
    for (Index j = 0; j < p; ++j) {
      if (i + 1 < p) {
        total += std::abs(static_cast<double>(scores[i * p + j] - scores[(i + 1) * p + j]));
        ++pairs;
      }
      if (j + 1 < p) {
        total += std::abs(static_cast<double>(scores[i * p + j] - scores[i * p + j + 1]));
        ++pairs;
      }
    }
  }
  return pairs ? total / static_cast<double>(pairs) : 0.0;
}

#define EXPNET_INSTANTIATE(S)                                                                               \
  template Tensor<S> coordinate_grid<S>(Index);                                                            \
  template struct ConditioningHead<S>;                                                                     \
  template Tensor<S> encode_condition(const Tensor<S>&, Index, const ConditioningHead<S>&);                \
  template Tensor<S> encode_pooled_condition(const Tensor<S>&, const ConditioningHead<S>&);                \
  template Tensor<S> bandpass(const Tensor<S>&, Band);                                                     \
  template std::pair<Tensor<S>, Tensor<S>> condition_to_scalars(const Tensor<S>&);                         \
  template struct SaliencyMap<S>;                                                                          \
  template SaliencyMap<S> threshold_saliency(const Tensor<S>&, ThresholdGradient, int);                    \
  template struct NefirfParams<S>;                                                                         \
  template Tensor<S> nefirf_scores(const Tensor<S>&, const NefirfParams<S>&, Index, const NefirfOptions&); \
  template SaliencyMap<S> nefirf_forward(const Tensor<S>&, const NefirfParams<S>&, Index, const NefirfOptions&, int); \
  template double spatial_coherence(const Tensor<S>&);

EXPNET_INSTANTIATE(float)
EXPNET_INSTANTIATE(double)

#undef EXPNET_INSTANTIATE

}  // namespace expnet
