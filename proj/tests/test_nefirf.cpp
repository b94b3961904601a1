#include "expnet/nefirf.hpp"
#include "expnet/ops.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

namespace expnet {
namespace {

using testing::random_tensor;

// Rank of entry i among `f`: number of entries that are smaller, or equal with a smaller index.
std::size_t rank_of(const std::vector<double>& f, std::size_t i) {
  std::size_t r = 0;
  for (std::size_t j = 0; j < f.size(); ++j)
    if (f[j] < f[i] || (f[j] == f[i] && j < i)) ++r;
  return r;
}

std::vector<bool> oracle_keep(const std::vector<double>& f, Band band) {
  const std::size_t n = f.size(), fifth = n / 5, tenth = n / 10;
  std::vector<bool> keep(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = rank_of(f, i);
    switch (band) {
      case Band::low: keep[i] = r < n - fifth; break;
      case Band::middle: keep[i] = r >= tenth && r < n - tenth; break;
      case Band::high: keep[i] = r >= fifth; break;
    }
  }
  return keep;
}

TEST(CoordinateGrid, PatchCentres) {
  auto g = coordinate_grid<double>(4);
  EXPECT_EQ(g.shape(), (Shape{4, 4, 2}));
  EXPECT_DOUBLE_EQ(g[0], -0.75);
  EXPECT_DOUBLE_EQ(g[1], -0.75);
  // entry (1,2)
  EXPECT_DOUBLE_EQ(g[(1 * 4 + 2) * 2], -0.25);
  EXPECT_DOUBLE_EQ(g[(1 * 4 + 2) * 2 + 1], 0.25);
  EXPECT_THROW(coordinate_grid<double>(1), std::invalid_argument);
}

TEST(Bandpass, DropCountsForSixteenPatches) {
  std::vector<double> f(16);
  for (int i = 0; i < 16; ++i) f[static_cast<std::size_t>(i)] = 15 - i;
  auto count_dropped = [&](Band b) {
    auto k = band_keep_mask(f, b);
    return std::count(k.begin(), k.end(), false);
  };
  EXPECT_EQ(count_dropped(Band::low), 3);
  EXPECT_EQ(count_dropped(Band::middle), 2);
  EXPECT_EQ(count_dropped(Band::high), 3);
  auto low = band_keep_mask(f, Band::low);
  // highest frequencies live at indices 0..2
  EXPECT_FALSE(low[0]);
  EXPECT_FALSE(low[2]);
  EXPECT_TRUE(low[3]);
}

TEST(Bandpass, TiesRankEarlierIndexLower) {
  std::vector<double> f(10, 1.0);
  auto high = band_keep_mask(f, Band::high);
  EXPECT_FALSE(high[0]);
  EXPECT_FALSE(high[1]);
  EXPECT_TRUE(high[2]);
  auto low = band_keep_mask(f, Band::low);
  EXPECT_FALSE(low[9]);
  EXPECT_FALSE(low[8]);
  EXPECT_TRUE(low[7]);
}

TEST(Bandpass, MatchesRankOracleOnRandomMaps) {
  std::mt19937_64 rng(20);
  std::uniform_int_distribution<int> side(2, 9);
  std::uniform_int_distribution<int> level(0, 5);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index p = side(rng);
    auto map = random_tensor({p, p, 2}, rng, 1.0, false);
    // quantize some maps so ties occur
    if (trial % 3 == 0)
      for (Index i = 0; i < map.size(); ++i) map.mutable_values()[i] = level(rng);
    std::vector<double> freq(static_cast<std::size_t>(p * p));
    for (Index i = 0; i < p * p; ++i) freq[static_cast<std::size_t>(i)] = map[2 * i + 1];
    for (Band band : {Band::low, Band::middle, Band::high}) {
      const auto keep = oracle_keep(freq, band);
      const auto filtered = bandpass(map, band);
      for (Index i = 0; i < p * p; ++i) {
        const bool k = keep[static_cast<std::size_t>(i)];
        ASSERT_EQ(filtered[2 * i], k ? map[2 * i] : 0.0);
        ASSERT_EQ(filtered[2 * i + 1], k ? map[2 * i + 1] : 0.0);
      }
    }
  }
}

TEST(Bandpass, RejectsWrongShape) {
  EXPECT_THROW(bandpass(Tensor<double>::zeros({4, 4, 3}), Band::low), std::invalid_argument);
}

TEST(ConditionToScalars, MeansOverPatches) {
  auto m = Tensor<double>::from({1, 2, 2}, {1, 4, 3, 8});
  auto [a, w] = condition_to_scalars(m);
  EXPECT_DOUBLE_EQ(a.item(), 2.0);
  EXPECT_DOUBLE_EQ(w.item(), 6.0);
}

TEST(EncodeCondition, PooledFeaturesThroughPointwiseConv) {
  ParameterSet<double> ps;
  auto head = ConditioningHead<double>::make(ParamFactory<double>(ps, 1), 3);
  std::mt19937_64 rng(21);
  auto f = random_tensor({8, 8, 3}, rng, 1.0, false);
  auto cond = encode_condition(f, 2, head);
  EXPECT_EQ(cond.shape(), (Shape{4, 4, 2}));
  auto pooled = patch_average_pool(f, 2);
  for (Index i = 0; i < 16; ++i)
    for (Index o = 0; o < 2; ++o) {
      double v = head.bias[o];
      for (Index c = 0; c < 3; ++c) v += pooled[i * 3 + c] * head.weight[c * 2 + o];
      EXPECT_NEAR(cond[i * 2 + o], v, 1e-12);
    }
}

TEST(Threshold, AllFocusLosesLowestScoreLargestIndexOnTies) {
  auto s = Tensor<double>::from({2, 2}, {0.9, 0.6, 0.7, 0.6});
  auto m = threshold_saliency(s, ThresholdGradient::exact);
  EXPECT_EQ(m.binary, (std::vector<std::uint8_t>{1, 1, 1, 0}));
}

TEST(Threshold, AllContextGainsHighestScoreSmallestIndexOnTies) {
  auto s = Tensor<double>::from({2, 2}, {0.1, 0.4, 0.2, 0.4});
  auto m = threshold_saliency(s, ThresholdGradient::exact);
  EXPECT_EQ(m.binary, (std::vector<std::uint8_t>{0, 1, 0, 0}));
}

TEST(Threshold, BoundaryIsFocus) {
  auto s = Tensor<double>::from({2, 2}, {0.5, 0.49999, 0.2, 0.8});
  auto m = threshold_saliency(s, ThresholdGradient::exact);
  EXPECT_EQ(m.binary, (std::vector<std::uint8_t>{1, 0, 0, 1}));
  EXPECT_EQ(m.focus_positions(), (std::vector<Index>{0, 3}));
  EXPECT_EQ(m.context_positions(), (std::vector<Index>{1, 2}));
}

TEST(Threshold, StraightThroughPassesGradientExactBlocksIt) {
  for (auto rule : {ThresholdGradient::straight_through, ThresholdGradient::exact}) {
    auto s = Tensor<double>::from({2, 2}, {0.9, 0.1, 0.7, 0.3}, true);
    auto w = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
    Tape<double> tape;
    auto m = threshold_saliency(s, rule);
    auto loss = sum(mul(add(m.mask, s), w));
    tape.backward(loss);
    const double expected = rule == ThresholdGradient::straight_through ? 2.0 : 1.0;
    for (Index i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(s.grad()[i], expected * w[i]);
  }
}

NefirfParams<double> make_field(std::uint64_t seed, Index channels, Index width = 6) {
  ParameterSet<double> ps;
  return NefirfParams<double>::make(ParamFactory<double>(ps, seed), channels, width);
}

TEST(Nefirf, LayerBands) {
  EXPECT_EQ(layer_band(0), Band::low);
  for (int l = 1; l <= 4; ++l) EXPECT_EQ(layer_band(l), Band::middle);
  EXPECT_EQ(layer_band(5), Band::high);
}

TEST(Nefirf, SaliencyInvariantsOnRandomInputs) {
  std::mt19937_64 rng(22);
  std::uniform_int_distribution<int> grid(2, 6), tile(1, 3);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index p = grid(rng), k = tile(rng), c = 1 + trial % 4;
    auto params = make_field(static_cast<std::uint64_t>(trial), c, 4);
    auto f = random_tensor({p * k, p * k, c}, rng, 1.0 + trial % 5, false);
    NefirfOptions opts;
    opts.band_pass = trial % 2 == 0;
    auto m = nefirf_forward(f, params, k, opts);
    ASSERT_EQ(m.p, p);
    ASSERT_EQ(m.scores.shape(), (Shape{p, p}));
    Index focus = 0;
    for (Index i = 0; i < p * p; ++i) {
      ASSERT_TRUE(m.binary[static_cast<std::size_t>(i)] == 0 || m.binary[static_cast<std::size_t>(i)] == 1);
      ASSERT_EQ(m.mask[i], static_cast<double>(m.binary[static_cast<std::size_t>(i)]));
      ASSERT_GT(m.scores[i], 0.0);
      ASSERT_LT(m.scores[i], 1.0);
      focus += m.binary[static_cast<std::size_t>(i)];
    }
    ASSERT_GE(focus, 1);
    ASSERT_LE(focus, p * p - 1);
  }
}

TEST(Nefirf, DeterministicAndStageIndependent) {
  std::mt19937_64 rng(23);
  auto f = random_tensor({8, 8, 3}, rng, 1.0, false);
  auto a = nefirf_scores(f, make_field(5, 3), 2);
  auto b = nefirf_scores(f, make_field(5, 3), 2);
  auto c = nefirf_scores(f, make_field(6, 3), 2);
  EXPECT_TRUE((a.values() == b.values()).all());
  EXPECT_FALSE((a.values() == c.values()).all());
}

TEST(Nefirf, ScoresDependOnFeatures) {
  std::mt19937_64 rng(24);
  auto params = make_field(7, 3);
  for (int l = 0; l < NefirfParams<double>::kLayers; ++l)
    params.heads[static_cast<std::size_t>(l)].weight.mutable_values() *= 10.0;
  auto f1 = random_tensor({8, 8, 3}, rng, 1.0, false);
  auto f2 = random_tensor({8, 8, 3}, rng, 1.0, false);
  EXPECT_GT((nefirf_scores(f1, params, 2).values() - nefirf_scores(f2, params, 2).values()).abs().maxCoeff(), 1e-6);
}

TEST(Nefirf, ScoreGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(25);
  ParameterSet<double> ps;
  auto params = NefirfParams<double>::make(ParamFactory<double>(ps, 9), 2, 3);
  auto f = random_tensor({4, 4, 2}, rng);
  auto r = random_tensor({2, 2}, rng, 1.0, false);
  std::vector<Tensor<double>> leaves{f};
  for (const auto& e : ps.entries()) leaves.push_back(e.second);
  auto loss = [&] { return sum(mul(r, nefirf_scores(f, params, 2))); };
  EXPECT_LT(testing::gradient_error(loss, leaves), 1e-4);
}

TEST(Nefirf, SpatialCoherenceOfConstantMapIsZero) {
  EXPECT_DOUBLE_EQ(spatial_coherence(Tensor<double>::full({3, 3}, 0.4)), 0.0);
  EXPECT_DOUBLE_EQ(spatial_coherence(Tensor<double>::from({2, 2}, {0, 1, 0, 1})), 0.5);
}

}  // namespace
}  // namespace expnet
