#include "expnet/ops.hpp"
#include "expnet/saliency_eval.hpp"
#include "expnet/tensor_io.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <random>

namespace expnet {
namespace {

PixelMask random_mask(std::mt19937_64& rng, Index h, Index w, double density) {
  std::bernoulli_distribution on(density);
  PixelMask m = PixelMask::empty(h, w);
  for (auto& b : m.bits) b = on(rng) ? 1 : 0;
  return m;
}

Box random_box(std::mt19937_64& rng, Index size) {
  std::uniform_int_distribution<Index> d(0, size);
  Index x0 = d(rng), x1 = d(rng), y0 = d(rng), y1 = d(rng);
  if (x0 > x1) std::swap(x0, x1);
  if (y0 > y1) std::swap(y0, y1);
  if (x0 == x1) x1 = x0 == size ? x0--, size : x0 + 1;
  if (y0 == y1) y1 = y0 == size ? y0--, size : y0 + 1;
  return {x0, y0, x1, y1};
}

ScoreMap box_indicator(const Box& b, Index size) {
  ScoreMap s{size, size, std::vector<double>(static_cast<std::size_t>(size * size), 0.0)};
  for (Index y = b.y0; y < b.y1; ++y)
    for (Index x = b.x0; x < b.x1; ++x) s.values[static_cast<std::size_t>(y * size + x)] = 1.0;
  return s;
}

TEST(Upsample, NearestNeighbourBlocks) {
  auto m = upsample_binary({1, 0, 0, 1}, 2, 8);
  ASSERT_EQ(m.height, 8);
  for (Index y = 0; y < 8; ++y)
    for (Index x = 0; x < 8; ++x) EXPECT_EQ(m.at(y, x), (y < 4) == (x < 4)) << y << "," << x;
  EXPECT_EQ(upsample_binary({0, 0, 0, 0}, 2, 8).count(), 0);
  auto s = upsample_scores({0.1, 0.2, 0.3, 0.4}, 2, 4);
  EXPECT_EQ(s.values, (std::vector<double>{0.1, 0.1, 0.2, 0.2, 0.1, 0.1, 0.2, 0.2, 0.3, 0.3, 0.4, 0.4, 0.3, 0.3, 0.4, 0.4}));
  EXPECT_THROW(upsample_binary({1, 0, 0}, 2, 8), std::invalid_argument);
  EXPECT_THROW(upsample_binary({1, 0, 0, 1}, 3, 8), std::invalid_argument);
}

TEST(Upsample, PoolingBackRecoversTheMapAndAreaRatio) {
  std::mt19937_64 rng(60);
  std::bernoulli_distribution on(0.4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::uint8_t> grid(16);
    for (auto& g : grid) g = on(rng) ? 1 : 0;
    auto m = upsample_binary(grid, 4, 32);
    Tensor<double> t = Tensor<double>::zeros({32, 32, 1});
    for (Index i = 0; i < 32 * 32; ++i) t.mutable_values()[i] = m.bits[static_cast<std::size_t>(i)];
    auto pooled = patch_average_pool(t, Index{8});
    for (Index i = 0; i < 16; ++i) ASSERT_EQ(pooled[i], grid[static_cast<std::size_t>(i)]);
    const auto focus = std::count(grid.begin(), grid.end(), std::uint8_t{1});
    EXPECT_EQ(m.count() * 16, focus * 32 * 32);
  }
}

TEST(Upsample, SaliencyMapFollowsItsStage) {
  ModelConfig c;
  SaliencyMap<float> m;
  m.p = 4;
  m.binary = std::vector<std::uint8_t>(16, 0);
  m.binary[5] = 1;
  m.scores = Tensor<float>::zeros({4, 4});
  auto up = upsample_saliency(m, 2, c);
  EXPECT_EQ(up.height, 64);
  EXPECT_EQ(up.stage, 2);
  EXPECT_EQ(mask_to_bbox(up), (Box{16, 16, 32, 32}));
  EXPECT_THROW(upsample_saliency(m, 4, c), std::invalid_argument);
}

TEST(MaskToBbox, TightHull) {
  auto m = PixelMask::empty(8, 8);
  m.bits[3 * 8 + 5] = 1;  // row 3, column 5
  EXPECT_EQ(mask_to_bbox(m), (Box{5, 3, 6, 4}));
  m = PixelMask::empty(8, 8);
  m.bits[0] = m.bits[63] = 1;
  EXPECT_EQ(mask_to_bbox(m), (Box{0, 0, 8, 8}));
  PixelMask full = PixelMask::from_box({0, 0, 8, 8}, 8, 8);
  EXPECT_EQ(mask_to_bbox(full), (Box{0, 0, 8, 8}));
  try {
    mask_to_bbox(PixelMask::empty(4, 4));
    FAIL() << "expected an exception";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("empty mask"), std::string::npos);
  }
}

TEST(Iou, BoxExamples) {
  EXPECT_DOUBLE_EQ(iou(Box{1, 2, 5, 6}, Box{1, 2, 5, 6}), 1.0);
  EXPECT_DOUBLE_EQ(iou(Box{0, 0, 2, 2}, Box{2, 2, 4, 4}), 0.0);
  EXPECT_NEAR(iou(Box{0, 0, 2, 2}, Box{1, 1, 3, 3}), 1.0 / 7.0, 1e-15);
}

TEST(Iou, MasksMatchPixelCountingOracle) {
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> density(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    auto a = random_mask(rng, 12, 9, density(rng));
    auto b = random_mask(rng, 12, 9, density(rng));
    long long inter = 0, uni = 0, ca = 0, cb = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
      inter += a.bits[i] & b.bits[i];
      uni += a.bits[i] | b.bits[i];
      ca += a.bits[i];
      cb += b.bits[i];
    }
    const double expected_iou = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    const double expected_dice = ca + cb == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(ca + cb);
    const double i = iou(a, b), d = dice(a, b);
    ASSERT_EQ(i, expected_iou);
    ASSERT_EQ(d, expected_dice);
    ASSERT_NEAR(d, 2 * i / (1 + i), 1e-12);
  }
  EXPECT_THROW(iou(PixelMask::empty(2, 2), PixelMask::empty(2, 3)), std::invalid_argument);
}

TEST(Iou, RandomBoxesMatchTheirMasks) {
  std::mt19937_64 rng(62);
  for (int trial = 0; trial < 300; ++trial) {
    Box a = random_box(rng, 16), b = random_box(rng, 16);
    EXPECT_NEAR(iou(a, b), iou(PixelMask::from_box(a, 16, 16), PixelMask::from_box(b, 16, 16)), 1e-12);
  }
}

TEST(GtKnown, DefinitionsAndBoundary) {
  std::vector<Box> truth{{0, 0, 4, 4}, {2, 2, 6, 6}};
  EXPECT_DOUBLE_EQ(gt_known(truth, truth), 1.0);
  EXPECT_DOUBLE_EQ(top1_loc(truth, truth, {0, 1}, {0, 1}), 1.0);
  EXPECT_DOUBLE_EQ(top1_loc(truth, truth, {1, 0}, {0, 1}), 0.0);
  // (0,0,4,2) against (0,0,4,4): IoU exactly 0.5
  EXPECT_DOUBLE_EQ(iou(Box{0, 0, 4, 2}, Box{0, 0, 4, 4}), 0.5);
  EXPECT_DOUBLE_EQ(gt_known({Box{0, 0, 4, 2}}, {Box{0, 0, 4, 4}}), 1.0);
  EXPECT_DOUBLE_EQ(gt_known({Box{0, 0, 4, 2}}, {Box{0, 0, 4, 4}}, 0.5000001), 0.0);
  EXPECT_THROW(gt_known(truth, {truth[0]}), std::invalid_argument);
}

TEST(GtKnown, MonotoneInThreshold) {
  std::mt19937_64 rng(63);
  std::vector<Box> pred, truth;
  for (int i = 0; i < 200; ++i) {
    pred.push_back(random_box(rng, 20));
    truth.push_back(random_box(rng, 20));
  }
  double previous = 1.0;
  for (double t = 0.0; t <= 1.0; t += 0.01) {
    const double g = gt_known(pred, truth, t);
    EXPECT_LE(g, previous);
    previous = g;
  }
}

TEST(LargestComponent, FourConnectivityAndTies) {
  // diagonal neighbours are separate components
  auto m = PixelMask::empty(4, 4);
  m.bits = {1, 0, 0, 0,
            0, 1, 1, 0,
            0, 0, 1, 0,
            1, 0, 0, 0};
  auto l = largest_component(m);
  EXPECT_EQ(l.bits, (std::vector<std::uint8_t>{0, 0, 0, 0, 0, 1, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0}));
  auto tie = PixelMask::empty(3, 3);
  tie.bits = {0, 0, 1,
              1, 0, 0,
              0, 0, 0};
  EXPECT_EQ(largest_component(tie).bits, (std::vector<std::uint8_t>{0, 0, 1, 0, 0, 0, 0, 0, 0}));
  EXPECT_EQ(largest_component(PixelMask::empty(2, 2)).count(), 0);
}

TEST(MaxBox, IndicatorMapsScorePerfectly) {
  std::mt19937_64 rng(64);
  std::vector<ScoreMap> maps;
  std::vector<Box> truth;
  for (int i = 0; i < 20; ++i) {
    truth.push_back(random_box(rng, 16));
    maps.push_back(box_indicator(truth.back(), 16));
  }
  EXPECT_DOUBLE_EQ(maxbox_acc(maps, truth, MaxBoxVersion::v1), 1.0);
  EXPECT_DOUBLE_EQ(maxbox_acc(maps, truth, MaxBoxVersion::v2), 1.0);
}

TEST(MaxBox, UniformMapsGiveTheFullImageBox) {
  std::vector<Box> truth{{0, 0, 16, 8}, {0, 0, 8, 8}, {0, 0, 16, 16}, {2, 2, 13, 13}};
  std::vector<ScoreMap> maps(4, ScoreMap{16, 16, std::vector<double>(256, 0.5)});
  double expected = 0;
  for (const Box& b : truth) expected += (static_cast<double>(b.area()) / 256.0 >= 0.5 ? 1.0 : 0.0) / 4.0;
  EXPECT_DOUBLE_EQ(expected, 0.5);
  EXPECT_DOUBLE_EQ(maxbox_acc(maps, truth, MaxBoxVersion::v1), expected);
}

TEST(MaxBox, V2WithSingleThresholdAndNoComponentRuleEqualsV1) {
  std::mt19937_64 rng(65);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MaxBoxOptions v2 = maxbox_options(MaxBoxVersion::v2);
  EXPECT_EQ(v2.iou_thresholds, (std::vector<double>{0.3, 0.5, 0.7}));
  EXPECT_TRUE(v2.largest_component);
  v2.iou_thresholds = {0.5};
  v2.largest_component = false;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ScoreMap> maps;
    std::vector<Box> truth;
    for (int i = 0; i < 4; ++i) {
      ScoreMap s{12, 12, std::vector<double>(144)};
      for (auto& v : s.values) v = u(rng);
      maps.push_back(s);
      truth.push_back(random_box(rng, 12));
    }
    ASSERT_EQ(maxbox_acc(maps, truth, v2), maxbox_acc(maps, truth, MaxBoxVersion::v1));
  }
}

TEST(RandomBaseline, MatchesCountingOnTwoByTwoGrid) {
  // truth is one cell of a 2x2 grid; a single random focus cell hits it with
  // probability 1/4, two cells form a matching hull in 2 of 6 pairs, and the
  // full grid never reaches IoU 0.5.
  const Box cell{0, 0, 4, 4};
  auto one = random_map_gt_known({{1, 0, 0, 0}}, {cell}, 2, 8, 20000, 5);
  auto two = random_map_gt_known({{1, 1, 0, 0}}, {cell}, 2, 8, 20000, 6);
  auto four = random_map_gt_known({{1, 1, 1, 1}}, {cell}, 2, 8, 200, 7);
  EXPECT_NEAR(one, 0.25, 0.015);
  EXPECT_NEAR(two, 1.0 / 3.0, 0.015);
  EXPECT_EQ(four, 0.0);
  EXPECT_EQ(random_map_gt_known({{1, 0, 0, 0}}, {cell}, 2, 8, 300, 9),
            random_map_gt_known({{1, 0, 0, 0}}, {cell}, 2, 8, 300, 9));
}

TEST(MetricReport, WritesHeaderAndMetrics) {
  MetricReport r;
  r.header = {{"regime", "detail"}};
  r.metrics = {{"gt_known", 0.25}};
  EXPECT_DOUBLE_EQ(r.metric("gt_known"), 0.25);
  EXPECT_THROW(r.metric("dice"), std::out_of_range);
  auto dir = testing::scratch_dir("report");
  r.write((dir / "metrics.txt").string());
  const auto text = read_file_bytes(dir / "metrics.txt");
  EXPECT_NE(text.find("# regime: detail"), std::string::npos);
  EXPECT_NE(text.find("gt_known = 0.25"), std::string::npos);
}

TEST(Reports, RunOnAnUntrainedModel) {
  auto dir = testing::scratch_dir("reports");
  ModelConfig c;
  c.widths = {4, 8, 16, 32};
  c.blocks = {1, 1, 1, 1};
  c.attention_hidden = 8;
  c.field_width = 4;
  c.fusion_width = 8;
  auto params = ExpNetParams<float>::make(c, 3);
  SyntheticSpec s;
  s.per_class = 2;
  auto detail = generate_synthetic_dataset(s, (dir / "detail").string());
  std::vector<EvalRecord> records;
  auto loc = localization_report(params, c, detail, 1, 0, &records);
  ASSERT_EQ(records.size(), 8u);
  for (const auto& r : records) {
    EXPECT_GT(r.mask.count(), 0);
    if (!r.fallback) {
      EXPECT_EQ(r.box, mask_to_bbox(r.mask));
    }
  }
  for (const char* k : {"gt_known", "top1_loc", "maxboxacc_v1", "maxboxacc_v2", "random_gt_known"}) {
    EXPECT_GE(loc.metric(k), 0.0) << k;
    EXPECT_LE(loc.metric(k), 1.0) << k;
  }
  s.regime = Regime::structure;
  auto structure = generate_synthetic_dataset(s, (dir / "structure").string());
  auto seg = segmentation_report(params, c, structure);
  for (const char* k : {"outer_iou", "outer_dice", "inner_iou", "inner_dice"}) {
    EXPECT_GE(seg.metric(k), 0.0) << k;
    EXPECT_LE(seg.metric(k), 1.0) << k;
  }
  EXPECT_GE(seg.metric("outer_dice"), seg.metric("outer_iou"));
  EXPECT_THROW(localization_report(params, c, structure), std::invalid_argument);
  EXPECT_THROW(localization_report(params, c, detail, 4), std::invalid_argument);
}

}  // namespace
}  // namespace expnet
