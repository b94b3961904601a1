#include "expnet/model.hpp"
#include "expnet/ops.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace expnet {
namespace {

using testing::random_tensor;

ModelConfig tiny_config() {
  ModelConfig c;
  c.stages = 3;
  c.widths = {2, 4, 8};
  c.blocks = {1, 1, 1};
  c.patch_grid = 2;
  c.image_size = 16;
  c.classes = 3;
  c.attention_hidden = 4;
  c.attention_heads = 2;
  c.field_width = 3;
  c.fusion_width = 6;
  return c;
}

TEST(ResidualBlock, ZeroBranchIsIdentity) {
  ParameterSet<double> ps;
  auto block = ResidualBlock<double>::make(ParamFactory<double>(ps, 1), 3);
  block.conv2.weight.mutable_values().setZero();
  block.conv2.bias.mutable_values().setZero();
  std::mt19937_64 rng(50);
  auto x = random_tensor({5, 5, 3}, rng, 1.0, false);
  EXPECT_TRUE((block(x).values() == x.values()).all());
  EXPECT_THROW(block(random_tensor({5, 5, 2}, rng, 1.0, false)), std::invalid_argument);
}

TEST(ExpNet, DefaultConfigProducesStageOutputs) {
  ModelConfig c;
  c.widths = {4, 8, 16, 32};
  c.blocks = {1, 1, 1, 1};
  c.attention_hidden = 8;
  c.fusion_width = 8;
  c.field_width = 4;
  auto params = ExpNetParams<float>::make(c, 3);
  std::mt19937_64 rng(51);
  auto image = random_tensor({64, 64, 3}, rng, 1.0, false).cast<float>();
  auto out = expnet_forward(image, params, c);
  EXPECT_EQ(out.logits.shape(), (Shape{4}));
  ASSERT_EQ(out.saliency_maps.size(), 3u);
  ASSERT_EQ(out.impressions.size(), 3u);
  for (std::size_t s = 0; s < 3; ++s) {
    EXPECT_EQ(out.saliency_maps[s].p, 4);
    EXPECT_EQ(out.saliency_maps[s].stage_index, static_cast<int>(s) + 1);
    EXPECT_EQ(out.impressions[s].size(), 8);
  }
  EXPECT_EQ(out.focal_embedding.size(), 32);
}

TEST(ExpNet, RejectsWrongImageSize) {
  auto c = tiny_config();
  auto params = ExpNetParams<double>::make(c, 0);
  EXPECT_THROW(expnet_forward(Tensor<double>::zeros({8, 8, 3}), params, c), std::invalid_argument);
}

TEST(ExpNet, VanillaVariantHasNoGazeShiftOrFusion) {
  auto c = tiny_config();
  c.toggles.focal = false;
  auto params = ExpNetParams<double>::make(c, 0);
  EXPECT_TRUE(params.gaze.empty());
  EXPECT_EQ(params.transitions.size(), 2u);
  for (const auto& e : params.params.entries()) {
    EXPECT_EQ(e.first.find("gaze"), std::string::npos) << e.first;
    EXPECT_EQ(e.first.find("fusion"), std::string::npos) << e.first;
  }
  auto out = expnet_forward(Tensor<double>::zeros({16, 16, 3}), params, c);
  EXPECT_TRUE(out.saliency_maps.empty());
  EXPECT_EQ(out.logits.size(), 3);
}

TEST(ExpNet, SameSeedSameParameters) {
  auto c = tiny_config();
  auto a = ExpNetParams<double>::make(c, 9), b = ExpNetParams<double>::make(c, 9), d = ExpNetParams<double>::make(c, 10);
  ASSERT_EQ(a.params.size(), b.params.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    EXPECT_EQ(a.params.entries()[i].first, b.params.entries()[i].first);
    EXPECT_TRUE((a.params.entries()[i].second.values() == b.params.entries()[i].second.values()).all());
    differs = differs || !(a.params.entries()[i].second.values() == d.params.entries()[i].second.values()).all();
  }
  EXPECT_TRUE(differs);
}

TEST(Fusion, MlpAddIsSumOfPerSourcePerceptrons) {
  ParameterSet<double> ps;
  auto fusion = FusionParams<double>::make(ParamFactory<double>(ps, 4), FusionMode::mlp_add, 5, 3, 2, 6, 2);
  std::mt19937_64 rng(52);
  auto focal = random_tensor({5}, rng, 1.0, false);
  std::vector<Tensor<double>> imp{random_tensor({3}, rng, 1.0, false), random_tensor({3}, rng, 1.0, false)};
  auto fused = fuse_embeddings(focal, imp, fusion, FusionMode::mlp_add);
  Array<double> expected = fusion.adapters[0].vector(focal).values() + fusion.adapters[1].vector(imp[0]).values() +
                           fusion.adapters[2].vector(imp[1]).values();
  EXPECT_LT((fused.values() - expected).abs().maxCoeff(), 1e-12);

  // with zero impression adapters only the focal perceptron remains
  for (std::size_t i = 1; i < 3; ++i) {
    fusion.adapters[i].second.weight.mutable_values().setZero();
    fusion.adapters[i].second.bias.mutable_values().setZero();
  }
  auto reduced = fuse_embeddings(focal, imp, fusion, FusionMode::mlp_add);
  EXPECT_LT((reduced.values() - fusion.adapters[0].vector(focal).values()).abs().maxCoeff(), 1e-12);
}

TEST(Fusion, SourcesAreNotInterchangeable) {
  ParameterSet<double> ps;
  std::mt19937_64 rng(53);
  for (auto mode : {FusionMode::mlp_add, FusionMode::cross_attention}) {
    auto fusion = FusionParams<double>::make(ParamFactory<double>(ps, mode == FusionMode::mlp_add ? 5 : 6), mode, 4, 4,
                                             2, 6, 2);
    auto focal = random_tensor({4}, rng, 1.0, false);
    auto a = random_tensor({4}, rng, 1.0, false), b = random_tensor({4}, rng, 1.0, false);
    auto x = fuse_embeddings(focal, {a, b}, fusion, mode);
    auto y = fuse_embeddings(focal, {b, a}, fusion, mode);
    EXPECT_EQ(x.size(), 6);
    EXPECT_GT((x.values() - y.values()).abs().maxCoeff(), 1e-9);
  }
}

TEST(Fusion, RejectsMissingImpressions) {
  ParameterSet<double> ps;
  auto fusion = FusionParams<double>::make(ParamFactory<double>(ps, 1), FusionMode::mlp_add, 4, 4, 1, 6, 2);
  EXPECT_THROW(fuse_embeddings(Tensor<double>::zeros({4}), {}, fusion, FusionMode::mlp_add), std::invalid_argument);
}

TEST(Loss, UniformAndConfidentLogits) {
  ExpNetOutput<double> out;
  out.logits = Tensor<double>::zeros({10});
  EXPECT_NEAR(training_loss(out, 7).item(), std::log(10.0), 1e-12);
  out.logits.mutable_values()[7] = 30;
  EXPECT_LE(training_loss(out, 7).item(), 1e-12);
}

TEST(PredictClass, TiesGoToLowestIndex) {
  EXPECT_EQ(predict_class(Tensor<double>::from({4}, {0.1, 0.7, 0.7, 0.2})), 1);
  EXPECT_EQ(predict_class(Tensor<double>::zeros({3})), 0);
}

TEST(ExpNet, LossGradientReachesNefirfConditioning) {
  auto c = tiny_config();
  auto params = ExpNetParams<double>::make(c, 11);
  std::mt19937_64 rng(54);
  auto image = random_tensor({16, 16, 3}, rng, 1.0, false);
  {
    Tape<double> tape;
    tape.backward(training_loss(expnet_forward(image, params, c), 1));
  }
  int heads = 0;
  for (const auto& [name, t] : params.params.entries()) {
    if (name.find("nefirf") == std::string::npos || name.find(".head.") == std::string::npos) continue;
    ++heads;
    EXPECT_GT(t.grad().abs().maxCoeff(), 0.0) << name;
  }
  EXPECT_EQ(heads, 2 * 6 * 2);
}

TEST(ExpNet, GradientsMatchFiniteDifferencesOnSampledCoordinates) {
  for (auto mode : {FusionMode::mlp_add, FusionMode::cross_attention}) {
    auto c = tiny_config();
    c.fusion = mode;
    auto params = ExpNetParams<double>::make(c, 12);
    std::mt19937_64 rng(55);
    testing::jitter(params.params, rng, 0.02);
    auto image = random_tensor({16, 16, 3}, rng, 1.0, false);
    auto loss = [&] { return training_loss(expnet_forward(image, params, c, ThresholdGradient::exact), 2); };
    params.params.zero_grad();
    {
      Tape<double> tape;
      tape.backward(loss());
    }
    const auto& entries = params.params.entries();
    std::uniform_int_distribution<std::size_t> pick_param(0, entries.size() - 1);
    double worst = 0, scale = 1;
    for (const auto& e : entries) scale = std::max(scale, e.second.grad().abs().maxCoeff());
    for (int s = 0; s < 60; ++s) {
      Tensor<double> leaf = entries[pick_param(rng)].second;
      std::uniform_int_distribution<Index> pick(0, leaf.size() - 1);
      const Index i = pick(rng);
      const double analytic = leaf.grad()[i];
      const double saved = leaf[i];
      leaf.mutable_values()[i] = saved + 1e-6;
      const double up = loss().item();
      leaf.mutable_values()[i] = saved - 1e-6;
      const double down = loss().item();
      leaf.mutable_values()[i] = saved;
      const double numeric = (up - down) / 2e-6;
      worst = std::max(worst, std::abs(analytic - numeric) /
                                  std::max({std::abs(analytic), std::abs(numeric), 1e-5 * scale}));
    }
    EXPECT_LT(worst, 1e-4) << to_string(mode);
  }
}

TEST(Checkpoint, RoundTripReproducesLogits) {
  auto c = tiny_config();
  c.fusion = FusionMode::cross_attention;
  auto params = ExpNetParams<float>::make(c, 13);
  std::mt19937_64 rng(56);
  for (const auto& e : params.params.entries()) {
    Tensor<float> t = e.second;
    t.mutable_values() += random_tensor(t.shape(), rng, 0.01, false).cast<float>().values();
  }
  auto dir = testing::scratch_dir("checkpoint");
  save_checkpoint((dir / "ckpt").string(), c, params, 7, 13);
  auto loaded = load_checkpoint((dir / "ckpt").string());
  EXPECT_EQ(loaded.epoch, 7);
  EXPECT_EQ(loaded.seed, 13u);
  EXPECT_EQ(loaded.config.fusion, FusionMode::cross_attention);
  EXPECT_EQ(loaded.config.widths, c.widths);
  auto image = random_tensor({16, 16, 3}, rng, 1.0, false).cast<float>();
  auto a = expnet_forward(image, params, c).logits;
  auto b = expnet_forward(image, loaded.params, loaded.config).logits;
  EXPECT_TRUE((a.values() == b.values()).all());
}

TEST(Checkpoint, LoadErrors) {
  auto dir = testing::scratch_dir("checkpoint_errors");
  EXPECT_THROW(
      {
        try {
          load_checkpoint((dir / "nothing").string());
        } catch (const std::runtime_error& e) {
          EXPECT_NE(std::string(e.what()).find("no manifest"), std::string::npos);
          throw;
        }
      },
      std::runtime_error);

  auto c = tiny_config();
  auto params = ExpNetParams<float>::make(c, 1);
  save_checkpoint((dir / "ckpt").string(), c, params, 1, 1);
  std::filesystem::remove(dir / "ckpt" / "head.bias.expt");
  EXPECT_THROW(load_checkpoint((dir / "ckpt").string()), std::runtime_error);
}

}  // namespace
}  // namespace expnet
