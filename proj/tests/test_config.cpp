#include "expnet/config.hpp"

#include <gtest/gtest.h>

namespace expnet {
namespace {

TEST(KeyValues, ParsesCommentsAndWhitespace) {
  auto kv = parse_key_values("# header\n  epochs = 5 # five\n\nlr=0.1\r\n", "t.cfg");
  ASSERT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv[0], (std::pair<std::string, std::string>{"epochs", "5"}));
  EXPECT_EQ(kv[1], (std::pair<std::string, std::string>{"lr", "0.1"}));
  EXPECT_EQ(format_key_values(kv), "epochs = 5\nlr = 0.1\n");
}

TEST(KeyValues, RejectsDuplicatesAndMalformedLines) {
  EXPECT_THROW(parse_key_values("a = 1\na = 2\n", "x"), std::invalid_argument);
  EXPECT_THROW(parse_key_values("just words\n", "x"), std::invalid_argument);
  EXPECT_THROW(parse_key_values(" = 3\n", "x"), std::invalid_argument);
}

TEST(NumericParsing, Strict) {
  EXPECT_EQ(parse_int("k", "42"), 42);
  EXPECT_THROW(parse_int("k", "4x"), std::invalid_argument);
  EXPECT_THROW(parse_int("k", ""), std::invalid_argument);
  EXPECT_DOUBLE_EQ(parse_double("k", "1e-3"), 1e-3);
  EXPECT_THROW(parse_double("k", "fast"), std::invalid_argument);
  EXPECT_EQ(parse_index_list("k", "1, 2,3"), (std::vector<Index>{1, 2, 3}));
  EXPECT_THROW(parse_index_list("k", ""), std::invalid_argument);
}

TEST(AblationToggles, ParseAndFormat) {
  auto t = AblationToggles::parse("focal=off,band=off");
  EXPECT_FALSE(t.focal);
  EXPECT_TRUE(t.context_impression);
  EXPECT_TRUE(t.conditional_sine);
  EXPECT_FALSE(t.band_pass);
  EXPECT_EQ(AblationToggles::parse(t.to_string()), t);
  EXPECT_EQ(AblationToggles::parse(""), AblationToggles{});
  EXPECT_THROW(AblationToggles::parse("focal=maybe"), std::invalid_argument);
  EXPECT_THROW(AblationToggles::parse("colour=on"), std::invalid_argument);
}

TEST(ModelConfig, DefaultsValidate) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.stage_extent(0), 64);
  EXPECT_EQ(c.stage_extent(3), 8);
  EXPECT_EQ(c.patch_size(0), 16);
  EXPECT_EQ(c.patch_size(2), 4);
  EXPECT_EQ(c.token_embedding, TokenEmbedding::max_pool);
}

TEST(ModelConfig, ValidationRules) {
  auto broken = [](auto edit) {
    ModelConfig c;
    edit(c);
    return c;
  };
  EXPECT_THROW(broken([](ModelConfig& c) { c.widths = {16, 24, 64, 128}; }).validate(), std::invalid_argument);
  EXPECT_THROW(broken([](ModelConfig& c) { c.blocks = {1, 1}; }).validate(), std::invalid_argument);
  EXPECT_THROW(broken([](ModelConfig& c) { c.image_size = 50; }).validate(), std::invalid_argument);
  EXPECT_THROW(broken([](ModelConfig& c) { c.attention_heads = 3; }).validate(), std::invalid_argument);
  EXPECT_THROW(broken([](ModelConfig& c) { c.classes = 1; }).validate(), std::invalid_argument);
  EXPECT_THROW(broken([](ModelConfig& c) { c.patch_grid = 1; }).validate(), std::invalid_argument);
}

TEST(ModelConfig, KeyValueRoundTrip) {
  ModelConfig c;
  c.stages = 3;
  c.widths = {8, 16, 32};
  c.blocks = {1, 2, 1};
  c.fusion = FusionMode::cross_attention;
  c.token_embedding = TokenEmbedding::flatten;
  c.toggles.band_pass = false;
  auto back = model_config_from(to_key_values(c));
  EXPECT_EQ(back.stages, 3);
  EXPECT_EQ(back.widths, c.widths);
  EXPECT_EQ(back.blocks, c.blocks);
  EXPECT_EQ(back.fusion, FusionMode::cross_attention);
  EXPECT_EQ(back.token_embedding, TokenEmbedding::flatten);
  EXPECT_EQ(back.toggles, c.toggles);
}

TEST(ModelConfig, UnknownKeyIsRejected) {
  try {
    model_config_from({{"stages", "4"}, {"depth", "9"}}, "m.cfg");
    FAIL() << "expected an exception";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("depth"), std::string::npos);
  }
  EXPECT_THROW(parse_fusion("concat"), std::invalid_argument);
  EXPECT_THROW(parse_token_embedding("pooled"), std::invalid_argument);
  EXPECT_EQ(parse_token_embedding("average_pool"), TokenEmbedding::average_pool);
}

TEST(TrainConfig, DefaultsAndRoundTrip) {
  TrainConfig t;
  EXPECT_EQ(t.epochs, 60);
  EXPECT_EQ(t.batch_size, 16);
  EXPECT_DOUBLE_EQ(t.learning_rate, 1e-3);
  EXPECT_DOUBLE_EQ(t.weight_decay, 1e-4);
  EXPECT_EQ(t.lr_schedule, LrSchedule::cosine);
  t.learning_rate = 3e-4;
  t.lr_schedule = LrSchedule::constant;
  t.seed = 17;
  auto back = train_config_from(to_key_values(t));
  EXPECT_DOUBLE_EQ(back.learning_rate, 3e-4);
  EXPECT_EQ(back.lr_schedule, LrSchedule::constant);
  EXPECT_EQ(back.seed, 17u);
}

TEST(TrainConfig, ValidationRules) {
  EXPECT_THROW(train_config_from({{"epochs", "0"}}), std::invalid_argument);
  EXPECT_THROW(train_config_from({{"learning_rate", "-1"}}), std::invalid_argument);
  EXPECT_THROW(train_config_from({{"beta1", "1"}}), std::invalid_argument);
  EXPECT_THROW(train_config_from({{"momentum", "0.9"}}), std::invalid_argument);
  EXPECT_THROW(train_config_from({{"lr_schedule", "step"}}), std::invalid_argument);
}

}  // namespace
}  // namespace expnet
