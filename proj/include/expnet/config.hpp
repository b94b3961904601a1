#pragma once

#include "expnet/tensor.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace expnet {

/// Ordered key=value pairs as read from a config or manifest file.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Parse "key = value" lines. Blank lines and '#' comments are skipped;
/// duplicate keys and lines without '=' are rejected, naming `source`.
KeyValues parse_key_values(const std::string& text, const std::string& source);
KeyValues read_key_values(const std::string& path);
std::string format_key_values(const KeyValues& kv);

enum class FusionMode { mlp_add, cross_attention };

FusionMode parse_fusion(const std::string& text);
std::string to_string(FusionMode mode);

/// How a k x k x C tile becomes an attention token.
enum class TokenEmbedding {
  max_pool,      // per-channel tile maximum, then a linear map C -> hidden
  average_pool,  // per-channel tile mean, then a linear map C -> hidden
  flatten,       // flattened tile, then a linear map k*k*C -> hidden
};

TokenEmbedding parse_token_embedding(const std::string& text);
std::string to_string(TokenEmbedding mode);

/// The four ablation axes. `focal` off replaces every Gaze-Shift by a plain
/// max-pool + channel-doubling conv, which makes the other three moot.
struct AblationToggles {
  bool focal = true;
  bool context_impression = true;
  bool conditional_sine = true;
  bool band_pass = true;

  /// "focal=off,ci=on,sine=on,band=off"; unspecified axes stay on.
  static AblationToggles parse(const std::string& text);
  std::string to_string() const;
  bool operator==(const AblationToggles& o) const;
};

struct ModelConfig {
  int stages = 4;
  std::vector<Index> widths{16, 32, 64, 128};
  std::vector<Index> blocks{2, 2, 2, 2};
  Index patch_grid = 4;
  FusionMode fusion = FusionMode::mlp_add;
  Index classes = 4;
  Index image_size = 64;
  Index attention_hidden = 128;
  Index attention_heads = 4;
  Index field_width = 16;
  Index fusion_width = 128;
  TokenEmbedding token_embedding = TokenEmbedding::max_pool;
  AblationToggles toggles;

  /// Throws std::invalid_argument describing the first violated rule.
  void validate() const;

  /// Spatial extent of stage s (0-based); each Gaze-Shift halves it.
  Index stage_extent(int s) const { return image_size >> s; }
  /// Tile size k of the Gaze-Shift following stage s.
  Index patch_size(int s) const { return stage_extent(s) / patch_grid; }
};

ModelConfig model_config_from(const KeyValues& kv, const std::string& source = "model config");
KeyValues to_key_values(const ModelConfig& c);
ModelConfig load_model_config(const std::string& path);

/// Learning rate over the run: fixed, or cosine decay from the base rate to 0.
enum class LrSchedule { constant, cosine };

LrSchedule parse_lr_schedule(const std::string& text);
std::string to_string(LrSchedule schedule);

struct TrainConfig {
  int epochs = 60;
  Index batch_size = 16;
  double learning_rate = 1e-3;
  LrSchedule lr_schedule = LrSchedule::cosine;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs between checkpoints; 0 = final only

  void validate() const;
};

TrainConfig train_config_from(const KeyValues& kv, const std::string& source = "train config");
KeyValues to_key_values(const TrainConfig& c);
TrainConfig load_train_config(const std::string& path);

/// Strict numeric parsing helpers shared by the config readers.
long long parse_int(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
std::vector<Index> parse_index_list(const std::string& key, const std::string& value);

}  // namespace expnet
