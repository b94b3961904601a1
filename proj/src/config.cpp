#include "expnet/config.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace expnet {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const std::vector<Index>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
  return out;
}

}  // namespace

KeyValues parse_key_values(const std::string& text, const std::string& source) {
  KeyValues out;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(source + ":" + std::to_string(number) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument(source + ":" + std::to_string(number) + ": empty key");
    if (!seen.insert(key).second)
      throw std::invalid_argument(source + ":" + std::to_string(number) + ": duplicate key '" + key + "'");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path);
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

long long parse_int(const std::string& key, const std::string& value) {
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(value.c_str(), &end, 10);
  if (value.empty() || *end != '\0' || errno != 0)
    throw std::invalid_argument("'" + key + "': expected an integer, got '" + value + "'");
  return v;
}

double parse_double(const std::string& key, const std::string& value) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (value.empty() || *end != '\0' || errno != 0)
    throw std::invalid_argument("'" + key + "': expected a number, got '" + value + "'");
  return v;
}

std::vector<Index> parse_index_list(const std::string& key, const std::string& value) {
  std::vector<Index> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<Index>(parse_int(key, trim(item))));
  if (out.empty()) throw std::invalid_argument("'" + key + "': empty list");
  return out;
}

FusionMode parse_fusion(const std::string& text) {
  if (text == "mlp_add") return FusionMode::mlp_add;
  if (text == "cross_attention") return FusionMode::cross_attention;
  throw std::invalid_argument("unknown fusion mode '" + text + "' (expected mlp_add or cross_attention)");
}

std::string to_string(FusionMode mode) { return mode == FusionMode::mlp_add ? "mlp_add" : "cross_attention"; }

LrSchedule parse_lr_schedule(const std::string& text) {
  if (text == "constant") return LrSchedule::constant;
  if (text == "cosine") return LrSchedule::cosine;
  throw std::invalid_argument("unknown lr_schedule '" + text + "' (expected constant or cosine)");
}

std::string to_string(LrSchedule schedule) { return schedule == LrSchedule::constant ? "constant" : "cosine"; }

TokenEmbedding parse_token_embedding(const std::string& text) {
  if (text == "max_pool") return TokenEmbedding::max_pool;
  if (text == "average_pool") return TokenEmbedding::average_pool;
  if (text == "flatten") return TokenEmbedding::flatten;
  throw std::invalid_argument("unknown token embedding '" + text + "' (expected max_pool, average_pool or flatten)");
}

std::string to_string(TokenEmbedding mode) {
  switch (mode) {
    case TokenEmbedding::max_pool: return "max_pool";
    case TokenEmbedding::average_pool: return "average_pool";
    case TokenEmbedding::flatten: break;
  }
  return "flatten";
}

AblationToggles AblationToggles::parse(const std::string& text) {
  AblationToggles t;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("toggle '" + item + "': expected axis=on|off");
    const std::string axis = trim(item.substr(0, eq));
    const std::string state = trim(item.substr(eq + 1));
    if (state != "on" && state != "off")
      throw std::invalid_argument("toggle '" + axis + "': expected on or off, got '" + state + "'");
    const bool on = state == "on";
    if (axis == "focal") t.focal = on;
    else if (axis == "ci") t.context_impression = on;
    else if (axis == "sine") t.conditional_sine = on;
    else if (axis == "band") t.band_pass = on;
    else throw std::invalid_argument("unknown toggle axis '" + axis + "' (expected focal, ci, sine, band)");
  }
  return t;
}

std::string AblationToggles::to_string() const {
  auto s = [](bool b) { return b ? "on" : "off"; };
  return std::string("focal=") + s(focal) + ",ci=" + s(context_impression) + ",sine=" + s(conditional_sine) +
         ",band=" + s(band_pass);
}

bool AblationToggles::operator==(const AblationToggles& o) const {
  return focal == o.focal && context_impression == o.context_impression && conditional_sine == o.conditional_sine &&
         band_pass == o.band_pass;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (stages < 2) fail("stages must be >= 2");
  if (static_cast<int>(widths.size()) != stages) fail("widths must list one entry per stage");
  if (static_cast<int>(blocks.size()) != stages) fail("blocks must list one entry per stage");
  for (int s = 0; s < stages; ++s) {
    if (widths[s] < 1) fail("widths must be positive");
    if (blocks[s] < 0) fail("blocks must be non-negative");
    if (s > 0 && widths[s] != 2 * widths[s - 1])
      fail("each stage must double the previous width (Gaze-Shift doubles channels), stage " + std::to_string(s + 1) +
           " has " + std::to_string(widths[s]) + " after " + std::to_string(widths[s - 1]));
  }
  if (patch_grid < 2) fail("patch_grid must be >= 2");
  if (classes < 2) fail("classes must be >= 2");
  if (image_size < 1 || image_size % ((Index{1} << (stages - 2)) * patch_grid) != 0)
    fail("image_size must be divisible by patch_grid * 2^(stages-2)");
  for (int s = 0; s + 1 < stages; ++s)
    if (stage_extent(s) % 2 != 0) fail("stage " + std::to_string(s + 1) + " extent is odd and cannot be halved");
  if (attention_heads < 1 || attention_hidden % attention_heads != 0)
    fail("attention_hidden must be divisible by attention_heads");
  if (field_width < 1) fail("field_width must be positive");
  if (fusion_width < 1) fail("fusion_width must be positive");
}

ModelConfig model_config_from(const KeyValues& kv, const std::string& source) {
  ModelConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "stages") c.stages = static_cast<int>(parse_int(k, v));
    else if (k == "widths") c.widths = parse_index_list(k, v);
    else if (k == "blocks") c.blocks = parse_index_list(k, v);
    else if (k == "patch_grid") c.patch_grid = parse_int(k, v);
    else if (k == "fusion") c.fusion = parse_fusion(v);
    else if (k == "classes") c.classes = parse_int(k, v);
    else if (k == "image_size") c.image_size = parse_int(k, v);
    else if (k == "attention_hidden") c.attention_hidden = parse_int(k, v);
    else if (k == "attention_heads") c.attention_heads = parse_int(k, v);
    else if (k == "field_width") c.field_width = parse_int(k, v);
    else if (k == "fusion_width") c.fusion_width = parse_int(k, v);
    else if (k == "token_embedding") c.token_embedding = parse_token_embedding(v);
    else if (k == "toggles") c.toggles = AblationToggles::parse(v);
    else throw std::invalid_argument(source + ": unknown key '" + k + "'");
  }
  c.validate();
  return c;
}

KeyValues to_key_values(const ModelConfig& c) {
  return {{"stages", std::to_string(c.stages)},
          {"widths", join(c.widths)},
          {"blocks", join(c.blocks)},
          {"patch_grid", std::to_string(c.patch_grid)},
          {"fusion", to_string(c.fusion)},
          {"classes", std::to_string(c.classes)},
          {"image_size", std::to_string(c.image_size)},
          {"attention_hidden", std::to_string(c.attention_hidden)},
          {"attention_heads", std::to_string(c.attention_heads)},
          {"field_width", std::to_string(c.field_width)},
          {"fusion_width", std::to_string(c.fusion_width)},
          {"token_embedding", to_string(c.token_embedding)},
          {"toggles", c.toggles.to_string()}};
}

ModelConfig load_model_config(const std::string& path) { return model_config_from(read_key_values(path), path); }

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (epochs < 1) fail("epochs must be positive");
  if (batch_size < 1) fail("batch_size must be positive");
  if (!(learning_rate > 0)) fail("learning_rate must be positive");
  if (!(weight_decay >= 0)) fail("weight_decay must be non-negative");
  if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) fail("beta1 and beta2 must lie in (0,1)");
  if (!(epsilon > 0)) fail("epsilon must be positive");
  if (checkpoint_every < 0) fail("checkpoint_every must be non-negative");
}

TrainConfig train_config_from(const KeyValues& kv, const std::string& source) {
  TrainConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "epochs") c.epochs = static_cast<int>(parse_int(k, v));
    else if (k == "batch_size") c.batch_size = parse_int(k, v);
    else if (k == "learning_rate") c.learning_rate = parse_double(k, v);
    else if (k == "lr_schedule") c.lr_schedule = parse_lr_schedule(v);
    else if (k == "weight_decay") c.weight_decay = parse_double(k, v);
    else if (k == "beta1") c.beta1 = parse_double(k, v);
    else if (k == "beta2") c.beta2 = parse_double(k, v);
    else if (k == "epsilon") c.epsilon = parse_double(k, v);
    else if (k == "seed") c.seed = static_cast<std::uint64_t>(parse_int(k, v));
    else if (k == "checkpoint_every") c.checkpoint_every = static_cast<int>(parse_int(k, v));
    else throw std::invalid_argument(source + ": unknown key '" + k + "'");
  }
  c.validate();
  return c;
}

KeyValues to_key_values(const TrainConfig& c) {
  return {{"epochs", std::to_string(c.epochs)},
          {"batch_size", std::to_string(c.batch_size)},
          {"learning_rate", format_double(c.learning_rate)},
          {"lr_schedule", to_string(c.lr_schedule)},
          {"weight_decay", format_double(c.weight_decay)},
          {"beta1", format_double(c.beta1)},
          {"beta2", format_double(c.beta2)},
          {"epsilon", format_double(c.epsilon)},
          {"seed", std::to_string(c.seed)},
          {"checkpoint_every", std::to_string(c.checkpoint_every)}};
}

TrainConfig load_train_config(const std::string& path) { return train_config_from(read_key_values(path), path); }

}  // namespace expnet
