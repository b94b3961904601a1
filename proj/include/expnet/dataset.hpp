#pragma once

#include "expnet/config.hpp"
#include "expnet/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace expnet {

/// Pixel box, inclusive-exclusive: columns [x0,x1), rows [y0,y1).
struct Box {
  Index x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  Index width() const { return x1 - x0; }
  Index height() const { return y1 - y0; }
  Index area() const { return width() * height(); }
  bool operator==(const Box& o) const { return x0 == o.x0 && y0 == o.y0 && x1 == o.x1 && y1 == o.y1; }
};

enum class Regime { detail, structure, interaction };

Regime parse_regime(const std::string& text);
std::string to_string(Regime regime);

/// Number of distinct 6x6 glyph patterns available to the detail and
/// interaction regimes.
inline constexpr Index kGlyphCount = 8;
inline constexpr Index kGlyphSize = 6;
/// Texture families available to the interaction regime.
inline constexpr Index kTextureFamilies = 2;

struct SyntheticSpec {
  Regime regime = Regime::detail;
  Index classes = 4;
  Index per_class = 100;
  Index image_size = 64;
  double noise = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

SyntheticSpec synthetic_spec_from(const KeyValues& kv, const std::string& source = "dataset spec");
SyntheticSpec load_synthetic_spec(const std::string& path);

/// The 6x6 binary pattern of glyph g, row-major.
std::vector<std::uint8_t> glyph_pattern(Index g);

struct Sample {
  std::string path;  // relative to the dataset root
  Index label = 0;
  std::optional<Box> box;          // detail/interaction: glyph location
  std::vector<std::string> masks;  // structure: outer, inner ([H,W,1] tensors)
  Tensor<float> image;             // [H,W,3]
  std::vector<Tensor<float>> mask_tensors;
};

struct Dataset {
  std::string root;
  Regime regime = Regime::detail;
  Index classes = 0;
  Index image_size = 0;
  std::uint64_t seed = 0;
  double noise = 0;
  std::vector<Sample> samples;

  Index size() const { return static_cast<Index>(samples.size()); }
  std::vector<Index> class_counts() const;
  /// Subset keeping the given sample indices, in order.
  Dataset subset(const std::vector<Index>& indices) const;
};

/// Write images, masks and manifest.txt under `dir`; returns the dataset as
/// loaded from disk. Samples cycle through the classes so every prefix of
/// K images is balanced.
Dataset generate_synthetic_dataset(const SyntheticSpec& spec, const std::string& dir);

/// Reads `dir`/manifest.txt and every referenced tensor, checking checksums.
Dataset load_dataset(const std::string& dir);

/// Seeded 80/20 permutation split into (train, test).
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, std::uint64_t seed, double train_fraction = 0.8);

/// Copy of `image` with `box` overwritten by the regime's shared background
/// texture plus fresh noise; removes the class cue of a detail-regime image.
Tensor<float> mask_glyph(const Dataset& data, const Sample& sample, std::uint64_t seed);

}  // namespace expnet
