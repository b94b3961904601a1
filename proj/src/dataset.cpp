#include "expnet/dataset.hpp"

#include "expnet/tensor_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace expnet {
namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

// '#' marks a lit cell.
const std::array<std::array<const char*, kGlyphSize>, kGlyphCount> kGlyphRows = {{
    {"..##..", "..##..", "######", "######", "..##..", "..##.."},
    {"#....#", ".#..#.", "..##..", "..##..", ".#..#.", "#....#"},
    {"######", "#....#", "#....#", "#....#", "#....#", "######"},
    {"######", "......", "######", "......", "######", "......"},
    {"#.#.#.", "#.#.#.", "#.#.#.", "#.#.#.", "#.#.#.", "#.#.#."},
    {"##..##", "##..##", "..##..", "..##..", "##..##", "##..##"},
    {"#.....", "##....", "###...", "####..", "#####.", "######"},
    {"......", ".####.", ".#..#.", ".#..#.", ".####.", "......"},
}};

constexpr std::array<float, 3> kGlyphLit = {0.95f, 0.1f, 0.1f};
constexpr std::array<float, 3> kGlyphDark = {0.05f, 0.05f, 0.05f};

/// Smooth colour texture: a base tone plus a few random oriented gratings per channel.
std::vector<float> grating_texture(std::mt19937_64& rng, Index size, int gratings, double min_period,
                                   double max_period, double fixed_angle = std::nan("")) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<float> tex(static_cast<std::size_t>(size * size * 3));
  for (int c = 0; c < 3; ++c) {
    const double base = 0.35 + 0.1 * unit(rng);
    std::vector<std::array<double, 4>> g;  // kx, ky, phase, amplitude
    for (int i = 0; i < gratings; ++i) {
      const double angle = std::isnan(fixed_angle) ? kPi * unit(rng) : fixed_angle + 0.2 * (unit(rng) - 0.5);
      const double period = min_period + (max_period - min_period) * unit(rng);
      const double k = 2 * kPi / period;
      g.push_back({k * std::cos(angle), k * std::sin(angle), 2 * kPi * unit(rng), 0.06 + 0.06 * unit(rng)});
    }
    for (Index y = 0; y < size; ++y)
      for (Index x = 0; x < size; ++x) {
        double v = base;
        for (const auto& q : g) v += q[3] * std::sin(q[0] * static_cast<double>(x) + q[1] * static_cast<double>(y) + q[2]);
        tex[static_cast<std::size_t>((y * size + x) * 3 + c)] = static_cast<float>(v);
      }
  }
  return tex;
}

std::vector<float> detail_background(std::uint64_t seed, Index size) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  return grating_texture(rng, size, 4, 6.0, 24.0);
}

void add_noise(std::vector<float>& px, double sigma, std::mt19937_64& rng) {
  if (sigma <= 0) return;
  std::normal_distribution<double> n(0.0, sigma);
  for (float& v : px) v = static_cast<float>(v + n(rng));
}

Box draw_glyph(std::vector<float>& px, Index size, Index glyph, std::mt19937_64& rng) {
  std::uniform_int_distribution<Index> pos(0, size - kGlyphSize);
  const Index x0 = pos(rng), y0 = pos(rng);
  const auto pattern = glyph_pattern(glyph);
  for (Index r = 0; r < kGlyphSize; ++r)
    for (Index c = 0; c < kGlyphSize; ++c) {
      const auto& colour = pattern[static_cast<std::size_t>(r * kGlyphSize + c)] ? kGlyphLit : kGlyphDark;
      for (int ch = 0; ch < 3; ++ch) px[static_cast<std::size_t>(((y0 + r) * size + x0 + c) * 3 + ch)] = colour[ch];
    }
  return {x0, y0, x0 + kGlyphSize, y0 + kGlyphSize};
}

struct Ellipses {
  std::vector<float> image;
  std::vector<float> outer;
  std::vector<float> inner;
};

Ellipses draw_ellipses(Index size, Index label, Index classes, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double s = static_cast<double>(size);
  const double b = s * (0.18 + 0.18 * unit(rng));
  const double a = b * (0.85 + 0.3 * unit(rng));
  const double margin = 2.0;
  const double cx = a + margin + (s - 2 * (a + margin)) * unit(rng);
  const double cy = b + margin + (s - 2 * (b + margin)) * unit(rng);
  const double width = 0.6 / static_cast<double>(classes);
  const double lo = 0.3 + width * static_cast<double>(label);
  const double ratio = lo + width * (0.1 + 0.8 * unit(rng));
  const double ia = a * ratio, ib = b * ratio;

  Ellipses e;
  e.image.assign(static_cast<std::size_t>(size * size * 3), 0.0f);
  e.outer.assign(static_cast<std::size_t>(size * size), 0.0f);
  e.inner.assign(static_cast<std::size_t>(size * size), 0.0f);
  const std::array<float, 3> bg{0.12f, 0.1f, 0.1f}, disc{0.85f, 0.5f, 0.2f}, cup{1.0f, 0.92f, 0.65f};
  for (Index y = 0; y < size; ++y)
    for (Index x = 0; x < size; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
      const bool in_outer = (dx * dx) / (a * a) + (dy * dy) / (b * b) <= 1.0;
      const bool in_inner = (dx * dx) / (ia * ia) + (dy * dy) / (ib * ib) <= 1.0;
      const std::size_t i = static_cast<std::size_t>(y * size + x);
      e.outer[i] = in_outer ? 1.0f : 0.0f;
      e.inner[i] = in_inner ? 1.0f : 0.0f;
      const auto& colour = in_inner ? cup : in_outer ? disc : bg;
      for (int c = 0; c < 3; ++c) e.image[i * 3 + static_cast<std::size_t>(c)] = colour[c];
    }
  return e;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string sample_digest(const fs::path& root, const Sample& s) {
  std::string bytes = read_file_bytes(root / s.path);
  for (const auto& m : s.masks) bytes += read_file_bytes(root / m);
  return hex64(fnv1a64(bytes));
}

}  // namespace

Regime parse_regime(const std::string& text) {
  if (text == "detail") return Regime::detail;
  if (text == "structure") return Regime::structure;
  if (text == "interaction") return Regime::interaction;
  throw std::invalid_argument("unknown regime '" + text + "' (expected detail, structure or interaction)");
}

std::string to_string(Regime regime) {
  switch (regime) {
    case Regime::detail: return "detail";
    case Regime::structure: return "structure";
    case Regime::interaction: return "interaction";
  }
  return "?";
}

std::vector<std::uint8_t> glyph_pattern(Index g) {
  if (g < 0 || g >= kGlyphCount) throw std::out_of_range("glyph index " + std::to_string(g) + " out of range");
  std::vector<std::uint8_t> bits;
  for (const char* row : kGlyphRows[static_cast<std::size_t>(g)])
    for (Index c = 0; c < kGlyphSize; ++c) bits.push_back(row[c] == '#' ? 1 : 0);
  return bits;
}

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("dataset spec: " + m); };
  if (classes < 2) fail("classes must be >= 2");
  if (per_class < 1) fail("per_class must be positive");
  if (image_size < 2 * kGlyphSize) fail("image_size too small");
  if (!(noise >= 0)) fail("noise must be non-negative");
  if (regime == Regime::detail && classes > kGlyphCount)
    fail(std::to_string(classes) + " classes exceed the " + std::to_string(kGlyphCount) + " available glyph patterns");
  if (regime == Regime::interaction) {
    if (classes % kTextureFamilies != 0 || classes / kTextureFamilies < 2)
      fail("interaction classes must be a multiple of " + std::to_string(kTextureFamilies) +
           " with at least two glyphs per texture family");
    if (classes / kTextureFamilies > kGlyphCount)
      fail(std::to_string(classes) + " classes exceed the available glyph patterns");
  }
}

SyntheticSpec synthetic_spec_from(const KeyValues& kv, const std::string& source) {
  SyntheticSpec s;
  for (const auto& [k, v] : kv) {
    if (k == "regime") s.regime = parse_regime(v);
    else if (k == "classes") s.classes = parse_int(k, v);
    else if (k == "per_class") s.per_class = parse_int(k, v);
    else if (k == "image_size") s.image_size = parse_int(k, v);
    else if (k == "noise") s.noise = parse_double(k, v);
    else if (k == "seed") s.seed = static_cast<std::uint64_t>(parse_int(k, v));
    else throw std::invalid_argument(source + ": unknown key '" + k + "'");
  }
  s.validate();
  return s;
}

SyntheticSpec load_synthetic_spec(const std::string& path) { return synthetic_spec_from(read_key_values(path), path); }

std::vector<Index> Dataset::class_counts() const {
  std::vector<Index> counts(static_cast<std::size_t>(classes), 0);
  for (const auto& s : samples) ++counts[static_cast<std::size_t>(s.label)];
  return counts;
}

Dataset Dataset::subset(const std::vector<Index>& indices) const {
  Dataset d = *this;
  d.samples.clear();
  for (Index i : indices) d.samples.push_back(samples.at(static_cast<std::size_t>(i)));
  return d;
}

Dataset generate_synthetic_dataset(const SyntheticSpec& spec, const std::string& dir) {
  spec.validate();
  const fs::path root(dir);
  fs::create_directories(root / "images");
  if (spec.regime == Regime::structure) fs::create_directories(root / "masks");

  const Index n = spec.classes * spec.per_class;
  const Index size = spec.image_size;
  std::mt19937_64 rng(spec.seed);
  const std::vector<float> background = detail_background(spec.seed, size);

  std::ostringstream manifest;
  manifest << "regime = " << to_string(spec.regime) << "\n"
           << "classes = " << spec.classes << "\n"
           << "count = " << n << "\n"
           << "image_size = " << size << "\n"
           << "seed = " << spec.seed << "\n";
  char noise_text[32];
  std::snprintf(noise_text, sizeof noise_text, "%.17g", spec.noise);
  manifest << "noise = " << noise_text << "\n";

  for (Index i = 0; i < n; ++i) {
    Sample s;
    s.label = i % spec.classes;
    char name[32];
    std::snprintf(name, sizeof name, "%06lld", static_cast<long long>(i));
    s.path = std::string("images/") + name + ".expt";
    std::vector<float> px;
    switch (spec.regime) {
      case Regime::detail:
        px = background;
        s.box = draw_glyph(px, size, s.label, rng);
        break;
      case Regime::interaction: {
        const Index glyphs = spec.classes / kTextureFamilies;
        const Index family = s.label / glyphs;
        px = grating_texture(rng, size, 3, 5.0, 9.0, family == 0 ? 0.0 : kPi / 2);
        s.box = draw_glyph(px, size, s.label % glyphs, rng);
        break;
      }
      case Regime::structure: {
        Ellipses e = draw_ellipses(size, s.label, spec.classes, rng);
        px = std::move(e.image);
        s.masks = {std::string("masks/") + name + "_outer.expt", std::string("masks/") + name + "_inner.expt"};
        write_tensor(root / s.masks[0],
                     Tensor<float>({size, size, 1}, Eigen::Map<Array<float>>(e.outer.data(), size * size)));
        write_tensor(root / s.masks[1],
                     Tensor<float>({size, size, 1}, Eigen::Map<Array<float>>(e.inner.data(), size * size)));
        break;
      }
    }
    add_noise(px, spec.noise, rng);
    write_tensor(root / s.path,
                 Tensor<float>({size, size, 3}, Eigen::Map<Array<float>>(px.data(), static_cast<Index>(px.size()))));
    manifest << s.path << " " << s.label;
    if (s.box) manifest << " box " << s.box->x0 << " " << s.box->y0 << " " << s.box->x1 << " " << s.box->y1;
    if (!s.masks.empty()) {
      manifest << " masks";
      for (const auto& m : s.masks) manifest << " " << m;
    }
    manifest << " checksum " << sample_digest(root, s) << "\n";
  }
  {
    std::ofstream out(root / "manifest.txt", std::ios::binary);
    out << manifest.str();
    if (!out) throw std::runtime_error("cannot write " + (root / "manifest.txt").string());
  }
  return load_dataset(dir);
}

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  const fs::path manifest_path = root / "manifest.txt";
  if (!fs::exists(manifest_path)) throw std::runtime_error(dir + ": no manifest");
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + manifest_path.string());

  Dataset d;
  d.root = dir;
  std::string header_text, line;
  std::vector<std::string> sample_lines;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.find('=') != std::string::npos) {
      if (!sample_lines.empty())
        throw std::runtime_error(manifest_path.string() + ": header line after sample lines: " + line);
      header_text += line + "\n";
    } else {
      sample_lines.push_back(line);
    }
  }
  Index count = -1;
  bool have_regime = false;
  for (const auto& [k, v] : parse_key_values(header_text, manifest_path.string())) {
    if (k == "regime") d.regime = parse_regime(v), have_regime = true;
    else if (k == "classes") d.classes = parse_int(k, v);
    else if (k == "count") count = parse_int(k, v);
    else if (k == "image_size") d.image_size = parse_int(k, v);
    else if (k == "seed") d.seed = static_cast<std::uint64_t>(parse_int(k, v));
    else if (k == "noise") d.noise = parse_double(k, v);
    else throw std::runtime_error(manifest_path.string() + ": unknown header key '" + k + "'");
  }
  if (!have_regime || d.classes < 2 || count < 0 || d.image_size < 1)
    throw std::runtime_error(manifest_path.string() + ": header needs regime, classes, count and image_size");
  if (static_cast<Index>(sample_lines.size()) != count)
    throw std::runtime_error(manifest_path.string() + ": header count " + std::to_string(count) + " but " +
                             std::to_string(sample_lines.size()) + " sample lines");

  for (const std::string& text : sample_lines) {
    std::istringstream ls(text);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    Sample s;
    s.path = tok.at(0);
    std::size_t at = 1;
    if (tok.size() < 2 || tok[1] == "box" || tok[1] == "masks" || tok[1] == "checksum")
      throw std::runtime_error(manifest_path.string() + ": missing label for " + s.path);
    try {
      s.label = parse_int("label", tok[at++]);
    } catch (const std::invalid_argument&) {
      throw std::runtime_error(manifest_path.string() + ": malformed label for " + s.path);
    }
    if (s.label < 0 || s.label >= d.classes)
      throw std::runtime_error(manifest_path.string() + ": label " + std::to_string(s.label) + " out of range for " +
                               s.path);
    std::string checksum;
    while (at < tok.size()) {
      const std::string& key = tok[at++];
      if (key == "box") {
        if (at + 4 > tok.size()) throw std::runtime_error(manifest_path.string() + ": truncated box for " + s.path);
        Box b{parse_int("x0", tok[at]), parse_int("y0", tok[at + 1]), parse_int("x1", tok[at + 2]),
              parse_int("y1", tok[at + 3])};
        at += 4;
        if (b.x0 < 0 || b.y0 < 0 || b.x1 <= b.x0 || b.y1 <= b.y0 || b.x1 > d.image_size || b.y1 > d.image_size)
          throw std::runtime_error(manifest_path.string() + ": invalid box for " + s.path);
        s.box = b;
      } else if (key == "masks") {
        while (at < tok.size() && tok[at] != "checksum" && tok[at] != "box") s.masks.push_back(tok[at++]);
      } else if (key == "checksum") {
        if (at >= tok.size()) throw std::runtime_error(manifest_path.string() + ": truncated checksum for " + s.path);
        checksum = tok[at++];
      } else {
        throw std::runtime_error(manifest_path.string() + ": unexpected field '" + key + "' for " + s.path);
      }
    }
    if (checksum.empty()) throw std::runtime_error(manifest_path.string() + ": missing checksum for " + s.path);
    if (!fs::exists(root / s.path)) throw std::runtime_error(dir + ": missing file " + s.path);
    for (const auto& m : s.masks)
      if (!fs::exists(root / m)) throw std::runtime_error(dir + ": missing file " + m);
    if (sample_digest(root, s) != checksum) throw std::runtime_error(dir + ": checksum mismatch for " + s.path);
    s.image = read_tensor<float>(root / s.path);
    if (s.image.shape() != Shape{d.image_size, d.image_size, 3})
      throw std::runtime_error(dir + ": " + s.path + " has shape " + shape_string(s.image.shape()));
    for (const auto& m : s.masks) {
      s.mask_tensors.push_back(read_tensor<float>(root / m));
      if (s.mask_tensors.back().shape() != Shape{d.image_size, d.image_size, 1})
        throw std::runtime_error(dir + ": " + m + " has shape " + shape_string(s.mask_tensors.back().shape()));
    }
    d.samples.push_back(std::move(s));
  }
  return d;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, std::uint64_t seed, double train_fraction) {
  std::vector<Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto cut = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(data.size())));
  std::vector<Index> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
  std::vector<Index> test(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {data.subset(train), data.subset(test)};
}

Tensor<float> mask_glyph(const Dataset& data, const Sample& sample, std::uint64_t seed) {
  if (data.regime != Regime::detail) throw std::invalid_argument("mask_glyph: only the detail regime has a shared background");
  if (!sample.box) throw std::invalid_argument("mask_glyph: " + sample.path + " has no glyph box");
  const Index size = data.image_size;
  const std::vector<float> background = detail_background(data.seed, size);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, data.noise > 0 ? data.noise : 1.0);
  Tensor<float> out = sample.image.detach();
  auto& v = out.mutable_values();
  const Box& b = *sample.box;
  for (Index y = b.y0; y < b.y1; ++y)
    for (Index x = b.x0; x < b.x1; ++x)
      for (Index c = 0; c < 3; ++c) {
        const Index i = (y * size + x) * 3 + c;
        v[i] = background[static_cast<std::size_t>(i)] + (data.noise > 0 ? static_cast<float>(n(rng)) : 0.0f);
      }
  return out;
}

}  // namespace expnet
