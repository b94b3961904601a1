#include "expnet/saliency_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace expnet {
namespace {

void require_same_extent(const PixelMask& a, const PixelMask& b, const char* what) {
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument(std::string(what) + ": mask extents differ (" + std::to_string(a.height) + "x" +
                                std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                                std::to_string(b.width) + ")");
}

int check_stage(int stage, const ModelConfig& config) {
  if (stage < 1 || stage > config.stages - 1)
    throw std::invalid_argument("unknown stage " + std::to_string(stage) + " (model has stages 1.." +
                                std::to_string(config.stages - 1) + ")");
  return stage;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

PixelMask PixelMask::empty(Index height, Index width) {
  PixelMask m;
  m.height = height;
  m.width = width;
  m.bits.assign(static_cast<std::size_t>(height * width), 0);
  return m;
}

PixelMask PixelMask::from_box(const Box& box, Index height, Index width) {
  PixelMask m = empty(height, width);
  for (Index y = std::max<Index>(box.y0, 0); y < std::min(box.y1, height); ++y)
    for (Index x = std::max<Index>(box.x0, 0); x < std::min(box.x1, width); ++x)
      m.bits[static_cast<std::size_t>(y * width + x)] = 1;
  return m;
}

PixelMask PixelMask::from_tensor(const Tensor<float>& t) {
  if (t.rank() != 3) throw std::invalid_argument("mask tensor must be [H,W,C], got " + shape_string(t.shape()));
  PixelMask m = empty(t.dim(0), t.dim(1));
  const Index c = t.dim(2);
  for (Index i = 0; i < m.height * m.width; ++i) m.bits[static_cast<std::size_t>(i)] = t[i * c] != 0.0f ? 1 : 0;
  return m;
}

Index PixelMask::count() const {
  return static_cast<Index>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

PixelMask upsample_binary(const std::vector<std::uint8_t>& grid, Index p, Index image_size) {
  if (p < 1 || static_cast<Index>(grid.size()) != p * p)
    throw std::invalid_argument("upsample: grid has " + std::to_string(grid.size()) + " entries, expected p*p");
  if (image_size % p != 0)
    throw std::invalid_argument("upsample: image size " + std::to_string(image_size) + " is not divisible by " +
                                std::to_string(p));
  const Index f = image_size / p;
  PixelMask m = PixelMask::empty(image_size, image_size);
  for (Index y = 0; y < image_size; ++y)
    for (Index x = 0; x < image_size; ++x)
      m.bits[static_cast<std::size_t>(y * image_size + x)] = grid[static_cast<std::size_t>((y / f) * p + x / f)] ? 1 : 0;
  return m;
}

ScoreMap upsample_scores(const std::vector<double>& grid, Index p, Index image_size) {
  if (p < 1 || static_cast<Index>(grid.size()) != p * p)
    throw std::invalid_argument("upsample: grid has " + std::to_string(grid.size()) + " entries, expected p*p");
  if (image_size % p != 0)
    throw std::invalid_argument("upsample: image size " + std::to_string(image_size) + " is not divisible by " +
                                std::to_string(p));
  const Index f = image_size / p;
  ScoreMap s{image_size, image_size, std::vector<double>(static_cast<std::size_t>(image_size * image_size))};
  for (Index y = 0; y < image_size; ++y)
    for (Index x = 0; x < image_size; ++x)
      s.values[static_cast<std::size_t>(y * image_size + x)] = grid[static_cast<std::size_t>((y / f) * p + x / f)];
  return s;
}

template <typename Scalar>
PixelMask upsample_saliency(const SaliencyMap<Scalar>& m, int stage, const ModelConfig& config) {
  check_stage(stage, config);
  if (m.p != config.patch_grid)
    throw std::invalid_argument("saliency map is " + std::to_string(m.p) + "x" + std::to_string(m.p) +
                                " but the config grid is " + std::to_string(config.patch_grid));
  // Each stage's p x p grid spans the whole image: the tile size k shrinks
  // with the stage's cumulative downsampling d, so k*d = image_size/p.
  PixelMask out = upsample_binary(m.binary, m.p, config.image_size);
  out.stage = stage;
  out.threshold = 0.5;
  return out;
}

template <typename Scalar>
ScoreMap upsample_saliency_scores(const SaliencyMap<Scalar>& m, int stage, const ModelConfig& config) {
  check_stage(stage, config);
  std::vector<double> grid(static_cast<std::size_t>(m.scores.size()));
  for (Index i = 0; i < m.scores.size(); ++i) grid[static_cast<std::size_t>(i)] = static_cast<double>(m.scores[i]);
  return upsample_scores(grid, m.p, config.image_size);
}

Box mask_to_bbox(const PixelMask& mask) {
  Index x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
  for (Index y = 0; y < mask.height; ++y)
    for (Index x = 0; x < mask.width; ++x)
      if (mask.at(y, x)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) throw std::invalid_argument("empty mask");
  return {x0, y0, x1 + 1, y1 + 1};
}

double iou(const Box& a, const Box& b) {
  const Index iw = std::max<Index>(0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const Index ih = std::max<Index>(0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const Index inter = iw * ih;
  const Index uni = a.area() + b.area() - inter;
  if (uni <= 0) throw std::invalid_argument("iou: degenerate boxes");
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double iou(const PixelMask& a, const PixelMask& b) {
  require_same_extent(a, b, "iou");
  Index inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    const bool x = a.bits[i] != 0, y = b.bits[i] != 0;
    inter += (x && y) ? 1 : 0;
    uni += (x || y) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double dice(const PixelMask& a, const PixelMask& b) {
  require_same_extent(a, b, "dice");
  Index inter = 0, total = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    const bool x = a.bits[i] != 0, y = b.bits[i] != 0;
    inter += (x && y) ? 1 : 0;
    total += (x ? 1 : 0) + (y ? 1 : 0);
  }
  return total == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

double gt_known(const std::vector<Box>& predicted, const std::vector<Box>& truth, double threshold) {
  if (predicted.size() != truth.size())
    throw std::invalid_argument("gt_known: " + std::to_string(predicted.size()) + " predictions for " +
                                std::to_string(truth.size()) + " ground-truth boxes");
  if (predicted.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += iou(predicted[i], truth[i]) >= threshold ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

double top1_loc(const std::vector<Box>& predicted, const std::vector<Box>& truth, const std::vector<Index>& classes,
                const std::vector<Index>& labels, double threshold) {
  if (predicted.size() != truth.size() || classes.size() != truth.size() || labels.size() != truth.size())
    throw std::invalid_argument("top1_loc: input lists have different lengths");
  if (predicted.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    hits += (classes[i] == labels[i] && iou(predicted[i], truth[i]) >= threshold) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

PixelMask largest_component(const PixelMask& mask) {
  const Index h = mask.height, w = mask.width;
  std::vector<int> label(static_cast<std::size_t>(h * w), -1);
  std::vector<Index> stack;
  int best = -1, current = 0;
  Index best_size = 0;
  for (Index start = 0; start < h * w; ++start) {
    if (!mask.bits[static_cast<std::size_t>(start)] || label[static_cast<std::size_t>(start)] >= 0) continue;
    Index size = 0;
    stack.assign(1, start);
    label[static_cast<std::size_t>(start)] = current;
    while (!stack.empty()) {
      const Index at = stack.back();
      stack.pop_back();
      ++size;
      const Index y = at / w, x = at % w;
      const Index nbr[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& n : nbr) {
        if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
        const auto ni = static_cast<std::size_t>(n[0] * w + n[1]);
        if (mask.bits[ni] && label[ni] < 0) {
          label[ni] = current;
          stack.push_back(n[0] * w + n[1]);
        }
      }
    }
    if (size > best_size) {
      best_size = size;
      best = current;
    }
    ++current;
  }
  PixelMask out = mask;
  for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = (best >= 0 && label[i] == best) ? 1 : 0;
  return out;
}

MaxBoxOptions maxbox_options(MaxBoxVersion version) {
  if (version == MaxBoxVersion::v1) return {{0.5}, false, 0.05};
  return {{0.3, 0.5, 0.7}, true, 0.05};
}

double maxbox_acc(const std::vector<ScoreMap>& maps, const std::vector<Box>& truth, const MaxBoxOptions& options) {
  if (maps.size() != truth.size())
    throw std::invalid_argument("maxbox_acc: " + std::to_string(maps.size()) + " maps for " +
                                std::to_string(truth.size()) + " boxes");
  if (maps.empty() || options.iou_thresholds.empty()) return 0.0;
  const int steps = static_cast<int>(std::lround(1.0 / options.tau_step));
  double best = 0.0;
  for (int t = 0; t <= steps; ++t) {
    const double tau = static_cast<double>(t) * options.tau_step;
    std::vector<double> ious(maps.size(), -1.0);  // -1: empty mask
    for (std::size_t i = 0; i < maps.size(); ++i) {
      PixelMask m = PixelMask::empty(maps[i].height, maps[i].width);
      for (std::size_t j = 0; j < m.bits.size(); ++j) m.bits[j] = maps[i].values[j] >= tau ? 1 : 0;
      if (options.largest_component) m = largest_component(m);
      if (m.count() == 0) continue;
      ious[i] = iou(mask_to_bbox(m), truth[i]);
    }
    double score = 0.0;
    for (double delta : options.iou_thresholds) {
      std::size_t hits = 0;
      for (double v : ious) hits += (v >= 0 && v >= delta) ? 1 : 0;
      score += static_cast<double>(hits) / static_cast<double>(maps.size());
    }
    best = std::max(best, score / static_cast<double>(options.iou_thresholds.size()));
  }
  return best;
}

double maxbox_acc(const std::vector<ScoreMap>& maps, const std::vector<Box>& truth, MaxBoxVersion version) {
  return maxbox_acc(maps, truth, maxbox_options(version));
}

double MetricReport::metric(const std::string& name) const {
  for (const auto& [k, v] : metrics)
    if (k == name) return v;
  throw std::out_of_range("no metric named " + name);
}

void MetricReport::write(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write report " + path);
  for (const auto& [k, v] : header) out << "# " << k << ": " << v << "\n";
  for (const auto& [k, v] : metrics) out << k << " = " << fmt(v) << "\n";
}

double random_map_gt_known(const std::vector<std::vector<std::uint8_t>>& maps, const std::vector<Box>& truth, Index p,
                           Index image_size, int draws, std::uint64_t seed) {
  if (maps.size() != truth.size()) throw std::invalid_argument("random_map_gt_known: length mismatch");
  if (maps.empty() || draws < 1) return 0.0;
  const Index f = image_size / p;
  std::mt19937_64 rng(seed);
  std::vector<Index> cells(static_cast<std::size_t>(p * p));
  double total = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const auto n = static_cast<std::size_t>(std::count(maps[i].begin(), maps[i].end(), std::uint8_t{1}));
    std::size_t hits = 0;
    for (int d = 0; d < draws; ++d) {
      std::iota(cells.begin(), cells.end(), Index{0});
      std::shuffle(cells.begin(), cells.end(), rng);
      Index r0 = p, c0 = p, r1 = -1, c1 = -1;
      for (std::size_t j = 0; j < n; ++j) {
        const Index r = cells[j] / p, c = cells[j] % p;
        r0 = std::min(r0, r), c0 = std::min(c0, c), r1 = std::max(r1, r), c1 = std::max(c1, c);
      }
      const Box b = n == 0 ? Box{0, 0, image_size, image_size} : Box{c0 * f, r0 * f, (c1 + 1) * f, (r1 + 1) * f};
      hits += iou(b, truth[i]) >= 0.5 ? 1 : 0;
    }
    total += static_cast<double>(hits) / static_cast<double>(draws);
  }
  return total / static_cast<double>(maps.size());
}

MetricReport localization_report(const ExpNetParams<float>& params, const ModelConfig& config, const Dataset& data,
                                 int stage, std::uint64_t seed, std::vector<EvalRecord>* records) {
  check_stage(stage, config);
  if (!config.toggles.focal) throw std::invalid_argument("localization needs saliency maps, but focal is off");
  std::vector<Box> pred, truth;
  std::vector<Index> classes, labels;
  std::vector<ScoreMap> maps;
  std::vector<std::vector<std::uint8_t>> grids;
  Index fallbacks = 0;
  for (const Sample& s : data.samples) {
    if (!s.box) throw std::invalid_argument("localization needs a ground-truth box for " + s.path);
    const ExpNetOutput<float> out = expnet_forward(s.image, params, config);
    const SaliencyMap<float>& m = out.saliency_maps[static_cast<std::size_t>(stage - 1)];
    EvalRecord r;
    r.label = s.label;
    r.predicted = predict_class(out.logits);
    r.mask = upsample_saliency(m, stage, config);
    r.truth_boxes = {*s.box};
    try {
      r.box = mask_to_bbox(r.mask);
    } catch (const std::invalid_argument&) {
      r.box = {0, 0, config.image_size, config.image_size};
      r.fallback = true;
      ++fallbacks;
    }
    pred.push_back(r.box);
    truth.push_back(*s.box);
    classes.push_back(r.predicted);
    labels.push_back(s.label);
    maps.push_back(upsample_saliency_scores(m, stage, config));
    grids.push_back(m.binary);
    if (records) records->push_back(std::move(r));
  }
  MetricReport rep;
  rep.header = {{"dataset", data.root},
                {"task", "localization"},
                {"stage", std::to_string(stage)},
                {"mapping", "reconstructed: nearest upsampling of the binary map, tight box of the foreground"},
                {"tau_step", "0.05"}};
  const double gk = gt_known(pred, truth);
  const double baseline = random_map_gt_known(grids, truth, config.patch_grid, config.image_size, 1000, seed);
  rep.metrics = {{"gt_known", gk},
                 {"top1_loc", top1_loc(pred, truth, classes, labels)},
                 {"maxboxacc_v1", maxbox_acc(maps, truth, MaxBoxVersion::v1)},
                 {"maxboxacc_v2", maxbox_acc(maps, truth, MaxBoxVersion::v2)},
                 {"random_gt_known", baseline},
                 {"fallbacks", static_cast<double>(fallbacks)},
                 {"images", static_cast<double>(data.size())}};
  return rep;
}

MetricReport segmentation_report(const ExpNetParams<float>& params, const ModelConfig& config, const Dataset& data,
                                 int outer_stage, int inner_stage) {
  check_stage(outer_stage, config);
  check_stage(inner_stage, config);
  if (!config.toggles.focal) throw std::invalid_argument("segmentation needs saliency maps, but focal is off");
  double outer_iou = 0, outer_dice = 0, inner_iou = 0, inner_dice = 0;
  for (const Sample& s : data.samples) {
    if (s.mask_tensors.size() < 2) throw std::invalid_argument("segmentation needs outer and inner masks for " + s.path);
    const ExpNetOutput<float> out = expnet_forward(s.image, params, config);
    const PixelMask outer = upsample_saliency(out.saliency_maps[static_cast<std::size_t>(outer_stage - 1)], outer_stage, config);
    const PixelMask inner = upsample_saliency(out.saliency_maps[static_cast<std::size_t>(inner_stage - 1)], inner_stage, config);
    const PixelMask gt_outer = PixelMask::from_tensor(s.mask_tensors[0]);
    const PixelMask gt_inner = PixelMask::from_tensor(s.mask_tensors[1]);
    outer_iou += iou(outer, gt_outer);
    outer_dice += dice(outer, gt_outer);
    inner_iou += iou(inner, gt_inner);
    inner_dice += dice(inner, gt_inner);
  }
  const double n = data.size() > 0 ? static_cast<double>(data.size()) : 1.0;
  MetricReport rep;
  rep.header = {{"dataset", data.root},
                {"task", "segmentation"},
                {"outer_stage", std::to_string(outer_stage)},
                {"inner_stage", std::to_string(inner_stage)},
                {"mapping", "reconstructed: nearest upsampling of the binary map"}};
  rep.metrics = {{"outer_iou", outer_iou / n},
                 {"outer_dice", outer_dice / n},
                 {"inner_iou", inner_iou / n},
                 {"inner_dice", inner_dice / n},
                 {"images", static_cast<double>(data.size())}};
  return rep;
}

template PixelMask upsample_saliency(const SaliencyMap<float>&, int, const ModelConfig&);
template PixelMask upsample_saliency(const SaliencyMap<double>&, int, const ModelConfig&);
template ScoreMap upsample_saliency_scores(const SaliencyMap<float>&, int, const ModelConfig&);
template ScoreMap upsample_saliency_scores(const SaliencyMap<double>&, int, const ModelConfig&);

}  // namespace expnet
