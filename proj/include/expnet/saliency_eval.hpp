#pragma once

#include "expnet/config.hpp"
#include "expnet/dataset.hpp"
#include "expnet/model.hpp"
#include "expnet/nefirf.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace expnet {

/// Binary mask at image resolution, row-major.
struct PixelMask {
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> bits;
  int stage = 0;
  double threshold = 0.5;

  static PixelMask empty(Index height, Index width);
  static PixelMask from_box(const Box& box, Index height, Index width);
  /// Nonzero entries of channel 0 of an [H,W,1] tensor.
  static PixelMask from_tensor(const Tensor<float>& t);

  bool at(Index y, Index x) const { return bits[static_cast<std::size_t>(y * width + x)] != 0; }
  Index count() const;
};

/// Real-valued map at image resolution, row-major.
struct ScoreMap {
  Index height = 0;
  Index width = 0;
  std::vector<double> values;
};

/// Nearest-neighbour expansion of a p x p grid to image_size x image_size:
/// every entry fills an (image_size/p)^2 block.
PixelMask upsample_binary(const std::vector<std::uint8_t>& grid, Index p, Index image_size);
ScoreMap upsample_scores(const std::vector<double>& grid, Index p, Index image_size);

/// Stage-aware form; `stage` is 1-based over the config's Gaze-Shifts.
template <typename Scalar>
PixelMask upsample_saliency(const SaliencyMap<Scalar>& m, int stage, const ModelConfig& config);
template <typename Scalar>
ScoreMap upsample_saliency_scores(const SaliencyMap<Scalar>& m, int stage, const ModelConfig& config);

/// Tight box around the nonzero pixels; throws "empty mask" when there are none.
Box mask_to_bbox(const PixelMask& mask);

double iou(const Box& a, const Box& b);
double iou(const PixelMask& a, const PixelMask& b);
double dice(const PixelMask& a, const PixelMask& b);

/// Fraction of pairs with IoU >= threshold.
double gt_known(const std::vector<Box>& predicted, const std::vector<Box>& truth, double threshold = 0.5);
/// Fraction with the right class and IoU >= threshold.
double top1_loc(const std::vector<Box>& predicted, const std::vector<Box>& truth, const std::vector<Index>& classes,
                const std::vector<Index>& labels, double threshold = 0.5);

/// Largest 4-connected component; ties go to the component met first in a row-major scan.
PixelMask largest_component(const PixelMask& mask);

enum class MaxBoxVersion { v1, v2 };

struct MaxBoxOptions {
  std::vector<double> iou_thresholds{0.5};
  bool largest_component = false;
  double tau_step = 0.05;
};

MaxBoxOptions maxbox_options(MaxBoxVersion version);

/// Threshold sweep: for each tau, boxes from (scores >= tau); the score at
/// tau is the mean over IoU thresholds of the fraction of images reaching it.
/// An empty thresholded mask scores 0 for that image at that tau. Returns the
/// best score over tau.
double maxbox_acc(const std::vector<ScoreMap>& maps, const std::vector<Box>& truth, const MaxBoxOptions& options);
double maxbox_acc(const std::vector<ScoreMap>& maps, const std::vector<Box>& truth, MaxBoxVersion version);

/// Per-image record of the weakly-supervised evaluation.
struct EvalRecord {
  Index label = 0;
  Index predicted = 0;
  PixelMask mask;  // upsampled binary saliency of the evaluated stage
  Box box;         // mask_to_bbox(mask), or the full image on fallback
  bool fallback = false;
  std::vector<Box> truth_boxes;
};

struct MetricReport {
  std::vector<std::pair<std::string, std::string>> header;
  std::vector<std::pair<std::string, double>> metrics;

  double metric(const std::string& name) const;
  void write(const std::string& path) const;
};

/// Expected GT-Known of uniformly random p x p maps with the same focus count
/// as each record's map, estimated from `draws` random maps per image.
double random_map_gt_known(const std::vector<std::vector<std::uint8_t>>& maps, const std::vector<Box>& truth, Index p,
                           Index image_size, int draws, std::uint64_t seed);

/// Weakly-supervised localization on a box-annotated dataset from stage
/// `stage`'s saliency: GT-Known, Top-1 Loc, MaxBoxAccV1/V2 and the random-map
/// GT-Known baseline.
MetricReport localization_report(const ExpNetParams<float>& params, const ModelConfig& config, const Dataset& data,
                                 int stage = 1, std::uint64_t seed = 0, std::vector<EvalRecord>* records = nullptr);

/// Segmentation of the structure regime: stage `outer_stage` against the outer
/// masks and `inner_stage` against the inner masks (IoU and Dice means).
MetricReport segmentation_report(const ExpNetParams<float>& params, const ModelConfig& config, const Dataset& data,
                                 int outer_stage = 2, int inner_stage = 3);

}  // namespace expnet
