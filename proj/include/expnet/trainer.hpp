#pragma once

#include "expnet/config.hpp"
#include "expnet/dataset.hpp"
#include "expnet/model.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace expnet {

struct EpochMetrics {
  int epoch = 0;
  double loss = 0;
  double train_accuracy = 0;
  std::optional<double> eval_accuracy;

  /// "epoch=3 loss=0.123456 train_acc=0.9500 eval_acc=0.9000"
  std::string log_line() const;
};

struct TrainOptions {
  /// When non-empty: metrics.log, checkpoint/ (final) and checkpoint-epochNNN/ (cadence) are written here.
  std::string out_dir;
  /// Worker threads for per-sample gradients; results do not depend on it.
  int threads = 1;
  /// Called after each epoch, for progress reporting.
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
  ExpNetParams<float> params;
  std::vector<EpochMetrics> history;
};

/// Thread count from EXPNET_THREADS (default 1, minimum 1).
int threads_from_env();

/// Minibatch AdamW on cross-entropy. Each epoch visits the training set in a
/// seeded permutation; per-sample gradients are summed in sample order, so
/// results are bit-identical for any thread count. Throws on a non-finite
/// loss, naming the 0-based global batch index.
TrainResult train(const ModelConfig& model, const TrainConfig& config, const Dataset& train_set,
                  const Dataset* eval_set = nullptr, const TrainOptions& options = {});

struct EvalResult {
  double accuracy = 0;
  std::vector<double> per_class;  // NaN for classes absent from the data
  std::vector<Index> predictions;
};

EvalResult evaluate(const ExpNetParams<float>& params, const ModelConfig& config, const Dataset& data);
EvalResult evaluate(const Checkpoint& checkpoint, const Dataset& data);

/// Top-1 accuracy of precomputed predictions.
EvalResult score_predictions(const std::vector<Index>& predictions, const std::vector<Index>& labels, Index classes);

struct AblationRow {
  AblationToggles toggles;
  double train_accuracy = 0;
  double test_accuracy = 0;
};

/// The full model followed by each single-axis-off variant.
std::vector<AblationToggles> default_ablation_grid();

/// Train and evaluate `model` under each toggle setting with identical data,
/// seed and budget. Variant runs go to `out_dir`/<toggles> when out_dir is set.
std::vector<AblationRow> run_ablation(const ModelConfig& model, const TrainConfig& config, const Dataset& train_set,
                                      const Dataset& test_set, const std::vector<AblationToggles>& grid,
                                      const std::string& out_dir = "", int threads = 1);

std::string format_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace expnet
