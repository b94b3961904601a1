#include "expnet/trainer.hpp"

#include "expnet/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>
#include <unordered_map>

namespace expnet {
namespace fs = std::filesystem;

namespace {

struct SampleGradient {
  double loss = 0;
  bool correct = false;
  std::vector<std::pair<std::size_t, Array<float>>> grads;  // (parameter index, gradient)
};

SampleGradient sample_gradient(const ExpNetParams<float>& params, const ModelConfig& model, const Sample& sample,
                               const std::unordered_map<const void*, std::size_t>& index) {
  SampleGradient r;
  Tape<float> tape;
  const ExpNetOutput<float> out = expnet_forward(sample.image, params, model);
  const Tensor<float> loss = training_loss(out, sample.label);
  r.loss = static_cast<double>(loss.item());
  r.correct = predict_class(out.logits) == sample.label;
  if (!std::isfinite(r.loss)) return r;
  tape.backward(loss, false);
  for (const auto& [node, g] : tape.leaf_gradients()) {
    auto it = index.find(node.get());
    if (it != index.end()) r.grads.emplace_back(it->second, g);
  }
  return r;
}

void check_compatible(const ModelConfig& model, const Dataset& data, const char* role) {
  if (data.classes != model.classes)
    throw std::invalid_argument(std::string(role) + " set has " + std::to_string(data.classes) +
                                " classes but the model has " + std::to_string(model.classes));
  if (data.image_size != model.image_size)
    throw std::invalid_argument(std::string(role) + " images are " + std::to_string(data.image_size) +
                                " pixels but the model expects " + std::to_string(model.image_size));
}

}  // namespace

std::string EpochMetrics::log_line() const {
  char buf[160];
  if (eval_accuracy)
    std::snprintf(buf, sizeof buf, "epoch=%d loss=%.6f train_acc=%.4f eval_acc=%.4f", epoch, loss, train_accuracy,
                  *eval_accuracy);
  else
    std::snprintf(buf, sizeof buf, "epoch=%d loss=%.6f train_acc=%.4f", epoch, loss, train_accuracy);
  return buf;
}

int threads_from_env() {
  const char* v = std::getenv("EXPNET_THREADS");
  if (v == nullptr || *v == '\0') return 1;
  const int n = std::atoi(v);
  return n < 1 ? 1 : n;
}

TrainResult train(const ModelConfig& model, const TrainConfig& config, const Dataset& train_set,
                  const Dataset* eval_set, const TrainOptions& options) {
  model.validate();
  config.validate();
  check_compatible(model, train_set, "training");
  if (eval_set) check_compatible(model, *eval_set, "evaluation");
  if (train_set.size() == 0) throw std::invalid_argument("training set is empty");

  TrainResult result{ExpNetParams<float>::make(model, config.seed), {}};
  ParameterSet<float>& ps = result.params.params;
  std::unordered_map<const void*, std::size_t> index;
  for (std::size_t i = 0; i < ps.size(); ++i) index.emplace(ps.entries()[i].second.node().get(), i);

  AdamW<float> optimizer(AdamWConfig::from(config));
  std::mt19937_64 shuffle_rng(config.seed ^ 0x5851f42d4c957f2dULL);
  const int threads = std::max(1, options.threads);
  std::string log;
  if (!options.out_dir.empty()) fs::create_directories(options.out_dir);

  std::vector<Index> order(static_cast<std::size_t>(train_set.size()));
  long long batch_index = 0;
  const long long batches = (train_set.size() + config.batch_size - 1) / config.batch_size;
  const long long total_steps = batches * config.epochs;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0;
    Index correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size), ++batch_index) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<Array<float>> grads(ps.size());
      for (std::size_t i = 0; i < ps.size(); ++i) grads[i] = Array<float>::Zero(ps.entries()[i].second.size());

      std::vector<SampleGradient> chunk;
      for (std::size_t at = start; at < end; at += static_cast<std::size_t>(threads)) {
        const std::size_t n = std::min(end - at, static_cast<std::size_t>(threads));
        chunk.assign(n, {});
        auto work = [&](std::size_t j) {
          chunk[j] = sample_gradient(result.params, model, train_set.samples[static_cast<std::size_t>(order[at + j])], index);
        };
        if (n == 1) {
          work(0);
        } else {
          std::vector<std::thread> pool;
          for (std::size_t j = 0; j < n; ++j) pool.emplace_back(work, j);
          for (auto& t : pool) t.join();
        }
        for (const SampleGradient& s : chunk) {
          if (!std::isfinite(s.loss))
            throw std::runtime_error("non-finite loss at batch " + std::to_string(batch_index) + " (epoch " +
                                     std::to_string(epoch) + ")");
          loss_sum += s.loss;
          correct += s.correct ? 1 : 0;
          for (const auto& [i, g] : s.grads) grads[i] += g;
        }
      }
      const float scale = 1.0f / static_cast<float>(end - start);
      for (auto& g : grads) g *= scale;
      optimizer.set_learning_rate(scheduled_learning_rate(config, batch_index, total_steps));
      optimizer.step(ps, grads);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.loss = loss_sum / static_cast<double>(train_set.size());
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_set.size());
    if (eval_set) m.eval_accuracy = evaluate(result.params, model, *eval_set).accuracy;
    result.history.push_back(m);
    if (options.on_epoch) options.on_epoch(m);

    if (!options.out_dir.empty()) {
      log += m.log_line() + "\n";
      std::ofstream out(fs::path(options.out_dir) / "metrics.log", std::ios::binary | std::ios::trunc);
      out << log;
      if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 && epoch != config.epochs) {
        char name[32];
        std::snprintf(name, sizeof name, "checkpoint-epoch%03d", epoch);
        save_checkpoint((fs::path(options.out_dir) / name).string(), model, result.params, epoch, config.seed);
      }
    }
  }
  if (!options.out_dir.empty())
    save_checkpoint((fs::path(options.out_dir) / "checkpoint").string(), model, result.params, config.epochs,
                    config.seed);
  return result;
}

EvalResult score_predictions(const std::vector<Index>& predictions, const std::vector<Index>& labels, Index classes) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("score_predictions: " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(labels.size()) + " labels");
  EvalResult r;
  r.predictions = predictions;
  std::vector<Index> hits(static_cast<std::size_t>(classes), 0), totals(static_cast<std::size_t>(classes), 0);
  Index correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) throw std::out_of_range("label out of range");
    ++totals[static_cast<std::size_t>(labels[i])];
    if (predictions[i] == labels[i]) {
      ++correct;
      ++hits[static_cast<std::size_t>(labels[i])];
    }
  }
  r.accuracy = labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
  for (Index c = 0; c < classes; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    r.per_class.push_back(totals[ci] ? static_cast<double>(hits[ci]) / static_cast<double>(totals[ci])
                                     : std::numeric_limits<double>::quiet_NaN());
  }
  return r;
}

EvalResult evaluate(const ExpNetParams<float>& params, const ModelConfig& config, const Dataset& data) {
  check_compatible(config, data, "evaluation");
  std::vector<Index> predictions, labels;
  for (const Sample& s : data.samples) {
    predictions.push_back(predict_class(expnet_forward(s.image, params, config).logits));
    labels.push_back(s.label);
  }
  return score_predictions(predictions, labels, config.classes);
}

EvalResult evaluate(const Checkpoint& checkpoint, const Dataset& data) {
  return evaluate(checkpoint.params, checkpoint.config, data);
}

std::vector<AblationToggles> default_ablation_grid() {
  std::vector<AblationToggles> grid(5);
  grid[1].focal = false;
  grid[2].context_impression = false;
  grid[3].conditional_sine = false;
  grid[4].band_pass = false;
  return grid;
}

std::vector<AblationRow> run_ablation(const ModelConfig& model, const TrainConfig& config, const Dataset& train_set,
                                      const Dataset& test_set, const std::vector<AblationToggles>& grid,
                                      const std::string& out_dir, int threads) {
  std::vector<AblationRow> rows;
  for (const AblationToggles& t : grid) {
    ModelConfig variant = model;
    variant.toggles = t;
    TrainOptions options;
    options.threads = threads;
    if (!out_dir.empty()) {
      std::string name = t.to_string();
      for (char& ch : name)
        if (ch == ',' || ch == '=') ch = '_';
      options.out_dir = (fs::path(out_dir) / name).string();
    }
    TrainResult r = train(variant, config, train_set, nullptr, options);
    rows.push_back({t, r.history.back().train_accuracy, evaluate(r.params, variant, test_set).accuracy});
  }
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::string out = "toggles                              train_acc  test_acc\n";
  for (const auto& r : rows) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-36s %9.4f %9.4f\n", r.toggles.to_string().c_str(), r.train_accuracy,
                  r.test_accuracy);
    out += buf;
  }
  return out;
}

}  // namespace expnet
