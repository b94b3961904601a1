#include "expnet/gradient_suite.hpp"

#include "expnet/gaze_shift.hpp"
#include "expnet/layers.hpp"
#include "expnet/model.hpp"
#include "expnet/nefirf.hpp"
#include "expnet/ops.hpp"
#include "expnet/tensor_io.hpp"

#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <stdexcept>

namespace expnet {
namespace {

// Gradients below this magnitude are compared absolutely (|diff| <= 1e-4 * floor).
constexpr double kGradientFloor = 1e-5;

using Leaves = std::vector<std::pair<std::string, Tensor<double>>>;
using Loss = std::function<Tensor<double>()>;

struct Instance {
  Leaves leaves;
  Loss loss;
  Index samples = 0;  // 0: every coordinate
  // Keeps parameter structs referenced by `loss` alive.
  std::shared_ptr<void> keep;
};

Tensor<double> randn(const Shape& shape, std::mt19937_64& rng, double scale = 1.0, bool grad = true) {
  std::normal_distribution<double> n(0.0, scale);
  Array<double> v(shape_size(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = n(rng);
  return Tensor<double>(shape, std::move(v), grad);
}

/// Scalar probe: sum(out * r) for a fixed random r, so every output entry matters.
Tensor<double> probe(const Tensor<double>& out, const Tensor<double>& r) { return sum(mul(out, r)); }

void add_params(Leaves& leaves, const ParameterSet<double>& ps) {
  for (const auto& [name, t] : ps.entries()) leaves.emplace_back(name, t);
}

/// Random values for every parameter so zero-initialized ones (biases,
/// offset predictors) are exercised away from their starting point. Offset
/// biases also move by half a pixel: bilinear sampling has kinks at integer
/// positions, and offsets scattered around zero keep landing within eps of one.
void jitter(ParameterSet<double>& ps, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  for (auto& [name, t] : ps.entries()) {
    Tensor<double> h = t;
    const bool offset_bias = name.size() >= 11 && name.compare(name.size() - 11, 11, "offset.bias") == 0;
    for (Index i = 0; i < h.size(); ++i) h.mutable_values()[i] += n(rng) + (offset_bias ? 0.5 : 0.0);
  }
}

ModelConfig tiny_model(FusionMode fusion) {
  ModelConfig c;
  c.stages = 2;
  c.widths = {2, 4};
  c.blocks = {1, 1};
  c.patch_grid = 4;
  c.fusion = fusion;
  c.classes = 3;
  c.image_size = 16;
  c.attention_hidden = 4;
  c.attention_heads = 2;
  c.field_width = 4;
  c.fusion_width = 4;
  return c;
}

using Builder = std::function<Instance(std::mt19937_64&)>;

const std::map<std::string, Builder>& builders() {
  static const std::map<std::string, Builder> table = [] {
    std::map<std::string, Builder> b;
    b["conv2d"] = [](std::mt19937_64& rng) {
      Instance in;
      auto x = randn({5, 5, 2}, rng), w = randn({3, 3, 2, 3}, rng, 0.5), bias = randn({3}, rng);
      const Index stride = 1 + static_cast<Index>(rng() % 2), pad = static_cast<Index>(rng() % 2);
      auto r = randn({(5 + 2 * pad - 3) / stride + 1, (5 + 2 * pad - 3) / stride + 1, 3}, rng, 1.0, false);
      in.leaves = {{"x", x}, {"weight", w}, {"bias", bias}};
      in.loss = [=] { return probe(conv2d(x, w, bias, stride, pad), r); };
      return in;
    };
    b["deformable_conv2d"] = [](std::mt19937_64& rng) {
      Instance in;
      auto x = randn({5, 5, 2}, rng);
      auto ow = randn({3, 3, 2, 18}, rng, 0.3), ob = randn({18}, rng, 0.5);
      auto w = randn({3, 3, 2, 4}, rng, 0.5), bias = randn({4}, rng);
      auto r = randn({5, 5, 4}, rng, 1.0, false);
      in.leaves = {{"x", x}, {"offset.weight", ow}, {"offset.bias", ob}, {"weight", w}, {"bias", bias}};
      in.loss = [=] { return probe(deformable_conv2d(x, conv2d(x, ow, ob, 1, 1), w, bias, 1, 1), r); };
      return in;
    };
    b["max_pool2d"] = [](std::mt19937_64& rng) {
      Instance in;
      auto x = randn({6, 6, 3}, rng);
      auto r = randn({3, 3, 3}, rng, 1.0, false);
      in.leaves = {{"x", x}};
      in.loss = [=] { return probe(max_pool2d(x, 2, 2), r); };
      return in;
    };
    b["patch_average_pool"] = [](std::mt19937_64& rng) {
      Instance in;
      auto x = randn({8, 8, 3}, rng);
      auto r = randn({4, 4, 3}, rng, 1.0, false);
      in.leaves = {{"x", x}};
      in.loss = [=] { return probe(patch_average_pool(x, 2), r); };
      return in;
    };
    b["global_average_pool"] = [](std::mt19937_64& rng) {
      Instance in;
      auto x = randn({4, 5, 3}, rng);
      auto r = randn({3}, rng, 1.0, false);
      in.leaves = {{"x", x}};
      in.loss = [=] { return probe(global_average_pool(x), r); };
      return in;
    };
    b["instance_norm"] = [](std::mt19937_64& rng) {
      Instance in;
      auto x = randn({4, 4, 3}, rng), g = randn({3}, rng), beta = randn({3}, rng);
      auto r = randn({4, 4, 3}, rng, 1.0, false);
      in.leaves = {{"x", x}, {"gamma", g}, {"beta", beta}};
      in.loss = [=] { return probe(instance_norm(x, g, beta), r); };
      return in;
    };
    b["sine"] = [](std::mt19937_64& rng) {
      Instance in;
      auto x = randn({4, 4, 2}, rng), a = randn({1}, rng), w = randn({1}, rng);
      auto r = randn({4, 4, 2}, rng, 1.0, false);
      in.leaves = {{"x", x}, {"amplitude", a}, {"frequency", w}};
      in.loss = [=] { return probe(sine(x, a, w), r); };
      return in;
    };
    b["softmax"] = [](std::mt19937_64& rng) {
      Instance in;
      auto x = randn({3, 5}, rng);
      auto r = randn({3, 5}, rng, 1.0, false);
      in.leaves = {{"x", x}};
      in.loss = [=] { return probe(softmax(x, -1), r); };
      return in;
    };
    b["layer_norm"] = [](std::mt19937_64& rng) {
      Instance in;
      auto x = randn({3, 6}, rng), g = randn({6}, rng), beta = randn({6}, rng);
      auto r = randn({3, 6}, rng, 1.0, false);
      in.leaves = {{"x", x}, {"gamma", g}, {"beta", beta}};
      in.loss = [=] { return probe(layer_norm(x, g, beta), r); };
      return in;
    };
    b["cross_entropy"] = [](std::mt19937_64& rng) {
      Instance in;
      auto x = randn({5}, rng, 2.0);
      const Index label = static_cast<Index>(rng() % 5);
      in.leaves = {{"logits", x}};
      in.loss = [=] { return cross_entropy(x, label); };
      return in;
    };
    b["attention_path"] = [](std::mt19937_64& rng) {
      Instance in;
      auto ps = std::make_shared<std::pair<ParameterSet<double>, std::pair<PositionEncoder<double>, CrossAttnParams<double>>>>();
      ParamFactory<double> f(ps->first, rng());
      ps->second.first = PositionEncoder<double>::make(f.scope("position"), 8);
      ps->second.second = CrossAttnParams<double>::make(f.scope("attention"), 8, 8, 2);
      jitter(ps->first, rng, 0.1);
      std::vector<Index> fpos{0, 5, 6}, cpos{1, 2, 3, 4, 7, 8};
      auto focal = randn({3, 8}, rng), context = randn({6, 8}, rng);
      auto r = randn({8}, rng, 1.0, false);
      in.leaves = {{"focal", focal}, {"context", context}};
      add_params(in.leaves, ps->first);
      in.keep = ps;
      const auto* enc = &ps->second.first;
      const auto* att = &ps->second.second;
      in.loss = [=] {
        auto [fpe, cpe] = conditional_position_encoding(focal, fpos, context, cpos, 3, *enc);
        return probe(cross_attention(add(focal, fpe), add(context, cpe), *att).embedding, r);
      };
      return in;
    };
    b["nefirf_scores"] = [](std::mt19937_64& rng) {
      Instance in;
      auto ps = std::make_shared<std::pair<ParameterSet<double>, NefirfParams<double>>>();
      ParamFactory<double> f(ps->first, rng());
      ps->second = NefirfParams<double>::make(f, 3, 4);
      auto x = randn({10, 10, 3}, rng);
      auto r = randn({5, 5}, rng, 1.0, false);
      in.leaves = {{"f", x}};
      add_params(in.leaves, ps->first);
      in.keep = ps;
      const auto* nf = &ps->second;
      in.loss = [=] { return probe(nefirf_scores(x, *nf, 2, NefirfOptions{true, ThresholdGradient::exact}), r); };
      return in;
    };
    b["gaze_shift"] = [](std::mt19937_64& rng) {
      Instance in;
      auto ps = std::make_shared<std::pair<ParameterSet<double>, GazeShiftParams<double>>>();
      ParamFactory<double> f(ps->first, rng());
      ps->second = GazeShiftParams<double>::make(f, 2, 2, 4, 2, 4);
      jitter(ps->first, rng, 0.05);
      auto x = randn({8, 8, 2}, rng);
      auto r1 = randn({4, 4, 4}, rng, 1.0, false), r2 = randn({4}, rng, 1.0, false);
      in.leaves = {{"f", x}};
      add_params(in.leaves, ps->first);
      in.keep = ps;
      const auto* g = &ps->second;
      in.loss = [=] {
        GazeShiftOptions o;
        o.gradient = ThresholdGradient::exact;
        StageOutput<double> out = gaze_shift_forward(x, *g, 2, o);
        return add(probe(out.focal_next, r1), probe(out.impression, r2));
      };
      return in;
    };
    b["residual_stage"] = [](std::mt19937_64& rng) {
      Instance in;
      auto ps = std::make_shared<std::pair<ParameterSet<double>, std::vector<ResidualBlock<double>>>>();
      ParamFactory<double> f(ps->first, rng());
      ps->second.push_back(ResidualBlock<double>::make(f.scope("block1"), 3));
      jitter(ps->first, rng, 0.05);
      auto x = randn({6, 6, 3}, rng);
      auto r = randn({6, 6, 3}, rng, 1.0, false);
      in.leaves = {{"f", x}};
      add_params(in.leaves, ps->first);
      in.keep = ps;
      const auto* blocks = &ps->second;
      in.loss = [=] { return probe(residual_stage_forward(x, *blocks), r); };
      return in;
    };
    for (FusionMode mode : {FusionMode::mlp_add, FusionMode::cross_attention}) {
      b["fusion_" + to_string(mode)] = [mode](std::mt19937_64& rng) {
        Instance in;
        auto ps = std::make_shared<std::pair<ParameterSet<double>, FusionParams<double>>>();
        ParamFactory<double> f(ps->first, rng());
        ps->second = FusionParams<double>::make(f, mode, 5, 4, 2, 6, 2);
        jitter(ps->first, rng, 0.05);
        auto focal = randn({5}, rng), e1 = randn({4}, rng), e2 = randn({4}, rng);
        auto r = randn({6}, rng, 1.0, false);
        in.leaves = {{"focal", focal}, {"impression1", e1}, {"impression2", e2}};
        add_params(in.leaves, ps->first);
        in.keep = ps;
        const auto* fp = &ps->second;
        in.loss = [=] { return probe(fuse_embeddings(focal, {e1, e2}, *fp, mode), r); };
        return in;
      };
    }
    for (FusionMode mode : {FusionMode::mlp_add, FusionMode::cross_attention}) {
      b["expnet_" + to_string(mode)] = [mode](std::mt19937_64& rng) {
        Instance in;
        const ModelConfig config = tiny_model(mode);
        auto model = std::make_shared<ExpNetParams<double>>(ExpNetParams<double>::make(config, rng()));
        jitter(model->params, rng, 0.02);
        auto image = randn({16, 16, 3}, rng, 0.3, false);
        const Index label = static_cast<Index>(rng() % 3);
        add_params(in.leaves, model->params);
        in.keep = model;
        in.samples = 400;
        const auto* m = model.get();
        in.loss = [=] {
          return training_loss(expnet_forward(image, *m, config, ThresholdGradient::exact), label);
        };
        return in;
      };
    }
    return b;
  }();
  return table;
}

}  // namespace

std::vector<std::string> gradient_suite_ops() {
  return {"conv2d",       "deformable_conv2d", "max_pool2d",     "patch_average_pool", "global_average_pool",
          "instance_norm", "sine",             "softmax",        "layer_norm",         "cross_entropy",
          "attention_path", "nefirf_scores",   "gaze_shift",     "residual_stage",     "fusion_mlp_add",
          "fusion_cross_attention", "expnet_mlp_add", "expnet_cross_attention"};
}

OpGradCheck check_op_gradients(const std::string& op, int instances, std::uint64_t seed) {
  const auto& table = builders();
  auto it = table.find(op);
  if (it == table.end()) throw std::invalid_argument("no gradient check registered for '" + op + "'");
  OpGradCheck result{op, 0, 0, 0, 0.0, ""};
  for (int i = 0; i < instances; ++i) {
    std::mt19937_64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(i) * 7919ULL + fnv1a64(op));
    Instance inst = it->second(rng);
    const GradCheckReport rep = check_leaf_gradients(inst.loss, inst.leaves, 1e-6, inst.samples, rng(), kGradientFloor);
    ++result.instances;
    result.coordinates += rep.coordinates;
    result.kinks += rep.kinks;
    if (rep.max_rel_error > result.max_rel_error || result.worst.empty()) {
      result.max_rel_error = std::max(result.max_rel_error, rep.max_rel_error);
      char buf[128];
      std::snprintf(buf, sizeof buf, " analytic=%.6e numeric=%.6e", rep.analytic_at_worst, rep.numeric_at_worst);
      result.worst = rep.worst + buf;
    }
  }
  return result;
}

std::vector<OpGradCheck> run_gradient_suite(int instances, std::uint64_t seed) {
  std::vector<OpGradCheck> out;
  for (const auto& op : gradient_suite_ops()) out.push_back(check_op_gradients(op, instances, seed));
  return out;
}

}  // namespace expnet
