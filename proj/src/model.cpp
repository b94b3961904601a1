#include "expnet/model.hpp"

#include "expnet/ops.hpp"
#include "expnet/tensor_io.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace expnet {

template <typename Scalar>
ResidualBlock<Scalar> ResidualBlock<Scalar>::make(ParamFactory<Scalar> f, Index channels) {
  return {Norm<Scalar>::make(f.scope("norm1"), channels), Conv2d<Scalar>::make(f.scope("conv1"), 3, channels, channels, 1, 1),
          Norm<Scalar>::make(f.scope("norm2"), channels), Conv2d<Scalar>::make(f.scope("conv2"), 3, channels, channels, 1, 1)};
}

template <typename Scalar>
Tensor<Scalar> ResidualBlock<Scalar>::operator()(const Tensor<Scalar>& x) const {
  if (x.rank() != 3 || x.dim(2) != conv1.weight.dim(2))
    throw std::invalid_argument("residual block: expected [H,W," + std::to_string(conv1.weight.dim(2)) + "], got " +
                                shape_string(x.shape()));
  Tensor<Scalar> h = conv1(relu(instance_norm(x, norm1.gamma, norm1.beta)));
  h = conv2(relu(instance_norm(h, norm2.gamma, norm2.beta)));
  return add(x, h);
}

template <typename Scalar>
Tensor<Scalar> residual_stage_forward(const Tensor<Scalar>& f, const std::vector<ResidualBlock<Scalar>>& blocks) {
  Tensor<Scalar> h = f;
  for (const auto& b : blocks) h = b(h);
  return h;
}

template <typename Scalar>
FusionParams<Scalar> FusionParams<Scalar>::make(ParamFactory<Scalar> f, FusionMode mode, Index focal_width,
                                                Index impression_width, Index impressions, Index fusion_width,
                                                Index heads) {
  FusionParams p;
  for (Index i = 0; i <= impressions; ++i) {
    const Index in = i == 0 ? focal_width : impression_width;
    const std::string name = i == 0 ? "focal" : "impression" + std::to_string(i);
    if (mode == FusionMode::mlp_add)
      p.adapters.push_back(Mlp<Scalar>::make(f.scope(name), in, fusion_width, fusion_width));
    else
      p.projections.push_back(Linear<Scalar>::make(f.scope(name), in, fusion_width));
  }
  if (mode == FusionMode::cross_attention)
    p.attention = CrossAttnParams<Scalar>::make(f.scope("attention"), fusion_width, fusion_width, heads);
  return p;
}

template <typename Scalar>
Tensor<Scalar> fuse_embeddings(const Tensor<Scalar>& focal, const std::vector<Tensor<Scalar>>& impressions,
                               const FusionParams<Scalar>& params, FusionMode mode) {
  if (impressions.empty()) throw std::invalid_argument("fuse_embeddings: no impressions to fuse");
  const std::size_t sources = impressions.size() + 1;
  if (mode == FusionMode::mlp_add) {
    if (params.adapters.size() != sources)
      throw std::invalid_argument("fuse_embeddings: " + std::to_string(sources) + " sources but " +
                                  std::to_string(params.adapters.size()) + " adapters");
    std::vector<Tensor<Scalar>> parts{params.adapters[0].vector(focal)};
    for (std::size_t i = 0; i < impressions.size(); ++i) parts.push_back(params.adapters[i + 1].vector(impressions[i]));
    return add_n(parts);
  }
  if (params.projections.size() != sources)
    throw std::invalid_argument("fuse_embeddings: " + std::to_string(sources) + " sources but " +
                                std::to_string(params.projections.size()) + " projections");
  const Tensor<Scalar> query = params.projections[0].vector(focal);
  const Index width = query.size();
  const Index n = static_cast<Index>(impressions.size());
  std::vector<Tensor<Scalar>> rows;
  for (Index i = 0; i < n; ++i) {
    const Tensor<Scalar> e = params.projections[static_cast<std::size_t>(i) + 1].vector(impressions[static_cast<std::size_t>(i)]);
    rows.push_back(scatter_rows(reshape(e, {1, width}), {i}, n));
  }
  const Tensor<Scalar> attended = cross_attention(reshape(query, {1, width}), add_n(rows), params.attention).embedding;
  return add(query, attended);
}

template <typename Scalar>
ExpNetParams<Scalar> ExpNetParams<Scalar>::make(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ExpNetParams m;
  ParamFactory<Scalar> f(m.params, seed);
  m.stem = Conv2d<Scalar>::make(f.scope("stem"), 3, 3, config.widths[0], 1, 1);
  const GazeShiftOptions options{config.toggles.context_impression, config.toggles.conditional_sine,
                                 config.toggles.band_pass, ThresholdGradient::straight_through,
                                 config.token_embedding};
  for (int s = 0; s < config.stages; ++s) {
    auto fs = f.scope("stage" + std::to_string(s + 1));
    std::vector<ResidualBlock<Scalar>> blocks;
    for (Index b = 0; b < config.blocks[s]; ++b)
      blocks.push_back(ResidualBlock<Scalar>::make(fs.scope("block" + std::to_string(b + 1)), config.widths[s]));
    m.stages.push_back(std::move(blocks));
    if (s + 1 == config.stages) break;
    if (config.toggles.focal) {
      m.gaze.push_back(GazeShiftParams<Scalar>::make(f.scope("gaze" + std::to_string(s + 1)), config.widths[s],
                                                      config.patch_size(s), config.attention_hidden,
                                                      config.attention_heads, config.field_width, options));
    } else {
      m.transitions.push_back(Conv2d<Scalar>::make(f.scope("transition" + std::to_string(s + 1)), 3, config.widths[s],
                                                   2 * config.widths[s], 1, 1));
    }
  }
  const Index last = config.widths.back();
  Index head_in = last;
  if (config.toggles.focal) {
    m.fusion = FusionParams<Scalar>::make(f.scope("fusion"), config.fusion, last, config.attention_hidden,
                                          config.stages - 1, config.fusion_width, config.attention_heads);
    head_in = config.fusion_width;
  }
  m.head = Linear<Scalar>::make(f.scope("head"), head_in, config.classes);
  return m;
}

template <typename Scalar>
ExpNetOutput<Scalar> expnet_forward(const Tensor<Scalar>& image, const ExpNetParams<Scalar>& params,
                                    const ModelConfig& config, ThresholdGradient gradient) {
  if (image.rank() != 3 || image.dim(0) != config.image_size || image.dim(1) != config.image_size || image.dim(2) != 3)
    throw std::invalid_argument("expnet: expected a " + std::to_string(config.image_size) + "x" +
                                std::to_string(config.image_size) + "x3 image, got " + shape_string(image.shape()));
  const GazeShiftOptions options{config.toggles.context_impression, config.toggles.conditional_sine,
                                 config.toggles.band_pass, gradient, config.token_embedding};
  ExpNetOutput<Scalar> out;
  Tensor<Scalar> h = params.stem(image);
  for (int s = 0; s < config.stages; ++s) {
    h = residual_stage_forward(h, params.stages[static_cast<std::size_t>(s)]);
    if (s + 1 == config.stages) break;
    if (config.toggles.focal) {
      StageOutput<Scalar> g =
          gaze_shift_forward(h, params.gaze[static_cast<std::size_t>(s)], config.patch_size(s), options, s + 1);
      h = g.focal_next;
      out.impressions.push_back(g.impression);
      out.saliency_maps.push_back(std::move(g.saliency));
    } else {
      h = params.transitions[static_cast<std::size_t>(s)](max_pool2d(h, 2, 2));
    }
  }
  out.focal_embedding = global_average_pool(h);
  const Tensor<Scalar> fused = config.toggles.focal
                                   ? fuse_embeddings(out.focal_embedding, out.impressions, params.fusion, config.fusion)
                                   : out.focal_embedding;
  out.logits = params.head.vector(fused);
  return out;
}

template <typename Scalar>
Tensor<Scalar> training_loss(const ExpNetOutput<Scalar>& output, Index label) {
  return cross_entropy(output.logits, label);
}

template <typename Scalar>
Index predict_class(const Tensor<Scalar>& logits) {
  Index best = 0;
  for (Index i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

void save_checkpoint(const std::string& dir, const ModelConfig& config, const ExpNetParams<float>& params, int epoch,
                     std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  KeyValues kv = to_key_values(config);
  kv.emplace_back("epoch", std::to_string(epoch));
  kv.emplace_back("seed", std::to_string(seed));
  kv.emplace_back("parameters", std::to_string(params.params.size()));
  for (const auto& [name, t] : params.params.entries()) write_tensor(fs::path(dir) / (name + ".expt"), t);
  std::ofstream out(fs::path(dir) / "manifest.txt", std::ios::binary);
  out << format_key_values(kv);
  if (!out) throw std::runtime_error("cannot write checkpoint manifest in " + dir);
}

Checkpoint load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path manifest = fs::path(dir) / "manifest.txt";
  if (!fs::exists(manifest)) throw std::runtime_error("checkpoint " + dir + ": no manifest");
  KeyValues kv = read_key_values(manifest.string());
  KeyValues model_kv;
  int epoch = -1;
  long long seed = -1, count = -1;
  for (const auto& [k, v] : kv) {
    if (k == "epoch") epoch = static_cast<int>(parse_int(k, v));
    else if (k == "seed") seed = parse_int(k, v);
    else if (k == "parameters") count = parse_int(k, v);
    else model_kv.emplace_back(k, v);
  }
  if (epoch < 0 || seed < 0 || count < 0)
    throw std::runtime_error(manifest.string() + ": missing epoch, seed or parameters entry");
  Checkpoint c{model_config_from(model_kv, manifest.string()), {}, epoch, static_cast<std::uint64_t>(seed)};
  c.params = ExpNetParams<float>::make(c.config, c.seed);
  if (static_cast<long long>(c.params.params.size()) != count)
    throw std::runtime_error(manifest.string() + ": lists " + std::to_string(count) + " parameters, config builds " +
                             std::to_string(c.params.params.size()));
  for (const auto& [name, t] : c.params.params.entries()) {
    const fs::path file = fs::path(dir) / (name + ".expt");
    if (!fs::exists(file)) throw std::runtime_error("checkpoint " + dir + ": missing parameter file " + file.string());
    Tensor<float> loaded = read_tensor<float>(file);
    if (loaded.shape() != t.shape())
      throw std::runtime_error(file.string() + ": shape " + shape_string(loaded.shape()) + " does not match " +
                               shape_string(t.shape()));
    Tensor<float> target = t;
    target.mutable_values() = loaded.values();
  }
  return c;
}

#define EXPNET_INSTANTIATE(S)                                                                                   \
  template struct ResidualBlock<S>;                                                                            \
  template Tensor<S> residual_stage_forward(const Tensor<S>&, const std::vector<ResidualBlock<S>>&);           \
  template struct FusionParams<S>;                                                                             \
  template Tensor<S> fuse_embeddings(const Tensor<S>&, const std::vector<Tensor<S>>&, const FusionParams<S>&,  \
                                     FusionMode);                                                              \
  template struct ExpNetParams<S>;                                                                             \
  template ExpNetOutput<S> expnet_forward(const Tensor<S>&, const ExpNetParams<S>&, const ModelConfig&,        \
                                          ThresholdGradient);                                                  \
  template Tensor<S> training_loss(const ExpNetOutput<S>&, Index);                                             \
  template Index predict_class(const Tensor<S>&);

EXPNET_INSTANTIATE(float)
EXPNET_INSTANTIATE(double)

#undef EXPNET_INSTANTIATE

}  // namespace expnet
