#include "expnet/cli.hpp"

#include "expnet/dataset.hpp"
#include "expnet/gradient_suite.hpp"
#include "expnet/model.hpp"
#include "expnet/saliency_eval.hpp"
#include "expnet/tensor_io.hpp"
#include "expnet/trainer.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>

namespace expnet {
namespace fs = std::filesystem;

namespace {

/// Raised for bad inputs discovered after parsing (missing files and the like).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Flags {
  std::string spec, model, train, data, out, checkpoint, fusion, toggles;
  int stage = 0;
  std::optional<long long> seed;
};

void require_file(const std::string& flag, const std::string& path) {
  if (path.empty()) throw ValidationError(flag + " is required");
  if (!fs::is_regular_file(path)) throw ValidationError(flag + " " + path + ": no such file");
}

void require_dir(const std::string& flag, const std::string& path) {
  if (path.empty()) throw ValidationError(flag + " is required");
  if (!fs::is_directory(path)) throw ValidationError(flag + " " + path + ": no such directory");
}

void require_out(const std::string& path) {
  if (path.empty()) throw ValidationError("--out is required");
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec || !fs::is_directory(path)) throw ValidationError("--out " + path + ": cannot create directory");
}

std::uint64_t seed_value(long long s) {
  if (s < 0) throw ValidationError("--seed must be non-negative");
  return static_cast<std::uint64_t>(s);
}

ModelConfig model_with_overrides(const Flags& f) {
  ModelConfig m = load_model_config(f.model);
  if (!f.fusion.empty()) m.fusion = parse_fusion(f.fusion);
  return m;
}

TrainConfig train_with_overrides(const Flags& f) {
  TrainConfig t = load_train_config(f.train);
  if (f.seed) t.seed = seed_value(*f.seed);
  return t;
}

int gen_data(const Flags& f, std::ostream& out) {
  require_file("--spec", f.spec);
  require_out(f.out);
  SyntheticSpec spec = load_synthetic_spec(f.spec);
  if (f.seed) spec.seed = seed_value(*f.seed);
  const Dataset d = generate_synthetic_dataset(spec, f.out);
  out << "wrote " << d.size() << " " << to_string(d.regime) << " images to " << f.out << "\n";
  return 0;
}

int train_cmd(const Flags& f, std::ostream& out, std::ostream& err) {
  require_file("--model", f.model);
  require_file("--train", f.train);
  require_dir("--data", f.data);
  require_out(f.out);
  const ModelConfig model = model_with_overrides(f);
  const TrainConfig cfg = train_with_overrides(f);
  const Dataset data = load_dataset(f.data);
  auto [train_set, test_set] = split_dataset(data, cfg.seed);
  TrainOptions options;
  options.out_dir = f.out;
  options.threads = threads_from_env();
  options.on_epoch = [&](const EpochMetrics& m) { err << m.log_line() << "\n"; };
  const TrainResult r = train(model, cfg, train_set, &test_set, options);
  out << "final " << r.history.back().log_line() << "\n"
      << "checkpoint " << (fs::path(f.out) / "checkpoint").string() << "\n";
  return 0;
}

int eval_cmd(const Flags& f, std::ostream& out) {
  require_dir("--checkpoint", f.checkpoint);
  require_dir("--data", f.data);
  const Checkpoint c = load_checkpoint(f.checkpoint);
  const Dataset data = load_dataset(f.data);
  const std::uint64_t split_seed = f.seed ? seed_value(*f.seed) : c.seed;
  auto [train_set, test_set] = split_dataset(data, split_seed);
  const EvalResult test = evaluate(c, test_set);
  const EvalResult all = evaluate(c, data);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", test.accuracy);
  out << "test_accuracy = " << buf << "\n";
  std::snprintf(buf, sizeof buf, "%.4f", all.accuracy);
  out << "all_accuracy = " << buf << "\n";
  for (std::size_t k = 0; k < test.per_class.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.4f", test.per_class[k]);
    out << "class_" << k << "_accuracy = " << buf << "\n";
  }
  return 0;
}

int gradcheck_cmd(const Flags& f, std::ostream& out) {
  const std::uint64_t seed = f.seed ? seed_value(*f.seed) : 0;
  bool ok = true;
  for (const std::string& op : gradient_suite_ops()) {
    const OpGradCheck r = check_op_gradients(op, 10, seed);
    const bool pass = r.max_rel_error <= 1e-4;
    ok = ok && pass;
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-24s instances=%d coords=%ld kinks=%ld max_rel_error=%.3e %s", r.op.c_str(),
                  r.instances, static_cast<long>(r.coordinates), static_cast<long>(r.kinks), r.max_rel_error,
                  pass ? "ok" : "FAIL");
    out << buf;
    if (!pass) out << " worst " << r.worst;
    out << "\n";
  }
  return ok ? 0 : 1;
}

int saliency_cmd(const Flags& f, std::ostream& out) {
  require_dir("--checkpoint", f.checkpoint);
  require_dir("--data", f.data);
  require_out(f.out);
  const Checkpoint c = load_checkpoint(f.checkpoint);
  const Dataset data = load_dataset(f.data);
  if (!c.config.toggles.focal) throw ValidationError("checkpoint has no Gaze-Shift stages (focal=off)");
  const std::uint64_t seed = f.seed ? seed_value(*f.seed) : c.seed;
  const fs::path root(f.out);
  MetricReport report;
  if (data.regime == Regime::structure) {
    const int outer = std::min(2, c.config.stages - 1), inner = std::min(3, c.config.stages - 1);
    report = segmentation_report(c.params, c.config, data, outer, inner);
  } else {
    const int stage = f.stage > 0 ? f.stage : 1;
    std::vector<EvalRecord> records;
    report = localization_report(c.params, c.config, data, stage, seed, &records);
    fs::create_directories(root / "masks");
    std::ofstream boxes(root / "boxes.txt", std::ios::binary);
    boxes << "# image label predicted box(x0 y0 x1 y1) truth(x0 y0 x1 y1) fallback\n";
    for (std::size_t i = 0; i < records.size(); ++i) {
      const EvalRecord& r = records[i];
      const Box& t = r.truth_boxes.front();
      boxes << data.samples[i].path << " " << r.label << " " << r.predicted << " " << r.box.x0 << " " << r.box.y0 << " "
            << r.box.x1 << " " << r.box.y1 << " " << t.x0 << " " << t.y0 << " " << t.x1 << " " << t.y1 << " "
            << (r.fallback ? 1 : 0) << "\n";
      Array<float> bits(static_cast<Index>(r.mask.bits.size()));
      for (std::size_t j = 0; j < r.mask.bits.size(); ++j) bits[static_cast<Index>(j)] = r.mask.bits[j] ? 1.0f : 0.0f;
      char name[32];
      std::snprintf(name, sizeof name, "%06zu.expt", i);
      write_tensor(root / "masks" / name, Tensor<float>({r.mask.height, r.mask.width, 1}, std::move(bits)));
    }
  }
  report.header.insert(report.header.begin(), {"checkpoint", f.checkpoint});
  report.write((root / "report.txt").string());
  for (const auto& [k, v] : report.metrics) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    out << k << " = " << buf << "\n";
  }
  return 0;
}

int ablate_cmd(const Flags& f, std::ostream& out, std::ostream& err) {
  require_file("--model", f.model);
  require_file("--train", f.train);
  require_dir("--data", f.data);
  require_out(f.out);
  const ModelConfig model = model_with_overrides(f);
  const TrainConfig cfg = train_with_overrides(f);
  std::vector<AblationToggles> grid;
  if (f.toggles.empty()) {
    grid = default_ablation_grid();
  } else {
    std::stringstream ss(f.toggles);
    for (std::string item; std::getline(ss, item, ';');)
      if (!item.empty()) grid.push_back(AblationToggles::parse(item));
  }
  const Dataset data = load_dataset(f.data);
  auto [train_set, test_set] = split_dataset(data, cfg.seed);
  err << "running " << grid.size() << " variants\n";
  const auto rows = run_ablation(model, cfg, train_set, test_set, grid, f.out, threads_from_env());
  const std::string table = format_ablation_table(rows);
  std::ofstream(fs::path(f.out) / "ablation.txt", std::ios::binary) << table;
  out << table;
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ExpNet desk-scale toolkit", "expnet"};
  app.require_subcommand(1, 1);
  Flags f;
  long long seed = 0;

  auto seed_opt = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Seed override");
  };
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--spec", f.spec, "Dataset spec file (key = value)")->required();
  gen->add_option("--out", f.out, "Output directory")->required();
  seed_opt(gen);

  auto* tr = app.add_subcommand("train", "Train a model; writes metrics.log and checkpoint/");
  tr->add_option("--model", f.model, "Model config file")->required();
  tr->add_option("--train", f.train, "Train config file")->required();
  tr->add_option("--data", f.data, "Dataset directory")->required();
  tr->add_option("--out", f.out, "Run directory")->required();
  tr->add_option("--fusion", f.fusion, "mlp_add or cross_attention");
  seed_opt(tr);

  auto* ev = app.add_subcommand("eval", "Accuracy of a checkpoint on the held-out split");
  ev->add_option("--checkpoint", f.checkpoint, "Checkpoint directory")->required();
  ev->add_option("--data", f.data, "Dataset directory")->required();
  seed_opt(ev);

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  seed_opt(gc);

  auto* sal = app.add_subcommand("saliency", "Export saliency masks, boxes and the metric report");
  sal->add_option("--checkpoint", f.checkpoint, "Checkpoint directory")->required();
  sal->add_option("--data", f.data, "Dataset directory")->required();
  sal->add_option("--out", f.out, "Output directory")->required();
  sal->add_option("--stage", f.stage, "Stage whose map drives localization (default 1)");
  seed_opt(sal);

  auto* ab = app.add_subcommand("ablate", "Train and evaluate the ablation grid");
  ab->add_option("--model", f.model, "Model config file")->required();
  ab->add_option("--train", f.train, "Train config file")->required();
  ab->add_option("--data", f.data, "Dataset directory")->required();
  ab->add_option("--out", f.out, "Output directory")->required();
  ab->add_option("--fusion", f.fusion, "mlp_add or cross_attention");
  ab->add_option("--toggles", f.toggles, "Variants, ';'-separated, e.g. focal=off,ci=on,sine=on,band=off");
  seed_opt(ab);

  for (CLI::App* sub : {gen, tr, ev, gc, sal, ab}) sub->allow_extras(false);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "expnet: " << e.what() << "\n" << app.help();
    return 2;
  }

  for (CLI::App* sub : {gen, tr, ev, gc, sal, ab})
    if (sub->parsed() && sub->count("--seed") > 0) f.seed = seed;

  try {
    if (gen->parsed()) return gen_data(f, out);
    if (tr->parsed()) return train_cmd(f, out, err);
    if (ev->parsed()) return eval_cmd(f, out);
    if (gc->parsed()) return gradcheck_cmd(f, out);
    if (sal->parsed()) return saliency_cmd(f, out);
    if (ab->parsed()) return ablate_cmd(f, out, err);
  } catch (const std::exception& e) {
    err << "expnet: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace expnet
