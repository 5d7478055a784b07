// Command-line front end: synth, train, eval, predict, ablate.
// Machine-readable results go to stdout; logs go to stderr (level from TRIQA_LOG).

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "triqa/ablation.hpp"
#include "triqa/config.hpp"
#include "triqa/synth.hpp"
#include "triqa/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace triqa;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitInvalidInput = 2;

class CliError : public std::runtime_error {
 public:
  CliError(int code, const std::string& message) : std::runtime_error(message), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

void setup_logging() {
  auto logger = spdlog::stderr_color_st("triqa");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%l] %v");
  const char* level = std::getenv("TRIQA_LOG");
  spdlog::set_level(level != nullptr ? spdlog::level::from_str(level) : spdlog::level::info);
}

void emit(const json& j) { std::cout << j.dump() << std::endl; }

/// Relative paths inside a config file resolve against the file's directory.
fs::path resolve_from(const fs::path& base, const std::string& path) {
  const fs::path p(path);
  return p.is_absolute() ? p : base / p;
}

struct LoadedExperiment {
  ExperimentConfig config;
  fs::path manifest;
  fs::path output_dir;
};

LoadedExperiment load_experiment(const fs::path& config_path, const std::string& out_override) {
  LoadedExperiment e{load_experiment_config(config_path), {}, {}};
  const fs::path base = config_path.parent_path();
  e.manifest = resolve_from(base, e.config.data.manifest);
  e.output_dir = out_override.empty() ? resolve_from(base, e.config.output_dir) : fs::path(out_override);
  if (auto* frp = std::get_if<fs::path>(&e.config.model.frp_weights)) *frp = resolve_from(base, frp->string());
  std::error_code ec;
  fs::create_directories(e.output_dir, ec);
  if (ec || !fs::is_directory(e.output_dir)) {
    throw CliError(kExitFailure, "output_dir '" + e.output_dir.string() + "' is not writable");
  }
  return e;
}

std::pair<Dataset, Dataset> load_split(const LoadedExperiment& e) {
  const Dataset all = load_manifest(e.manifest);
  all.require_non_empty("training");
  auto parts = split(all, e.config.data.split);
  spdlog::info("split {} records into {} train / {} validation", all.size(), parts.first.size(), parts.second.size());
  return parts;
}

void log_epoch(const EpochRecord& r) {
  if (r.val_srcc_abs) {
    spdlog::info("epoch {} loss {:.6f} val |srcc| {:.4f} |krcc| {:.4f} ({:.1f}s)", r.epoch, r.train_loss,
                 *r.val_srcc_abs, *r.val_krcc_abs, r.seconds);
  } else {
    spdlog::info("epoch {} loss {:.6f}{} ({:.1f}s)", r.epoch, r.train_loss,
                 r.val_degenerate ? " val degenerate (constant predictions)" : "", r.seconds);
  }
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  int refs = 4;
  std::uint64_t seed = 0;
  std::size_t size = 96;
  std::vector<std::string> kinds;
};

int cmd_synth(const SynthArgs& a) {
  BenchmarkOptions o;
  o.out_dir = a.out;
  o.n_references = a.refs;
  o.seed = a.seed;
  o.image_size = a.size;
  if (!a.kinds.empty()) {
    o.kinds.clear();
    for (const auto& k : a.kinds) o.kinds.push_back(parse_distortion_kind(k));
  }
  const Dataset ds = make_synthetic_benchmark(o);
  spdlog::info("wrote {} records to {}", ds.size(), (o.out_dir / "manifest.csv").string());
  emit({{"manifest", (o.out_dir / "manifest.csv").string()}, {"records", ds.size()}});
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string out;
};

int cmd_train(const TrainArgs& a) {
  const auto e = load_experiment(a.config, a.out);
  const auto [train_set, val_set] = load_split(e);
  const auto model = init_model(e.config.model, e.config.train.seed);
  spdlog::info("model head input dim {}, {} parameters tensors", e.config.model.head_input_dim(),
               model.parameters().size());
  TrainHooks hooks;
  hooks.on_epoch = log_epoch;
  auto result = train(model, train_set, val_set, e.config.train, hooks);

  const fs::path checkpoint = e.output_dir / "model.bin";
  save_checkpoint(checkpoint, result.model, e.config.train.image_size);
  result.report.checkpoint_path = checkpoint.string();
  const fs::path report_path = e.output_dir / "train_report.json";
  {
    std::ofstream os(report_path, std::ios::trunc);
    os << to_json(result.report).dump(2) << '\n';
    if (!os) throw CliError(kExitFailure, "cannot write '" + report_path.string() + "'");
  }
  const EvalResult eval = evaluate(result.model, val_set, e.config.train.image_size);
  const fs::path predictions = e.output_dir / "predictions.csv";
  write_predictions_csv(predictions, prediction_rows(val_set, eval.predictions));
  save_experiment_config(e.output_dir / "config.json", e.config);

  emit({{"checkpoint", checkpoint.string()},
        {"report", report_path.string()},
        {"predictions", predictions.string()},
        {"best_epoch", result.report.best_epoch},
        {"srcc_abs", eval.srcc_abs ? json(*eval.srcc_abs) : json(nullptr)},
        {"krcc_abs", eval.krcc_abs ? json(*eval.krcc_abs) : json(nullptr)}});
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string predictions;
};

int cmd_eval(const EvalArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Dataset ds = load_manifest(a.manifest);
  ds.require_non_empty("evaluation");
  const EvalResult r = evaluate(ck.model, ds, ck.image_size);
  const fs::path out = a.predictions.empty() ? fs::path(a.checkpoint).parent_path() / "eval_predictions.csv"
                                             : fs::path(a.predictions);
  write_predictions_csv(out, prediction_rows(ds, r.predictions));
  spdlog::info("wrote per-item predictions to {}", out.string());
  if (r.degenerate) {
    emit({{"srcc_abs", nullptr}, {"krcc_abs", nullptr}, {"n", ds.size()}});
    throw CliError(kExitFailure, "predictions are constant; rank correlation is undefined");
  }
  emit({{"srcc_abs", *r.srcc_abs}, {"krcc_abs", *r.krcc_abs}, {"n", ds.size()}});
  return 0;
}

struct PredictArgs {
  std::string checkpoint;
  std::string ref;
  std::string query;
};

int cmd_predict(const PredictArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Tensor ref = load_image(a.ref);
  const Tensor query = load_image(a.query);
  if (ref.shape != query.shape) {
    throw ShapeError("reference " + ref.shape.str() + " and query " + query.shape.str() + " differ in size");
  }
  const auto h = static_cast<std::size_t>(ck.image_size[0]), w = static_cast<std::size_t>(ck.image_size[1]);
  NoGradGuard no_grad;
  const auto p = ck.model.forward(Var<float>::leaf(resize_bilinear(query, h, w)),
                                  Var<float>::leaf(resize_bilinear(ref, h, w)));
  std::cout << format_real(static_cast<double>(p.value().data[0])) << std::endl;
  return 0;
}

struct AblateArgs {
  std::string config;
  std::string axis;
  std::string out;
  std::vector<std::uint64_t> seeds;
};

int cmd_ablate(const AblateArgs& a) {
  const AblationAxis axis = parse_ablation_axis(a.axis);
  const auto e = load_experiment(a.config, a.out);
  const auto [train_set, val_set] = load_split(e);
  AblationOptions opts;
  if (!a.seeds.empty()) {
    opts.seeds = a.seeds;
  } else {
    const auto s = e.config.train.seed;
    opts.seeds = {s, s + 1, s + 2};
  }
  opts.log = [](const std::string& msg) { spdlog::info("{}", msg); };
  const AblationReport rep = run_ablation(e.config, axis, train_set, val_set, opts);
  const std::string stem = "ablation_" + std::string(to_string(axis));
  {
    std::ofstream os(e.output_dir / (stem + ".json"), std::ios::trunc);
    os << to_json(rep).dump(2) << '\n';
    if (!os) throw CliError(kExitFailure, "cannot write ablation JSON");
  }
  write_ablation_csv(e.output_dir / (stem + ".csv"), rep);
  emit(to_json(rep));
  if (rep.failed()) throw CliError(kExitFailure, "one or more ablation runs failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Three-branch full-reference image quality assessment"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic distortion benchmark");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--refs", synth.refs, "Number of reference images")->check(CLI::PositiveNumber);
  s->add_option("--seed", synth.seed, "Generator seed");
  s->add_option("--size", synth.size, "Image side length in pixels")->check(CLI::PositiveNumber);
  s->add_option("--kinds", synth.kinds, "Distortion kinds (default: all four)")->delimiter(',');

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Split, train and evaluate from an experiment config");
  t->add_option("--config", tr.config, "Experiment config JSON")->required()->check(CLI::ExistingFile);
  t->add_option("--out", tr.out, "Override output_dir");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score a manifest with a checkpoint and report |SRCC| / |KRCC|");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint weights path")->required();
  e->add_option("--manifest", ev.manifest, "Manifest CSV")->required();
  e->add_option("--predictions", ev.predictions, "Per-item CSV output path");

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "Score one reference/query pair");
  p->add_option("--checkpoint", pr.checkpoint, "Checkpoint weights path")->required();
  p->add_option("--ref", pr.ref, "Reference image")->required();
  p->add_option("--query", pr.query, "Query (distorted) image")->required();

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "Train and evaluate branch or backbone variants");
  a->add_option("--config", ab.config, "Base experiment config JSON")->required()->check(CLI::ExistingFile);
  a->add_option("--axis", ab.axis, "branches or backbones")->required()->check(CLI::IsMember({"branches", "backbones"}));
  a->add_option("--out", ab.out, "Override output_dir");
  a->add_option("--seeds", ab.seeds, "Seeds (default: train.seed, +1, +2)")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (t->parsed()) return cmd_train(tr);
    if (e->parsed()) return cmd_eval(ev);
    if (p->parsed()) return cmd_predict(pr);
    if (a->parsed()) return cmd_ablate(ab);
  } catch (const CliError& ex) {
    spdlog::error("{}", ex.what());
    return ex.code();
  } catch (const ConfigError& ex) {
    spdlog::error("{}", ex.what());
    return kExitInvalidInput;
  } catch (const ShapeError& ex) {
    spdlog::error("shape error: {}", ex.what());
    return kExitInvalidInput;
  } catch (const std::exception& ex) {
    spdlog::error("{}", ex.what());
    return kExitFailure;
  }
  return kExitFailure;
}
