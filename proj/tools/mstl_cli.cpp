// Command-line front end: dataset generation, the staged training pipeline,
// evaluation, LEEP and transfer reports.

#include <CLI11.hpp>
#include <fmt/core.h>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "mstl/checkpoint.hpp"
#include "mstl/config.hpp"
#include "mstl/errors.hpp"
#include "mstl/leep.hpp"
#include "mstl/metrics.hpp"
#include "mstl/phantom.hpp"
#include "mstl/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mstl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitCheckpoint = 4;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
};

ConfigFile load_config(const Globals& g) {
  return g.config_path.empty() ? ConfigFile::parse("") : ConfigFile::load(g.config_path);
}

fs::path out_dir(const Globals& g) {
  std::error_code ec;
  fs::create_directories(g.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + g.out_dir + ": " + ec.message());
  return g.out_dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

StageConfig stage_config(const ConfigFile& file, StageKind stage, const Globals& g) {
  StageConfig c = stage_config_from(file, stage);
  if (g.seed) c.seed = *g.seed;
  return c;
}

void log_history(const History& h) {
  for (const EpochRecord& e : h.epochs) {
    if (h.stage == StageKind::kSstlM) {
      fmt::print(stderr, "[{}] epoch {} lr {:.6g} loss {:.6f} (cons {:.6f}, region {:.6f}, skipped {})\n",
                 stage_name(h.stage), e.epoch, e.lr, e.loss, e.ssl.contrastive,
                 e.ssl.region_query + e.ssl.region_negatives, e.ssl.images_skipped);
    } else {
      fmt::print(stderr, "[{}] epoch {} lr {:.6g} loss {:.6f} train-acc {:.4f}\n", stage_name(h.stage), e.epoch,
                 e.lr, e.loss, e.accuracy);
    }
  }
}

// Writes <stage>.ckpt and <stage>_history.json; returns the checkpoint path.
fs::path save_stage(const Globals& g, Model& model, std::vector<StageKind> provenance, const History& history) {
  const fs::path dir = out_dir(g);
  const std::string name(stage_name(history.stage));
  const fs::path ckpt = dir / (name + ".ckpt");
  save_checkpoint(ckpt, make_checkpoint(model, std::move(provenance)));
  write_text(dir / (name + "_history.json"), history.to_json());
  fmt::print("{}\n", ckpt.string());
  return ckpt;
}

int cmd_generate(const Globals& g, const std::string& kind, std::size_t n, std::size_t image_size) {
  const ConfigFile file = load_config(g);
  PhantomSpec spec = phantom_spec_from(file);
  if (!kind.empty()) {
    const PhantomSpec defaults = PhantomSpec::defaults(parse_kind(kind));
    spec.kind = defaults.kind;
    if (!file.get("data", "lesion_probability")) spec.lesion_probability_by_label = defaults.lesion_probability_by_label;
  }
  if (image_size > 0) spec.image_size = image_size;
  if (g.seed) spec.seed = *g.seed;
  if (n == 0) n = file.get("data", "n") ? parse_u64("n", *file.get("data", "n")) : 64;
  const LabeledDataset data = generate_phantom(spec, n);
  save_dataset(out_dir(g), data);
  fmt::print("{} {} images ({} classes) -> {}\n", kind_name(spec.kind), data.size(), data.num_classes, g.out_dir);
  return kExitOk;
}

Model initial_model(const ConfigFile& file, std::size_t classes, const std::string& init, std::uint64_t seed,
                    std::vector<StageKind>& provenance) {
  BackboneConfig cfg = model_config_from(file);
  cfg.num_classes = classes;
  if (init.empty()) return Model(cfg, seed);
  const Checkpoint c = load_checkpoint(init);
  provenance = c.provenance;
  return prepare_finetune(restore_model(c), cfg, seed);
}

int cmd_pretrain(const Globals& g, const std::string& stage_text, const std::string& data_dir,
                 const std::string& init) {
  const StageKind stage = parse_stage(stage_text);
  if (stage != StageKind::kStlN && stage != StageKind::kStlM) {
    throw ConfigError("pretrain runs stl_n or stl_m; use ssl-pretrain or finetune for later stages");
  }
  const ConfigFile file = load_config(g);
  StageConfig cfg = stage_config(file, stage, g);
  const LabeledDataset data = load_dataset(data_dir);
  std::vector<StageKind> provenance;
  Model model = initial_model(file, data.num_classes, init, cfg.seed, provenance);
  append_stage(provenance, stage);
  const History h = run_stage_supervised(model, data, cfg);
  log_history(h);
  save_stage(g, model, provenance, h);
  return kExitOk;
}

int cmd_ssl(const Globals& g, const std::string& data_dir, const std::string& init) {
  const ConfigFile file = load_config(g);
  StageConfig cfg = stage_config(file, StageKind::kSstlM, g);
  const LabeledDataset data = load_dataset(data_dir);
  std::vector<StageKind> provenance;
  Model model;
  if (init.empty()) {
    model = Model(model_config_from(file), cfg.seed);
  } else {
    const Checkpoint c = load_checkpoint(init);
    provenance = c.provenance;
    model = restore_model(c);
  }
  append_stage(provenance, StageKind::kSstlM);
  const History h = run_stage_ssl(model, data, cfg);
  log_history(h);
  save_stage(g, model, provenance, h);
  return kExitOk;
}

int cmd_finetune(const Globals& g, const std::string& data_dir, const std::string& init) {
  const ConfigFile file = load_config(g);
  StageConfig cfg = stage_config(file, StageKind::kFinetune, g);
  const LabeledDataset data = load_dataset(data_dir);
  std::vector<StageKind> provenance;
  Model model = initial_model(file, data.num_classes, init, cfg.seed, provenance);
  append_stage(provenance, StageKind::kFinetune);
  const History h = run_stage_supervised(model, data, cfg);
  log_history(h);
  save_stage(g, model, provenance, h);
  return kExitOk;
}

AugmentPolicy eval_policy(const ConfigFile& file, const Model& model) {
  AugmentPolicy p = stage_config_from(file, StageKind::kFinetune).augment;
  if (p.crop_to != model.config().input_size) {
    p.crop_to = model.config().input_size;
    p.scale_to = std::max(p.scale_to, p.crop_to);
  }
  return p;
}

int cmd_evaluate(const Globals& g, const std::string& ckpt, const std::string& data_dir, const std::string& split,
                 const std::string& output) {
  const ConfigFile file = load_config(g);
  Model model = restore_model(load_checkpoint(ckpt));
  const LabeledDataset data = load_dataset(data_dir);
  const EvalResult r = evaluate(model, data, parse_split(split), eval_policy(file, model));
  const std::string json = to_json(r);
  write_text(out_dir(g) / (output.empty() ? "eval.json" : output), json);
  fmt::print("{}\n", json);
  return kExitOk;
}

int cmd_leep(const Globals& g, const std::string& csv, const std::string& ckpt, const std::string& data_dir,
             const std::string& split, const std::string& output) {
  LeepInput input;
  if (!csv.empty()) {
    input = read_leep_csv(csv);
  } else {
    if (ckpt.empty() || data_dir.empty()) throw ConfigError("leep needs --csv or both --checkpoint and --data");
    const ConfigFile file = load_config(g);
    Model model = restore_model(load_checkpoint(ckpt));
    const LabeledDataset data = load_dataset(data_dir);
    input = leep_input(model, data, parse_split(split), eval_policy(file, model));
  }
  const double score = leep_score(input);
  nlohmann::ordered_json j;
  j["leep"] = score;
  j["n"] = input.target_labels.size();
  j["source_classes"] = input.dummy_dist.dim(1);
  write_text(out_dir(g) / (output.empty() ? "leep.json" : output), j.dump(2));
  fmt::print("{:.12g}\n", score);
  return kExitOk;
}

int cmd_report(const Globals& g, const std::string& scratch, const std::string& pretrained,
               const std::string& output) {
  const TransferReport r =
      transfer_gain(eval_result_from_json(read_text(scratch)), eval_result_from_json(read_text(pretrained)));
  const std::string json = to_json(r);
  write_text(out_dir(g) / (output.empty() ? "report.json" : output), json);
  fmt::print("{}\n", json);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-stage attentive transfer learning on lung phantoms"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config_path, "Config file (key = value with [section] headers)");
  auto* seed_opt = app.add_option("--seed", seed, "Seed override for data generation and training");
  app.add_option("--out-dir", g.out_dir, "Output directory")->capture_default_str();

  std::string kind, data_dir, init, stage, ckpt, split = "test", csv, output, scratch, pretrained;
  std::size_t n = 0, image_size = 0;

  auto* gen = app.add_subcommand("generate-data", "Write a phantom dataset to --out-dir");
  gen->add_option("--kind", kind, "target | medical | natural (default from [data])");
  gen->add_option("--n", n, "Number of images (default [data] n or 64)");
  gen->add_option("--image-size", image_size, "Image side length (default from [data])");

  auto* pre = app.add_subcommand("pretrain", "Supervised source pretraining (stl_n or stl_m)");
  pre->add_option("--stage", stage, "stl_n | stl_m")->required();
  pre->add_option("--data", data_dir, "Dataset directory")->required();
  pre->add_option("--init", init, "Checkpoint whose backbone initializes the model");

  auto* ssl = app.add_subcommand("ssl-pretrain", "Self-supervised pretraining (sstl_m)");
  ssl->add_option("--data", data_dir, "Dataset directory")->required();
  ssl->add_option("--init", init, "Checkpoint to continue from");

  auto* ft = app.add_subcommand("finetune", "Supervised training on the target dataset");
  ft->add_option("--data", data_dir, "Dataset directory")->required();
  ft->add_option("--init", init, "Pretrained checkpoint (omit to train from scratch)");

  auto* ev = app.add_subcommand("evaluate", "Accuracy, F1 and AUC on a split");
  ev->add_option("--checkpoint", ckpt, "Model checkpoint")->required();
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_option("--split", split, "train | val | test")->capture_default_str();
  ev->add_option("--output", output, "Report file name inside --out-dir (default eval.json)");

  auto* le = app.add_subcommand("leep", "LEEP transferability score");
  le->add_option("--csv", csv, "CSV with columns z0,...,zK,label");
  le->add_option("--checkpoint", ckpt, "Source model checkpoint");
  le->add_option("--data", data_dir, "Target dataset directory");
  le->add_option("--split", split, "Target split")->capture_default_str();
  le->add_option("--output", output, "Report file name inside --out-dir (default leep.json)");

  auto* rep = app.add_subcommand("report", "Transfer gain between two evaluation reports");
  rep->add_option("--scratch", scratch, "Evaluation JSON of the model trained from scratch")->required();
  rep->add_option("--pretrained", pretrained, "Evaluation JSON of the pretrained model")->required();
  rep->add_option("--output", output, "Report file name inside --out-dir (default report.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  if (seed_opt->count() > 0) g.seed = seed;

  try {
    if (*gen) return cmd_generate(g, kind, n, image_size);
    if (*pre) return cmd_pretrain(g, stage, data_dir, init);
    if (*ssl) return cmd_ssl(g, data_dir, init);
    if (*ft) return cmd_finetune(g, data_dir, init);
    if (*ev) return cmd_evaluate(g, ckpt, data_dir, split, output);
    if (*le) return cmd_leep(g, csv, ckpt, data_dir, split, output);
    if (*rep) return cmd_report(g, scratch, pretrained, output);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const IoError& e) {
    fmt::print(stderr, "I/O error: {}\n", e.what());
    return kExitIo;
  } catch (const CheckpointError& e) {
    fmt::print(stderr, "checkpoint error: {}\n", e.what());
    return kExitCheckpoint;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitFailure;
  }
  return kExitFailure;
}
