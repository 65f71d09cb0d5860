#include "mstl/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <json.hpp>

#include "mstl/errors.hpp"
#include "mstl/ops.hpp"

namespace mstl {

namespace {

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.uniform_int(i)]);
}

std::string fmt_real(double v) { return fmt::format("{}", v); }

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::size_t parse_size_key(std::string_view key, std::string_view value) {
  return static_cast<std::size_t>(parse_u64(key, value));
}

std::array<std::size_t, 4> parse_quad(std::string_view key, std::string_view value) {
  const auto list = parse_int_list(key, value);
  if (list.size() != 4) throw ConfigError("key '" + std::string(key) + "': expected four values");
  std::array<std::size_t, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    if (list[i] <= 0) throw ConfigError("key '" + std::string(key) + "': values must be positive");
    out[i] = static_cast<std::size_t>(list[i]);
  }
  return out;
}

}  // namespace

void StageConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (!(lr >= 0.0)) throw ConfigError("lr must be nonnegative");
  if (!(lr_decay > 0.0)) throw ConfigError("lr_decay must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
  if (!std::is_sorted(lr_milestones.begin(), lr_milestones.end())) {
    throw ConfigError("lr_milestones must be ascending");
  }
  try {
    augment.validate();
    if (stage == StageKind::kSstlM) ssl.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
}

SgdOptions StageConfig::sgd_at(int epoch) const {
  return SgdOptions{step_decay_lr(lr, lr_decay, lr_milestones, epoch), momentum, weight_decay};
}

StageConfig stage_config_from(const ConfigFile& file, StageKind stage) {
  StageConfig c;
  c.stage = stage;
  const std::string section(stage_name(stage));
  for (const std::string& key : file.keys(section)) {
    const std::string v = *file.get(section, key);
    if (key == "dataset") c.dataset = v;
    else if (key == "epochs") c.epochs = static_cast<int>(parse_int(key, v));
    else if (key == "lr") c.lr = parse_double(key, v);
    else if (key == "lr_decay") c.lr_decay = parse_double(key, v);
    else if (key == "lr_milestones") c.lr_milestones = parse_int_list(key, v);
    else if (key == "batch_size") c.batch_size = parse_size_key(key, v);
    else if (key == "momentum") c.momentum = parse_double(key, v);
    else if (key == "weight_decay") c.weight_decay = parse_double(key, v);
    else if (key == "seed") c.seed = parse_u64(key, v);
    else if (key == "scale_to") c.augment.scale_to = parse_size_key(key, v);
    else if (key == "crop_to") c.augment.crop_to = parse_size_key(key, v);
    else if (key == "flip_prob") c.augment.flip_prob = parse_double(key, v);
    else if (key == "jitter_prob") c.augment.jitter_prob = parse_double(key, v);
    else if (key == "gray_prob") c.augment.gray_prob = parse_double(key, v);
    else if (key == "brightness") c.augment.brightness = parse_double(key, v);
    else if (key == "contrast") c.augment.contrast = parse_double(key, v);
    else if (key == "tau") c.ssl.tau = parse_double(key, v);
    else if (key == "key_momentum") c.ssl.momentum = parse_double(key, v);
    else if (key == "alpha1") c.ssl.weights.alpha1 = parse_double(key, v);
    else if (key == "alpha2") c.ssl.weights.alpha2 = parse_double(key, v);
    else if (key == "untempered_negatives") c.ssl.untempered_negatives = parse_bool(key, v);
    else if (key == "queue_capacity") c.ssl.queue_capacity = parse_size_key(key, v);
    else if (key == "region_negatives") c.ssl.region_negatives = parse_size_key(key, v);
    else throw ConfigError("unknown key '" + key + "' in [" + section + "]");
  }
  c.ssl.augment = c.augment;
  c.validate();
  return c;
}

BackboneConfig model_config_from(const ConfigFile& file) {
  BackboneConfig c = BackboneConfig::preset(Variant::kFiveAttns);
  if (const auto v = file.get("model", "variant")) c = BackboneConfig::preset(parse_variant(*v));
  for (const std::string& key : file.keys("model")) {
    const std::string v = *file.get("model", key);
    if (key == "variant") continue;
    if (key == "input_size") c.input_size = parse_size_key(key, v);
    else if (key == "num_classes") c.num_classes = parse_size_key(key, v);
    else if (key == "in_channels") c.in_channels = parse_size_key(key, v);
    else if (key == "stage_channels") c.stage_channels = parse_quad(key, v);
    else if (key == "blocks_per_stage") c.blocks_per_stage = parse_quad(key, v);
    else throw ConfigError("unknown key '" + key + "' in [model]");
  }
  c.validate();
  return c;
}

PhantomSpec phantom_spec_from(const ConfigFile& file) {
  PhantomKind kind = PhantomKind::kTarget;
  if (const auto v = file.get("data", "kind")) kind = parse_kind(*v);
  PhantomSpec s = PhantomSpec::defaults(kind);
  for (const std::string& key : file.keys("data")) {
    const std::string v = *file.get("data", key);
    if (key == "kind" || key == "n") continue;
    if (key == "image_size") s.image_size = parse_size_key(key, v);
    else if (key == "noise_sigma") s.noise_sigma = parse_double(key, v);
    else if (key == "seed") s.seed = parse_u64(key, v);
    else if (key == "lesion_probability") {
      // label:p pairs, comma separated
      s.lesion_probability_by_label.clear();
      std::size_t start = 0;
      while (start < v.size()) {
        const auto comma = std::min(v.find(',', start), v.size());
        const std::string entry = v.substr(start, comma - start);
        const auto colon = entry.find(':');
        if (colon == std::string::npos) throw ConfigError("lesion_probability entries are label:p");
        s.lesion_probability_by_label[static_cast<int>(parse_int(key, entry.substr(0, colon)))] =
            parse_double(key, entry.substr(colon + 1));
        start = comma + 1;
      }
    } else if (key == "split_fractions") {
      std::array<double, 3> f{};
      std::size_t start = 0;
      for (std::size_t i = 0; i < 3; ++i) {
        const auto comma = std::min(v.find(',', start), v.size());
        if (start > v.size()) throw ConfigError("split_fractions needs three values");
        f[i] = parse_double(key, v.substr(start, comma - start));
        start = comma + 1;
      }
      s.split_fractions = f;
    } else {
      throw ConfigError("unknown key '" + key + "' in [data]");
    }
  }
  s.validate();
  return s;
}

std::string History::to_json() const {
  nlohmann::ordered_json j;
  j["stage"] = std::string(stage_name(stage));
  nlohmann::ordered_json h = nlohmann::ordered_json::object();
  for (const auto& [k, v] : header) h[k] = v;
  j["header"] = h;
  j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : epochs) {
    nlohmann::ordered_json r;
    r["epoch"] = e.epoch;
    r["lr"] = e.lr;
    r["loss"] = e.loss;
    if (stage == StageKind::kSstlM) {
      r["contrastive"] = e.ssl.contrastive;
      r["region_query"] = e.ssl.region_query;
      r["region_negatives"] = e.ssl.region_negatives;
      r["images_used"] = e.ssl.images_used;
      r["images_skipped"] = e.ssl.images_skipped;
    } else {
      r["accuracy"] = e.accuracy;
    }
    j["epochs"].push_back(r);
  }
  return j.dump(2);
}

History run_stage_supervised(Model& model, const LabeledDataset& data, const StageConfig& config) {
  config.validate();
  History history;
  history.stage = config.stage;
  history.header = {{"lr", fmt_real(config.lr)},
                    {"lr_decay", fmt_real(config.lr_decay)},
                    {"lr_milestones", join_ints(config.lr_milestones)},
                    {"momentum", fmt_real(config.momentum)},
                    {"weight_decay", fmt_real(config.weight_decay)},
                    {"batch_size", std::to_string(config.batch_size)}};
  const std::size_t classes = model.head().out_features();
  if (classes != data.num_classes) {
    throw ConfigError(fmt::format("model head has {} classes but the dataset has {}", classes, data.num_classes));
  }
  for (int label : data.labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw ConfigError(fmt::format("label {} outside [0, {})", label, classes));
    }
  }
  if (config.augment.crop_to != model.config().input_size) {
    throw ConfigError(fmt::format("crop_to {} does not match the model input size {}", config.augment.crop_to,
                                  model.config().input_size));
  }
  std::vector<std::size_t> train = data.indices(Split::kTrain);
  if (config.epochs > 0 && train.empty()) throw ConfigError("dataset has no training images");

  std::vector<Parameter*> params = model.parameters();
  SgdState sgd;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const SgdOptions opts = config.sgd_at(epoch);
    Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    shuffle(train, rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < train.size(); start += config.batch_size) {
      const std::size_t end = std::min(train.size(), start + config.batch_size);
      std::vector<Image> views;
      std::vector<std::size_t> labels;
      for (std::size_t i = start; i < end; ++i) {
        views.push_back(augment(data.images[train[i]], config.augment, rng));
        labels.push_back(static_cast<std::size_t>(data.labels[train[i]]));
      }
      Tape tape;
      Var logits = model.classify(tape, tape.constant(to_batch(views)), Mode::kTrain);
      Var per_row = cross_entropy_rows(logits, labels);
      Var loss = mean(per_row);
      zero_grads(params);
      tape.backward(loss);
      sgd_step(params, sgd, opts);

      for (double v : per_row.value().data()) loss_sum += v;
      const Tensor& lv = logits.value();
      for (std::size_t r = 0; r < labels.size(); ++r) {
        const double* row = lv.raw() + r * classes;
        const auto best = static_cast<std::size_t>(std::max_element(row, row + classes) - row);
        if (best == labels[r]) ++correct;
      }
    }
    const double n = static_cast<double>(train.size());
    history.epochs.push_back({epoch + 1, opts.lr, loss_sum / n, static_cast<double>(correct) / n, {}});
  }
  return history;
}

History run_stage_ssl(Model& model, const LabeledDataset& data, const StageConfig& config) {
  config.validate();
  SslOptions opts = config.ssl;
  opts.augment = config.augment;
  History history;
  history.stage = StageKind::kSstlM;
  history.header = {{"tau", fmt_real(opts.tau)},
                    {"alpha1", fmt_real(opts.weights.alpha1)},
                    {"alpha2", fmt_real(opts.weights.alpha2)},
                    {"m", fmt_real(opts.momentum)},
                    {"untempered_negatives", opts.untempered_negatives ? "true" : "false"},
                    {"queue_capacity", std::to_string(opts.queue_capacity)},
                    {"region_negatives", std::to_string(opts.region_negatives)},
                    {"lr", fmt_real(config.lr)},
                    {"batch_size", std::to_string(config.batch_size)}};
  if (config.epochs == 0) return history;
  if (config.augment.crop_to != model.config().input_size) {
    throw ConfigError(fmt::format("crop_to {} does not match the model input size {}", config.augment.crop_to,
                                  model.config().input_size));
  }
  std::vector<std::size_t> train = data.indices(Split::kTrain);
  if (train.empty()) throw ConfigError("dataset has no training images");

  SslState state = make_ssl_state(model, opts, config.seed);
  {
    std::vector<Image> warm;
    for (std::size_t i : train) warm.push_back(data.images[i]);
    warm_start_queue(state, warm, opts);
  }
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    opts.sgd = config.sgd_at(epoch);
    Rng rng(mix_seed(config.seed, 0x10000 + static_cast<std::uint64_t>(epoch)));
    shuffle(train, rng);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = opts.sgd.lr;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < train.size(); start += config.batch_size) {
      const std::size_t end = std::min(train.size(), start + config.batch_size);
      std::vector<Image> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(data.images[train[i]]);
      const LossBreakdown b = ssl_step(state, batch, opts, rng);
      rec.ssl.images_used += b.images_used;
      rec.ssl.images_skipped += b.images_skipped;
      if (b.images_used == 0) continue;
      ++steps;
      rec.ssl.total += b.total;
      rec.ssl.contrastive += b.contrastive;
      rec.ssl.region_query += b.region_query;
      rec.ssl.region_negatives += b.region_negatives;
    }
    if (steps > 0) {
      const double s = static_cast<double>(steps);
      rec.ssl.total /= s;
      rec.ssl.contrastive /= s;
      rec.ssl.region_query /= s;
      rec.ssl.region_negatives /= s;
    }
    rec.loss = rec.ssl.total;
    history.epochs.push_back(rec);
  }
  model = state.encoders.query;
  return history;
}

Model prepare_finetune(const Model& pretrained, const BackboneConfig& target, std::uint64_t seed) {
  if (!pretrained.config().same_backbone(target)) {
    throw CheckpointError("pretrained backbone does not match the target model configuration");
  }
  Model model = pretrained;
  Rng rng(mix_seed(seed, 0x4ead));
  model.reset_head(target.num_classes, rng);
  return model;
}

Predictions predict(Model& model, const LabeledDataset& data, Split split, const AugmentPolicy& policy) {
  const std::vector<std::size_t> idx = data.indices(split);
  if (idx.empty()) throw ContractError(fmt::format("split '{}' is empty", split_name(split)));
  const std::size_t classes = model.head().out_features();
  Predictions out;
  out.probabilities = Tensor(Shape{idx.size(), classes});
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < idx.size(); start += kChunk) {
    const std::size_t end = std::min(idx.size(), start + kChunk);
    std::vector<Image> views;
    for (std::size_t i = start; i < end; ++i) views.push_back(center_view(data.images[idx[i]], policy));
    const Tensor logits = model.logits(to_batch(views), Mode::kEval);
    for (std::size_t r = 0; r < end - start; ++r) {
      const double* row = logits.raw() + r * classes;
      const double mx = *std::max_element(row, row + classes);
      double total = 0.0;
      double* prob = out.probabilities.raw() + (start + r) * classes;
      for (std::size_t c = 0; c < classes; ++c) total += prob[c] = std::exp(row[c] - mx);
      for (std::size_t c = 0; c < classes; ++c) prob[c] /= total;
      out.preds.push_back(static_cast<int>(std::max_element(row, row + classes) - row));
      out.scores.push_back(classes > 1 ? prob[1] : prob[0]);
      out.labels.push_back(data.labels[idx[start + r]]);
    }
  }
  return out;
}

EvalResult evaluate(Model& model, const LabeledDataset& data, Split split, const AugmentPolicy& policy) {
  if (model.head().out_features() != 2) throw ContractError("evaluate expects a binary classifier");
  const Predictions p = predict(model, data, split, policy);
  return evaluate_predictions(p.preds, p.scores, p.labels);
}

LeepInput leep_input(Model& source, const LabeledDataset& target, Split split, const AugmentPolicy& policy) {
  Predictions p = predict(source, target, split, policy);
  LeepInput in;
  in.dummy_dist = std::move(p.probabilities);
  for (int label : p.labels) {
    if (label < 0) throw ContractError("negative target label");
    in.target_labels.push_back(static_cast<std::size_t>(label));
  }
  in.num_target_classes = target.num_classes;
  return in;
}

}  // namespace mstl
