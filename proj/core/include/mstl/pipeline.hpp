#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mstl/augment.hpp"
#include "mstl/backbone.hpp"
#include "mstl/checkpoint.hpp"
#include "mstl/config.hpp"
#include "mstl/leep.hpp"
#include "mstl/metrics.hpp"
#include "mstl/optim.hpp"
#include "mstl/phantom.hpp"
#include "mstl/ssl.hpp"

namespace mstl {

struct StageConfig {
  StageKind stage = StageKind::kFinetune;
  std::filesystem::path dataset;
  int epochs = 200;
  // Step schedule: lr * lr_decay^(milestones passed).
  double lr = 0.3;
  double lr_decay = 0.1;
  std::vector<int> lr_milestones = {120, 160};
  std::size_t batch_size = 16;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  AugmentPolicy augment;
  // Used by sstl_m only; its sgd field is overwritten from the fields above.
  SslOptions ssl;

  void validate() const;  // ConfigError
  SgdOptions sgd_at(int epoch) const;
};

// [<stage name>] section of the file over the built-in defaults. Unknown keys
// are rejected.
StageConfig stage_config_from(const ConfigFile& file, StageKind stage);
// [model] section: variant, input_size, stage_channels, blocks_per_stage,
// num_classes, in_channels.
BackboneConfig model_config_from(const ConfigFile& file);
// [data] section: kind, image_size, noise_sigma, lesion_probability, seed,
// split_fractions.
PhantomSpec phantom_spec_from(const ConfigFile& file);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;  // supervised stages only
  LossBreakdown ssl;      // sstl_m only
};

struct History {
  StageKind stage = StageKind::kFinetune;
  std::vector<std::pair<std::string, std::string>> header;
  std::vector<EpochRecord> epochs;

  std::string to_json() const;
};

// Minibatch SGD with cross-entropy on the train split. ConfigError when the
// head size differs from the dataset's class count or a label is out of range.
History run_stage_supervised(Model& model, const LabeledDataset& data, const StageConfig& config);

// Self-supervised stage on the train split (labels ignored). The model
// receives the trained query encoder; its classification head is untouched.
History run_stage_ssl(Model& model, const LabeledDataset& data, const StageConfig& config);

// Copy of `pretrained` with a freshly initialized head for `target`.
// CheckpointError when the backbones differ.
Model prepare_finetune(const Model& pretrained, const BackboneConfig& target, std::uint64_t seed);

struct Predictions {
  std::vector<int> preds;
  std::vector<double> scores;  // probability of class 1
  std::vector<int> labels;
  Tensor probabilities;        // n x classes
};

// Eval-mode forward pass over the center views of a split.
Predictions predict(Model& model, const LabeledDataset& data, Split split, const AugmentPolicy& policy);

// Binary models only (ContractError otherwise); UndefinedMetricError when the
// split holds a single class.
EvalResult evaluate(Model& model, const LabeledDataset& data, Split split, const AugmentPolicy& policy);

// Source-model output distributions on the target split with target labels.
LeepInput leep_input(Model& source, const LabeledDataset& target, Split split, const AugmentPolicy& policy);

}  // namespace mstl
