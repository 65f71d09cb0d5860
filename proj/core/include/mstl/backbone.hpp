#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mstl/attention.hpp"
#include "mstl/layers.hpp"

namespace mstl {

enum class Variant { kBaseline, kOneAttn, kFiveAttns };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);  // ConfigError on unknown names

inline constexpr std::array<std::string_view, 4> kStageNames = {"res2", "res3", "res4", "res5"};

struct BackboneConfig {
  std::array<std::size_t, 4> stage_channels{16, 32, 64, 128};
  std::array<std::size_t, 4> blocks_per_stage{2, 2, 2, 2};
  // Stage name -> number of attention blocks appended after the stage.
  std::map<std::string, int> attn_plan;
  std::size_t input_size = 64;
  std::size_t num_classes = 2;
  std::size_t in_channels = 1;

  // baseline: none; one_attn: res3 x1; five_attns: res3 x2, res4 x2, res5 x1.
  static BackboneConfig preset(Variant v);

  // Throws ConfigError on unknown stages, negative counts or zero extents.
  void validate() const;

  // Flat "key=value;..." echo used by checkpoints.
  std::string serialize() const;
  static BackboneConfig parse(std::string_view text);

  // Equal in everything but the class count of the head.
  bool same_backbone(const BackboneConfig& other) const;

  bool operator==(const BackboneConfig&) const = default;
};

class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(const std::string& prefix, std::size_t in, std::size_t out, std::size_t stride, Rng& rng);

  Var forward(Tape& tape, Var x, Mode mode);
  void collect(std::vector<Parameter*>& out);
  void collect_buffers(std::vector<NamedBuffer>& out);

  Conv2d conv1;
  BatchNorm bn1;
  Conv2d conv2;
  BatchNorm bn2;
  std::optional<Conv2d> proj;
  std::optional<BatchNorm> proj_bn;
};

struct StageLayers {
  std::string name;
  std::vector<ResidualBlock> blocks;
  std::vector<AttentionBlock> attns;
};

// stem conv -> res2..res5 (each followed by its planned attention blocks) ->
// global average pooling -> linear head. Copying a Model deep-copies every
// parameter and running statistic.
class Model {
 public:
  Model() = default;
  Model(const BackboneConfig& config, std::uint64_t seed);

  const BackboneConfig& config() const { return config_; }

  // Images are N x S x S x C_in (or a single S x S x C_in image); S must equal
  // config().input_size. Returns N x stage_channels[3] (or a vector).
  Var forward_features(Tape& tape, Var images, Mode mode);
  Var classify(Tape& tape, Var images, Mode mode);

  // Tape-free conveniences.
  Tensor features(const Tensor& images, Mode mode = Mode::kEval);
  Tensor logits(const Tensor& images, Mode mode = Mode::kEval);

  // Stable order: stem, stages (blocks then attention), head.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::vector<Parameter*> backbone_parameters();
  std::vector<NamedBuffer> buffers();
  std::size_t parameter_count() const;

  std::size_t attention_block_count() const;
  // Stage name -> attention blocks actually built after it.
  std::map<std::string, int> attention_counts() const;
  std::vector<StageLayers>& stages() { return stages_; }

  Linear& head() { return head_; }
  void reset_head(std::size_t num_classes, Rng& rng);

 private:
  BackboneConfig config_;
  Conv2d stem_conv_;
  BatchNorm stem_bn_;
  std::vector<StageLayers> stages_;
  Linear head_;
};

Model build_network(const BackboneConfig& config, std::uint64_t seed);

}  // namespace mstl
