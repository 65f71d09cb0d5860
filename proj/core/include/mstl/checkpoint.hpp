#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mstl/backbone.hpp"
#include "mstl/tensor.hpp"

namespace mstl {

// Training stages in their only permitted order.
enum class StageKind { kStlN = 0, kStlM = 1, kSstlM = 2, kFinetune = 3 };

std::string_view stage_name(StageKind s);
StageKind parse_stage(std::string_view name);  // ConfigError

// Appends `next`; ConfigError unless it comes strictly after the last entry.
void append_stage(std::vector<StageKind>& provenance, StageKind next);

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  BackboneConfig config;
  std::vector<std::pair<std::string, Tensor>> parameters;
  std::vector<std::pair<std::string, Tensor>> buffers;
  std::vector<StageKind> provenance;
  std::string rng_state;
};

Checkpoint make_checkpoint(Model& model, std::vector<StageKind> provenance, std::string rng_state = {});

// Rebuilds the model and copies every named blob. CheckpointError when a
// name is missing or a shape disagrees.
Model restore_model(const Checkpoint& checkpoint);

// Layout: "MSTL", u32 version, then length-prefixed config echo, parameter
// and buffer manifests (name, rank, u64 extents, f64 values), provenance and
// rng state. All integers and reals little-endian.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
// CheckpointError on bad magic or version, IoError on truncation or an
// unreadable file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mstl
