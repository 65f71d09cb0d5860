#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mstl/image.hpp"
#include "mstl/regions.hpp"

namespace mstl {

// target: binary lesion / no lesion on lung phantoms.
// medical: three lung-phantom classes (normal, diffuse speckle, focal lesions).
// natural: four texture classes without lung anatomy.
enum class PhantomKind { kTarget, kMedical, kNatural };

std::string_view kind_name(PhantomKind kind);
PhantomKind parse_kind(std::string_view name);  // ConfigError on unknown names

struct PhantomSpec {
  PhantomKind kind = PhantomKind::kTarget;
  std::size_t image_size = 64;
  // Probability that an image with the given label receives focal lesions.
  std::map<int, double> lesion_probability_by_label = {{0, 0.0}, {1, 1.0}};
  // Mean lung intensity per lobe, indexed by LobeId.
  std::array<double, kNumLobes> lobe_intensity_profile = {0.62, 0.70, 0.78, 0.66, 0.74};
  double noise_sigma = 0.03;
  std::uint64_t seed = 0;
  // train / val / test; the remainder after train and val goes to test.
  std::array<double, 3> split_fractions = {0.5, 0.25, 0.25};

  std::size_t num_classes() const;
  void validate() const;  // ConfigError
  // Kind-appropriate defaults for lesion probabilities.
  static PhantomSpec defaults(PhantomKind kind);
};

enum class Split { kTrain, kVal, kTest };
std::string_view split_name(Split s);
Split parse_split(std::string_view name);

struct LabeledDataset {
  PhantomSpec spec;
  std::size_t num_classes = 2;
  std::vector<Image> images;
  std::vector<int> labels;
  std::vector<Split> splits;
  // Ground truth; empty masks for texture images. Lesion masks are not
  // persisted by save_dataset.
  std::vector<Mask> lung_masks;
  std::vector<Mask> lesion_masks;

  std::size_t size() const { return images.size(); }
  std::vector<std::size_t> indices(Split split) const;
};

// Deterministic in (spec, n): image i draws from an Rng seeded with
// mix_seed(spec.seed, i). Labels are balanced to within one per class.
LabeledDataset generate_phantom(const PhantomSpec& spec, std::size_t n);

// images/NNNNNN.pgm, masks/NNNNNN.pgm, labels.csv (filename,label,split),
// meta.json (spec echo and seed).
void save_dataset(const std::filesystem::path& dir, const LabeledDataset& dataset);
LabeledDataset load_dataset(const std::filesystem::path& dir);

}  // namespace mstl
