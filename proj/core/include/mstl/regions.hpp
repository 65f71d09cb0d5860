#pragma once

#include <array>
#include <cstddef>
#include <string_view>

#include "mstl/image.hpp"

namespace mstl {

// Lobe classes with fixed indices; "r*" lobes belong to the right lung, drawn
// on the image-left side (radiological convention).
enum class LobeId : std::size_t { kRu = 0, kRm = 1, kRl = 2, kLu = 3, kLl = 4 };

inline constexpr std::size_t kNumLobes = 5;
inline constexpr std::array<LobeId, kNumLobes> kAllLobes = {LobeId::kRu, LobeId::kRm, LobeId::kRl,
                                                            LobeId::kLu, LobeId::kLl};

std::string_view lobe_name(LobeId id);
constexpr std::size_t lobe_index(LobeId id) { return static_cast<std::size_t>(id); }
LobeId lobe_from_index(std::size_t index);  // IndexError outside 0..4

// (x, y) is the window center in pixel coordinates; the window covers columns
// [x - (w-1)/2, x + (w-1)/2], rows likewise.
struct RegionTuple {
  double x = 0.0;
  double y = 0.0;
  std::size_t w = 1;
  std::size_t h = 1;
  LobeId lobe = LobeId::kRu;

  static RegionTuple from_corner(std::size_t left, std::size_t top, std::size_t w, std::size_t h, LobeId lobe);
  long left() const;
  long top() const;
  bool operator==(const RegionTuple&) const = default;
};

// Inclusive pixel bounds.
struct BoundingBox {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  std::size_t width() const { return x1 - x0 + 1; }
  std::size_t height() const { return y1 - y0 + 1; }
  bool operator==(const BoundingBox&) const = default;
};

struct RegionSet {
  std::array<Image, kNumLobes> images;
  std::array<RegionTuple, kNumLobes> tuples;
};

// Otsu threshold estimated on a 3x3 mean-smoothed copy, applied to the
// original intensities; keeps the two largest 4-connected components.
// Throws DegenerateAnatomyError when no threshold separates two classes or
// fewer than two components exceed 1% of the image area.
Mask binarize_lung_mask(const Image& image);

// A pixel is a boundary pixel when its replicate-padded 3x3 window holds both
// mask values.
Mask boundary_map(const Mask& mask);

// Bounding box of the boundary pixels that lie on the lung side.
BoundingBox lung_bounding_box(const Mask& mask, const Mask& boundary);

// Fixed fractional layout inside the lung box: the box is split at its
// vertical midline; the image-left half (right lung) is cut into three
// horizontal bands ru/rm/rl, the image-right half into two bands lu/ll.
// Bands tile each half exactly.
std::array<RegionTuple, kNumLobes> lobe_layout(const BoundingBox& box);

std::array<RegionTuple, kNumLobes> locate(const Image& image);

// BoundsError when the window leaves the image.
Image crop(const Image& image, const RegionTuple& tuple);

// Corner-aligned bilinear interpolation; same-size resize is exact identity.
Image resize_region(const Image& region, std::size_t target_h, std::size_t target_w);

// locate -> crop -> resize to the source size.
RegionSet generate_regions(const Image& image);

}  // namespace mstl
