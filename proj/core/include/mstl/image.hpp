#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mstl/tensor.hpp"

namespace mstl {

// Single-channel image, row-major, intensities nominally in [0, 1].
struct Image {
  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}

  double& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  double at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  bool operator==(const Image&) const = default;

  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;
};

struct Mask {
  Mask() = default;
  Mask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return bits[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return bits[y * width + x]; }
  std::size_t count() const;
  bool operator==(const Mask&) const = default;

  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;
};

double intersection_over_union(const Mask& a, const Mask& b);

// Rounds every pixel to the nearest k/255, clamped to [0, 1].
void quantize_8bit(Image& image);

Image flip_horizontal(const Image& image);

// Stacks equally sized images into an N x H x W x 1 tensor.
Tensor to_batch(std::span<const Image> images);
Tensor to_batch(const Image& image);

// 8-bit binary PGM (P5). Reading throws IoError on malformed or truncated
// files; writing quantizes to 8 bits.
Image read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Image& image);
void write_pgm(const std::filesystem::path& path, const Mask& mask);
Mask read_pgm_mask(const std::filesystem::path& path);

}  // namespace mstl
