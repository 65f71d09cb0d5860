#include "mstl/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "mstl/errors.hpp"

namespace mstl {

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](auto b) { return b != 0; }));
}

double intersection_over_union(const Mask& a, const Mask& b) {
  if (a.height != b.height || a.width != b.width) throw DimensionError("IoU of differently sized masks");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    inter += (a.bits[i] && b.bits[i]) ? 1 : 0;
    uni += (a.bits[i] || b.bits[i]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

void quantize_8bit(Image& image) {
  for (double& v : image.pixels) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

Image flip_horizontal(const Image& image) {
  Image out(image.height, image.width);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) out.at(y, x) = image.at(y, image.width - 1 - x);
  }
  return out;
}

Tensor to_batch(std::span<const Image> images) {
  if (images.empty()) throw ContractError("to_batch: no images");
  const std::size_t h = images[0].height, w = images[0].width;
  std::vector<double> data;
  data.reserve(images.size() * h * w);
  for (const Image& im : images) {
    if (im.height != h || im.width != w) throw DimensionError("to_batch: images differ in size");
    data.insert(data.end(), im.pixels.begin(), im.pixels.end());
  }
  return Tensor({images.size(), h, w, 1}, std::move(data));
}

Tensor to_batch(const Image& image) { return to_batch(std::span<const Image>(&image, 1)); }

namespace {

void write_p5(const std::filesystem::path& path, std::size_t h, std::size_t w,
              const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<unsigned char> read_p5(const std::filesystem::path& path, std::size_t& h, std::size_t& w) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  auto token = [&]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(c);
    }
    return t;
  };
  if (token() != "P5") throw IoError(path.string() + " is not a binary PGM (P5)");
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    if (std::stoul(token()) != 255) throw IoError(path.string() + ": only 8-bit PGM is supported");
  } catch (const std::logic_error&) {
    throw IoError(path.string() + ": malformed PGM header");
  }
  if (h == 0 || w == 0) throw IoError(path.string() + ": empty image");
  std::vector<unsigned char> bytes(h * w);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw IoError(path.string() + ": truncated");
  return bytes;
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const Image& image) {
  std::vector<unsigned char> bytes(image.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(image.pixels[i], 0.0, 1.0) * 255.0));
  }
  write_p5(path, image.height, image.width, bytes);
}

void write_pgm(const std::filesystem::path& path, const Mask& mask) {
  std::vector<unsigned char> bytes(mask.bits.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.bits[i] ? 255 : 0;
  write_p5(path, mask.height, mask.width, bytes);
}

Image read_pgm(const std::filesystem::path& path) {
  std::size_t h = 0, w = 0;
  const auto bytes = read_p5(path, h, w);
  Image image(h, w);
  for (std::size_t i = 0; i < bytes.size(); ++i) image.pixels[i] = bytes[i] / 255.0;
  return image;
}

Mask read_pgm_mask(const std::filesystem::path& path) {
  std::size_t h = 0, w = 0;
  const auto bytes = read_p5(path, h, w);
  Mask mask(h, w);
  for (std::size_t i = 0; i < bytes.size(); ++i) mask.bits[i] = bytes[i] >= 128 ? 1 : 0;
  return mask;
}

}  // namespace mstl
