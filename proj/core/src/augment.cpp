#include "mstl/augment.hpp"

#include <algorithm>

#include "mstl/errors.hpp"
#include "mstl/regions.hpp"

namespace mstl {

void AugmentPolicy::validate() const {
  if (crop_to == 0 || scale_to == 0) throw ContractError("augment: extents must be positive");
  if (crop_to > scale_to) throw ContractError("augment: crop_to exceeds scale_to");
  for (double p : {flip_prob, jitter_prob, gray_prob}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ContractError("augment: probabilities must lie in [0, 1]");
  }
  if (brightness < 0.0 || brightness >= 1.0 || contrast < 0.0 || contrast >= 1.0) {
    throw ContractError("augment: jitter ranges must lie in [0, 1)");
  }
}

namespace {

Image window(const Image& image, std::size_t top, std::size_t left, std::size_t size) {
  Image out(size, size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) out.at(y, x) = image.at(top + y, left + x);
  }
  return out;
}

Image scaled(const Image& image, const AugmentPolicy& policy) {
  policy.validate();
  if (image.height == 0 || image.width == 0) throw ContractError("augment: empty image");
  if (image.height == policy.scale_to && image.width == policy.scale_to) return image;
  return resize_region(image, policy.scale_to, policy.scale_to);
}

}  // namespace

Image augment(const Image& image, const AugmentPolicy& policy, Rng& rng) {
  const Image big = scaled(image, policy);
  const std::size_t slack = policy.scale_to - policy.crop_to + 1;
  const std::size_t top = rng.uniform_int(slack);
  const std::size_t left = rng.uniform_int(slack);
  Image out = window(big, top, left, policy.crop_to);

  if (rng.bernoulli(policy.flip_prob)) out = flip_horizontal(out);
  if (rng.bernoulli(policy.jitter_prob)) {
    const double b = rng.uniform(1.0 - policy.brightness, 1.0 + policy.brightness);
    const double c = rng.uniform(1.0 - policy.contrast, 1.0 + policy.contrast);
    double mean = 0.0;
    for (double v : out.pixels) mean += v;
    mean /= static_cast<double>(out.pixels.size());
    for (double& v : out.pixels) v = std::clamp(((v - mean) * c + mean) * b, 0.0, 1.0);
  }
  // Grayscale conversion: single-channel images are already gray.
  (void)rng.bernoulli(policy.gray_prob);
  return out;
}

Image center_view(const Image& image, const AugmentPolicy& policy) {
  const Image big = scaled(image, policy);
  const std::size_t offset = (policy.scale_to - policy.crop_to) / 2;
  return window(big, offset, offset, policy.crop_to);
}

}  // namespace mstl
