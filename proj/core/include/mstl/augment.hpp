#pragma once

#include <cstddef>

#include "mstl/image.hpp"
#include "mstl/rng.hpp"

namespace mstl {

struct AugmentPolicy {
  std::size_t scale_to = 72;
  std::size_t crop_to = 64;
  double flip_prob = 0.5;
  double jitter_prob = 0.5;
  double gray_prob = 0.5;
  // Brightness and contrast factors are drawn from [1 - x, 1 + x].
  double brightness = 0.2;
  double contrast = 0.2;

  void validate() const;  // ContractError when crop_to > scale_to or a probability leaves [0, 1]
};

// Scale to scale_to x scale_to, take a random crop_to window, then flip,
// brightness/contrast jitter and grayscale conversion, each with its own
// probability. Grayscale conversion is the identity on single-channel input
// but still consumes its draw, so the random stream does not depend on the
// channel count.
Image augment(const Image& image, const AugmentPolicy& policy, Rng& rng);

// Inference view: scale, then the centered crop_to window.
Image center_view(const Image& image, const AugmentPolicy& policy);

}  // namespace mstl
