#include "mstl/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mstl/errors.hpp"
#include "mstl/rng.hpp"

namespace mstl {

std::string_view kind_name(PhantomKind kind) {
  switch (kind) {
    case PhantomKind::kTarget: return "target";
    case PhantomKind::kMedical: return "medical";
    case PhantomKind::kNatural: return "natural";
  }
  return "target";
}

PhantomKind parse_kind(std::string_view name) {
  if (name == "target") return PhantomKind::kTarget;
  if (name == "medical") return PhantomKind::kMedical;
  if (name == "natural") return PhantomKind::kNatural;
  throw ConfigError("unknown dataset kind '" + std::string(name) + "'");
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + std::string(name) + "'");
}

std::size_t PhantomSpec::num_classes() const {
  switch (kind) {
    case PhantomKind::kTarget: return 2;
    case PhantomKind::kMedical: return 3;
    case PhantomKind::kNatural: return 4;
  }
  return 2;
}

void PhantomSpec::validate() const {
  if (image_size < 16) throw ConfigError("phantom image_size must be at least 16");
  if (noise_sigma < 0.0) throw ConfigError("phantom noise_sigma must be nonnegative");
  for (const auto& [label, p] : lesion_probability_by_label) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("lesion probabilities must lie in [0, 1]");
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes()) {
      throw ConfigError("lesion probability given for unknown label " + std::to_string(label));
    }
  }
  double total = 0.0;
  for (double f : split_fractions) {
    if (f < 0.0) throw ConfigError("split fractions must be nonnegative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
}

PhantomSpec PhantomSpec::defaults(PhantomKind kind) {
  PhantomSpec s;
  s.kind = kind;
  switch (kind) {
    case PhantomKind::kTarget: s.lesion_probability_by_label = {{0, 0.0}, {1, 1.0}}; break;
    case PhantomKind::kMedical: s.lesion_probability_by_label = {{0, 0.0}, {1, 0.0}, {2, 1.0}}; break;
    case PhantomKind::kNatural: s.lesion_probability_by_label = {}; break;
  }
  return s;
}

std::vector<std::size_t> LabeledDataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == split) out.push_back(i);
  }
  return out;
}

namespace {

constexpr double kBackground = 0.08;

struct Ellipse {
  double cx, cy, ax, ay;
  bool contains(double x, double y) const {
    const double dx = (x - cx) / ax, dy = (y - cy) / ay;
    return dx * dx + dy * dy <= 1.0;
  }
};

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.uniform_int(i)]);
}

struct Sample {
  Image image;
  Mask lungs;
  Mask lesions;
};

// Adds a parabolic bump of the given radius, restricted to the lung mask.
void add_blob(Sample& s, double cx, double cy, double radius, double amplitude) {
  const long lo_y = std::max(0L, static_cast<long>(std::floor(cy - radius)));
  const long hi_y = std::min(static_cast<long>(s.image.height) - 1, static_cast<long>(std::ceil(cy + radius)));
  const long lo_x = std::max(0L, static_cast<long>(std::floor(cx - radius)));
  const long hi_x = std::min(static_cast<long>(s.image.width) - 1, static_cast<long>(std::ceil(cx + radius)));
  for (long y = lo_y; y <= hi_y; ++y) {
    for (long x = lo_x; x <= hi_x; ++x) {
      const auto uy = static_cast<std::size_t>(y), ux = static_cast<std::size_t>(x);
      if (!s.lungs.at(uy, ux)) continue;
      const double d2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (radius * radius);
      if (d2 > 1.0) continue;
      s.image.at(uy, ux) += amplitude * (1.0 - d2);
      s.lesions.at(uy, ux) = 1;
    }
  }
}

// Uniformly chosen lung pixel inside the given lobe window (rejection).
bool pick_lung_pixel(const Sample& s, const RegionTuple& t, Rng& rng, double& x, double& y) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    const std::size_t px = static_cast<std::size_t>(t.left()) + rng.uniform_int(t.w);
    const std::size_t py = static_cast<std::size_t>(t.top()) + rng.uniform_int(t.h);
    if (s.lungs.at(py, px)) {
      x = static_cast<double>(px);
      y = static_cast<double>(py);
      return true;
    }
  }
  return false;
}

Sample lung_phantom(const PhantomSpec& spec, int label, Rng& rng) {
  const double n = static_cast<double>(spec.image_size);
  Sample s{Image(spec.image_size, spec.image_size, kBackground), Mask(spec.image_size, spec.image_size),
           Mask(spec.image_size, spec.image_size)};
  auto jitter = [&](double scale) { return rng.uniform(-scale, scale); };
  // Right lung on the image-left side; slightly larger, as in anatomy.
  const Ellipse right{0.30 * n + jitter(1.0), 0.50 * n + jitter(1.0), 0.150 * n * (1.0 + jitter(0.04)),
                      0.34 * n * (1.0 + jitter(0.04))};
  const Ellipse left{0.70 * n + jitter(1.0), 0.52 * n + jitter(1.0), 0.140 * n * (1.0 + jitter(0.04)),
                     0.31 * n * (1.0 + jitter(0.04))};
  for (std::size_t y = 0; y < spec.image_size; ++y) {
    for (std::size_t x = 0; x < spec.image_size; ++x) {
      const double fx = static_cast<double>(x), fy = static_cast<double>(y);
      if (right.contains(fx, fy) || left.contains(fx, fy)) s.lungs.at(y, x) = 1;
    }
  }
  // Lobe intensities follow the same fractional layout the region generator
  // recovers from the lung bounding box.
  BoundingBox box{spec.image_size, spec.image_size, 0, 0};
  for (std::size_t y = 0; y < spec.image_size; ++y) {
    for (std::size_t x = 0; x < spec.image_size; ++x) {
      if (!s.lungs.at(y, x)) continue;
      box.x0 = std::min(box.x0, x);
      box.y0 = std::min(box.y0, y);
      box.x1 = std::max(box.x1, x);
      box.y1 = std::max(box.y1, y);
    }
  }
  const auto lobes = lobe_layout(box);
  for (const RegionTuple& t : lobes) {
    const double level = spec.lobe_intensity_profile[lobe_index(t.lobe)];
    for (std::size_t y = 0; y < t.h; ++y) {
      for (std::size_t x = 0; x < t.w; ++x) {
        const std::size_t py = static_cast<std::size_t>(t.top()) + y, px = static_cast<std::size_t>(t.left()) + x;
        if (s.lungs.at(py, px)) s.image.at(py, px) = level;
      }
    }
  }

  const auto it = spec.lesion_probability_by_label.find(label);
  const double p_lesion = it == spec.lesion_probability_by_label.end() ? 0.0 : it->second;
  if (rng.bernoulli(p_lesion)) {
    const std::size_t count = 1 + rng.uniform_int(3);
    std::size_t placed = 0;
    for (std::size_t attempt = 0; placed < count && attempt < 4 * count + 16; ++attempt) {
      const RegionTuple& lobe = lobes[rng.uniform_int(kNumLobes)];
      double cx = 0.0, cy = 0.0;
      if (!pick_lung_pixel(s, lobe, rng, cx, cy)) continue;
      add_blob(s, cx, cy, n * rng.uniform(0.07, 0.12), 0.3);
      ++placed;
    }
  }
  if (spec.kind == PhantomKind::kMedical && label == 1) {
    // Diffuse speckle spread over both lungs.
    for (int k = 0; k < 30; ++k) {
      const RegionTuple& lobe = lobes[rng.uniform_int(kNumLobes)];
      double cx = 0.0, cy = 0.0;
      if (pick_lung_pixel(s, lobe, rng, cx, cy)) add_blob(s, cx, cy, std::max(1.5, n / 24.0), 0.2);
    }
    s.lesions = Mask(spec.image_size, spec.image_size);
  }
  return s;
}

Sample texture_phantom(const PhantomSpec& spec, int label, Rng& rng) {
  const std::size_t n = spec.image_size;
  Sample s{Image(n, n, 0.0), Mask(n, n), Mask(n, n)};
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  const double period = rng.uniform(4.0, 10.0);
  const double phase = rng.uniform(0.0, kTwoPi);
  const double base = rng.uniform(0.3, 0.5), amp = rng.uniform(0.2, 0.35);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double fx = static_cast<double>(x), fy = static_cast<double>(y);
      double v = base;
      switch (label) {
        case 0: v += amp * std::sin(kTwoPi * fy / period + phase); break;
        case 1: v += amp * std::sin(kTwoPi * fx / period + phase); break;
        case 2: {
          const long cell = static_cast<long>(std::floor(fx / period * 2.0)) + static_cast<long>(std::floor(fy / period * 2.0));
          v += (cell % 2 == 0 ? amp : -amp);
          break;
        }
        default: break;
      }
      s.image.at(y, x) = v;
    }
  }
  if (label == 3) {
    const std::size_t disks = 3 + rng.uniform_int(4);
    for (std::size_t k = 0; k < disks; ++k) {
      const double cx = rng.uniform(0.0, static_cast<double>(n)), cy = rng.uniform(0.0, static_cast<double>(n));
      const double r = rng.uniform(0.06, 0.16) * static_cast<double>(n);
      for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
          const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
          if (dx * dx + dy * dy <= r * r) s.image.at(y, x) = base + amp;
        }
      }
    }
  }
  return s;
}

}  // namespace

LabeledDataset generate_phantom(const PhantomSpec& spec, std::size_t n) {
  spec.validate();
  if (n == 0) throw ContractError("generate_phantom: n must be >= 1");
  const std::size_t k = spec.num_classes();

  // Balanced labels, then a seeded permutation; a second permutation
  // assigns the splits.
  Rng order_rng(mix_seed(spec.seed, ~std::uint64_t{0}));
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  shuffle(perm, order_rng);
  LabeledDataset ds;
  ds.spec = spec;
  ds.num_classes = k;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels[perm[i]] = static_cast<int>(i % k);

  std::iota(perm.begin(), perm.end(), 0);
  shuffle(perm, order_rng);
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.split_fractions[0] + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.split_fractions[1] + 1e-9));
  ds.splits.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.splits[perm[i]] = i < n_train ? Split::kTrain : (i < n_train + n_val ? Split::kVal : Split::kTest);
  }

  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(mix_seed(spec.seed, i));
    Sample s = spec.kind == PhantomKind::kNatural ? texture_phantom(spec, ds.labels[i], rng)
                                                   : lung_phantom(spec, ds.labels[i], rng);
    for (double& v : s.image.pixels) v += rng.normal(0.0, spec.noise_sigma);
    quantize_8bit(s.image);
    ds.images.push_back(std::move(s.image));
    ds.lung_masks.push_back(std::move(s.lungs));
    ds.lesion_masks.push_back(std::move(s.lesions));
  }
  return ds;
}

}  // namespace mstl
