#include "mstl/regions.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "mstl/errors.hpp"

namespace mstl {

std::string_view lobe_name(LobeId id) {
  switch (id) {
    case LobeId::kRu: return "ru";
    case LobeId::kRm: return "rm";
    case LobeId::kRl: return "rl";
    case LobeId::kLu: return "lu";
    case LobeId::kLl: return "ll";
  }
  return "?";
}

LobeId lobe_from_index(std::size_t index) {
  if (index >= kNumLobes) throw IndexError("lobe index " + std::to_string(index) + " out of range");
  return static_cast<LobeId>(index);
}

RegionTuple RegionTuple::from_corner(std::size_t left, std::size_t top, std::size_t w, std::size_t h,
                                     LobeId lobe) {
  return {static_cast<double>(left) + static_cast<double>(w - 1) / 2.0,
          static_cast<double>(top) + static_cast<double>(h - 1) / 2.0, w, h, lobe};
}

long RegionTuple::left() const { return std::lround(x - static_cast<double>(w - 1) / 2.0); }
long RegionTuple::top() const { return std::lround(y - static_cast<double>(h - 1) / 2.0); }

namespace {

Image mean_smooth3(const Image& image) {
  Image out(image.height, image.width);
  const long h = static_cast<long>(image.height), w = static_cast<long>(image.width);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      double s = 0.0;
      for (long dy = -1; dy <= 1; ++dy) {
        for (long dx = -1; dx <= 1; ++dx) {
          const long yy = std::clamp(y + dy, 0L, h - 1), xx = std::clamp(x + dx, 0L, w - 1);
          s += image.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
        }
      }
      out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = s / 9.0;
    }
  }
  return out;
}

int to_bin(double v) { return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

// Returns the bin t maximizing between-class variance for classes
// {<= t} and {> t}; -1 when every value falls in one bin.
int otsu_threshold(const Image& image) {
  std::array<double, 256> hist{};
  for (double v : image.pixels) hist[static_cast<std::size_t>(to_bin(v))] += 1.0;
  const double total = static_cast<double>(image.pixels.size());
  double sum_all = 0.0;
  for (int i = 0; i < 256; ++i) sum_all += i * hist[static_cast<std::size_t>(i)];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_t = -1;
  for (int t = 0; t < 255; ++t) {
    w0 += hist[static_cast<std::size_t>(t)];
    sum0 += t * hist[static_cast<std::size_t>(t)];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_t = t;
    }
  }
  return best_t;
}

}  // namespace

Mask binarize_lung_mask(const Image& image) {
  if (image.height == 0 || image.width == 0) throw DegenerateAnatomyError("empty image");
  const int t = otsu_threshold(mean_smooth3(image));
  if (t < 0) throw DegenerateAnatomyError("no threshold separates foreground from background");

  Mask fg(image.height, image.width);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) fg.bits[i] = to_bin(image.pixels[i]) > t ? 1 : 0;

  // 4-connected components, labelled by flood fill.
  std::vector<int> label(fg.bits.size(), -1);
  std::vector<std::size_t> sizes;
  std::deque<std::size_t> queue;
  for (std::size_t start = 0; start < fg.bits.size(); ++start) {
    if (!fg.bits[start] || label[start] >= 0) continue;
    const int id = static_cast<int>(sizes.size());
    sizes.push_back(0);
    label[start] = id;
    queue.push_back(start);
    while (!queue.empty()) {
      const std::size_t p = queue.front();
      queue.pop_front();
      ++sizes.back();
      const std::size_t y = p / fg.width, x = p % fg.width;
      auto visit = [&](std::size_t q) {
        if (fg.bits[q] && label[q] < 0) {
          label[q] = id;
          queue.push_back(q);
        }
      };
      if (y > 0) visit(p - fg.width);
      if (y + 1 < fg.height) visit(p + fg.width);
      if (x > 0) visit(p - 1);
      if (x + 1 < fg.width) visit(p + 1);
    }
  }
  std::vector<int> order(sizes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return sizes[static_cast<std::size_t>(a)] > sizes[static_cast<std::size_t>(b)]; });
  const double min_area = 0.01 * static_cast<double>(fg.bits.size());
  if (order.size() < 2 || static_cast<double>(sizes[static_cast<std::size_t>(order[1])]) <= min_area) {
    throw DegenerateAnatomyError("fewer than two lung components above 1% of the image area");
  }
  Mask out(image.height, image.width);
  for (std::size_t i = 0; i < label.size(); ++i) {
    out.bits[i] = (label[i] == order[0] || label[i] == order[1]) ? 1 : 0;
  }
  return out;
}

Mask boundary_map(const Mask& mask) {
  Mask out(mask.height, mask.width);
  const long h = static_cast<long>(mask.height), w = static_cast<long>(mask.width);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      bool seen0 = false, seen1 = false;
      for (long dy = -1; dy <= 1; ++dy) {
        for (long dx = -1; dx <= 1; ++dx) {
          const long yy = std::clamp(y + dy, 0L, h - 1), xx = std::clamp(x + dx, 0L, w - 1);
          (mask.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) ? seen1 : seen0) = true;
        }
      }
      out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = (seen0 && seen1) ? 1 : 0;
    }
  }
  return out;
}

BoundingBox lung_bounding_box(const Mask& mask, const Mask& boundary) {
  BoundingBox box{std::numeric_limits<std::size_t>::max(), std::numeric_limits<std::size_t>::max(), 0, 0};
  bool any = false;
  for (std::size_t y = 0; y < mask.height; ++y) {
    for (std::size_t x = 0; x < mask.width; ++x) {
      if (!boundary.at(y, x) || !mask.at(y, x)) continue;
      any = true;
      box.x0 = std::min(box.x0, x);
      box.y0 = std::min(box.y0, y);
      box.x1 = std::max(box.x1, x);
      box.y1 = std::max(box.y1, y);
    }
  }
  if (!any) throw DegenerateAnatomyError("lung mask has no boundary");
  return box;
}

std::array<RegionTuple, kNumLobes> lobe_layout(const BoundingBox& box) {
  const std::size_t w = box.width(), h = box.height();
  if (w < 2 || h < 3) throw DegenerateAnatomyError("lung bounding box too small for five lobes");
  const std::size_t right_w = w / 2, left_w = w - right_w;
  const std::size_t left_x = box.x0 + right_w;
  std::array<RegionTuple, kNumLobes> out;
  for (std::size_t k = 0; k < 3; ++k) {
    const std::size_t top = box.y0 + (k * h) / 3, bottom = box.y0 + ((k + 1) * h) / 3;
    out[k] = RegionTuple::from_corner(box.x0, top, right_w, bottom - top, lobe_from_index(k));
  }
  const std::size_t mid = box.y0 + h / 2;
  out[3] = RegionTuple::from_corner(left_x, box.y0, left_w, mid - box.y0, LobeId::kLu);
  out[4] = RegionTuple::from_corner(left_x, mid, left_w, box.y0 + h - mid, LobeId::kLl);
  return out;
}

std::array<RegionTuple, kNumLobes> locate(const Image& image) {
  const Mask mask = binarize_lung_mask(image);
  return lobe_layout(lung_bounding_box(mask, boundary_map(mask)));
}

Image crop(const Image& image, const RegionTuple& t) {
  const long left = t.left(), top = t.top();
  if (t.w == 0 || t.h == 0 || left < 0 || top < 0 ||
      static_cast<std::size_t>(left) + t.w > image.width || static_cast<std::size_t>(top) + t.h > image.height) {
    throw BoundsError("region tuple leaves the " + std::to_string(image.height) + "x" +
                      std::to_string(image.width) + " image");
  }
  Image out(t.h, t.w);
  for (std::size_t y = 0; y < t.h; ++y) {
    for (std::size_t x = 0; x < t.w; ++x) {
      out.at(y, x) = image.at(static_cast<std::size_t>(top) + y, static_cast<std::size_t>(left) + x);
    }
  }
  return out;
}

Image resize_region(const Image& region, std::size_t target_h, std::size_t target_w) {
  if (target_h == 0 || target_w == 0) throw ContractError("resize_region: target extents must be positive");
  if (region.height == 0 || region.width == 0) throw ContractError("resize_region: empty source");
  auto coord = [](std::size_t i, std::size_t src, std::size_t dst) {
    if (dst == 1) return 0.0;
    return static_cast<double>(i * (src - 1)) / static_cast<double>(dst - 1);
  };
  Image out(target_h, target_w);
  for (std::size_t y = 0; y < target_h; ++y) {
    const double sy = coord(y, region.height, target_h);
    const std::size_t y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, region.height - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < target_w; ++x) {
      const double sx = coord(x, region.width, target_w);
      const std::size_t x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, region.width - 1);
      const double fx = sx - static_cast<double>(x0);
      const double top = (1.0 - fx) * region.at(y0, x0) + fx * region.at(y0, x1);
      const double bottom = (1.0 - fx) * region.at(y1, x0) + fx * region.at(y1, x1);
      out.at(y, x) = (1.0 - fy) * top + fy * bottom;
    }
  }
  return out;
}

RegionSet generate_regions(const Image& image) {
  RegionSet set;
  set.tuples = locate(image);
  for (std::size_t i = 0; i < kNumLobes; ++i) {
    set.images[i] = resize_region(crop(image, set.tuples[i]), image.height, image.width);
  }
  return set;
}

}  // namespace mstl
