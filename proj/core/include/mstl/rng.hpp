#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace mstl {

// Seeded generator with platform-independent distributions. The standard
// library engines are fully specified, but std::normal_distribution and
// friends are not, so the variates are derived here from raw engine output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  std::uint64_t uniform_int(std::uint64_t n);

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller; the second variate is cached.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Stream state as text, suitable for checkpoints.
  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

// splitmix64 finalizer; used to derive independent per-item seeds.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace mstl
