#include "mstl/rng.hpp"

#include <cmath>
#include <cstdlib>
#include <sstream>

#include "mstl/errors.hpp"

namespace mstl {

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n == 0) throw ContractError("uniform_int(0)");
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  cached_normal_ = r * std::sin(kTwoPi * u2);
  has_cached_normal_ = true;
  return r * std::cos(kTwoPi * u2);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_ << ' ' << has_cached_normal_ << ' ';
  os.precision(17);
  os << std::hexfloat << cached_normal_;
  return os.str();
}

void Rng::set_state(const std::string& state) {
  std::istringstream is(state);
  std::string cached;
  is >> engine_ >> has_cached_normal_ >> cached;
  if (!is && !is.eof()) throw ContractError("malformed rng state");
  cached_normal_ = std::strtod(cached.c_str(), nullptr);
}

}  // namespace mstl
