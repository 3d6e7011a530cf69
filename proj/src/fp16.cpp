#include "cvrt/fp16.hpp"

#include <bit>
#include <cmath>
#include <limits>

namespace cvrt {

namespace {

// Scaling by a power of two is exact in double, so nearbyint (which honors
// the default round-to-nearest-even mode) performs the one and only rounding.
inline uint16_t encode_magnitude(double a) {
  if (a <= 0x1p-25) return 0;       // underflows to zero (tie at 2^-25 goes to even)
  if (a >= 65520.0) return 0x7c00;              // overflows to infinity
  if (a < kHalfMinNormal) {
    // subnormal: quantum 2^-24
    auto n = static_cast<uint16_t>(std::nearbyint(a * 0x1p24));
    return n;  // n == 1024 lands exactly on the smallest normal (0x0400)
  }
  int e = std::ilogb(a);  // in [-15, 15]; a*2^(10-e) is in [1024, 2048)
  auto sig = static_cast<uint32_t>(std::nearbyint(std::ldexp(a, 10 - e)));
  if (sig == 2048) {  // mantissa rounded up across a binade
    sig = 1024;
    ++e;
    if (e > 15) return 0x7c00;
  }
  return static_cast<uint16_t>(((e + 15) << 10) | (sig - 1024));
}

}  // namespace

uint16_t half_from_double(double x) {
  const uint64_t bits = std::bit_cast<uint64_t>(x);
  const auto sign = static_cast<uint16_t>((bits >> 48) & 0x8000u);
  if (std::isnan(x)) return static_cast<uint16_t>(sign | 0x7e00u);
  if (std::isinf(x)) return static_cast<uint16_t>(sign | 0x7c00u);
  return static_cast<uint16_t>(sign | encode_magnitude(std::fabs(x)));
}

double half_to_double(uint16_t h) {
  const double sign = (h & 0x8000u) ? -1.0 : 1.0;
  const int exp = (h >> 10) & 0x1f;
  const int mant = h & 0x3ff;
  if (exp == 0x1f) {
    if (mant != 0) return std::numeric_limits<double>::quiet_NaN();
    return sign * std::numeric_limits<double>::infinity();
  }
  if (exp == 0) return sign * std::ldexp(static_cast<double>(mant), -24);
  return sign * std::ldexp(static_cast<double>(mant + 1024), exp - 25);
}

void fp16_round_inplace(std::span<double> xs) {
  for (double& x : xs) x = fp16_round(x);
}

}  // namespace cvrt
