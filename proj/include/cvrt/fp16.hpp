#pragma once

#include <cstdint>
#include <span>

namespace cvrt {

// IEEE 754 binary16 with round-to-nearest-even and subnormal support.
// Conversions go double <-> half directly (no float intermediate), so a
// single rounding step decides the result.

uint16_t half_from_double(double x);
double half_to_double(uint16_t h);

// Round a double through binary16 and widen it back.
inline double fp16_round(double x) { return half_to_double(half_from_double(x)); }

void fp16_round_inplace(std::span<double> xs);

// Smallest positive subnormal and smallest positive normal half values.
inline constexpr double kHalfMinSubnormal = 5.9604644775390625e-08;  // 2^-24
inline constexpr double kHalfMinNormal = 6.103515625e-05;            // 2^-14
inline constexpr double kHalfMax = 65504.0;

}  // namespace cvrt
