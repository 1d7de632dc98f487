#pragma once

#include <cstdint>

namespace resmatch {

// IEEE-754 binary16 <-> binary32 conversion.
//
// Narrowing uses round-to-nearest-even; values above the largest finite
// half (65504) round to infinity per IEEE rules, values below the smallest
// subnormal round to zero. Widening is exact.

uint16_t float_to_half_bits(float value);
float half_bits_to_float(uint16_t bits);

// Narrow-then-widen. The result is the nearest binary16-representable
// value of the input; this is how half16 storage and the emulated half16
// compute path quantize values.
inline float half_round_trip(float value) { return half_bits_to_float(float_to_half_bits(value)); }

inline constexpr float kHalfMaxFinite = 65504.0f;

}  // namespace resmatch
