#include "resmatch/half.hpp"

#include <bit>
#include <cmath>

namespace resmatch {

uint16_t float_to_half_bits(float value) {
    const uint32_t bits = std::bit_cast<uint32_t>(value);
    const uint16_t sign = static_cast<uint16_t>((bits >> 16) & 0x8000u);
    const uint32_t abs = bits & 0x7fffffffu;

    if (abs >= 0x7f800000u) {
        // Inf / NaN. Keep NaNs quiet with a nonzero payload.
        if (abs > 0x7f800000u) {
            uint16_t payload = static_cast<uint16_t>((abs >> 13) & 0x03ffu);
            return static_cast<uint16_t>(sign | 0x7c00u | 0x0200u | payload);
        }
        return static_cast<uint16_t>(sign | 0x7c00u);
    }

    const int exp = static_cast<int>(abs >> 23) - 127;
    const uint32_t mant = abs & 0x007fffffu;

    if (exp >= 16) {
        // >= 2^16: past everything binary16 can round to.
        return static_cast<uint16_t>(sign | 0x7c00u);
    }

    if (exp >= -14) {
        // Normal half range. Round the 13 dropped mantissa bits; a carry
        // out of the mantissa correctly bumps the exponent, and a carry out
        // of the top exponent value produces infinity (e.g. 65520 -> inf).
        uint32_t combined = static_cast<uint32_t>((exp + 15) << 10) | (mant >> 13);
        const uint32_t rest = mant & 0x1fffu;
        if (rest > 0x1000u || (rest == 0x1000u && (combined & 1u))) ++combined;
        return static_cast<uint16_t>(sign | combined);
    }

    if (exp < -25) {
        // Below half of the smallest subnormal: rounds to zero.
        return sign;
    }

    // Subnormal half. value = full_mant * 2^(exp-23); result unit is 2^-24.
    const uint32_t full_mant = 0x00800000u | mant;
    const int shift = -exp - 1;  // in [14, 24]
    uint32_t kept = full_mant >> shift;
    const uint32_t dropped = full_mant & ((1u << shift) - 1u);
    const uint32_t halfway = 1u << (shift - 1);
    if (dropped > halfway || (dropped == halfway && (kept & 1u))) ++kept;
    return static_cast<uint16_t>(sign | kept);
}

float half_bits_to_float(uint16_t h) {
    const uint32_t sign = static_cast<uint32_t>(h & 0x8000u) << 16;
    const uint32_t exp = (h >> 10) & 0x1fu;
    const uint32_t mant = h & 0x03ffu;

    if (exp == 0) {
        if (mant == 0) return std::bit_cast<float>(sign);
        // Subnormal: mant * 2^-24, exact in binary32.
        float v = std::ldexp(static_cast<float>(mant), -24);
        return (sign != 0) ? -v : v;
    }
    if (exp == 31) {
        const uint32_t out = sign | 0x7f800000u | (mant << 13);
        return std::bit_cast<float>(out);
    }
    const uint32_t out = sign | ((exp - 15 + 127) << 23) | (mant << 13);
    return std::bit_cast<float>(out);
}

}  // namespace resmatch
