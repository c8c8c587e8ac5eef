#pragma once

/// @file fp16.hpp
/// @brief IEEE binary16 storage helpers. Arithmetic is always done in FP32.

#include <cstdint>
#include <cstring>

namespace csim {

uint16_t float_to_half(float f);
float half_to_float(uint16_t h);

inline float round_to_half(float f) { return half_to_float(float_to_half(f)); }

inline uint32_t f32_bits(float f) {
    uint32_t u;
    std::memcpy(&u, &f, 4);
    return u;
}

inline float bits_f32(uint32_t u) {
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

}  // namespace csim
