#pragma once

#include <array>
#include <cstdint>

#include "nsdf/common.hpp"

namespace nsdf::sds {

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

/// Philox4x32 with 10 rounds (Salmon et al. constants).
PhiloxCounter philox4x32_10(PhiloxCounter counter, PhiloxKey key);

/// Standard normal for (seed, index): key = (seed lo, seed hi), counter = (index lo, index hi, 0, 0).
/// Box-Muller on the first two output words: u1 = (x0 + 1) / 2^32, u2 = x1 / 2^32,
/// z = sqrt(-2 ln u1) cos(2 pi u2).
double philox_normal(std::uint64_t seed, std::uint64_t index);

/// rows x cols noise; entry (r, c) uses index c * rows + r (channel-major planar order for images).
MatX philox_noise(std::uint64_t seed, Eigen::Index rows, Eigen::Index cols);

}  // namespace nsdf::sds
