#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace match2 {

// Exponentially decayed dropout keep rate: decay^(step/interval) with a
// continuous exponent, floored once it reaches `floor_value` (0.933 every
// 5000 steps reaches ~0.5 at step 50000 and stays there).
inline double keep_rate(int64_t step, double decay = 0.933, int64_t interval = 5000,
                        double floor_value = 0.5) {
  double kr = std::pow(decay, static_cast<double>(step) / static_cast<double>(interval));
  return std::max(kr, floor_value);
}

}  // namespace match2
