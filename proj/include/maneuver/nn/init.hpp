#pragma once

#include <cmath>
#include <random>

#include "maneuver/tensor.hpp"

namespace maneuver::nn {

// Uniform in +-1/sqrt(fan_in).
template <std::floating_point T>
void init_uniform_fan_in(Param<T>& p, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : p.value.values()) v = static_cast<T>(dist(rng));
}

}  // namespace maneuver::nn
