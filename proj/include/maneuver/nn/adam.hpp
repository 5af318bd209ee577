#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "maneuver/tensor.hpp"

namespace maneuver::nn {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <std::floating_point T>
struct AdamMoments {
  std::vector<T> m;
  std::vector<T> v;
};

/// Bias-corrected Adam update for step t (t >= 1). Moments are kept per
/// parameter alongside `params` (same order); they are allocated on first
/// use. Gradients are zeroed after the update.
template <std::floating_point T>
void adam_step(std::vector<Param<T>*> const& params, std::vector<AdamMoments<T>>& moments,
               const AdamConfig& cfg, std::int64_t t) {
  if (t < 1) fail(ErrorKind::InvalidConfig, "adam step index must be >= 1");
  if (moments.size() != params.size()) moments.resize(params.size());
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param<T>& p = *params[k];
    auto& mom = moments[k];
    if (mom.m.size() != p.size()) {
      mom.m.assign(p.size(), T{0});
      mom.v.assign(p.size(), T{0});
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad[i];
      const double m = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g;
      const double v = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g * g;
      mom.m[i] = static_cast<T>(m);
      mom.v[i] = static_cast<T>(v);
      const double update = cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
      p.value[i] = static_cast<T>(p.value[i] - update);
    }
    p.zero_grad();
  }
}

}  // namespace maneuver::nn
