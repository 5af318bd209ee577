#pragma once

#include <random>

#include "maneuver/model.hpp"
#include "test_util.hpp"

namespace maneuver::testing {

inline model::ModelConfig tiny_model_config(model::Variant v = model::Variant::FusionAll) {
  model::ModelConfig c;
  c.variant = v;
  c.stream_shapes = {{"depth", {2, 2, 3}}, {"seg", {2, 1, 2}}, {"image", {1, 2, 2}}};
  c.reduce_channels = {{"depth", 2}, {"seg", 2}, {"image", 3}};
  c.can_dim = 3;
  c.can_feature_dim = 4;
  c.hidden_size = 5;
  return c;
}

// Random session carrying every stream of tiny_model_config().
inline Session random_session(std::size_t length, std::mt19937_64& rng, const std::string& id = "s") {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> cls(0, kNumClasses - 1);
  const auto cfg = tiny_model_config();
  Session s;
  s.session_id = id;
  for (std::size_t t = 0; t < length; ++t) {
    FrameSample f;
    f.tick_index = static_cast<std::int64_t>(t);
    f.label = cls(rng);
    for (const auto& [name, shape] : cfg.stream_shapes) {
      Tensor<float> x(shape);
      for (auto& v : x.values()) v = static_cast<float>(gauss(rng));
      f.features.emplace(name, std::move(x));
    }
    for (int k = 0; k < cfg.can_dim; ++k) f.can.push_back(static_cast<float>(gauss(rng)));
    s.frames.push_back(std::move(f));
  }
  return s;
}

// Non-trivial running statistics and affine parameters so eval-mode tests
// exercise them.
inline void randomize_batchnorm(model::Model& m, std::mt19937_64& rng) {
  auto& bn = m.batchnorm();
  std::uniform_real_distribution<double> d(-0.5, 0.5);
  for (auto& v : bn.running_mean) v = d(rng);
  for (auto& v : bn.running_var) v = 0.5 + d(rng) + 0.5;
  for (auto& v : bn.gamma.value.values()) v = 1.0 + d(rng);
  for (auto& v : bn.beta.value.values()) v = d(rng);
}

inline model::ModelState random_state(const model::Model& m, std::size_t lanes, std::mt19937_64& rng) {
  auto s = m.init_state(lanes);
  std::uniform_real_distribution<double> d(-0.8, 0.8);
  for (auto& lane : s.lanes) {
    for (auto& v : lane.h) v = d(rng);
    for (auto& v : lane.c) v = d(rng);
  }
  return s;
}

}  // namespace maneuver::testing
