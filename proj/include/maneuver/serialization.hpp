#pragma once

// JSON forms of the configuration types, shared by checkpoints, run
// directories and --config files. Readers accept partial objects: missing
// keys keep their defaults.

#include <string>

#include "json.hpp"
#include "maneuver/datagen.hpp"
#include "maneuver/model.hpp"
#include "maneuver/train.hpp"

namespace maneuver {

using Json = nlohmann::json;

namespace detail {
template <typename T>
void read_key(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}
}  // namespace detail

inline Json to_json(const datagen::GeneratorConfig& c) {
  Json streams = Json::object();
  for (const auto& [name, shape] : c.stream_shapes) streams[name] = shape;
  return {{"seed", c.seed},
          {"n_sessions", c.n_sessions},
          {"frames_per_session", c.frames_per_session},
          {"foreground_fraction_target", c.foreground_fraction_target},
          {"zipf_exponent", c.zipf_exponent},
          {"intra_class_variants", c.intra_class_variants},
          {"stream_shapes", streams},
          {"can_dim", c.can_dim},
          {"noise_sigma", c.noise_sigma},
          {"cross_modal", c.cross_modal},
          {"mean_event_frames", c.mean_event_frames},
          {"signal_amplitude", c.signal_amplitude}};
}

inline void from_json(const Json& j, datagen::GeneratorConfig& c) {
  using detail::read_key;
  read_key(j, "seed", c.seed);
  read_key(j, "n_sessions", c.n_sessions);
  read_key(j, "frames_per_session", c.frames_per_session);
  read_key(j, "foreground_fraction_target", c.foreground_fraction_target);
  read_key(j, "zipf_exponent", c.zipf_exponent);
  read_key(j, "intra_class_variants", c.intra_class_variants);
  if (j.contains("stream_shapes")) {
    c.stream_shapes.clear();
    for (const auto& [name, shape] : j.at("stream_shapes").items()) c.stream_shapes[name] = shape.get<Shape>();
  }
  read_key(j, "can_dim", c.can_dim);
  read_key(j, "noise_sigma", c.noise_sigma);
  read_key(j, "cross_modal", c.cross_modal);
  read_key(j, "mean_event_frames", c.mean_event_frames);
  read_key(j, "signal_amplitude", c.signal_amplitude);
}

inline Json to_json(const model::ModelConfig& c) {
  Json streams = Json::object();
  for (const auto& [name, shape] : c.stream_shapes) streams[name] = shape;
  return {{"variant", std::string(model::variant_name(c.variant))},
          {"reduce_channels", c.reduce_channels},
          {"stream_shapes", streams},
          {"can_dim", c.can_dim},
          {"can_feature_dim", c.can_feature_dim},
          {"hidden_size", c.hidden_size},
          {"bn_momentum", c.bn_momentum},
          {"bn_eps", c.bn_eps}};
}

inline void from_json(const Json& j, model::ModelConfig& c) {
  using detail::read_key;
  if (j.contains("variant")) {
    const auto name = j.at("variant").get<std::string>();
    const auto v = model::parse_variant(name);
    if (!v) fail(ErrorKind::InvalidConfig, "unknown variant '" + name + "'");
    c.variant = *v;
  }
  if (j.contains("reduce_channels")) c.reduce_channels = j.at("reduce_channels").get<std::map<std::string, int>>();
  if (j.contains("stream_shapes")) {
    c.stream_shapes.clear();
    for (const auto& [name, shape] : j.at("stream_shapes").items()) c.stream_shapes[name] = shape.get<Shape>();
  }
  read_key(j, "can_dim", c.can_dim);
  read_key(j, "can_feature_dim", c.can_feature_dim);
  read_key(j, "hidden_size", c.hidden_size);
  read_key(j, "bn_momentum", c.bn_momentum);
  read_key(j, "bn_eps", c.bn_eps);
}

inline Json to_json(const train::TrainConfig& c) {
  return {{"segment_length", c.segment_length},
          {"n_lanes", c.n_lanes},
          {"epochs", c.epochs},
          {"lr", c.optimizer.lr},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"adam_eps", c.optimizer.eps},
          {"gamma", c.loss.gamma},
          {"alpha_background", c.loss.alpha_background},
          {"alpha_foreground", c.loss.alpha_foreground},
          {"seed", c.seed},
          {"state_reset_on_session_boundary", c.state_reset_on_session_boundary}};
}

inline void from_json(const Json& j, train::TrainConfig& c) {
  using detail::read_key;
  read_key(j, "segment_length", c.segment_length);
  read_key(j, "n_lanes", c.n_lanes);
  read_key(j, "epochs", c.epochs);
  read_key(j, "lr", c.optimizer.lr);
  read_key(j, "beta1", c.optimizer.beta1);
  read_key(j, "beta2", c.optimizer.beta2);
  read_key(j, "adam_eps", c.optimizer.eps);
  read_key(j, "gamma", c.loss.gamma);
  read_key(j, "alpha_background", c.loss.alpha_background);
  read_key(j, "alpha_foreground", c.loss.alpha_foreground);
  read_key(j, "seed", c.seed);
  read_key(j, "state_reset_on_session_boundary", c.state_reset_on_session_boundary);
}

template <typename Config>
Config config_from_json(const Json& j) {
  Config c;
  from_json(j, c);
  return c;
}

}  // namespace maneuver
