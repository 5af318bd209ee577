#pragma once

// Checkpoint directory: checkpoint.json (model config, seed, step, parameter
// table) and params.bin (every parameter value as little-endian f64 in
// Model::parameters() order, then batchnorm running mean and variance).

#include <filesystem>
#include <string>

#include "maneuver/binary_io.hpp"
#include "maneuver/serialization.hpp"

namespace maneuver::train {

inline constexpr const char* kCheckpointManifest = "checkpoint.json";
inline constexpr const char* kCheckpointPayload = "params.bin";
inline constexpr const char* kCheckpointFormat = "maneuver-checkpoint.v1";

struct LoadedCheckpoint {
  model::Model model;
  std::int64_t step = 0;
};

inline void save_checkpoint(const model::Model& m, std::int64_t step, const std::filesystem::path& dir) {
  io::ensure_directory(dir);
  std::vector<std::uint8_t> payload;
  Json table = Json::array();
  std::size_t offset = 0;
  for (const auto* p : m.parameters()) {
    table.push_back({{"name", p->name}, {"shape", p->value.shape()}, {"offset", offset}});
    offset += p->size();
    for (double v : p->value.values()) io::append_le(payload, v);
  }
  const auto& bn = m.batchnorm();
  for (double v : bn.running_mean) io::append_le(payload, v);
  for (double v : bn.running_var) io::append_le(payload, v);

  Json manifest{{"format", kCheckpointFormat},
                {"model_config", to_json(m.config())},
                {"seed", m.seed()},
                {"step", step},
                {"parameters", table},
                {"running_stat_features", bn.features()},
                {"payload", kCheckpointPayload},
                {"payload_values", payload.size() / 8}};
  io::write_file(dir / kCheckpointPayload, payload);
  io::write_text(dir / kCheckpointManifest, manifest.dump(2) + "\n");
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / kCheckpointManifest;
  if (!std::filesystem::exists(manifest_path)) {
    fail(ErrorKind::IoFailure, "no checkpoint manifest in '" + dir.string() + "'");
  }
  Json manifest;
  try {
    manifest = Json::parse(io::read_text(manifest_path));
  } catch (const Json::exception& e) {
    fail(ErrorKind::ConfigMismatch, std::string("unreadable checkpoint manifest: ") + e.what());
  }
  if (manifest.value("format", "") != kCheckpointFormat) {
    fail(ErrorKind::ConfigMismatch, "unsupported checkpoint format");
  }
  const auto config = config_from_json<model::ModelConfig>(manifest.at("model_config"));
  LoadedCheckpoint out{model::build_model(config, manifest.at("seed").get<std::uint64_t>()),
                       manifest.at("step").get<std::int64_t>()};
  auto params = out.model.parameters();
  const auto& table = manifest.at("parameters");
  if (table.size() != params.size()) fail(ErrorKind::ConfigMismatch, "parameter table length");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (table[i].at("name").get<std::string>() != params[i]->name ||
        table[i].at("shape").get<Shape>() != params[i]->value.shape()) {
      fail(ErrorKind::ConfigMismatch, "parameter '" + params[i]->name + "' does not match config");
    }
  }
  auto& bn = out.model.batchnorm();
  const std::size_t expected = out.model.parameter_count() + 2 * bn.features();
  const auto payload = io::read_file(dir / manifest.value("payload", kCheckpointPayload));
  if (payload.size() != expected * 8 || manifest.value("payload_values", std::size_t{0}) != expected) {
    fail(ErrorKind::ConfigMismatch, "payload holds " + std::to_string(payload.size()) +
                                        " bytes, config implies " + std::to_string(expected * 8));
  }
  const std::uint8_t* p = payload.data();
  for (auto* param : params) {
    for (auto& v : param->value.values()) {
      v = io::read_le<double>(p);
      p += 8;
    }
  }
  for (auto& v : bn.running_mean) {
    v = io::read_le<double>(p);
    p += 8;
  }
  for (auto& v : bn.running_var) {
    v = io::read_le<double>(p);
    p += 8;
  }
  out.model.set_mode(nn::Mode::Eval);
  return out;
}

}  // namespace maneuver::train
