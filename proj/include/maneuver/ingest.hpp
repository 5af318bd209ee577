#pragma once

// On-disk session format and 3 Hz synchronization of raw streams.
//
// A session directory holds manifest.json plus one flat little-endian file
// per stream: feature streams and "can" as f32, frame-major and row-major
// within a frame; "labels" as one u8 class id per frame.

#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "maneuver/binary_io.hpp"
#include "maneuver/core.hpp"

namespace maneuver::ingest {

struct StreamSpec {
  std::string name;
  std::string dtype = "f32";
  Shape frame_shape;
  std::string file;

  std::size_t element_size() const { return dtype == "u8" ? 1 : 4; }
  std::size_t frame_bytes() const { return shape_volume(frame_shape) * element_size(); }
};

inline constexpr const char* kManifestName = "manifest.json";

inline nlohmann::json to_json(const StreamSpec& s) {
  return {{"name", s.name}, {"dtype", s.dtype}, {"frame_shape", s.frame_shape}, {"file", s.file}};
}

/// Stream specs in manifest order: feature streams by name, then can, then
/// labels.
inline std::vector<StreamSpec> stream_specs(const Session& session) {
  std::vector<StreamSpec> specs;
  const FrameSample* first = session.frames.empty() ? nullptr : &session.frames.front();
  if (first) {
    for (const auto& [name, tensor] : first->features) {
      specs.push_back({name, "f32", tensor.shape(), name + ".bin"});
    }
  }
  specs.push_back({"can", "f32", {first ? first->can.size() : 0}, "can.bin"});
  specs.push_back({"labels", "u8", {}, "labels.bin"});
  return specs;
}

inline void write_session(const Session& session, const std::filesystem::path& directory) {
  io::ensure_directory(directory);
  const auto specs = stream_specs(session);
  const std::size_t n = session.frames.size();
  for (const auto& spec : specs) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(n * spec.frame_bytes());
    for (const auto& f : session.frames) {
      if (spec.name == "labels") {
        io::append_le(bytes, static_cast<std::uint8_t>(f.label));
      } else if (spec.name == "can") {
        if (f.can.size() != spec.frame_shape[0]) {
          fail(ErrorKind::ShapeMismatch, "can width changes at tick " + std::to_string(f.tick_index));
        }
        for (float v : f.can) io::append_le(bytes, v);
      } else {
        const auto it = f.features.find(spec.name);
        if (it == f.features.end() || it->second.shape() != spec.frame_shape) {
          fail(ErrorKind::ShapeMismatch, "stream '" + spec.name + "' differs at tick " +
                                             std::to_string(f.tick_index));
        }
        for (float v : it->second.values()) io::append_le(bytes, v);
      }
    }
    io::write_file(directory / spec.file, bytes);
  }
  nlohmann::json manifest;
  manifest["session_id"] = session.session_id;
  manifest["frame_count"] = n;
  manifest["frame_rate_hz"] = session.frame_rate_hz;
  manifest["taxonomy_version"] = std::string(kTaxonomyVersion);
  manifest["streams"] = nlohmann::json::array();
  for (const auto& spec : specs) manifest["streams"].push_back(to_json(spec));
  io::write_text(directory / kManifestName, manifest.dump(2) + "\n");
}

inline bool is_canonical_rate(double hz) { return hz == kFrameRateHz; }

/// Inverse of write_session. Non-fatal findings (e.g. a frame rate other than
/// 3 Hz) are appended to `warnings` when given.
inline Session read_session(const std::filesystem::path& directory,
                            std::vector<std::string>* warnings = nullptr) {
  const auto manifest_path = directory / kManifestName;
  if (!std::filesystem::exists(manifest_path)) {
    fail(ErrorKind::MissingManifest, "no manifest in '" + directory.string() + "'");
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_text(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::MissingManifest, "unreadable manifest '" + manifest_path.string() + "': " + e.what());
  }

  Session s;
  std::vector<StreamSpec> specs;
  std::size_t n = 0;
  try {
    s.session_id = manifest.at("session_id").get<std::string>();
    n = manifest.at("frame_count").get<std::size_t>();
    s.frame_rate_hz = manifest.at("frame_rate_hz").get<double>();
    for (const auto& js : manifest.at("streams")) {
      specs.push_back({js.at("name").get<std::string>(), js.at("dtype").get<std::string>(),
                       js.at("frame_shape").get<Shape>(), js.at("file").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::MissingManifest, "malformed manifest '" + manifest_path.string() + "': " + e.what());
  }
  if (!is_canonical_rate(s.frame_rate_hz) && warnings) {
    warnings->push_back("session '" + s.session_id + "': non-canonical frame rate " +
                        std::to_string(s.frame_rate_hz) + " Hz (expected 3 Hz)");
  }
  if (manifest.contains("taxonomy_version") && warnings &&
      manifest["taxonomy_version"] != std::string(kTaxonomyVersion)) {
    warnings->push_back("session '" + s.session_id + "': taxonomy version " +
                        manifest["taxonomy_version"].dump());
  }

  s.frames.resize(n);
  for (std::size_t t = 0; t < n; ++t) s.frames[t].tick_index = static_cast<std::int64_t>(t);

  bool saw_can = false, saw_labels = false;
  for (const auto& spec : specs) {
    const bool is_labels = spec.name == "labels";
    if ((is_labels && spec.dtype != "u8") || (!is_labels && spec.dtype != "f32")) {
      fail(ErrorKind::UnknownDtype, "stream '" + spec.name + "' dtype '" + spec.dtype + "'");
    }
    const auto bytes = io::read_file(directory / spec.file);
    const std::size_t expected = n * spec.frame_bytes();
    if (bytes.size() != expected) {
      fail(ErrorKind::ShapeMismatch, "stream '" + spec.name + "': " + std::to_string(bytes.size()) +
                                         " bytes, manifest implies " + std::to_string(expected));
    }
    const std::uint8_t* p = bytes.data();
    if (is_labels) {
      saw_labels = true;
      for (std::size_t t = 0; t < n; ++t) {
        const int id = p[t];
        if (!is_valid_class(id)) fail(ErrorKind::OutOfRange, "label " + std::to_string(id));
        s.frames[t].label = id;
      }
    } else if (spec.name == "can") {
      saw_can = true;
      const std::size_t width = shape_volume(spec.frame_shape);
      for (std::size_t t = 0; t < n; ++t) {
        auto& can = s.frames[t].can;
        can.resize(width);
        for (std::size_t k = 0; k < width; ++k, p += 4) can[k] = io::read_le<float>(p);
      }
    } else {
      for (auto d : spec.frame_shape) {
        if (d == 0) fail(ErrorKind::ShapeMismatch, "stream '" + spec.name + "' has a zero dimension");
      }
      for (std::size_t t = 0; t < n; ++t) {
        Tensor<float> x(spec.frame_shape);
        for (std::size_t k = 0; k < x.size(); ++k, p += 4) x[k] = io::read_le<float>(p);
        s.frames[t].features.emplace(spec.name, std::move(x));
      }
    }
  }
  if (!saw_can || !saw_labels) {
    fail(ErrorKind::MissingManifest, "manifest lacks the can or labels stream");
  }
  return s;
}

/// Session directories beneath `root` (any directory holding a manifest),
/// sorted by path. `root` itself counts if it holds one.
inline std::vector<std::filesystem::path> find_session_dirs(const std::filesystem::path& root) {
  std::vector<std::filesystem::path> dirs;
  if (std::filesystem::exists(root / kManifestName)) dirs.push_back(root);
  if (!std::filesystem::is_directory(root)) return dirs;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
    if (entry.is_directory() && std::filesystem::exists(entry.path() / kManifestName)) {
      dirs.push_back(entry.path());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

inline std::vector<Session> read_sessions(const std::filesystem::path& root,
                                          std::vector<std::string>* warnings = nullptr) {
  std::vector<Session> out;
  for (const auto& dir : find_session_dirs(root)) out.push_back(read_session(dir, warnings));
  return out;
}

// ---------------------------------------------------------------------------
// Synchronization.

struct RawStream {
  std::vector<double> timestamps;  // seconds, strictly ascending
  std::vector<Tensor<float>> values;
};

// Slack when comparing a raw timestamp against a tick time, so that samples
// nominally on the tick (e.g. k/3 computed elsewhere) are not lost to
// rounding.
inline constexpr double kTickSlack = 1e-9;

/// For every output tick, the index of the latest sample at or before it.
inline std::vector<std::size_t> zero_order_hold_indices(const RawStream& stream, std::size_t ticks,
                                                        const std::string& name) {
  if (stream.timestamps.empty() || stream.values.size() != stream.timestamps.size()) {
    fail(ErrorKind::EmptyStream, "stream '" + name + "' has no samples");
  }
  for (std::size_t i = 1; i < stream.timestamps.size(); ++i) {
    if (!(stream.timestamps[i] > stream.timestamps[i - 1])) {
      fail(ErrorKind::InvalidConfig, "stream '" + name + "' timestamps not strictly ascending");
    }
  }
  if (stream.timestamps.front() > kTickSlack) {
    fail(ErrorKind::CoverageGap, "stream '" + name + "' has no sample at or before t=0");
  }
  std::vector<std::size_t> idx(ticks);
  std::size_t j = 0;
  for (std::size_t k = 0; k < ticks; ++k) {
    const double t = static_cast<double>(k) / kFrameRateHz;
    while (j + 1 < stream.timestamps.size() && stream.timestamps[j + 1] <= t + kTickSlack) ++j;
    idx[k] = j;
  }
  return idx;
}

/// Zero-order-hold resampling onto t = k/3, k = 0..floor(3*duration)-1.
/// A stream named "can" becomes the CAN vector; every other stream becomes a
/// named feature tensor. The label stream holds scalar class ids.
inline Session resample_to_3hz(const std::map<std::string, RawStream>& streams,
                               const RawStream& labels, double duration_s,
                               std::string session_id = "resampled") {
  const auto ticks = static_cast<std::size_t>(std::floor(kFrameRateHz * duration_s + kTickSlack));
  Session s;
  s.session_id = std::move(session_id);
  s.frame_rate_hz = kFrameRateHz;
  s.frames.resize(ticks);
  for (std::size_t k = 0; k < ticks; ++k) s.frames[k].tick_index = static_cast<std::int64_t>(k);

  const auto label_idx = zero_order_hold_indices(labels, ticks, "labels");
  for (std::size_t k = 0; k < ticks; ++k) {
    const auto& v = labels.values[label_idx[k]];
    if (v.size() != 1) fail(ErrorKind::ShapeMismatch, "label samples must be scalars");
    const auto id = static_cast<int>(std::lround(v[0]));
    if (!is_valid_class(id)) fail(ErrorKind::OutOfRange, "label " + std::to_string(id));
    s.frames[k].label = id;
  }
  for (const auto& [name, raw] : streams) {
    const auto idx = zero_order_hold_indices(raw, ticks, name);
    const Shape shape = raw.values.front().shape();
    for (const auto& v : raw.values) {
      if (v.shape() != shape) fail(ErrorKind::ShapeMismatch, "stream '" + name + "' changes shape");
    }
    for (std::size_t k = 0; k < ticks; ++k) {
      const auto& v = raw.values[idx[k]];
      if (name == "can") {
        s.frames[k].can = v.values();
      } else {
        s.frames[k].features.emplace(name, v);
      }
    }
  }
  return s;
}

}  // namespace maneuver::ingest
