#pragma once

// Behavior taxonomy, frame/session model, label <-> interval views and
// session-level dataset splits.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "maneuver/error.hpp"
#include "maneuver/tensor.hpp"

namespace maneuver {

using ClassId = int;

inline constexpr ClassId kBackground = 0;
inline constexpr int kNumClasses = 12;  // background + 11 behaviors
inline constexpr int kNumForeground = 11;
inline constexpr double kFrameRateHz = 3.0;
inline constexpr std::string_view kTaxonomyVersion = "tactical-11.v1";

struct BehaviorClass {
  ClassId id;
  std::string_view name;
};

inline constexpr std::array<BehaviorClass, kNumClasses> kTaxonomy{{
    {0, "background"},
    {1, "left lane change"},
    {2, "right lane change"},
    {3, "railroad passing"},
    {4, "left lane branch"},
    {5, "right lane branch"},
    {6, "left turn"},
    {7, "right turn"},
    {8, "U-turn"},
    {9, "intersection passing"},
    {10, "crosswalk passing"},
    {11, "merge"},
}};

constexpr bool is_valid_class(ClassId id) { return id >= 0 && id < kNumClasses; }
constexpr bool is_foreground(ClassId id) { return id >= 1 && id < kNumClasses; }

inline std::string_view class_name(ClassId id) {
  if (!is_valid_class(id)) {
    fail(ErrorKind::OutOfRange, "class id " + std::to_string(id));
  }
  return kTaxonomy[static_cast<std::size_t>(id)].name;
}

inline std::optional<ClassId> class_id(std::string_view name) {
  for (const auto& c : kTaxonomy) {
    if (c.name == name) return c.id;
  }
  return std::nullopt;
}

/// One synchronized tick of the 3 Hz clock.
struct FrameSample {
  std::int64_t tick_index = 0;
  std::map<std::string, Tensor<float>> features;
  std::vector<float> can;
  ClassId label = kBackground;

  friend bool operator==(const FrameSample&, const FrameSample&) = default;
};

struct Session {
  std::string session_id;
  double frame_rate_hz = kFrameRateHz;
  std::vector<FrameSample> frames;

  std::size_t size() const noexcept { return frames.size(); }
  std::vector<ClassId> labels() const {
    std::vector<ClassId> out;
    out.reserve(frames.size());
    for (const auto& f : frames) out.push_back(f.label);
    return out;
  }
  std::vector<std::string> stream_names() const {
    std::vector<std::string> names;
    if (!frames.empty()) {
      for (const auto& [name, _] : frames.front().features) names.push_back(name);
    }
    return names;
  }

  friend bool operator==(const Session&, const Session&) = default;
};

/// Checks the session-level invariants: non-empty, consecutive ticks,
/// uniform stream set/shapes, labels in range.
inline void validate_session(const Session& session) {
  if (session.frames.empty()) {
    fail(ErrorKind::InvalidConfig, "session '" + session.session_id + "' has no frames");
  }
  const auto& first = session.frames.front();
  for (std::size_t t = 0; t < session.frames.size(); ++t) {
    const auto& f = session.frames[t];
    if (f.tick_index != static_cast<std::int64_t>(t)) {
      fail(ErrorKind::InvalidConfig, "non-consecutive tick at position " + std::to_string(t));
    }
    if (!is_valid_class(f.label)) {
      fail(ErrorKind::OutOfRange, "label " + std::to_string(f.label) + " at tick " + std::to_string(t));
    }
    if (f.can.size() != first.can.size() || f.features.size() != first.features.size()) {
      fail(ErrorKind::ShapeMismatch, "stream layout changes at tick " + std::to_string(t));
    }
    for (const auto& [name, tensor] : f.features) {
      auto it = first.features.find(name);
      if (it == first.features.end() || it->second.shape() != tensor.shape()) {
        fail(ErrorKind::ShapeMismatch, "stream '" + name + "' differs at tick " + std::to_string(t));
      }
    }
  }
}

struct EventInterval {
  ClassId class_id = 1;
  std::int64_t start_tick = 0;  // inclusive
  std::int64_t end_tick = 0;    // inclusive

  std::int64_t length() const noexcept { return end_tick - start_tick + 1; }
  friend bool operator==(const EventInterval&, const EventInterval&) = default;
};

inline std::vector<EventInterval> labels_to_intervals(const std::vector<ClassId>& labels) {
  std::vector<EventInterval> out;
  std::size_t t = 0;
  while (t < labels.size()) {
    const ClassId c = labels[t];
    std::size_t end = t;
    while (end + 1 < labels.size() && labels[end + 1] == c) ++end;
    if (c != kBackground) {
      out.push_back({c, static_cast<std::int64_t>(t), static_cast<std::int64_t>(end)});
    }
    t = end + 1;
  }
  return out;
}

inline std::vector<EventInterval> labels_to_intervals(const Session& session) {
  return labels_to_intervals(session.labels());
}

inline std::vector<ClassId> intervals_to_labels(const std::vector<EventInterval>& intervals,
                                                std::int64_t length) {
  if (length < 0) fail(ErrorKind::OutOfRange, "negative length");
  std::vector<ClassId> labels(static_cast<std::size_t>(length), kBackground);
  std::vector<bool> claimed(labels.size(), false);
  for (const auto& iv : intervals) {
    if (!is_foreground(iv.class_id) || iv.start_tick < 0 || iv.end_tick >= length ||
        iv.start_tick > iv.end_tick) {
      fail(ErrorKind::OutOfRange, "interval [" + std::to_string(iv.start_tick) + ", " +
                                      std::to_string(iv.end_tick) + "] class " +
                                      std::to_string(iv.class_id));
    }
    for (auto t = iv.start_tick; t <= iv.end_tick; ++t) {
      const auto i = static_cast<std::size_t>(t);
      if (claimed[i]) {
        fail(ErrorKind::OverlappingIntervals, "tick " + std::to_string(t) + " claimed twice");
      }
      claimed[i] = true;
      labels[i] = iv.class_id;
    }
  }
  return labels;
}

struct DatasetSplit {
  std::vector<Session> train;
  std::vector<Session> eval;
};

/// Index-level split: which sessions go to eval. Deterministic in seed.
inline std::vector<bool> split_mask(std::size_t n_sessions, double eval_fraction,
                                    std::uint64_t seed) {
  if (n_sessions < 2) {
    fail(ErrorKind::TooFewSessions, "need at least 2 sessions, got " + std::to_string(n_sessions));
  }
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) {
    fail(ErrorKind::InvalidConfig, "eval_fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(n_sessions);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_eval = static_cast<std::size_t>(
      std::llround(eval_fraction * static_cast<double>(n_sessions)));
  n_eval = std::clamp<std::size_t>(n_eval, 1, n_sessions - 1);
  std::vector<bool> is_eval(n_sessions, false);
  for (std::size_t i = 0; i < n_eval; ++i) is_eval[order[i]] = true;
  return is_eval;
}

/// Whole-session split; input order is preserved within each side.
inline DatasetSplit split_dataset(const std::vector<Session>& sessions, double eval_fraction,
                                  std::uint64_t seed) {
  const auto is_eval = split_mask(sessions.size(), eval_fraction, seed);
  DatasetSplit split;
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    (is_eval[i] ? split.eval : split.train).push_back(sessions[i]);
  }
  return split;
}

}  // namespace maneuver
