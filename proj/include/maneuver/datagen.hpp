#pragma once

// Synthetic untrimmed sessions with sparse, long-tailed foreground events.
//
// Every event plants a (class, variant)-specific pattern into each feature
// stream. Patterns within a stream are mutually orthogonal. With
// cross_modal on, each stream only sees a coarse group of the class: depth
// (and image) see the row of the class on a 4x3 grid, seg (and recon) see
// its column, so a class is pinned down only by combining two streams.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "maneuver/core.hpp"

namespace maneuver::datagen {

struct GeneratorConfig {
  std::uint64_t seed = 0;
  int n_sessions = 10;
  int frames_per_session = 1000;
  double foreground_fraction_target = 0.15;
  double zipf_exponent = 1.0;
  int intra_class_variants = 3;
  std::map<std::string, Shape> stream_shapes{
      {"image", {8, 8, 16}}, {"depth", {8, 8, 8}}, {"seg", {8, 8, 8}}};
  int can_dim = 8;
  double noise_sigma = 0.5;
  bool cross_modal = true;
  // Mean foreground event length in ticks (4 s at 3 Hz).
  double mean_event_frames = 12.0;
  // Per-element RMS of a planted pattern.
  double signal_amplitude = 1.0;
};

enum class Grouping { Row, Column };

inline constexpr int kGridColumns = 3;
inline constexpr int kGridRows = (kNumForeground + kGridColumns - 1) / kGridColumns;

inline int class_row(ClassId c) { return (c - 1) / kGridColumns; }
inline int class_column(ClassId c) { return (c - 1) % kGridColumns; }

/// Which coarse view of the class a stream carries under cross_modal.
/// Named streams are fixed; any other stream alternates by its position
/// among the unnamed ones.
inline Grouping stream_grouping(const std::string& name,
                                const std::map<std::string, Shape>& streams) {
  if (name == "depth" || name == "image") return Grouping::Row;
  if (name == "seg" || name == "recon") return Grouping::Column;
  int k = 0;
  for (const auto& [other, _] : streams) {
    if (other == name) break;
    if (other != "depth" && other != "image" && other != "seg" && other != "recon") ++k;
  }
  return k % 2 == 0 ? Grouping::Row : Grouping::Column;
}

inline void validate(const GeneratorConfig& c) {
  auto bad = [](const std::string& what) { fail(ErrorKind::InvalidConfig, what); };
  if (c.n_sessions < 1) bad("n_sessions must be >= 1");
  if (c.frames_per_session < 1) bad("frames_per_session must be >= 1");
  if (!(c.foreground_fraction_target > 0.0 && c.foreground_fraction_target < 1.0)) {
    bad("foreground_fraction_target must lie in (0, 1)");
  }
  if (!(c.zipf_exponent >= 0.0)) bad("zipf_exponent must be >= 0");
  if (c.intra_class_variants < 1) bad("intra_class_variants must be >= 1");
  if (c.can_dim < 1) bad("can_dim must be >= 1");
  if (!(c.noise_sigma >= 0.0)) bad("noise_sigma must be >= 0");
  if (!(c.mean_event_frames >= 1.0)) bad("mean_event_frames must be >= 1");
  if (!(c.signal_amplitude > 0.0)) bad("signal_amplitude must be > 0");
  for (const auto& [name, shape] : c.stream_shapes) {
    if (name.empty() || name == "can" || name == "labels") bad("reserved stream name '" + name + "'");
    if (shape.size() != 3) bad("stream '" + name + "' must be H x W x C");
    for (auto d : shape) {
      if (d == 0) bad("stream '" + name + "' has a zero dimension");
    }
  }
}

/// Orthogonal planted patterns for every stream, indexed by code.
struct SignatureBank {
  struct Stream {
    Shape shape;
    Grouping grouping = Grouping::Row;
    int n_codes = 0;
    std::vector<std::vector<double>> patterns;  // [code][element]
  };
  std::map<std::string, Stream> streams;
  int variants = 1;
  bool cross_modal = true;

  // Pattern code for an event of `c`/`variant` (variant in 1..variants).
  int code(const Stream& s, ClassId c, int variant) const {
    int group = c - 1;
    if (cross_modal) group = s.grouping == Grouping::Row ? class_row(c) : class_column(c);
    return group * variants + (variant - 1);
  }
  const std::vector<double>& pattern(const std::string& stream, ClassId c, int variant) const {
    const auto& s = streams.at(stream);
    return s.patterns[static_cast<std::size_t>(code(s, c, variant))];
  }
};

namespace detail {

inline std::mt19937_64 seeded_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

inline constexpr std::uint64_t kSignatureTag = 0x5167;
inline constexpr std::uint64_t kSessionTag = 0x5e55;
inline constexpr std::uint64_t kNoiseTag = 0x7015e;
inline constexpr std::uint64_t kAssignTag = 0xa551;

// Modified Gram-Schmidt on Gaussian draws, rescaled to the requested RMS.
inline std::vector<std::vector<double>> orthogonal_patterns(int count, std::size_t dim,
                                                            double rms, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<std::size_t>(count));
  const double target_norm = rms * std::sqrt(static_cast<double>(dim));
  while (static_cast<int>(out.size()) < count) {
    std::vector<double> v(dim);
    for (auto& x : v) x = gauss(rng);
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& u : out) {
        double dot = 0.0, uu = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
          dot += v[i] * u[i];
          uu += u[i] * u[i];
        }
        for (std::size_t i = 0; i < dim; ++i) v[i] -= dot / uu * u[i];
      }
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-6) continue;
    for (auto& x : v) x *= target_norm / norm;
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace detail

inline SignatureBank make_signatures(const GeneratorConfig& config) {
  validate(config);
  SignatureBank bank;
  bank.variants = config.intra_class_variants;
  bank.cross_modal = config.cross_modal;
  std::uint64_t index = 0;
  for (const auto& [name, shape] : config.stream_shapes) {
    SignatureBank::Stream s;
    s.shape = shape;
    s.grouping = stream_grouping(name, config.stream_shapes);
    int groups = kNumForeground;
    if (config.cross_modal) groups = s.grouping == Grouping::Row ? kGridRows : kGridColumns;
    s.n_codes = groups * config.intra_class_variants;
    const std::size_t dim = shape_volume(shape);
    if (static_cast<std::size_t>(s.n_codes) > dim) {
      fail(ErrorKind::InvalidConfig, "stream '" + name + "' has " + std::to_string(dim) +
                                         " elements, fewer than its " +
                                         std::to_string(s.n_codes) + " patterns");
    }
    auto rng = detail::seeded_rng(config.seed, detail::kSignatureTag, index++);
    s.patterns = detail::orthogonal_patterns(s.n_codes, dim, config.signal_amplitude, rng);
    bank.streams.emplace(name, std::move(s));
  }
  return bank;
}

/// Unnormalized Zipf weights over ids 1..11; weight of rank k is k^-s.
inline std::array<double, kNumForeground> zipf_weights(double exponent) {
  std::array<double, kNumForeground> w{};
  for (int k = 0; k < kNumForeground; ++k) w[static_cast<std::size_t>(k)] = std::pow(k + 1.0, -exponent);
  return w;
}

struct PlannedEvent {
  EventInterval interval;
  int variant = 1;
};

/// Alternating background/foreground timeline for one session with classes
/// not yet assigned (class_id 0). Lengths are shifted geometric: a floor of
/// one third of the mean plus a geometric remainder, with means set so the
/// foreground takes the target fraction of frames in expectation.
inline std::vector<PlannedEvent> plan_timeline(const GeneratorConfig& c, std::mt19937_64& rng) {
  const double fg_mean = c.mean_event_frames;
  const double bg_mean =
      fg_mean * (1.0 - c.foreground_fraction_target) / c.foreground_fraction_target;
  auto length_sampler = [](double mean) {
    const double floor_len = std::max(1.0, std::floor(mean / 3.0));
    const double rest = std::max(0.0, mean - floor_len);
    return std::pair{static_cast<std::int64_t>(floor_len), std::geometric_distribution<std::int64_t>(1.0 / (1.0 + rest))};
  };
  auto [fg_floor, fg_geom] = length_sampler(fg_mean);
  auto [bg_floor, bg_geom] = length_sampler(bg_mean);
  std::uniform_int_distribution<int> variant_dist(1, c.intra_class_variants);

  std::vector<PlannedEvent> events;
  const std::int64_t n = c.frames_per_session;
  std::int64_t t = 0;
  while (t < n) {
    t += bg_floor + bg_geom(rng);
    if (t >= n) break;
    const std::int64_t len = fg_floor + fg_geom(rng);
    const int variant = variant_dist(rng);
    const std::int64_t end = std::min(n - 1, t + len - 1);
    events.push_back({{kBackground, t, end}, variant});
    t = end + 1;
  }
  return events;
}

/// Zipf frame quotas over the whole dataset: foreground intervals, visited in
/// a seeded random order, go to the class furthest below its quota. Ids are
/// then ranked by realized frame total so counts never increase with rank.
inline void assign_classes(const GeneratorConfig& c, std::vector<std::vector<PlannedEvent>>& plans) {
  const auto weights = zipf_weights(c.zipf_exponent);
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  std::vector<std::pair<std::size_t, std::size_t>> order;
  double total = 0.0;
  for (std::size_t s = 0; s < plans.size(); ++s) {
    for (std::size_t e = 0; e < plans[s].size(); ++e) {
      order.emplace_back(s, e);
      total += static_cast<double>(plans[s][e].interval.length());
    }
  }
  auto rng = detail::seeded_rng(c.seed, detail::kAssignTag, 0);
  std::shuffle(order.begin(), order.end(), rng);

  std::array<double, kNumForeground> deficit{};
  for (int k = 0; k < kNumForeground; ++k) deficit[static_cast<std::size_t>(k)] = total * weights[static_cast<std::size_t>(k)] / wsum;
  std::array<std::int64_t, kNumForeground> assigned{};
  for (const auto& [s, e] : order) {
    auto& ev = plans[s][e];
    const auto k = static_cast<std::size_t>(std::max_element(deficit.begin(), deficit.end()) - deficit.begin());
    ev.interval.class_id = static_cast<ClassId>(k + 1);
    deficit[k] -= static_cast<double>(ev.interval.length());
    assigned[k] += ev.interval.length();
  }

  std::array<int, kNumForeground> by_total{};
  std::iota(by_total.begin(), by_total.end(), 0);
  std::stable_sort(by_total.begin(), by_total.end(), [&](int a, int b) {
    return assigned[static_cast<std::size_t>(a)] > assigned[static_cast<std::size_t>(b)];
  });
  std::array<ClassId, kNumForeground> relabel{};
  for (int r = 0; r < kNumForeground; ++r) relabel[static_cast<std::size_t>(by_total[static_cast<std::size_t>(r)])] = r + 1;
  for (auto& plan : plans)
    for (auto& ev : plan) ev.interval.class_id = relabel[static_cast<std::size_t>(ev.interval.class_id - 1)];
}

/// Event plans for every session of the dataset.
inline std::vector<std::vector<PlannedEvent>> plan_dataset(const GeneratorConfig& c) {
  validate(c);
  std::vector<std::vector<PlannedEvent>> plans;
  for (int i = 0; i < c.n_sessions; ++i) {
    auto rng = detail::seeded_rng(c.seed, detail::kSessionTag, static_cast<std::uint64_t>(i));
    plans.push_back(plan_timeline(c, rng));
  }
  assign_classes(c, plans);
  return plans;
}

namespace detail {

// Class-conditioned lateral profile, used only without cross_modal.
inline double lateral_profile(ClassId c, double phase) {
  switch (c) {
    case 1: return 0.75 * std::sin(std::numbers::pi * phase);
    case 2: return -0.75 * std::sin(std::numbers::pi * phase);
    case 6: return phase;
    case 7: return -phase;
    case 8: return 2.0 * phase;
    default: return 0.0;
  }
}

}  // namespace detail

inline Session generate_session(const GeneratorConfig& c, const SignatureBank& bank, int session_index,
                                const std::vector<PlannedEvent>& events) {
  auto rng = detail::seeded_rng(c.seed, detail::kNoiseTag, static_cast<std::uint64_t>(session_index));
  std::normal_distribution<double> noise(0.0, 1.0);
  const double sigma = c.noise_sigma;

  Session s;
  char id[32];
  std::snprintf(id, sizeof id, "session_%04d", session_index);
  s.session_id = id;
  s.frame_rate_hz = kFrameRateHz;
  s.frames.resize(static_cast<std::size_t>(c.frames_per_session));

  std::vector<int> variant_at(s.frames.size(), 0);
  std::vector<double> phase_at(s.frames.size(), 0.0);
  std::vector<double> bump_at(s.frames.size(), 0.0);
  for (const auto& ev : events) {
    const auto len = static_cast<double>(ev.interval.length());
    for (auto t = ev.interval.start_tick; t <= ev.interval.end_tick; ++t) {
      const auto i = static_cast<std::size_t>(t);
      const double k = static_cast<double>(t - ev.interval.start_tick);
      s.frames[i].label = ev.interval.class_id;
      variant_at[i] = ev.variant;
      phase_at[i] = (k + 1.0) / len;
      bump_at[i] = std::sin(std::numbers::pi * (k + 0.5) / len);
    }
  }

  for (std::size_t t = 0; t < s.frames.size(); ++t) {
    FrameSample& f = s.frames[t];
    f.tick_index = static_cast<std::int64_t>(t);
    for (const auto& [name, shape] : c.stream_shapes) {
      Tensor<float> x(shape);
      const std::vector<double>* pat =
          f.label == kBackground ? nullptr : &bank.pattern(name, f.label, variant_at[t]);
      for (std::size_t e = 0; e < x.size(); ++e) {
        const double signal = pat ? (*pat)[e] : 0.0;
        x[e] = static_cast<float>(signal + sigma * noise(rng));
      }
      f.features.emplace(name, std::move(x));
    }
    f.can.resize(static_cast<std::size_t>(c.can_dim));
    const bool fg = f.label != kBackground;
    for (int k = 0; k < c.can_dim; ++k) {
      double v = 0.0;
      if (fg) {
        if (k == 0) v = -bump_at[t];
        if (k == 1) v = (variant_at[t] % 2 == 1 ? 1.0 : -1.0) * phase_at[t];
        if (k == 2 && !c.cross_modal) v = detail::lateral_profile(f.label, phase_at[t]);
      }
      f.can[static_cast<std::size_t>(k)] = static_cast<float>(v + sigma * noise(rng));
    }
  }
  return s;
}

inline Session generate_session(const GeneratorConfig& c, const SignatureBank& bank, int session_index) {
  if (session_index < 0 || session_index >= c.n_sessions) fail(ErrorKind::OutOfRange, "session index out of range");
  return generate_session(c, bank, session_index, plan_dataset(c)[static_cast<std::size_t>(session_index)]);
}

inline std::vector<Session> generate_dataset(const GeneratorConfig& config) {
  const auto bank = make_signatures(config);
  const auto plans = plan_dataset(config);
  std::vector<Session> sessions;
  sessions.reserve(static_cast<std::size_t>(config.n_sessions));
  for (int i = 0; i < config.n_sessions; ++i) {
    sessions.push_back(generate_session(config, bank, i, plans[static_cast<std::size_t>(i)]));
  }
  return sessions;
}

/// Frame counts per class id (0..11, all keys present).
inline std::map<ClassId, std::size_t> class_frequency_report(const std::vector<Session>& sessions) {
  std::map<ClassId, std::size_t> counts;
  for (ClassId c = 0; c < kNumClasses; ++c) counts[c] = 0;
  for (const auto& s : sessions) {
    for (const auto& f : s.frames) ++counts[f.label];
  }
  return counts;
}

inline double foreground_fraction(const std::vector<Session>& sessions) {
  std::size_t total = 0, fg = 0;
  for (const auto& s : sessions) {
    for (const auto& f : s.frames) {
      ++total;
      fg += f.label != kBackground ? 1 : 0;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(fg) / static_cast<double>(total);
}

}  // namespace maneuver::datagen
