#pragma once

// Stateful training over untrimmed sessions.
//
// Each lane walks through its sessions in order, T ticks per step. The LSTM
// state at the end of a step seeds the next step of the same lane;
// backpropagation stops at the step boundary.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "maneuver/model.hpp"

namespace maneuver::train {

struct TrainConfig {
  int segment_length = 90;  // 30 s at 3 Hz
  int n_lanes = 4;
  int epochs = 1;
  nn::AdamConfig optimizer{};
  model::LossConfig loss{};
  std::uint64_t seed = 0;
  bool state_reset_on_session_boundary = true;
};

inline void validate(const TrainConfig& c) {
  if (c.segment_length < 1) fail(ErrorKind::InvalidConfig, "segment_length must be >= 1");
  if (c.n_lanes < 1) fail(ErrorKind::InvalidConfig, "n_lanes must be >= 1");
  if (c.epochs < 0) fail(ErrorKind::InvalidConfig, "epochs must be >= 0");
  if (!(c.optimizer.lr >= 0.0)) fail(ErrorKind::InvalidConfig, "lr must be >= 0");
  if (!(c.loss.gamma >= 0.0)) fail(ErrorKind::InvalidConfig, "focal gamma must be >= 0");
}

struct BatchSlice {
  std::size_t session = 0;  // index into the session list the plan was made from
  std::string session_id;
  std::int64_t start_tick = 0;
  std::int64_t length = 0;
  bool starts_session = false;

  friend bool operator==(const BatchSlice&, const BatchSlice&) = default;
};

struct BatchPlan {
  std::size_t segment_length = 0;
  std::vector<std::vector<BatchSlice>> lanes;

  std::size_t steps() const {
    std::size_t n = 0;
    for (const auto& lane : lanes) n = std::max(n, lane.size());
    return n;
  }
  friend bool operator==(const BatchPlan&, const BatchPlan&) = default;
};

/// Sessions are shuffled by `seed` and dealt round-robin to lanes; each
/// lane then cuts its sessions into consecutive T-tick slices (the last
/// slice of a session may be short).
inline BatchPlan make_batch_plan(const std::vector<Session>& sessions, std::size_t n_lanes,
                                 std::size_t segment_length, std::uint64_t seed) {
  if (sessions.empty()) fail(ErrorKind::NoSessions, "batch plan needs at least one session");
  if (n_lanes < 1 || segment_length < 1) {
    fail(ErrorKind::InvalidConfig, "n_lanes and segment length must be >= 1");
  }
  std::vector<std::size_t> order(sessions.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  BatchPlan plan;
  plan.segment_length = segment_length;
  plan.lanes.resize(n_lanes);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t si = order[i];
    auto& lane = plan.lanes[i % n_lanes];
    const auto n = static_cast<std::int64_t>(sessions[si].size());
    const auto T = static_cast<std::int64_t>(segment_length);
    for (std::int64_t start = 0; start < n; start += T) {
      lane.push_back({si, sessions[si].session_id, start, std::min(T, n - start), start == 0});
    }
  }
  return plan;
}

/// The lanes x T batch for step `k` of `plan`.
inline model::SegmentBatch batch_for_step(const BatchPlan& plan, const std::vector<Session>& sessions,
                                          std::size_t k) {
  model::SegmentBatch batch(plan.lanes.size(), plan.segment_length);
  for (std::size_t l = 0; l < plan.lanes.size(); ++l) {
    if (k >= plan.lanes[l].size()) continue;
    const auto& slice = plan.lanes[l][k];
    const auto& frames = sessions.at(slice.session).frames;
    for (std::int64_t t = 0; t < slice.length; ++t) {
      batch.set(l, static_cast<std::size_t>(t), &frames.at(static_cast<std::size_t>(slice.start_tick + t)));
    }
  }
  return batch;
}

struct LogEntry {
  std::int64_t step = 0;
  int epoch = 0;
  double mean_loss = 0.0;
  double fg_fraction = 0.0;
};

inline std::string format_log_line(const LogEntry& e) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%lld,%d,%.9g,%.6f", static_cast<long long>(e.step), e.epoch,
                e.mean_loss, e.fg_fraction);
  return buf;
}

inline constexpr const char* kLogHeader = "step,epoch,mean_loss,fg_fraction";

struct TrainingLog {
  std::vector<LogEntry> entries;

  std::vector<double> epoch_mean_losses() const {
    std::vector<double> sums, counts;
    for (const auto& e : entries) {
      const auto ep = static_cast<std::size_t>(e.epoch);
      if (sums.size() <= ep) {
        sums.resize(ep + 1, 0.0);
        counts.resize(ep + 1, 0.0);
      }
      sums[ep] += e.mean_loss;
      counts[ep] += 1.0;
    }
    for (std::size_t i = 0; i < sums.size(); ++i) sums[i] = counts[i] > 0 ? sums[i] / counts[i] : 0.0;
    return sums;
  }

  std::string to_text() const {
    std::string out = std::string(kLogHeader) + "\n";
    for (const auto& e : entries) out += format_log_line(e) + "\n";
    return out;
  }
};

inline std::vector<LogEntry> parse_log(const std::string& text) {
  std::vector<LogEntry> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty() || line == kLogHeader) continue;
    LogEntry e;
    long long step = 0;
    if (std::sscanf(line.c_str(), "%lld,%d,%lf,%lf", &step, &e.epoch, &e.mean_loss, &e.fg_fraction) != 4) {
      fail(ErrorKind::InvalidConfig, "malformed log line '" + line + "'");
    }
    e.step = step;
    out.push_back(e);
  }
  return out;
}

using StepCallback = std::function<void(const LogEntry&)>;

/// Runs config.epochs passes over `plan`. States reset at the start of every
/// epoch and, when configured, whenever a lane enters a new session. The
/// model is left in eval mode.
inline TrainingLog train(model::Model& model, const std::vector<Session>& sessions,
                         const BatchPlan& plan, const TrainConfig& config,
                         const StepCallback& on_step = {}) {
  validate(config);
  model::check_streams(model, sessions);
  TrainingLog log;
  std::vector<nn::AdamMoments<model::Real>> moments;
  auto params = model.parameters();
  model.zero_grad();
  model.set_mode(nn::Mode::Train);
  std::int64_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    auto state = model.init_state(plan.lanes.size());
    for (std::size_t k = 0; k < plan.steps(); ++k) {
      for (std::size_t l = 0; l < plan.lanes.size(); ++l) {
        if (k < plan.lanes[l].size() && plan.lanes[l][k].starts_session &&
            config.state_reset_on_session_boundary) {
          state.reset_lane(l);
        }
      }
      const auto batch = batch_for_step(plan, sessions, k);
      auto fwd = model.forward_segment(batch, state);
      const auto targets = batch.targets();
      const double loss = model.backward_segment(fwd.cache, targets, config.loss);
      ++step;
      nn::adam_step(params, moments, config.optimizer, step);
      state = std::move(fwd.state);

      std::size_t valid = 0, fg = 0;
      for (std::size_t i = 0; i < batch.frames.size(); ++i) {
        if (!batch.valid[i]) continue;
        ++valid;
        fg += batch.frames[i]->label != kBackground ? 1 : 0;
      }
      LogEntry e{step, epoch, loss, valid ? static_cast<double>(fg) / static_cast<double>(valid) : 0.0};
      log.entries.push_back(e);
      if (on_step) on_step(e);
    }
  }
  model.set_mode(nn::Mode::Eval);
  return log;
}

/// Frozen pass over the plan: eval-mode forwards with carried state and no
/// updates. Returns per-session [T x 12] logits, indexed like `sessions`.
inline std::vector<Tensor<model::Real>> replay_plan(model::Model& model,
                                                    const std::vector<Session>& sessions,
                                                    const BatchPlan& plan,
                                                    bool state_reset_on_session_boundary = true) {
  const nn::Mode saved = model.mode();
  model.set_mode(nn::Mode::Eval);
  std::vector<Tensor<model::Real>> out(sessions.size());
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    out[i] = Tensor<model::Real>({sessions[i].size(), static_cast<std::size_t>(kNumClasses)});
  }
  auto state = model.init_state(plan.lanes.size());
  const std::size_t T = plan.segment_length;
  for (std::size_t k = 0; k < plan.steps(); ++k) {
    for (std::size_t l = 0; l < plan.lanes.size(); ++l) {
      if (k < plan.lanes[l].size() && plan.lanes[l][k].starts_session &&
          state_reset_on_session_boundary) {
        state.reset_lane(l);
      }
    }
    const auto batch = batch_for_step(plan, sessions, k);
    auto fwd = model.forward_segment(batch, state, false);
    state = std::move(fwd.state);
    for (std::size_t l = 0; l < plan.lanes.size(); ++l) {
      if (k >= plan.lanes[l].size()) continue;
      const auto& slice = plan.lanes[l][k];
      for (std::int64_t t = 0; t < slice.length; ++t) {
        const auto* src = fwd.logits.data() + (l * T + static_cast<std::size_t>(t)) * kNumClasses;
        auto* dst = out[slice.session].data() + static_cast<std::size_t>(slice.start_tick + t) * kNumClasses;
        std::copy(src, src + kNumClasses, dst);
      }
    }
  }
  model.set_mode(saved);
  return out;
}

}  // namespace maneuver::train
