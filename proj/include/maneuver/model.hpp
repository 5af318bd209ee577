#pragma once

// Architecture variants over named feature streams:
//
//   each feature stream --conv1x1--> reduce_channels --flatten--+
//   can vector --dense--> can_feature_dim ----------------------+--> concat
//   concat --batchnorm--> lstm --dense--> 12 logits
//
// Batch normalization runs once on the fused vector, across the lanes of a
// training batch at each tick.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "maneuver/core.hpp"
#include "maneuver/nn.hpp"

namespace maneuver::model {

using Real = double;
using ParamT = Param<Real>;

enum class Variant { BaselineImageCan, ReconFeatCan, DepthCan, SegCan, FusionAll };

inline constexpr std::array<Variant, 5> kAllVariants{Variant::BaselineImageCan, Variant::ReconFeatCan,
                                                     Variant::DepthCan, Variant::SegCan,
                                                     Variant::FusionAll};

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::BaselineImageCan: return "baseline-image-can";
    case Variant::ReconFeatCan: return "recon-can";
    case Variant::DepthCan: return "depth-can";
    case Variant::SegCan: return "seg-can";
    case Variant::FusionAll: return "fusion-all";
  }
  return "unknown";
}

// Short column heading for report tables.
inline std::string_view variant_heading(Variant v) {
  switch (v) {
    case Variant::BaselineImageCan: return "Image+CAN";
    case Variant::ReconFeatCan: return "Recon+CAN";
    case Variant::DepthCan: return "Depth+CAN";
    case Variant::SegCan: return "Seg+CAN";
    case Variant::FusionAll: return "Depth+Seg+CAN";
  }
  return "unknown";
}

inline std::optional<Variant> parse_variant(std::string_view name) {
  for (auto v : kAllVariants) {
    if (variant_name(v) == name) return v;
  }
  return std::nullopt;
}

/// Feature streams a variant consumes, in fusion order. CAN is implied.
inline std::vector<std::string> variant_streams(Variant v) {
  switch (v) {
    case Variant::BaselineImageCan: return {"image"};
    case Variant::ReconFeatCan: return {"recon"};
    case Variant::DepthCan: return {"depth"};
    case Variant::SegCan: return {"seg"};
    case Variant::FusionAll: return {"depth", "seg"};
  }
  return {};
}

struct ModelConfig {
  Variant variant = Variant::FusionAll;
  std::map<std::string, int> reduce_channels{{"image", 20}, {"depth", 8}, {"seg", 8}, {"recon", 8}};
  std::map<std::string, Shape> stream_shapes{
      {"image", {8, 8, 16}}, {"depth", {8, 8, 8}}, {"seg", {8, 8, 8}}};
  int can_dim = 8;
  int can_feature_dim = 64;
  int hidden_size = 256;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LossConfig {
  double gamma = 2.0;
  double alpha_background = 0.25;
  double alpha_foreground = 1.0;

  std::vector<Real> alpha() const {
    std::vector<Real> a(kNumClasses, alpha_foreground);
    a[kBackground] = alpha_background;
    return a;
  }
};

struct ModelState {
  std::vector<nn::LstmState<Real>> lanes;

  std::size_t n_lanes() const noexcept { return lanes.size(); }
  void reset_lane(std::size_t lane) { lanes.at(lane).reset(); }
  friend bool operator==(const ModelState&, const ModelState&) = default;
};

/// lanes x length grid of frames. Padding entries are invalid; their frame
/// pointer may be null. Invalid frames never touch the recurrent state.
struct SegmentBatch {
  std::size_t lanes = 0;
  std::size_t length = 0;
  std::vector<const FrameSample*> frames;  // [lane * length + t]
  std::vector<std::uint8_t> valid;

  SegmentBatch() = default;
  SegmentBatch(std::size_t n_lanes, std::size_t segment_length)
      : lanes(n_lanes),
        length(segment_length),
        frames(n_lanes * segment_length, nullptr),
        valid(n_lanes * segment_length, 0) {}

  void set(std::size_t lane, std::size_t t, const FrameSample* f, bool is_valid = true) {
    frames[lane * length + t] = f;
    valid[lane * length + t] = is_valid && f ? 1 : 0;
  }
  const FrameSample* at(std::size_t lane, std::size_t t) const { return frames[lane * length + t]; }
  bool is_valid(std::size_t lane, std::size_t t) const { return valid[lane * length + t] != 0; }
  std::vector<int> targets() const {
    std::vector<int> out(frames.size(), kBackground);
    for (std::size_t i = 0; i < frames.size(); ++i) {
      if (frames[i]) out[i] = frames[i]->label;
    }
    return out;
  }

  /// One lane holding `count` frames of `session` starting at `start`.
  static SegmentBatch from_session(const Session& session, std::size_t start, std::size_t count) {
    SegmentBatch b(1, count);
    for (std::size_t t = 0; t < count; ++t) b.set(0, t, &session.frames.at(start + t));
    return b;
  }
};

struct SegmentCache {
  bool ready = false;
  std::size_t lanes = 0;
  std::size_t length = 0;
  std::vector<std::uint8_t> valid;
  // [t][lane][branch] converted branch inputs; the last slot holds CAN.
  std::vector<std::vector<std::vector<std::vector<Real>>>> inputs;
  std::vector<Tensor<Real>> fused;  // [t] pre-normalization [lanes x D]
  std::vector<nn::BatchNormCache<Real>> bn;
  std::vector<std::vector<nn::LstmCache<Real>>> lstm;  // [t][lane]
  std::vector<std::vector<std::vector<Real>>> probs;    // [t][lane]
};

struct ForwardResult {
  Tensor<Real> logits;  // [lanes x T x 12]
  ModelState state;
  SegmentCache cache;
};

class Model {
 public:
  struct Branch {
    std::string name;
    Shape shape;
    std::size_t positions = 0;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t offset = 0;  // into the fused vector
    ParamT W;                // [Cin x Cout]
    ParamT b;

    std::size_t width() const { return positions * out_channels; }
  };

  static Model build(const ModelConfig& config, std::uint64_t seed) {
    Model m;
    m.config_ = config;
    m.seed_ = seed;
    if (config.can_dim < 1 || config.can_feature_dim < 1 || config.hidden_size < 1) {
      fail(ErrorKind::InvalidConfig, "model widths must be positive");
    }
    std::mt19937_64 rng(seed);
    std::size_t offset = 0;
    for (const auto& name : variant_streams(config.variant)) {
      const auto rc = config.reduce_channels.find(name);
      const auto sh = config.stream_shapes.find(name);
      if (rc == config.reduce_channels.end() || sh == config.stream_shapes.end()) {
        fail(ErrorKind::MissingStream, std::string(variant_name(config.variant)) +
                                           " requires stream '" + name + "'");
      }
      if (rc->second < 1 || sh->second.size() != 3 || shape_volume(sh->second) == 0) {
        fail(ErrorKind::InvalidConfig, "stream '" + name + "' reduction/shape invalid");
      }
      Branch br;
      br.name = name;
      br.shape = sh->second;
      br.positions = sh->second[0] * sh->second[1];
      br.in_channels = sh->second[2];
      br.out_channels = static_cast<std::size_t>(rc->second);
      br.offset = offset;
      br.W = ParamT(name + ".conv.W", Shape{br.in_channels, br.out_channels});
      br.b = ParamT(name + ".conv.b", Shape{br.out_channels});
      nn::init_uniform_fan_in(br.W, br.in_channels, rng);
      offset += br.width();
      m.branches_.push_back(std::move(br));
    }
    const auto can_dim = static_cast<std::size_t>(config.can_dim);
    const auto can_feat = static_cast<std::size_t>(config.can_feature_dim);
    m.can_offset_ = offset;
    m.can_W_ = ParamT("can.W", Shape{can_feat, can_dim});
    m.can_b_ = ParamT("can.b", Shape{can_feat});
    nn::init_uniform_fan_in(m.can_W_, can_dim, rng);
    offset += can_feat;
    m.fused_width_ = offset;

    m.bn_ = nn::BatchNormState<Real>(offset, config.bn_momentum, config.bn_eps);
    const auto H = static_cast<std::size_t>(config.hidden_size);
    m.lstm_ = nn::LstmParams<Real>(offset, H);
    nn::init_uniform_fan_in(m.lstm_.Wx, offset, rng);
    nn::init_uniform_fan_in(m.lstm_.Wh, H, rng);
    for (std::size_t k = 0; k < H; ++k) m.lstm_.b.value[H + k] = 1.0;  // forget gate
    m.head_W_ = ParamT("head.W", Shape{kNumClasses, H});
    m.head_b_ = ParamT("head.b", Shape{kNumClasses});
    nn::init_uniform_fan_in(m.head_W_, H, rng);
    return m;
  }

  const ModelConfig& config() const noexcept { return config_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t fused_width() const noexcept { return fused_width_; }
  std::size_t hidden_size() const noexcept { return lstm_.hidden(); }
  const std::vector<Branch>& branches() const noexcept { return branches_; }
  nn::BatchNormState<Real>& batchnorm() noexcept { return bn_; }
  const nn::BatchNormState<Real>& batchnorm() const noexcept { return bn_; }

  nn::Mode mode() const noexcept { return bn_.mode; }
  void set_mode(nn::Mode mode) noexcept { bn_.mode = mode; }

  /// Trainable parameters in a fixed order (branches in fusion order, CAN,
  /// batchnorm affine, LSTM, head).
  std::vector<ParamT*> parameters() {
    std::vector<ParamT*> out;
    for (auto& br : branches_) {
      out.push_back(&br.W);
      out.push_back(&br.b);
    }
    for (ParamT* p : {&can_W_, &can_b_, &bn_.gamma, &bn_.beta, &lstm_.Wx, &lstm_.Wh, &lstm_.b,
                      &head_W_, &head_b_}) {
      out.push_back(p);
    }
    return out;
  }
  std::vector<const ParamT*> parameters() const {
    std::vector<const ParamT*> out;
    for (auto* p : const_cast<Model*>(this)->parameters()) out.push_back(p);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->size();
    return n;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  ModelState init_state(std::size_t n_lanes) const {
    if (n_lanes < 1) fail(ErrorKind::InvalidConfig, "n_lanes must be >= 1");
    ModelState s;
    s.lanes.assign(n_lanes, nn::LstmState<Real>(hidden_size()));
    return s;
  }

  /// Runs the segment tick by tick. In train mode batch normalization uses
  /// the valid lanes of each tick (running statistics when fewer than two
  /// lanes are valid); in eval mode it uses running statistics.
  ForwardResult forward_segment(const SegmentBatch& batch, const ModelState& state,
                                bool keep_cache = true) {
    const std::size_t L = batch.lanes;
    const std::size_t T = batch.length;
    if (state.n_lanes() != L) {
      fail(ErrorKind::ShapeMismatch, "state has " + std::to_string(state.n_lanes()) +
                                         " lanes, batch has " + std::to_string(L));
    }
    const std::size_t D = fused_width_;
    const std::size_t nb = branches_.size();
    ForwardResult out;
    out.logits = Tensor<Real>({L, T, static_cast<std::size_t>(kNumClasses)});
    out.state = state;
    SegmentCache& cache = out.cache;
    if (keep_cache) {
      cache.lanes = L;
      cache.length = T;
      cache.valid.resize(L * T);
      cache.inputs.resize(T);
      cache.fused.resize(T);
      cache.bn.resize(T);
      cache.lstm.resize(T);
      cache.probs.resize(T);
    }

    std::vector<Real> converted;
    for (std::size_t t = 0; t < T; ++t) {
      Tensor<Real> X({L, D});
      std::vector<std::uint8_t> valid(L);
      if (keep_cache) cache.inputs[t].assign(L, std::vector<std::vector<Real>>(nb + 1));
      for (std::size_t l = 0; l < L; ++l) {
        valid[l] = batch.is_valid(l, t) ? 1 : 0;
        if (keep_cache) cache.valid[l * T + t] = valid[l];
        if (!valid[l]) continue;
        const FrameSample& f = *batch.at(l, t);
        std::span<Real> row(X.data() + l * D, D);
        for (std::size_t k = 0; k < nb; ++k) {
          const Branch& br = branches_[k];
          const auto it = f.features.find(br.name);
          if (it == f.features.end()) {
            fail(ErrorKind::StreamMissing, "frame lacks stream '" + br.name + "'");
          }
          if (it->second.shape() != br.shape) {
            fail(ErrorKind::ShapeMismatch, "stream '" + br.name + "' is " +
                                               shape_to_string(it->second.shape()) + ", expected " +
                                               shape_to_string(br.shape));
          }
          converted.assign(it->second.values().begin(), it->second.values().end());
          nn::conv1x1_forward<Real>(converted, br.positions, br.W, br.b,
                                    row.subspan(br.offset, br.width()));
          if (keep_cache) cache.inputs[t][l][k] = converted;
        }
        if (f.can.size() != static_cast<std::size_t>(config_.can_dim)) {
          fail(ErrorKind::ShapeMismatch, "can vector has " + std::to_string(f.can.size()) +
                                             " entries, expected " + std::to_string(config_.can_dim));
        }
        converted.assign(f.can.begin(), f.can.end());
        nn::dense_forward<Real>(converted, can_W_, can_b_,
                                row.subspan(can_offset_, static_cast<std::size_t>(config_.can_feature_dim)));
        if (keep_cache) cache.inputs[t][l][nb] = converted;
      }

      nn::BatchNormCache<Real>* bn_cache = keep_cache ? &cache.bn[t] : nullptr;
      const Tensor<Real> Y = nn::batchnorm_forward<Real>(X, bn_, bn_cache, valid, true);
      if (keep_cache) {
        cache.fused[t] = std::move(X);
        cache.lstm[t].resize(L);
        cache.probs[t].resize(L);
      }

      for (std::size_t l = 0; l < L; ++l) {
        auto& lane_state = out.state.lanes[l];
        if (valid[l]) {
          nn::LstmCache<Real>* lc = keep_cache ? &cache.lstm[t][l] : nullptr;
          lane_state = nn::lstm_cell_forward<Real>(std::span<const Real>(Y.data() + l * D, D),
                                                   lane_state, lstm_, lc);
        }
        std::span<Real> logit_row(out.logits.data() + (l * T + t) * kNumClasses, kNumClasses);
        nn::dense_forward<Real>(lane_state.h, head_W_, head_b_, logit_row);
        if (keep_cache && valid[l]) {
          cache.probs[t][l] = nn::softmax<Real>(std::span<const Real>(logit_row));
        }
      }
    }
    cache.ready = keep_cache;
    return out;
  }

  /// Backpropagates the mean focal loss over valid frames through the cached
  /// segment, accumulating parameter gradients. No gradient reaches the
  /// incoming state. Returns the mean loss (0 when nothing is valid).
  Real backward_segment(SegmentCache& cache, std::span<const int> targets, const LossConfig& loss) {
    if (!cache.ready) fail(ErrorKind::CacheMissing, "backward_segment needs a cached forward");
    const std::size_t L = cache.lanes;
    const std::size_t T = cache.length;
    if (targets.size() != L * T) fail(ErrorKind::ShapeMismatch, "targets size");
    const std::size_t D = fused_width_;
    const std::size_t H = hidden_size();
    const std::size_t nb = branches_.size();
    const auto alpha = loss.alpha();

    std::size_t n_valid = 0;
    for (auto v : cache.valid) n_valid += v;
    if (n_valid == 0) {
      cache.ready = false;
      return 0.0;
    }
    const Real inv_n = 1.0 / static_cast<Real>(n_valid);

    Real total = 0.0;
    std::vector<std::vector<Real>> dh(L, std::vector<Real>(H, 0.0));
    std::vector<std::vector<Real>> dc(L, std::vector<Real>(H, 0.0));
    std::vector<Real> dh_head(H);
    for (std::size_t tt = T; tt-- > 0;) {
      Tensor<Real> dY({L, D});
      for (std::size_t l = 0; l < L; ++l) {
        if (!cache.valid[l * T + tt]) continue;
        const auto& probs = cache.probs[tt][l];
        const auto fl = nn::focal_loss<Real>(probs, targets[l * T + tt], loss.gamma, alpha);
        total += fl.loss;
        std::vector<Real> dlogits(fl.grad_logits);
        for (auto& g : dlogits) g *= inv_n;
        const auto& lc = cache.lstm[tt][l];
        std::vector<Real> h_out(H);
        for (std::size_t k = 0; k < H; ++k) h_out[k] = lc.gates[3 * H + k] * lc.tanh_c[k];
        nn::dense_backward<Real>(h_out, dlogits, head_W_, head_b_, dh_head);
        for (std::size_t k = 0; k < H; ++k) dh[l][k] += dh_head[k];
        auto g = nn::lstm_cell_backward<Real>(dh[l], dc[l], lstm_, lc);
        std::copy(g.dx.begin(), g.dx.end(), dY.data() + l * D);
        dh[l] = std::move(g.dh_prev);
        dc[l] = std::move(g.dc_prev);
      }
      const Tensor<Real> dX = nn::batchnorm_backward<Real>(dY, bn_, cache.bn[tt]);
      for (std::size_t l = 0; l < L; ++l) {
        if (!cache.valid[l * T + tt]) continue;
        std::span<const Real> drow(dX.data() + l * D, D);
        const auto& inputs = cache.inputs[tt][l];
        for (std::size_t k = 0; k < nb; ++k) {
          Branch& br = branches_[k];
          nn::conv1x1_backward<Real>(inputs[k], br.positions, drow.subspan(br.offset, br.width()),
                                     br.W, br.b, {});
        }
        nn::dense_backward<Real>(inputs[nb],
                                 drow.subspan(can_offset_, static_cast<std::size_t>(config_.can_feature_dim)),
                                 can_W_, can_b_, {});
      }
    }
    cache.ready = false;
    return total * inv_n;
  }

  /// Mean focal loss over the valid frames of a forward result, without
  /// touching gradients.
  static Real segment_loss(const ForwardResult& fwd, const SegmentBatch& batch,
                           std::span<const int> targets, const LossConfig& loss) {
    const auto alpha = loss.alpha();
    Real total = 0.0;
    std::size_t n = 0;
    for (std::size_t l = 0; l < batch.lanes; ++l) {
      for (std::size_t t = 0; t < batch.length; ++t) {
        if (!batch.is_valid(l, t)) continue;
        std::span<const Real> row(fwd.logits.data() + (l * batch.length + t) * kNumClasses,
                                  kNumClasses);
        const auto probs = nn::softmax<Real>(row);
        total += nn::focal_loss<Real>(probs, targets[l * batch.length + t], loss.gamma, alpha).loss;
        ++n;
      }
    }
    return n ? total / static_cast<Real>(n) : 0.0;
  }

  /// Eval-mode logits for a whole session from a zero state, [T x 12].
  Tensor<Real> forward_session(const Session& session) {
    const nn::Mode saved = mode();
    set_mode(nn::Mode::Eval);
    auto fwd = forward_segment(SegmentBatch::from_session(session, 0, session.size()),
                               init_state(1), false);
    set_mode(saved);
    return Tensor<Real>({session.size(), static_cast<std::size_t>(kNumClasses)},
                        std::move(fwd.logits.values()));
  }

  /// Streams (besides can) that this model reads.
  std::vector<std::string> required_streams() const { return variant_streams(config_.variant); }

 private:
  ModelConfig config_;
  std::uint64_t seed_ = 0;
  std::vector<Branch> branches_;
  std::size_t can_offset_ = 0;
  std::size_t fused_width_ = 0;
  ParamT can_W_, can_b_;
  nn::BatchNormState<Real> bn_;
  nn::LstmParams<Real> lstm_;
  ParamT head_W_, head_b_;
};

inline ModelState init_state(const Model& model, std::size_t n_lanes) {
  return model.init_state(n_lanes);
}

inline Model build_model(const ModelConfig& config, std::uint64_t seed) {
  return Model::build(config, seed);
}

/// Checks that every session carries the model's streams with the
/// configured shapes and CAN width; raises StreamMismatch otherwise.
inline void check_streams(const Model& model, const std::vector<Session>& sessions) {
  const auto& cfg = model.config();
  for (const auto& s : sessions) {
    if (s.frames.empty()) continue;
    const auto& f = s.frames.front();
    for (const auto& name : model.required_streams()) {
      const auto it = f.features.find(name);
      if (it == f.features.end()) {
        fail(ErrorKind::StreamMismatch, "session '" + s.session_id + "' lacks stream '" + name +
                                            "' required by " +
                                            std::string(variant_name(cfg.variant)));
      }
      if (it->second.shape() != cfg.stream_shapes.at(name)) {
        fail(ErrorKind::StreamMismatch, "session '" + s.session_id + "' stream '" + name +
                                            "' has shape " + shape_to_string(it->second.shape()));
      }
    }
    if (f.can.size() != static_cast<std::size_t>(cfg.can_dim)) {
      fail(ErrorKind::StreamMismatch, "session '" + s.session_id + "' can width " +
                                          std::to_string(f.can.size()));
    }
  }
}

}  // namespace maneuver::model
