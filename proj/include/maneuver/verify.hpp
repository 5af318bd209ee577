#pragma once

// Self-verification suite: finite-difference checks of every kernel and of
// the assembled model, plus the chunked-inference equivalence check.

#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "maneuver/model.hpp"
#include "maneuver/nn.hpp"

namespace maneuver::verify {

enum class Fault { None, Dense };

inline Fault parse_fault(const std::string& s) {
  if (s.empty() || s == "none") return Fault::None;
  if (s == "dense") return Fault::Dense;
  fail(ErrorKind::InvalidConfig, "unknown fault '" + s + "' (expected none or dense)");
}

struct CheckLine {
  std::string name;
  std::string metric;  // max_rel_error or max_abs_diff
  double value = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

inline std::string format_check(const CheckLine& c) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-22s %-13s %.3e (tol %.0e)  %s", c.name.c_str(), c.metric.c_str(),
                c.value, c.tolerance, c.passed ? "ok" : "FAIL");
  return buf;
}

namespace detail {

inline constexpr double kTolerance = 1e-4;

struct Inputs {
  std::mt19937_64 rng;
  explicit Inputs(std::uint64_t seed) : rng(seed) {}

  std::vector<double> vec(std::size_t n, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    std::vector<double> v(n);
    for (auto& e : v) e = u(rng);
    return v;
  }
  void fill(Param<double>& p, double scale = 1.0) { p.value.values() = vec(p.value.size(), scale); }
  void fill(Tensor<double>& t, double scale = 1.0) { t.values() = vec(t.size(), scale); }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline CheckLine from_report(const std::string& name, const std::vector<nn::GradCheckReport>& parts) {
  const auto merged = nn::merge_reports(name, parts);
  return {name, "max_rel_error", merged.max_rel_error, merged.tolerance, merged.passed};
}

inline CheckLine check_dense(Inputs& in, Fault fault) {
  Param<double> W("W", Shape{5, 4}), b("b", Shape{5});
  in.fill(W);
  in.fill(b);
  auto x = in.vec(4);
  const auto r = in.vec(5);
  auto loss = [&] { return dot(r, nn::dense<double>(x, W, b)); };
  std::vector<double> dx(4);
  nn::dense_backward<double>(x, r, W, b, dx);
  auto gw = W.grad.values();
  const auto gb = b.grad.values();
  if (fault == Fault::Dense) {
    for (auto& g : gw) g *= 1.01;
  }
  return from_report("dense", {nn::grad_check("dx", x, dx, loss), nn::grad_check("dW", W.value.span(), gw, loss),
                               nn::grad_check("db", b.value.span(), gb, loss)});
}

inline CheckLine check_conv1x1(Inputs& in) {
  Tensor<double> x({3, 2, 4});
  in.fill(x);
  Param<double> W("W", Shape{4, 3}), b("b", Shape{3});
  in.fill(W);
  in.fill(b);
  Tensor<double> r({3, 2, 3});
  in.fill(r);
  auto loss = [&] { return dot(r.values(), nn::conv1x1(x, W, b).values()); };
  Tensor<double> dx;
  nn::conv1x1_backward(x, r, W, b, &dx);
  const auto gw = W.grad.values();
  const auto gb = b.grad.values();
  return from_report("conv1x1", {nn::grad_check("dx", x.span(), dx.values(), loss),
                                 nn::grad_check("dW", W.value.span(), gw, loss),
                                 nn::grad_check("db", b.value.span(), gb, loss)});
}

inline CheckLine check_batchnorm(Inputs& in) {
  std::vector<nn::GradCheckReport> parts;
  const std::vector<std::vector<std::uint8_t>> masks{{}, {1, 0, 1, 1, 0}};
  for (auto mode : {nn::Mode::Train, nn::Mode::Eval}) {
    for (const auto& valid : masks) {
      const std::size_t B = valid.empty() ? 4 : valid.size(), D = 3;
      nn::BatchNormState<double> bn(D);
      bn.mode = mode;
      in.fill(bn.gamma);
      in.fill(bn.beta);
      bn.running_mean = in.vec(D);
      for (auto& v : bn.running_var) v = 0.5 + in.vec(1, 0.4)[0];
      Tensor<double> x({B, D});
      in.fill(x, 2.0);
      Tensor<double> r({B, D});
      in.fill(r);
      for (std::size_t i = 0; i < r.size(); ++i) {
        if (!valid.empty() && !valid[i / D]) r[i] = 0.0;
      }
      auto loss = [&] { return dot(r.values(), nn::batchnorm_forward(x, bn, nullptr, valid, false, false).values()); };
      nn::BatchNormCache<double> cache;
      nn::batchnorm_forward(x, bn, &cache, valid, false, false);
      const auto dx = nn::batchnorm_backward(r, bn, cache);
      const auto gg = bn.gamma.grad.values();
      const auto gb = bn.beta.grad.values();
      parts.push_back(nn::grad_check("dx", x.span(), dx.values(), loss));
      parts.push_back(nn::grad_check("dgamma", bn.gamma.value.span(), gg, loss));
      parts.push_back(nn::grad_check("dbeta", bn.beta.value.span(), gb, loss));
    }
  }
  return from_report("batchnorm", parts);
}

inline CheckLine check_lstm(Inputs& in) {
  const std::size_t D = 4, H = 5;
  nn::LstmParams<double> p(D, H);
  in.fill(p.Wx, 0.5);
  in.fill(p.Wh, 0.5);
  in.fill(p.b, 0.5);
  auto x = in.vec(D);
  nn::LstmState<double> s(H);
  s.h = in.vec(H);
  s.c = in.vec(H);
  const auto rh = in.vec(H), rc = in.vec(H);
  auto loss = [&] {
    const auto out = nn::lstm_cell_forward<double>(x, s, p);
    return dot(rh, out.h) + dot(rc, out.c);
  };
  nn::LstmCache<double> cache;
  nn::lstm_cell_forward<double>(x, s, p, &cache);
  const auto g = nn::lstm_cell_backward<double>(rh, rc, p, cache);
  const auto gwx = p.Wx.grad.values(), gwh = p.Wh.grad.values(), gb = p.b.grad.values();
  return from_report("lstm_cell", {nn::grad_check("dx", x, g.dx, loss), nn::grad_check("dh", s.h, g.dh_prev, loss),
                                   nn::grad_check("dc", s.c, g.dc_prev, loss),
                                   nn::grad_check("dWx", p.Wx.value.span(), gwx, loss),
                                   nn::grad_check("dWh", p.Wh.value.span(), gwh, loss),
                                   nn::grad_check("db", p.b.value.span(), gb, loss)});
}

inline CheckLine check_softmax_focal(Inputs& in) {
  std::vector<nn::GradCheckReport> parts;
  for (double gamma : {0.0, 0.5, 2.0}) {
    for (int target = 0; target < kNumClasses; target += 3) {
      auto z = in.vec(kNumClasses, 2.0);
      std::vector<double> alpha(kNumClasses);
      for (auto& a : alpha) a = 0.6 + in.vec(1, 0.4)[0];
      auto loss = [&] { return nn::focal_loss(nn::softmax(z), target, gamma, alpha).loss; };
      const auto g = nn::focal_loss(nn::softmax(z), target, gamma, alpha).grad_logits;
      parts.push_back(nn::grad_check("dz", z, g, loss));
    }
  }
  return from_report("softmax_focal", parts);
}

inline model::ModelConfig probe_config() {
  model::ModelConfig c;
  c.variant = model::Variant::FusionAll;
  c.stream_shapes = {{"depth", {1, 2, 3}}, {"seg", {1, 1, 2}}};
  c.reduce_channels = {{"depth", 2}, {"seg", 2}};
  c.can_dim = 3;
  c.can_feature_dim = 3;
  c.hidden_size = 4;
  return c;
}

inline Session probe_session(Inputs& in, std::size_t length) {
  const auto cfg = probe_config();
  Session s;
  s.session_id = "probe";
  for (std::size_t t = 0; t < length; ++t) {
    FrameSample f;
    f.tick_index = static_cast<std::int64_t>(t);
    f.label = static_cast<int>(in.rng() % kNumClasses);
    for (const auto& [name, shape] : cfg.stream_shapes) {
      Tensor<float> x(shape);
      for (auto& v : x.values()) v = static_cast<float>(in.vec(1, 1.5)[0]);
      f.features.emplace(name, std::move(x));
    }
    for (const auto v : in.vec(static_cast<std::size_t>(cfg.can_dim), 1.5)) f.can.push_back(static_cast<float>(v));
    s.frames.push_back(std::move(f));
  }
  return s;
}

// Weights at O(1) scale keep every gradient entry well above the
// finite-difference noise floor.
inline constexpr std::size_t kProbeLanes = 4;

inline std::vector<Session> probe_sessions(Inputs& in, std::size_t n, std::size_t length) {
  std::vector<Session> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(probe_session(in, length));
  return out;
}

inline model::Model probe_model(Inputs& in) {
  auto m = model::build_model(probe_config(), in.rng());
  for (auto* p : m.parameters()) in.fill(*p, 0.5);
  auto& bn = m.batchnorm();
  bn.running_mean = in.vec(bn.running_mean.size(), 0.5);
  for (auto& v : bn.running_var) v = 1.0 + in.vec(1, 0.5)[0];
  bn.gamma.value.values() = in.vec(bn.gamma.value.size(), 0.5);
  for (auto& v : bn.gamma.value.values()) v += 1.0;
  in.fill(bn.beta, 0.5);
  return m;
}

inline model::ModelState probe_state(const model::Model& m, std::size_t lanes, Inputs& in) {
  auto s = m.init_state(lanes);
  for (auto& lane : s.lanes) {
    lane.h = in.vec(lane.h.size(), 0.8);
    lane.c = in.vec(lane.c.size(), 0.8);
  }
  return s;
}

inline model::SegmentBatch lanes_batch(const std::vector<Session>& sessions, std::size_t start, std::size_t T) {
  model::SegmentBatch b(sessions.size(), T);
  for (std::size_t l = 0; l < sessions.size(); ++l)
    for (std::size_t t = 0; t < T; ++t) b.set(l, t, &sessions[l].frames[start + t]);
  return b;
}

// Checks every parameter. In train mode the biases feeding batchnorm get an
// exactly zero gradient, which is asserted instead of differenced.
inline CheckLine check_model_params(const std::string& name, model::Model& m, const model::SegmentBatch& batch,
                                    const model::ModelState& state, const model::LossConfig& loss) {
  m.zero_grad();
  const auto targets = batch.targets();
  auto fwd = m.forward_segment(batch, state);
  m.backward_segment(fwd.cache, targets, loss);
  auto objective = [&] {
    return model::Model::segment_loss(m.forward_segment(batch, state, false), batch, targets, loss);
  };
  std::vector<nn::GradCheckReport> parts;
  for (auto* p : m.parameters()) {
    const bool pre_norm_bias = p->name.ends_with("conv.b") || p->name == "can.b";
    if (m.mode() == nn::Mode::Train && pre_norm_bias) {
      double worst = 0.0;
      for (double g : p->grad.values()) worst = std::max(worst, std::abs(g));
      parts.push_back({p->name, worst, kTolerance, p->grad.size(), worst < 1e-12});
      continue;
    }
    const auto analytic = p->grad.values();
    parts.push_back(nn::grad_check(p->name, p->value.span(), analytic, objective, kTolerance));
  }
  return from_report(name, parts);
}

}  // namespace detail

/// T=1 forward/backward through every parameter of a small fusion model,
/// once with frozen normalization and once with batch statistics.
inline CheckLine check_model_single_tick(std::uint64_t seed) {
  detail::Inputs in(seed);
  auto m = detail::probe_model(in);
  CheckLine line{"model_t1", "max_rel_error", 0.0, detail::kTolerance, true};
  for (auto mode : {nn::Mode::Eval, nn::Mode::Train}) {
    m.set_mode(mode);
    const std::size_t lanes = mode == nn::Mode::Eval ? 2 : detail::kProbeLanes;
    const auto sessions = detail::probe_sessions(in, lanes, 1);
    const auto part = detail::check_model_params("model_t1", m, detail::lanes_batch(sessions, 0, 1),
                                                 detail::probe_state(m, lanes, in), {});
    line.value = std::max(line.value, part.value);
    line.passed = line.passed && part.passed;
  }
  return line;
}

/// Second segment of a carried sequence: gradients against differences of
/// that segment's loss with the incoming state frozen.
inline CheckLine check_model_truncation(std::uint64_t seed, std::size_t lanes = detail::kProbeLanes) {
  detail::Inputs in(seed + 1000);
  auto m = detail::probe_model(in);
  m.set_mode(nn::Mode::Train);
  const auto sessions = detail::probe_sessions(in, lanes, 6);
  const auto carried = m.forward_segment(detail::lanes_batch(sessions, 0, 3), m.init_state(lanes), false).state;
  return detail::check_model_params("model_truncation", m, detail::lanes_batch(sessions, 3, 3), carried, {});
}

/// Chunked eval-mode inference with carried state against one monolithic pass.
inline CheckLine check_state_carry(std::uint64_t seed, int trials = 10) {
  detail::Inputs in(seed + 2000);
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    auto m = detail::probe_model(in);
    m.set_mode(nn::Mode::Eval);
    const auto s = detail::probe_session(in, 5 + in.rng() % 40);
    const auto whole = m.forward_session(s);
    auto state = m.init_state(1);
    std::size_t start = 0;
    while (start < s.size()) {
      const std::size_t len = std::min<std::size_t>(1 + in.rng() % 7, s.size() - start);
      auto fwd = m.forward_segment(model::SegmentBatch::from_session(s, start, len), state, false);
      for (std::size_t i = 0; i < len * kNumClasses; ++i) {
        worst = std::max(worst, std::abs(fwd.logits[i] - whole[start * kNumClasses + i]));
      }
      state = std::move(fwd.state);
      start += len;
    }
  }
  return {"state_carry", "max_abs_diff", worst, 1e-6, worst < 1e-6};
}

inline std::vector<CheckLine> run_suite(std::uint64_t seed, Fault fault = Fault::None) {
  detail::Inputs in(seed);
  std::vector<CheckLine> out;
  out.push_back(detail::check_dense(in, fault));
  out.push_back(detail::check_conv1x1(in));
  out.push_back(detail::check_batchnorm(in));
  out.push_back(detail::check_lstm(in));
  out.push_back(detail::check_softmax_focal(in));
  out.push_back(check_model_single_tick(seed));
  out.push_back(check_model_truncation(seed));
  out.push_back(check_state_carry(seed));
  return out;
}

inline bool all_passed(const std::vector<CheckLine>& lines) {
  for (const auto& l : lines)
    if (!l.passed) return false;
  return true;
}

}  // namespace maneuver::verify
