#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "maneuver/tensor.hpp"

namespace maneuver::nn {

template <std::floating_point T>
struct LstmState {
  std::vector<T> h;
  std::vector<T> c;

  LstmState() = default;
  explicit LstmState(std::size_t hidden) : h(hidden, T{0}), c(hidden, T{0}) {}

  std::size_t hidden() const noexcept { return h.size(); }
  void reset() {
    std::fill(h.begin(), h.end(), T{0});
    std::fill(c.begin(), c.end(), T{0});
  }
  friend bool operator==(const LstmState&, const LstmState&) = default;
};

// Gate rows are packed as [input; forget; candidate; output], H rows each.
template <std::floating_point T>
struct LstmParams {
  Param<T> Wx;  // [4H x D]
  Param<T> Wh;  // [4H x H]
  Param<T> b;   // [4H]

  LstmParams() = default;
  LstmParams(std::size_t input, std::size_t hidden)
      : Wx("lstm.Wx", Shape{4 * hidden, input}),
        Wh("lstm.Wh", Shape{4 * hidden, hidden}),
        b("lstm.b", Shape{4 * hidden}) {}

  std::size_t input() const { return Wx.value.dim(1); }
  std::size_t hidden() const { return Wh.value.dim(1); }
};

template <std::floating_point T>
struct LstmCache {
  std::vector<T> x, h_prev, c_prev;
  std::vector<T> gates;   // activated [i f g o], 4H
  std::vector<T> c;       // new cell
  std::vector<T> tanh_c;
};

template <std::floating_point T>
T sigmoid(T z) {
  if (z >= T{0}) return T{1} / (T{1} + std::exp(-z));
  const T e = std::exp(z);
  return e / (T{1} + e);
}

/// One step: consumes x and the incoming state, returns the outgoing state
/// (whose h is the cell output).
template <std::floating_point T>
LstmState<T> lstm_cell_forward(std::span<const T> x, const LstmState<T>& state,
                               const LstmParams<T>& p, LstmCache<T>* cache = nullptr) {
  const std::size_t H = p.hidden();
  const std::size_t D = p.input();
  if (x.size() != D || state.h.size() != H || state.c.size() != H ||
      p.Wx.value.dim(0) != 4 * H || p.Wh.value.dim(0) != 4 * H || p.b.value.size() != 4 * H) {
    fail(ErrorKind::ShapeMismatch, "lstm_cell: x[" + std::to_string(x.size()) + "] h[" +
                                       std::to_string(state.h.size()) + "] Wx " +
                                       shape_to_string(p.Wx.value.shape()));
  }
  std::vector<T> gates(4 * H);
  const T* wx = p.Wx.value.data();
  const T* wh = p.Wh.value.data();
  for (std::size_t r = 0; r < 4 * H; ++r) {
    T acc = p.b.value[r];
    const T* rx = wx + r * D;
    for (std::size_t k = 0; k < D; ++k) acc += rx[k] * x[k];
    const T* rh = wh + r * H;
    for (std::size_t k = 0; k < H; ++k) acc += rh[k] * state.h[k];
    gates[r] = acc;
  }
  for (std::size_t k = 0; k < H; ++k) {
    gates[k] = sigmoid(gates[k]);
    gates[H + k] = sigmoid(gates[H + k]);
    gates[2 * H + k] = std::tanh(gates[2 * H + k]);
    gates[3 * H + k] = sigmoid(gates[3 * H + k]);
  }
  LstmState<T> out(H);
  std::vector<T> tanh_c(H);
  for (std::size_t k = 0; k < H; ++k) {
    out.c[k] = gates[H + k] * state.c[k] + gates[k] * gates[2 * H + k];
    tanh_c[k] = std::tanh(out.c[k]);
    out.h[k] = gates[3 * H + k] * tanh_c[k];
  }
  if (cache) {
    cache->x.assign(x.begin(), x.end());
    cache->h_prev = state.h;
    cache->c_prev = state.c;
    cache->gates = std::move(gates);
    cache->c = out.c;
    cache->tanh_c = std::move(tanh_c);
  }
  return out;
}

template <std::floating_point T>
struct LstmGrads {
  std::vector<T> dx;
  std::vector<T> dh_prev;
  std::vector<T> dc_prev;
};

/// Backward through one step given dL/dh' and dL/dc' (the latter from the
/// following step's cell path). Parameter gradients accumulate into p.
template <std::floating_point T>
LstmGrads<T> lstm_cell_backward(std::span<const T> dh, std::span<const T> dc_next,
                                LstmParams<T>& p, const LstmCache<T>& cache) {
  const std::size_t H = p.hidden();
  const std::size_t D = p.input();
  if (dh.size() != H || dc_next.size() != H) {
    fail(ErrorKind::ShapeMismatch, "lstm_cell backward: upstream gradient size");
  }
  const T* g = cache.gates.data();
  std::vector<T> dz(4 * H);
  LstmGrads<T> out{std::vector<T>(D, T{0}), std::vector<T>(H, T{0}), std::vector<T>(H, T{0})};
  for (std::size_t k = 0; k < H; ++k) {
    const T i = g[k], f = g[H + k], cand = g[2 * H + k], o = g[3 * H + k];
    const T tc = cache.tanh_c[k];
    const T dc = dc_next[k] + dh[k] * o * (T{1} - tc * tc);
    const T d_o = dh[k] * tc;
    const T d_i = dc * cand;
    const T d_f = dc * cache.c_prev[k];
    const T d_g = dc * i;
    out.dc_prev[k] = dc * f;
    dz[k] = d_i * i * (T{1} - i);
    dz[H + k] = d_f * f * (T{1} - f);
    dz[2 * H + k] = d_g * (T{1} - cand * cand);
    dz[3 * H + k] = d_o * o * (T{1} - o);
  }
  const T* wx = p.Wx.value.data();
  const T* wh = p.Wh.value.data();
  T* gwx = p.Wx.grad.data();
  T* gwh = p.Wh.grad.data();
  for (std::size_t r = 0; r < 4 * H; ++r) {
    const T z = dz[r];
    p.b.grad[r] += z;
    T* gx_row = gwx + r * D;
    const T* x_row = wx + r * D;
    for (std::size_t k = 0; k < D; ++k) {
      gx_row[k] += z * cache.x[k];
      out.dx[k] += x_row[k] * z;
    }
    T* gh_row = gwh + r * H;
    const T* h_row = wh + r * H;
    for (std::size_t k = 0; k < H; ++k) {
      gh_row[k] += z * cache.h_prev[k];
      out.dh_prev[k] += h_row[k] * z;
    }
  }
  return out;
}

}  // namespace maneuver::nn
