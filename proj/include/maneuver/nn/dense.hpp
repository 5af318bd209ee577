#pragma once

#include <span>
#include <vector>

#include "maneuver/tensor.hpp"

namespace maneuver::nn {

template <std::floating_point T>
void check_dense_shapes(std::size_t in, std::size_t out, const Param<T>& W, const Param<T>& b) {
  if (W.value.rank() != 2 || W.value.dim(0) != out || W.value.dim(1) != in ||
      b.value.size() != out) {
    fail(ErrorKind::ShapeMismatch, "dense: W " + shape_to_string(W.value.shape()) + ", b " +
                                       shape_to_string(b.value.shape()) + ", x[" +
                                       std::to_string(in) + "] -> y[" + std::to_string(out) + "]");
  }
}

// y = W x + b, W is [out x in].
template <std::floating_point T>
void dense_forward(std::span<const T> x, const Param<T>& W, const Param<T>& b, std::span<T> y) {
  check_dense_shapes(x.size(), y.size(), W, b);
  const std::size_t n = x.size();
  const T* w = W.value.data();
  for (std::size_t r = 0; r < y.size(); ++r) {
    T acc = b.value[r];
    const T* row = w + r * n;
    for (std::size_t c = 0; c < n; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

template <std::floating_point T>
std::vector<T> dense(std::span<const T> x, const Param<T>& W, const Param<T>& b) {
  std::vector<T> y(W.value.rank() == 2 ? W.value.dim(0) : 0);
  dense_forward<T>(x, W, b, y);
  return y;
}

// Accumulates dW += gy (x)^T and db += gy. When dx is non-empty it receives
// W^T gy (overwritten, not accumulated).
template <std::floating_point T>
void dense_backward(std::span<const T> x, std::span<const T> gy, Param<T>& W, Param<T>& b,
                    std::span<T> dx) {
  check_dense_shapes(x.size(), gy.size(), W, b);
  const std::size_t n = x.size();
  if (!dx.empty()) {
    if (dx.size() != n) fail(ErrorKind::ShapeMismatch, "dense backward: dx size");
    std::fill(dx.begin(), dx.end(), T{0});
  }
  const T* w = W.value.data();
  T* gw = W.grad.data();
  for (std::size_t r = 0; r < gy.size(); ++r) {
    const T g = gy[r];
    b.grad[r] += g;
    if (g == T{0}) continue;
    T* grow = gw + r * n;
    for (std::size_t c = 0; c < n; ++c) grow[c] += g * x[c];
    if (!dx.empty()) {
      const T* row = w + r * n;
      for (std::size_t c = 0; c < n; ++c) dx[c] += row[c] * g;
    }
  }
}

}  // namespace maneuver::nn
