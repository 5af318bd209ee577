#pragma once

#include <span>

#include "maneuver/tensor.hpp"

namespace maneuver::nn {

// Pointwise convolution over an H x W x Cin tensor stored channel-last. The
// same [Cin x Cout] kernel and [Cout] bias are applied at every position.
template <std::floating_point T>
void check_conv1x1_shapes(const Shape& in_shape, const Param<T>& W, const Param<T>& b) {
  if (in_shape.size() != 3 || W.value.rank() != 2 || W.value.dim(0) != in_shape[2] ||
      b.value.size() != W.value.dim(1)) {
    fail(ErrorKind::ShapeMismatch, "conv1x1: x " + shape_to_string(in_shape) + ", W " +
                                       shape_to_string(W.value.shape()) + ", b " +
                                       shape_to_string(b.value.shape()));
  }
}

inline Shape conv1x1_output_shape(const Shape& in_shape, std::size_t out_channels) {
  return {in_shape.at(0), in_shape.at(1), out_channels};
}

/// Flat-buffer form used by the model: x holds positions*cin values and y
/// receives positions*cout values.
template <std::floating_point T>
void conv1x1_forward(std::span<const T> x, std::size_t positions, const Param<T>& W,
                     const Param<T>& b, std::span<T> y) {
  const std::size_t cin = W.value.dim(0);
  const std::size_t cout = W.value.dim(1);
  if (x.size() != positions * cin || y.size() != positions * cout) {
    fail(ErrorKind::ShapeMismatch, "conv1x1: buffer sizes");
  }
  const T* w = W.value.data();
  for (std::size_t p = 0; p < positions; ++p) {
    const T* xp = x.data() + p * cin;
    T* yp = y.data() + p * cout;
    for (std::size_t o = 0; o < cout; ++o) yp[o] = b.value[o];
    for (std::size_t i = 0; i < cin; ++i) {
      const T xi = xp[i];
      const T* wrow = w + i * cout;
      for (std::size_t o = 0; o < cout; ++o) yp[o] += xi * wrow[o];
    }
  }
}

template <std::floating_point T>
void conv1x1_backward(std::span<const T> x, std::size_t positions, std::span<const T> gy,
                      Param<T>& W, Param<T>& b, std::span<T> dx) {
  const std::size_t cin = W.value.dim(0);
  const std::size_t cout = W.value.dim(1);
  if (x.size() != positions * cin || gy.size() != positions * cout ||
      (!dx.empty() && dx.size() != x.size())) {
    fail(ErrorKind::ShapeMismatch, "conv1x1 backward: buffer sizes");
  }
  const T* w = W.value.data();
  T* gw = W.grad.data();
  for (std::size_t p = 0; p < positions; ++p) {
    const T* xp = x.data() + p * cin;
    const T* gp = gy.data() + p * cout;
    for (std::size_t o = 0; o < cout; ++o) b.grad[o] += gp[o];
    for (std::size_t i = 0; i < cin; ++i) {
      const T xi = xp[i];
      T* grow = gw + i * cout;
      const T* wrow = w + i * cout;
      T acc{0};
      for (std::size_t o = 0; o < cout; ++o) {
        grow[o] += xi * gp[o];
        acc += wrow[o] * gp[o];
      }
      if (!dx.empty()) dx[p * cin + i] = acc;
    }
  }
}

template <std::floating_point T>
Tensor<T> conv1x1(const Tensor<T>& x, const Param<T>& W, const Param<T>& b) {
  check_conv1x1_shapes(x.shape(), W, b);
  Tensor<T> y(conv1x1_output_shape(x.shape(), W.value.dim(1)));
  conv1x1_forward<T>(x.span(), x.dim(0) * x.dim(1), W, b, y.span());
  return y;
}

/// Tensor form; dx (if non-null) is resized to x's shape and overwritten.
template <std::floating_point T>
void conv1x1_backward(const Tensor<T>& x, const Tensor<T>& gy, Param<T>& W, Param<T>& b,
                      Tensor<T>* dx = nullptr) {
  check_conv1x1_shapes(x.shape(), W, b);
  if (gy.shape() != conv1x1_output_shape(x.shape(), W.value.dim(1))) {
    fail(ErrorKind::ShapeMismatch, "conv1x1 backward: upstream gradient shape");
  }
  std::span<T> dx_span;
  if (dx) {
    *dx = Tensor<T>(x.shape());
    dx_span = dx->span();
  }
  conv1x1_backward<T>(x.span(), x.dim(0) * x.dim(1), gy.span(), W, b, dx_span);
}

}  // namespace maneuver::nn
