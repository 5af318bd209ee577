#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <type_traits>
#include <vector>

#include "maneuver/tensor.hpp"

namespace maneuver::nn {

enum class Mode { Train, Eval };

/// Per-feature normalization of a [B x D] batch of fused vectors.
///
/// Train mode standardizes with the statistics of the (valid) rows of the
/// batch, then applies gamma/beta and folds the batch statistics into the
/// running estimates. Eval mode standardizes with the running estimates.
/// Running variance is tracked with the unbiased batch variance; the
/// normalization itself uses the biased one.
template <std::floating_point T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
  Param<T> gamma;
  Param<T> beta;
  Mode mode = Mode::Train;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t features, T momentum_ = T(0.1), T eps_ = T(1e-5))
      : running_mean(features, T{0}),
        running_var(features, T{1}),
        momentum(momentum_),
        eps(eps_),
        gamma("bn.gamma", Tensor<T>({features}, T{1})),
        beta("bn.beta", Shape{features}) {}

  std::size_t features() const noexcept { return running_mean.size(); }
};

template <std::floating_point T>
struct BatchNormCache {
  std::size_t batch = 0;
  std::size_t features = 0;
  std::vector<T> xhat;     // [B x D]
  std::vector<T> inv_std;  // [D]
  std::vector<bool> valid; // [B]
  std::size_t n_valid = 0;
  bool batch_stats = false;
};

/// Forwards X [B x D]. `valid` (optional, size B) selects the rows that
/// contribute to batch statistics and receive gradient; other rows are
/// normalized with the same statistics but are otherwise inert. In train
/// mode fewer than two valid rows raise BatchTooSmall unless
/// `allow_fallback` is set, in which case the running statistics are used
/// for that call and left untouched.
template <std::floating_point T>
Tensor<T> batchnorm_forward(const Tensor<T>& X, BatchNormState<T>& state,
                            std::type_identity_t<BatchNormCache<T>>* cache = nullptr,
                            std::span<const std::uint8_t> valid = {}, bool allow_fallback = false,
                            bool update_running = true) {
  if (X.rank() != 2 || X.dim(1) != state.features()) {
    fail(ErrorKind::ShapeMismatch, "batchnorm: input " + shape_to_string(X.shape()) +
                                       " vs " + std::to_string(state.features()) + " features");
  }
  const std::size_t B = X.dim(0);
  const std::size_t D = X.dim(1);
  std::vector<bool> row_valid(B, true);
  if (!valid.empty()) {
    if (valid.size() != B) fail(ErrorKind::ShapeMismatch, "batchnorm: mask size");
    for (std::size_t r = 0; r < B; ++r) row_valid[r] = valid[r] != 0;
  }
  std::size_t n_valid = 0;
  for (bool v : row_valid) n_valid += v ? 1 : 0;

  bool use_batch = state.mode == Mode::Train;
  if (use_batch && n_valid < 2) {
    if (!allow_fallback) {
      fail(ErrorKind::BatchTooSmall, "train-mode batchnorm needs >= 2 rows, got " +
                                         std::to_string(n_valid));
    }
    use_batch = false;
  }

  std::vector<T> mean(D), var(D);
  if (use_batch) {
    for (std::size_t r = 0; r < B; ++r) {
      if (!row_valid[r]) continue;
      for (std::size_t d = 0; d < D; ++d) mean[d] += X(r, d);
    }
    for (auto& m : mean) m /= static_cast<T>(n_valid);
    for (std::size_t r = 0; r < B; ++r) {
      if (!row_valid[r]) continue;
      for (std::size_t d = 0; d < D; ++d) {
        const T diff = X(r, d) - mean[d];
        var[d] += diff * diff;
      }
    }
    for (auto& v : var) v /= static_cast<T>(n_valid);
    if (update_running) {
      const T m = state.momentum;
      const T unbias = static_cast<T>(n_valid) / static_cast<T>(n_valid - 1);
      for (std::size_t d = 0; d < D; ++d) {
        state.running_mean[d] = (T{1} - m) * state.running_mean[d] + m * mean[d];
        state.running_var[d] = (T{1} - m) * state.running_var[d] + m * var[d] * unbias;
      }
    }
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }

  std::vector<T> inv_std(D);
  for (std::size_t d = 0; d < D; ++d) inv_std[d] = T{1} / std::sqrt(var[d] + state.eps);

  Tensor<T> Y(X.shape());
  std::vector<T> xhat(B * D);
  for (std::size_t r = 0; r < B; ++r) {
    for (std::size_t d = 0; d < D; ++d) {
      const T xh = (X(r, d) - mean[d]) * inv_std[d];
      xhat[r * D + d] = xh;
      Y(r, d) = state.gamma.value[d] * xh + state.beta.value[d];
    }
  }
  if (cache) {
    cache->batch = B;
    cache->features = D;
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->valid = std::move(row_valid);
    cache->n_valid = n_valid;
    cache->batch_stats = use_batch;
  }
  return Y;
}

/// Returns dL/dX for rows marked valid (zero rows elsewhere) and
/// accumulates gamma/beta gradients.
template <std::floating_point T>
Tensor<T> batchnorm_backward(const Tensor<T>& dY, BatchNormState<T>& state,
                             const BatchNormCache<T>& cache) {
  const std::size_t B = cache.batch;
  const std::size_t D = cache.features;
  if (dY.rank() != 2 || dY.dim(0) != B || dY.dim(1) != D) {
    fail(ErrorKind::ShapeMismatch, "batchnorm backward: upstream gradient shape");
  }
  Tensor<T> dX(dY.shape());
  std::vector<T> sum_dxhat(D), sum_dxhat_xhat(D);
  for (std::size_t r = 0; r < B; ++r) {
    if (!cache.valid[r]) continue;
    for (std::size_t d = 0; d < D; ++d) {
      const T g = dY(r, d);
      const T xh = cache.xhat[r * D + d];
      state.gamma.grad[d] += g * xh;
      state.beta.grad[d] += g;
      const T dxh = g * state.gamma.value[d];
      sum_dxhat[d] += dxh;
      sum_dxhat_xhat[d] += dxh * xh;
    }
  }
  const T n = static_cast<T>(cache.n_valid);
  for (std::size_t r = 0; r < B; ++r) {
    if (!cache.valid[r]) continue;
    for (std::size_t d = 0; d < D; ++d) {
      const T dxh = dY(r, d) * state.gamma.value[d];
      if (cache.batch_stats) {
        const T xh = cache.xhat[r * D + d];
        dX(r, d) = cache.inv_std[d] / n * (n * dxh - sum_dxhat[d] - xh * sum_dxhat_xhat[d]);
      } else {
        dX(r, d) = dxh * cache.inv_std[d];
      }
    }
  }
  return dX;
}

}  // namespace maneuver::nn
