#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "maneuver/tensor.hpp"

namespace maneuver::nn {

template <std::floating_point T>
std::vector<T> softmax(std::span<const T> logits) {
  std::vector<T> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const T mx = *std::max_element(p.begin(), p.end());
  T sum{0};
  for (auto& v : p) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (auto& v : p) v /= sum;
  return p;
}

template <std::floating_point T>
std::vector<T> softmax(const std::vector<T>& logits) {
  return softmax(std::span<const T>(logits));
}

inline constexpr double kMinTargetProb = 1e-12;

template <std::floating_point T>
struct FocalLossResult {
  T loss;
  std::vector<T> grad_logits;
};

/// Class-weighted focal loss on softmax probabilities:
///   loss = -alpha[t] * (1 - p_t)^gamma * log(p_t)
/// grad_logits is the gradient of that loss with respect to the logits that
/// produced `probs`.
template <std::floating_point T>
FocalLossResult<T> focal_loss(std::span<const T> probs, int target, T gamma,
                              std::span<const T> alpha) {
  const auto K = static_cast<int>(probs.size());
  if (target < 0 || target >= K) {
    fail(ErrorKind::BadTarget, "target " + std::to_string(target) + " outside [0, " +
                                   std::to_string(K) + ")");
  }
  if (!alpha.empty() && alpha.size() != probs.size()) {
    fail(ErrorKind::ShapeMismatch, "focal_loss: alpha size");
  }
  const T a = alpha.empty() ? T{1} : alpha[static_cast<std::size_t>(target)];
  const T p = std::max(probs[static_cast<std::size_t>(target)], static_cast<T>(kMinTargetProb));
  const T q = T{1} - p;
  const T log_p = std::log(p);
  const T mod = gamma == T{0} ? T{1} : std::pow(q, gamma);
  FocalLossResult<T> r{-a * mod * log_p, std::vector<T>(probs.size())};

  // d loss / d z_j = -a * s(p) * (delta_tj - p_j),
  // s(p) = (1-p)^gamma - gamma * p * (1-p)^(gamma-1) * log p
  T s = mod;
  if (gamma != T{0} && q > T{0}) s -= gamma * p * std::pow(q, gamma - T{1}) * log_p;
  for (int j = 0; j < K; ++j) {
    const T delta = j == target ? T{1} : T{0};
    r.grad_logits[static_cast<std::size_t>(j)] = -a * s * (delta - probs[static_cast<std::size_t>(j)]);
  }
  return r;
}

template <std::floating_point T>
FocalLossResult<T> focal_loss(const std::vector<T>& probs, int target, T gamma,
                              const std::vector<T>& alpha) {
  return focal_loss(std::span<const T>(probs), target, gamma, std::span<const T>(alpha));
}

template <std::floating_point T>
T cross_entropy(std::span<const T> probs, int target) {
  return -std::log(std::max(probs[static_cast<std::size_t>(target)],
                            static_cast<T>(kMinTargetProb)));
}

}  // namespace maneuver::nn
