#pragma once

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "maneuver/error.hpp"

namespace maneuver {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

// Dense row-major array. The flat buffer always holds shape_volume(shape)
// elements.
template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_volume(shape_)) {
      fail(ErrorKind::ShapeMismatch,
           "tensor data length " + std::to_string(data_.size()) +
               " does not match shape " + shape_to_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  std::vector<T>& values() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // 2-D accessors; callers guarantee rank() == 2.
  T& operator()(std::size_t r, std::size_t c) noexcept {
    return data_[r * shape_[1] + c];
  }
  const T& operator()(std::size_t r, std::size_t c) const noexcept {
    return data_[r * shape_[1] + c];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

// A trainable value together with its accumulated gradient.
template <std::floating_point T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string param_name, Shape shape)
      : name(std::move(param_name)), value(shape), grad(shape) {}
  Param(std::string param_name, Tensor<T> initial)
      : name(std::move(param_name)),
        value(std::move(initial)),
        grad(value.shape()) {}

  std::size_t size() const noexcept { return value.size(); }
  void zero_grad() { grad.fill(T{0}); }
};

}  // namespace maneuver
