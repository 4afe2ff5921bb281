#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "popdiff/error.hpp"

namespace popdiff {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "," : "") << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array. A rank-0 array (empty shape) holds one scalar.
template <typename T>
class NdArray {
 public:
  using value_type = T;

  NdArray() : data_(1, T(0)) {}

  explicit NdArray(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  NdArray(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("NdArray: data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static NdArray scalar(T v) { return NdArray(Shape{}, std::vector<T>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T item() const {
    if (data_.size() != 1) {
      throw ShapeError("NdArray::item on array of shape " + shape_str(shape_));
    }
    return data_[0];
  }

  bool all_finite() const {
    if constexpr (std::is_same_v<T, float> || std::is_same_v<T, double>) {
      // exponent bits all set <=> inf or nan; branch-free so it vectorizes
      using Bits = std::conditional_t<std::is_same_v<T, float>, std::uint32_t, std::uint64_t>;
      constexpr Bits exp_mask = static_cast<Bits>(
          std::is_same_v<T, float> ? 0x7f800000ull : 0x7ff0000000000000ull);
      Bits bad = 0;
      for (T v : data_) {
        Bits b;
        std::memcpy(&b, &v, sizeof b);
        bad |= static_cast<Bits>((b & exp_mask) == exp_mask);
      }
      return bad == 0;
    } else {
      return std::all_of(data_.begin(), data_.end(),
                         [](T v) { return std::isfinite(static_cast<double>(v)); });
    }
  }

  NdArray reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("reshape " + shape_str(shape_) + " -> " +
                       shape_str(shape));
    }
    return NdArray(std::move(shape), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  NdArray<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return NdArray<U>(shape_, std::move(out));
  }

  friend bool operator==(const NdArray& a, const NdArray& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

}  // namespace popdiff
