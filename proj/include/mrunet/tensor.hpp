#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mrunet/error.hpp"

namespace mrunet {

using Shape = std::vector<std::size_t>;

/// The two supported element widths. Gradient checks run in `check`,
/// training in `train`.
enum class Precision { check, train };

template <class T>
concept Real = std::same_as<T, float> || std::same_as<T, double>;

template <Real T>
constexpr Precision precision_of() {
  return std::same_as<T, double> ? Precision::check : Precision::train;
}

inline std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major array. The last axis is the channel axis wherever an op
/// cares about channels.
template <Real T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    validate(shape_);
    data_.assign(shape_numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate(shape_);
    if (data_.size() != shape_numel(shape_))
      throw shape_error("tensor data has " + std::to_string(data_.size()) +
                        " elements, shape " + shape_string(shape_) + " needs " +
                        std::to_string(shape_numel(shape_)));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t channels() const { return shape_.back(); }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Row-major multi-index access, mostly for tests.
  T& at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
  const T& at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != size())
      throw shape_error("cannot reshape " + shape_string(shape_) + " to " + shape_string(s));
    return Tensor(std::move(s), data_);
  }

  template <Real U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void validate(const Shape& s) {
    if (s.empty()) throw invalid_shape_error("tensor shape must have at least one axis");
    for (auto e : s)
      if (e == 0) throw invalid_shape_error("zero extent in shape " + shape_string(s));
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) throw shape_error("index rank mismatch");
    std::size_t off = 0;
    std::size_t axis = 0;
    for (auto i : idx) {
      if (i >= shape_[axis]) throw shape_error("index out of range");
      off = off * shape_[axis++] + i;
    }
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

/// Negative extents are rejected with invalid_shape_error.
template <Real T>
Tensor<T> tensor_full(std::span<const long long> extents, T value) {
  if (extents.empty()) throw invalid_shape_error("tensor_full: empty extent list");
  Shape s;
  for (auto e : extents) {
    if (e < 1) throw invalid_shape_error("tensor_full: extent " + std::to_string(e) + " < 1");
    s.push_back(static_cast<std::size_t>(e));
  }
  return Tensor<T>(std::move(s), value);
}

template <Real T>
Tensor<T> tensor_full(std::initializer_list<long long> extents, T value) {
  return tensor_full<T>(std::span<const long long>(extents.begin(), extents.size()), value);
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw shape_error(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                      shape_string(b));
}

}  // namespace mrunet
