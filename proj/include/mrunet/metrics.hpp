#pragma once

#include <cstdint>
#include <vector>

#include "mrunet/tensor.hpp"

namespace mrunet {

/// Shape-tagged mask whose elements are exactly 0 or 1.
class BinaryMask {
 public:
  BinaryMask() = default;

  BinaryMask(Shape shape, std::vector<std::uint8_t> bits) : shape_(std::move(shape)), bits_(std::move(bits)) {
    if (bits_.size() != shape_numel(shape_)) throw shape_error("BinaryMask: size does not match shape");
    for (auto b : bits_)
      if (b > 1) throw domain_error("BinaryMask: element other than 0/1");
  }

  /// Accepts a tensor that already holds only 0 and 1.
  template <Real T>
  static BinaryMask from_tensor(const Tensor<T>& t) {
    std::vector<std::uint8_t> bits(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i] == T(1)) {
        bits[i] = 1;
      } else if (t[i] != T(0)) {
        throw domain_error("BinaryMask: tensor element is neither 0 nor 1");
      }
    }
    return BinaryMask(t.shape(), std::move(bits));
  }

  template <Real T>
  Tensor<T> to_tensor() const {
    return Tensor<T>(shape_, std::vector<T>(bits_.begin(), bits_.end()));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return bits_.size(); }
  std::uint8_t operator[](std::size_t i) const noexcept { return bits_[i]; }
  const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }

  std::size_t count() const noexcept {
    std::size_t n = 0;
    for (auto b : bits_) n += b;
    return n;
  }

  double coverage() const noexcept {
    return bits_.empty() ? 0.0 : static_cast<double>(count()) / static_cast<double>(bits_.size());
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  Shape shape_;
  std::vector<std::uint8_t> bits_;
};

/// Foreground where prediction >= threshold.
template <Real T>
BinaryMask binarize(const Tensor<T>& prediction, double threshold = 0.5) {
  std::vector<std::uint8_t> bits(prediction.size());
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const T v = prediction[i];
    if (!(v >= T(0) && v <= T(1))) throw domain_error("binarize: prediction outside [0,1]");
    bits[i] = static_cast<double>(v) >= threshold ? 1 : 0;
  }
  return BinaryMask(prediction.shape(), std::move(bits));
}

/// |A ∩ B| / |A ∪ B|. Two empty masks agree perfectly (1.0).
inline double jaccard(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a.shape(), b.shape(), "jaccard");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] & b[i];
    uni += a[i] | b[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Fraction as a percentage.
inline double as_percent(double fraction) { return fraction * 100.0; }

/// Relative improvement of a over b, in percent.
inline double relative_improvement(double a, double b) { return (a - b) / b * 100.0; }

}  // namespace mrunet
