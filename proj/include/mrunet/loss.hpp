#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "mrunet/autodiff.hpp"

namespace mrunet {

inline constexpr double prediction_clamp = 1e-7;

namespace detail {

template <Real T>
T clamp_prediction(T p) {
  return std::clamp(p, T(prediction_clamp), T(1.0 - prediction_clamp));
}

}  // namespace detail

/// Pixel-summed binary cross-entropy of one image.
template <Real T>
T bce_image(const Tensor<T>& mask, const Tensor<T>& prediction) {
  require_same_shape(mask.shape(), prediction.shape(), "bce_image");
  double total = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double y = mask[i];
    const double p = detail::clamp_prediction(static_cast<double>(prediction[i]));
    total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return static_cast<T>(total);
}

/// Mean of bce_image over (mask, prediction) pairs.
template <Real T>
T batch_loss(const std::vector<std::pair<Tensor<T>, Tensor<T>>>& batch) {
  if (batch.empty()) throw invalid_batch_error("batch_loss: empty batch");
  double total = 0.0;
  for (const auto& [mask, prediction] : batch) total += bce_image(mask, prediction);
  return static_cast<T>(total / static_cast<double>(batch.size()));
}

/// Differentiable batch loss over a prediction of shape [N, ...] against
/// masks of the same shape: (1/N) * sum of per-image BCE. The clamp is
/// treated as identity in the backward pass.
template <Real T>
Var<T> bce_loss(const Var<T>& prediction, const Tensor<T>& masks) {
  require_same_shape(prediction->value.shape(), masks.shape(), "bce_loss");
  const std::size_t n = masks.extent(0);
  if (n == 0) throw invalid_batch_error("bce_loss: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const double y = masks[i];
    const double p = detail::clamp_prediction(static_cast<double>(prediction->value[i]));
    total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  const T loss = static_cast<T>(total / static_cast<double>(n));
  return make_node<T>("bce_loss", Tensor<T>(Shape{1}, loss), {prediction},
                      [masks, n](Node<T>& self) {
    auto& pp = self.parents[0];
    T* gp = pp->grad_buffer().data();
    const T scale = self.grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < masks.size(); ++i) {
      const T y = masks[i];
      const T p = detail::clamp_prediction(pp->value[i]);
      gp[i] += scale * (-y / p + (T(1) - y) / (T(1) - p));
    }
  });
}

}  // namespace mrunet
