#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <unordered_set>
#include <vector>

#include "mrunet/data.hpp"
#include "mrunet/loss.hpp"
#include "mrunet/metrics.hpp"
#include "mrunet/network.hpp"

namespace mrunet {

struct TrainConfig {
  std::size_t epochs = 150;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon_adam = 1e-8;
  std::uint64_t seed = 0;
  bool shuffle = true;

  void validate() const {
    if (epochs < 1) throw usage_error("epochs must be >= 1");
    if (batch_size < 1) throw usage_error("batch size must be >= 1");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
      throw usage_error("Adam betas must lie in (0, 1)");
    if (!(learning_rate > 0.0)) throw usage_error("learning rate must be positive");
  }
};

/// First/second moment estimates, one pair per parameter tensor.
template <Real T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::size_t t = 0;
};

/// One Adam update of `params` in place from `grads`.
template <Real T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads, AdamState<T>& state,
               const TrainConfig& cfg) {
  if (params.size() != grads.size()) throw shape_error("adam_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size()) throw shape_error("adam_step: state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i)
    require_same_shape(params[i]->shape(), grads[i]->shape(), "adam_step");

  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->values();
    const auto g = grads[i]->values();
    auto m = state.m[i].values();
    auto v = state.v[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      const double m_hat = static_cast<double>(m[j]) / c1;
      const double v_hat = static_cast<double>(v[j]) / c2;
      p[j] -= static_cast<T>(cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon_adam));
    }
  }
}

/// Adam over graph leaves; a leaf without a gradient counts as zero gradient.
template <Real T>
void adam_step(const std::vector<NamedParam<T>>& params, AdamState<T>& state, const TrainConfig& cfg) {
  std::vector<Tensor<T>> zeros;
  zeros.reserve(params.size());
  std::vector<Tensor<T>*> values;
  std::vector<const Tensor<T>*> grads;
  for (const auto& p : params) {
    values.push_back(&p.var->value);
    if (p.var->has_grad()) {
      grads.push_back(&p.var->grad);
    } else {
      zeros.emplace_back(p.var->value.shape());
      grads.push_back(&zeros.back());
    }
  }
  adam_step<T>(values, grads, state, cfg);
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_jaccard = 0.0;
};

struct RunReport {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_jaccard = 0.0;
};

struct Evaluation {
  double loss = 0.0;     // mean per-image BCE
  double jaccard = 0.0;  // mean per-image Jaccard
  std::vector<double> per_sample;
};

namespace detail {

template <Real T>
std::pair<Tensor<T>, Tensor<T>> assemble_batch(const Dataset& d, std::span<const std::size_t> idx) {
  const Sample& first = d.samples.at(idx[0]);
  const std::size_t h = first.image.extent(0), w = first.image.extent(1), c = first.image.extent(2);
  Tensor<T> x(Shape{idx.size(), h, w, c});
  Tensor<T> y(Shape{idx.size(), h, w, 1});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const Sample& s = d.samples.at(idx[b]);
    if (s.image.shape() != first.image.shape())
      throw shape_error("batch: sample " + s.id + " has shape " + shape_string(s.image.shape()) +
                        ", expected " + shape_string(first.image.shape()));
    std::copy(s.image.values().begin(), s.image.values().end(), x.data() + b * h * w * c);
    for (std::size_t i = 0; i < h * w; ++i) y[b * h * w + i] = static_cast<T>(s.mask[i]);
  }
  return {std::move(x), std::move(y)};
}

}  // namespace detail

/// Inference-mode loss and Jaccard (threshold 0.5) over a dataset.
template <Real T>
Evaluation evaluate(Network<T>& net, const Dataset& data, std::size_t batch_size = 16) {
  Evaluation ev;
  if (data.size() == 0) return ev;
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  double loss = 0.0;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t len = std::min(batch_size, order.size() - start);
    auto [x, y] = detail::assemble_batch<T>(data, std::span(order).subspan(start, len));
    const Tensor<T> pred = net.predict(x);
    const std::size_t per = pred.size() / len;
    for (std::size_t b = 0; b < len; ++b) {
      const Shape one{per};
      Tensor<T> p(one, std::vector<T>(pred.data() + b * per, pred.data() + (b + 1) * per));
      Tensor<T> m(one, std::vector<T>(y.data() + b * per, y.data() + (b + 1) * per));
      loss += static_cast<double>(bce_image(m, p));
      ev.per_sample.push_back(jaccard(BinaryMask::from_tensor(m), binarize(p, 0.5)));
    }
  }
  ev.loss = loss / static_cast<double>(data.size());
  double j = 0.0;
  for (double v : ev.per_sample) j += v;
  ev.jaccard = j / static_cast<double>(ev.per_sample.size());
  return ev;
}

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  /// Called whenever an epoch sets a new best validation Jaccard.
  std::function<void(const EpochRecord&)> on_best;
};

/// Fixed-epoch training with per-epoch validation; the best epoch is the
/// first one reaching the maximum validation Jaccard.
template <Real T>
RunReport train(Network<T>& net, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                const TrainHooks& hooks = {}) {
  cfg.validate();
  if (net.graph().rank() != 2) throw unsupported_rank_error("train: only rank-2 models can be trained");
  if (train_set.size() == 0) throw invalid_batch_error("train: empty training set");
  std::unordered_set<std::string> train_ids;
  for (const auto& s : train_set.samples) train_ids.insert(s.id);
  for (const auto& s : val_set.samples)
    if (train_ids.count(s.id)) throw invalid_split_error("train: sample " + s.id + " is in both train and val");

  const auto params = net.parameters();
  AdamState<T> adam;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  RunReport report;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    try {
      if (cfg.shuffle) std::shuffle(order.begin(), order.end(), rng);
      double loss_sum = 0.0;
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t len = std::min(cfg.batch_size, order.size() - start);
        auto [x, y] = detail::assemble_batch<T>(train_set, std::span(order).subspan(start, len));
        net.zero_grad();
        const Var<T> loss = bce_loss(net.forward(x, Mode::training), y);
        backward(loss);
        adam_step(params, adam, cfg);
        for (const auto& p : params)
          if (!p.var->value.all_finite()) throw numeric_error("parameter " + p.name + " became non-finite");
        loss_sum += static_cast<double>(loss->value[0]) * static_cast<double>(len);
      }
      rec.train_loss = loss_sum / static_cast<double>(order.size());
      const Evaluation ev = evaluate(net, val_set, cfg.batch_size);
      rec.val_loss = ev.loss;
      rec.val_jaccard = ev.jaccard;
    } catch (const numeric_error& e) {
      throw training_aborted(epoch, e.what());
    }
    report.history.push_back(rec);
    const bool best = report.best_epoch == 0 || rec.val_jaccard > report.best_val_jaccard;
    if (best) {
      report.best_epoch = epoch;
      report.best_val_jaccard = rec.val_jaccard;
    }
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (best && hooks.on_best) hooks.on_best(rec);
  }
  net.zero_grad();
  return report;
}

}  // namespace mrunet
