#pragma once

// Central finite-difference verification of the autodiff engine, in 64-bit.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "mrunet/autodiff.hpp"
#include "mrunet/blocks.hpp"
#include "mrunet/loss.hpp"
#include "mrunet/models.hpp"
#include "mrunet/network.hpp"
#include "mrunet/nn_ops.hpp"

namespace mrunet {

struct GradCheckOptions {
  double step = 1e-5;
  double threshold = 1e-6;
  /// Skip coordinates whose ±step perturbation changes a ReLU sign or a
  /// max-pool argmax anywhere in the graph.
  bool nonsmooth = false;
  /// 0 checks every coordinate; otherwise a seeded sample per input.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
  /// Lower bound of the error denominator.
  double denominator_floor = 1e-4;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double threshold = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool passed = false;
};

using LossFn = std::function<Var<double>()>;

/// |analytic - numeric| / max(|analytic|, |numeric|, floor), maximized over
/// the checked coordinates of every input.
inline GradCheckResult check_gradients(const std::string& name, const std::vector<Var<double>>& inputs,
                                       const LossFn& loss, const GradCheckOptions& opt) {
  GradCheckResult r;
  r.name = name;
  r.threshold = opt.threshold;

  auto evaluate = [&](std::uint64_t& trace_hash) {
    NonsmoothTrace trace;
    ScopedTrace scope(trace);
    const double v = loss()->value[0];
    trace_hash = trace.hash();
    return v;
  };

  for (const auto& in : inputs) in->zero_grad();
  std::uint64_t base_trace = 0;
  {
    NonsmoothTrace trace;
    ScopedTrace scope(trace);
    const Var<double> root = loss();
    base_trace = trace.hash();
    backward(root);
  }
  std::vector<Tensor<double>> analytic;
  for (const auto& in : inputs)
    analytic.push_back(in->has_grad() ? in->grad : Tensor<double>(in->value.shape()));

  std::mt19937_64 rng(opt.seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& value = inputs[k]->value;
    std::vector<std::size_t> coords(value.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (opt.max_coords_per_input && coords.size() > opt.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.max_coords_per_input);
    }
    for (auto i : coords) {
      const double saved = value[i];
      std::uint64_t tp = 0, tm = 0;
      value[i] = saved + opt.step;
      const double fp = evaluate(tp);
      value[i] = saved - opt.step;
      const double fm = evaluate(tm);
      value[i] = saved;
      if (opt.nonsmooth && (tp != base_trace || tm != base_trace)) {
        ++r.skipped;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * opt.step);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.denominator_floor});
      r.max_rel_error = std::max(r.max_rel_error, std::abs(a - numeric) / denom);
      ++r.checked;
    }
  }
  for (const auto& in : inputs) in->zero_grad();
  r.passed = r.checked > 0 && r.max_rel_error < opt.threshold;
  return r;
}

namespace detail {

inline Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t(std::move(s));
  for (auto& v : t.values()) v = d(rng);
  return t;
}

/// Scalar probe sum(w * y) with fixed random weights.
inline Var<double> project(const Var<double>& y, const Tensor<double>& weights) {
  return sum(mul(y, constant(weights)));
}

inline GradCheckResult check_network(const std::string& name, ModelGraph graph, std::size_t batch,
                                     std::size_t coords_per_tensor, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Network<double> net(std::move(graph), seed);
  for (auto& p : net.parameters()) {
    if (p.name.ends_with("/bias") || p.name.ends_with("/beta")) p.var->value = random_tensor(p.var->value.shape(), rng, -0.1, 0.1);
    if (p.name.ends_with("/gamma")) p.var->value = random_tensor(p.var->value.shape(), rng, 0.5, 1.5);
  }
  const auto& ext = net.graph().input_extents();
  const Tensor<double> x = random_tensor(Shape{batch, ext[0], ext[1], net.graph().in_channels()}, rng, 0.0, 1.0);
  const std::size_t out_channels = net.graph().channels(net.graph().output());
  Tensor<double> masks(Shape{batch, ext[0], ext[1], 1});
  std::bernoulli_distribution coin(0.3);
  for (auto& v : masks.values()) v = coin(rng) ? 1.0 : 0.0;
  const Tensor<double> w = random_tensor(Shape{batch, ext[0], ext[1], out_channels}, rng);
  const double per_pixel = 1.0 / static_cast<double>(ext[0] * ext[1]);

  std::vector<Var<double>> inputs;
  for (auto& p : net.parameters()) inputs.push_back(p.var);
  GradCheckOptions opt;
  opt.threshold = 1e-4;
  opt.nonsmooth = true;
  opt.max_coords_per_input = coords_per_tensor;
  opt.seed = seed;
  return check_gradients(
      name, inputs,
      [&] {
        const Var<double> y = net.forward(x, Mode::training);
        return scale(out_channels == 1 ? bce_loss(y, masks) : project(y, w), per_pixel);
      },
      opt);
}

}  // namespace detail

struct GradCheckCase {
  std::string name;
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

/// Every differentiable op in isolation, the composite blocks, and a tiny
/// MultiResUNet end to end.
inline std::vector<GradCheckCase> gradcheck_suite() {
  using detail::project;
  using detail::random_tensor;
  std::vector<GradCheckCase> cases;

  auto smooth = [](std::uint64_t seed) {
    GradCheckOptions o;
    o.seed = seed;
    return o;
  };
  auto kinked = [](std::uint64_t seed) {
    GradCheckOptions o;
    o.seed = seed;
    o.threshold = 1e-4;
    o.nonsmooth = true;
    return o;
  };

  for (auto kind : {Elementwise::add, Elementwise::sub, Elementwise::mul}) {
    const std::string n = kind == Elementwise::add ? "add" : kind == Elementwise::sub ? "sub" : "mul";
    cases.push_back({n, [kind, n, smooth](std::uint64_t seed) {
                       std::mt19937_64 rng(seed);
                       auto a = leaf(random_tensor({3, 4}, rng));
                       auto b = leaf(random_tensor({3, 4}, rng));
                       const auto w = random_tensor({3, 4}, rng);
                       return check_gradients(n, {a, b}, [&] { return project(elementwise(kind, a, b), w); },
                                              smooth(seed));
                     }});
  }
  cases.push_back({"sum", [smooth](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto x = leaf(random_tensor({2, 3, 4}, rng));
                     return check_gradients("sum", {x}, [&] { return sum(mul(x, x)); }, smooth(seed));
                   }});
  cases.push_back({"scale", [smooth](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto x = leaf(random_tensor({2, 5}, rng));
                     const auto w = random_tensor({2, 5}, rng);
                     return check_gradients("scale", {x}, [&] { return project(scale(x, -2.5), w); }, smooth(seed));
                   }});
  cases.push_back({"concat_channels", [smooth](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto a = leaf(random_tensor({2, 3, 2}, rng));
                     auto b = leaf(random_tensor({2, 3, 3}, rng));
                     const auto w = random_tensor({2, 3, 5}, rng);
                     return check_gradients("concat_channels", {a, b},
                                            [&] { return project(concat_channels(a, b), w); }, smooth(seed));
                   }});
  cases.push_back({"slice_channels", [smooth](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto x = leaf(random_tensor({3, 2, 5}, rng));
                     const auto w = random_tensor({3, 2, 2}, rng);
                     return check_gradients("slice_channels", {x},
                                            [&] { return project(slice_channels(x, 2, 2), w); }, smooth(seed));
                   }});

  struct ConvCase {
    std::string name;
    Shape x;
    std::size_t k, cout, stride;
    Padding pad;
  };
  for (const ConvCase& c : {ConvCase{"conv2d", {1, 5, 5, 2}, 3, 4, 1, Padding::same},
                            ConvCase{"conv2d_1x1", {2, 4, 4, 3}, 1, 2, 1, Padding::same},
                            ConvCase{"conv2d_2x2_same", {1, 5, 5, 2}, 2, 3, 1, Padding::same},
                            ConvCase{"conv2d_5x5", {1, 6, 6, 2}, 5, 2, 1, Padding::same},
                            ConvCase{"conv2d_7x7", {1, 7, 7, 1}, 7, 2, 1, Padding::same},
                            ConvCase{"conv2d_stride2_valid", {1, 6, 6, 2}, 2, 3, 2, Padding::valid},
                            ConvCase{"conv2d_3x3_valid", {2, 5, 4, 2}, 3, 2, 1, Padding::valid}}) {
    cases.push_back({c.name, [c, smooth](std::uint64_t seed) {
                       std::mt19937_64 rng(seed);
                       auto x = leaf(random_tensor(c.x, rng));
                       ConvParams<double> p;
                       p.kernel = leaf(random_tensor({c.k, c.k, c.x[3], c.cout}, rng));
                       p.bias = leaf(random_tensor({c.cout}, rng));
                       p.stride = c.stride;
                       p.padding = c.pad;
                       const auto probe = conv2d(x, p)->value.shape();
                       const auto w = random_tensor(probe, rng);
                       return check_gradients(c.name, {x, p.kernel, p.bias}, [&] { return project(conv2d(x, p), w); },
                                              smooth(seed));
                     }});
  }
  cases.push_back({"conv_transpose2d", [smooth](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto x = leaf(random_tensor({2, 3, 3, 2}, rng));
                     ConvParams<double> p;
                     p.kernel = leaf(random_tensor({2, 2, 2, 3}, rng));
                     p.bias = leaf(random_tensor({3}, rng));
                     p.stride = 2;
                     const auto w = random_tensor({2, 6, 6, 3}, rng);
                     return check_gradients("conv_transpose2d", {x, p.kernel, p.bias},
                                            [&] { return project(conv_transpose2d(x, p), w); }, smooth(seed));
                   }});
  cases.push_back({"maxpool2d", [kinked](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto x = leaf(random_tensor({2, 4, 4, 2}, rng));
                     const auto w = random_tensor({2, 2, 2, 2}, rng);
                     return check_gradients("maxpool2d", {x}, [&] { return project(maxpool2d(x), w); }, kinked(seed));
                   }});
  for (const Mode mode : {Mode::training, Mode::inference}) {
    const std::string n = mode == Mode::training ? "batchnorm_training" : "batchnorm_inference";
    cases.push_back({n, [mode, n, smooth](std::uint64_t seed) {
                       std::mt19937_64 rng(seed);
                       auto x = leaf(random_tensor({2, 3, 3, 3}, rng, -2.0, 2.0));
                       auto p = BatchNormParams<double>::identity(3);
                       p.gamma->value = random_tensor({3}, rng, 0.5, 1.5);
                       p.beta->value = random_tensor({3}, rng);
                       p.running_mean = random_tensor({3}, rng);
                       p.running_var = random_tensor({3}, rng, 0.5, 2.0);
                       const auto w = random_tensor({2, 3, 3, 3}, rng);
                       return check_gradients(n, {x, p.gamma, p.beta}, [&] { return project(batchnorm(x, p, mode), w); },
                                              smooth(seed));
                     }});
  }
  cases.push_back({"relu", [kinked](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto x = leaf(random_tensor({4, 4}, rng));
                     const auto w = random_tensor({4, 4}, rng);
                     return check_gradients("relu", {x}, [&] { return project(relu(x), w); }, kinked(seed));
                   }});
  cases.push_back({"sigmoid", [smooth](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto x = leaf(random_tensor({4, 4}, rng, -4.0, 4.0));
                     const auto w = random_tensor({4, 4}, rng);
                     return check_gradients("sigmoid", {x}, [&] { return project(sigmoid(x), w); }, smooth(seed));
                   }});
  cases.push_back({"bce_loss", [smooth](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     auto p = leaf(random_tensor({2, 4, 4, 1}, rng, 0.05, 0.95));
                     Tensor<double> y(Shape{2, 4, 4, 1});
                     std::bernoulli_distribution coin(0.5);
                     for (auto& v : y.values()) v = coin(rng) ? 1.0 : 0.0;
                     return check_gradients("bce_loss", {p}, [&] { return bce_loss(p, y); }, smooth(seed));
                   }});
  cases.push_back({"multires_block", [](std::uint64_t seed) {
                     return detail::check_network(
                         "multires_block", multires_block_graph(3, compute_block_widths(8, default_alpha), BlockVariant::multires, {8, 8}),
                         2, 8, seed);
                   }});
  cases.push_back({"res_path", [](std::uint64_t seed) {
                     return detail::check_network("res_path", res_path_graph(3, 5, 4, {8, 8}), 2, 8, seed);
                   }});
  cases.push_back({"multiresunet_tiny", [](std::uint64_t seed) {
                     return detail::check_network("multiresunet_tiny", build_multiresunet(2, {16, 16}, 3, 8), 2, 3, seed);
                   }});
  return cases;
}

inline void print_gradcheck_table(std::ostream& os, const std::vector<GradCheckResult>& results) {
  os << std::left << std::setw(24) << "op" << std::right << std::setw(9) << "checked" << std::setw(9) << "skipped"
     << std::setw(14) << "max_rel_err" << std::setw(11) << "threshold" << "  result\n";
  for (const auto& r : results) {
    os << std::left << std::setw(24) << r.name << std::right << std::setw(9) << r.checked << std::setw(9) << r.skipped
       << std::setw(14) << std::scientific << std::setprecision(3) << r.max_rel_error << std::setw(11)
       << std::setprecision(0) << r.threshold << std::defaultfloat << "  " << (r.passed ? "PASS" : "FAIL") << '\n';
  }
}

}  // namespace mrunet
