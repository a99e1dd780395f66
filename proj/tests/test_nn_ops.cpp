#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mrunet/nn_ops.hpp"

using namespace mrunet;

namespace {

Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(s));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(Conv2d, OnesCountOverlap) {
  auto x = constant(Tensor<double>(Shape{1, 3, 3, 1}, 1.0));
  auto p = ConvParams<double>::zeros(3, 1, 1);
  p.kernel->value.fill(1.0);
  const auto y = conv2d(x, p)->value;
  EXPECT_EQ(y.at({0, 1, 1, 0}), 9.0);
  EXPECT_EQ(y.at({0, 0, 1, 0}), 6.0);
  EXPECT_EQ(y.at({0, 1, 0, 0}), 6.0);
  EXPECT_EQ(y.at({0, 0, 0, 0}), 4.0);
  EXPECT_EQ(y.at({0, 2, 2, 0}), 4.0);
}

TEST(Conv2d, PointwiseIdentity) {
  std::mt19937_64 rng(1);
  auto x = constant(random_tensor({2, 4, 5, 1}, rng));
  auto p = ConvParams<double>::zeros(1, 1, 1);
  p.kernel->value.fill(1.0);
  EXPECT_EQ(conv2d(x, p)->value, x->value);
}

TEST(Conv2d, BiasAdded) {
  auto x = constant(Tensor<double>(Shape{1, 2, 2, 1}, 0.0));
  auto p = ConvParams<double>::zeros(3, 1, 2);
  p.bias->value[0] = 0.5;
  p.bias->value[1] = -2.0;
  const auto y = conv2d(x, p)->value;
  EXPECT_EQ(y.at({0, 1, 1, 0}), 0.5);
  EXPECT_EQ(y.at({0, 1, 1, 1}), -2.0);
}

TEST(Conv2d, MatchesDirectLoop) {
  std::mt19937_64 rng(2);
  const auto xv = random_tensor({2, 5, 6, 3}, rng);
  auto p = ConvParams<double>::zeros(3, 3, 4);
  p.kernel->value = random_tensor({3, 3, 3, 4}, rng);
  p.bias->value = random_tensor({4}, rng);
  const auto y = conv2d(constant(xv), p)->value;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 6; ++j)
        for (std::size_t co = 0; co < 4; ++co) {
          double s = p.bias->value[co];
          for (int a = -1; a <= 1; ++a)
            for (int b = -1; b <= 1; ++b) {
              const int yi = static_cast<int>(i) + a, xj = static_cast<int>(j) + b;
              if (yi < 0 || yi >= 5 || xj < 0 || xj >= 6) continue;
              for (std::size_t ci = 0; ci < 3; ++ci)
                s += xv.at({n, std::size_t(yi), std::size_t(xj), ci}) *
                     p.kernel->value.at({std::size_t(a + 1), std::size_t(b + 1), ci, co});
            }
          EXPECT_NEAR(y.at({n, i, j, co}), s, 1e-12);
        }
}

TEST(Conv2d, SamePaddingPreservesExtents) {
  for (std::size_t k : {1u, 2u, 3u})
    for (std::size_t h : {1u, 4u, 7u}) {
      auto x = constant(Tensor<double>(Shape{1, h, h + 1, 2}, 1.0));
      auto p = ConvParams<double>::zeros(k, 2, 3);
      const auto& s = conv2d(x, p)->value.shape();
      EXPECT_EQ(s, (Shape{1, h, h + 1, 3})) << "k=" << k << " h=" << h;
    }
}

TEST(Conv2d, ChannelMismatch) {
  auto x = constant(Tensor<double>(Shape{1, 4, 4, 2}));
  auto p = ConvParams<double>::zeros(3, 3, 1);
  EXPECT_THROW(conv2d(x, p), shape_error);
}

TEST(Conv2d, KernelLargerThanValidInput) {
  auto x = constant(Tensor<double>(Shape{1, 2, 2, 1}));
  auto p = ConvParams<double>::zeros(3, 1, 1, true, 1, Padding::valid);
  EXPECT_THROW(conv2d(x, p), shape_error);
}

TEST(ConvTranspose2d, SingleCellSpreads) {
  auto x = constant(Tensor<double>(Shape{1, 1, 1, 1}, 2.5));
  auto p = ConvParams<double>::zeros(2, 1, 1, true, 2);
  p.kernel->value.fill(1.0);
  const auto y = conv_transpose2d(x, p)->value;
  EXPECT_EQ(y.shape(), (Shape{1, 2, 2, 1}));
  for (double v : y.values()) EXPECT_EQ(v, 2.5);
}

TEST(ConvTranspose2d, ZeroInputGivesBias) {
  auto x = constant(Tensor<double>(Shape{2, 3, 2, 4}));
  std::mt19937_64 rng(3);
  auto p = ConvParams<double>::zeros(2, 4, 3, true, 2);
  p.kernel->value = random_tensor({2, 2, 4, 3}, rng);
  p.bias->value = Tensor<double>(Shape{3}, std::vector<double>{1, -2, 0.5});
  const auto y = conv_transpose2d(x, p)->value;
  EXPECT_EQ(y.shape(), (Shape{2, 6, 4, 3}));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], p.bias->value[i % 3]);
}

TEST(ConvTranspose2d, DoublesExtents) {
  for (std::size_t h : {1u, 2u, 5u}) {
    auto x = constant(Tensor<double>(Shape{1, h, h + 2, 3}));
    auto p = ConvParams<double>::zeros(2, 3, 5, true, 2);
    EXPECT_EQ(conv_transpose2d(x, p)->value.shape(), (Shape{1, 2 * h, 2 * (h + 2), 5}));
  }
}

TEST(ConvTranspose2d, ChannelMismatch) {
  auto x = constant(Tensor<double>(Shape{1, 2, 2, 3}));
  auto p = ConvParams<double>::zeros(2, 4, 1, true, 2);
  EXPECT_THROW(conv_transpose2d(x, p), shape_error);
}

TEST(ConvTranspose2d, AdjointOfStridedConv) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = 2, h = 3, w = 4, cin = 3, cout = 5;
    const auto k = random_tensor({2, 2, cin, cout}, rng);
    auto up = ConvParams<double>::zeros(2, cin, cout, false, 2);
    up.kernel->value = k;
    auto down = ConvParams<double>::zeros(2, cout, cin, false, 2, Padding::valid);
    for (std::size_t a = 0; a < 2; ++a)
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t co = 0; co < cout; ++co) down.kernel->value.at({a, b, co, ci}) = k.at({a, b, ci, co});

    const auto x = random_tensor({n, h, w, cin}, rng);
    const auto y = random_tensor({n, 2 * h, 2 * w, cout}, rng);
    const double lhs = dot(conv2d(constant(y), down)->value, x);
    const double rhs = dot(y, conv_transpose2d(constant(x), up)->value);
    EXPECT_LT(std::abs(lhs - rhs) / std::max(std::abs(lhs), std::abs(rhs)), 1e-10);
  }
}

TEST(Maxpool2d, Basic) {
  auto x = constant(Tensor<double>(Shape{1, 2, 2, 1}, std::vector<double>{1, 2, 3, 4}));
  const auto y = maxpool2d(x)->value;
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y[0], 4.0);
}

TEST(Maxpool2d, ConstantInput) {
  auto x = constant(Tensor<double>(Shape{2, 4, 6, 3}, -1.25));
  const auto y = maxpool2d(x)->value;
  EXPECT_EQ(y.shape(), (Shape{2, 2, 3, 3}));
  for (double v : y.values()) EXPECT_EQ(v, -1.25);
}

TEST(Maxpool2d, GradientOnePerWindow) {
  std::mt19937_64 rng(5);
  auto x = leaf(random_tensor({2, 4, 6, 3}, rng));
  backward(sum(maxpool2d(x)));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t c = 0; c < 3; ++c) {
          double total = 0.0, best = -1e9, at_best = 0.0;
          std::size_t ones = 0;
          for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 2; ++b) {
              const double g = x->grad.at({n, 2 * i + a, 2 * j + b, c});
              const double v = x->value.at({n, 2 * i + a, 2 * j + b, c});
              total += g;
              ones += g == 1.0;
              if (v > best) {
                best = v;
                at_best = g;
              }
            }
          EXPECT_EQ(total, 1.0);
          EXPECT_EQ(ones, 1u);
          EXPECT_EQ(at_best, 1.0);
        }
}

TEST(Maxpool2d, TiesGoToFirstInScanOrder) {
  auto x = leaf(Tensor<double>(Shape{1, 2, 2, 1}, std::vector<double>{3, 3, 3, 3}));
  backward(sum(maxpool2d(x)));
  EXPECT_EQ(x->grad, Tensor<double>(Shape{1, 2, 2, 1}, std::vector<double>{1, 0, 0, 0}));
}

TEST(Maxpool2d, OddExtentRejected) {
  EXPECT_THROW(maxpool2d(constant(Tensor<double>(Shape{1, 3, 4, 1}))), shape_error);
  EXPECT_THROW(maxpool2d(constant(Tensor<double>(Shape{1, 4, 5, 1}))), shape_error);
}

TEST(BatchNorm, TrainingStandardizes) {
  std::mt19937_64 rng(6);
  auto x = constant(random_tensor({4, 5, 5, 3}, rng, -3.0, 7.0));
  auto p = BatchNormParams<double>::identity(3);
  const auto y = batchnorm(x, p, Mode::training)->value;
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    const std::size_t m = y.size() / 3;
    for (std::size_t i = c; i < y.size(); i += 3) mean += y[i];
    mean /= static_cast<double>(m);
    for (std::size_t i = c; i < y.size(); i += 3) var += (y[i] - mean) * (y[i] - mean);
    var /= static_cast<double>(m);
    EXPECT_NEAR(mean, 0.0, 1e-6);
    EXPECT_NEAR(var, 1.0, 1e-3);
  }
}

TEST(BatchNorm, BiasedVarianceWithoutEpsilon) {
  std::mt19937_64 rng(7);
  auto x = constant(random_tensor({4, 5, 5, 2}, rng, -3.0, 7.0));
  auto p = BatchNormParams<double>::identity(2);
  p.epsilon = 1e-12;
  const auto y = batchnorm(x, p, Mode::training)->value;
  double var = 0.0;
  for (std::size_t i = 0; i < y.size(); i += 2) var += y[i] * y[i];
  EXPECT_NEAR(var / static_cast<double>(y.size() / 2), 1.0, 1e-4);
}

TEST(BatchNorm, GammaBetaScaleAndShift) {
  std::mt19937_64 rng(8);
  auto x = constant(random_tensor({3, 4, 4, 1}, rng));
  auto p = BatchNormParams<double>::identity(1);
  p.epsilon = 1e-12;
  p.gamma->value.fill(2.0);
  p.beta->value.fill(5.0);
  const auto y = batchnorm(x, p, Mode::training)->value;
  double mean = 0.0, var = 0.0;
  for (double v : y.values()) mean += v;
  mean /= static_cast<double>(y.size());
  for (double v : y.values()) var += (v - mean) * (v - mean);
  EXPECT_NEAR(mean, 5.0, 1e-6);
  EXPECT_NEAR(std::sqrt(var / static_cast<double>(y.size())), 2.0, 1e-4);
}

TEST(BatchNorm, InferenceIdentity) {
  std::mt19937_64 rng(9);
  auto x = constant(random_tensor({2, 3, 3, 4}, rng));
  auto p = BatchNormParams<double>::identity(4);
  const auto y = batchnorm(x, p, Mode::inference)->value;
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], x->value[i] / std::sqrt(1.0 + 1e-3), 1e-12);
}

TEST(BatchNorm, RunningStatisticsUpdate) {
  auto x = constant(Tensor<double>(Shape{4, 1, 1, 1}, std::vector<double>{1, 2, 3, 6}));
  auto p = BatchNormParams<double>::identity(1);
  batchnorm(x, p, Mode::training);
  const double mom = p.momentum;
  // mean 3, unbiased variance 14/3
  EXPECT_NEAR(p.running_mean[0], (1 - mom) * 3.0, 1e-12);
  EXPECT_NEAR(p.running_var[0], mom * 1.0 + (1 - mom) * 14.0 / 3.0, 1e-12);
  batchnorm(x, p, Mode::inference);
  EXPECT_NEAR(p.running_mean[0], (1 - mom) * 3.0, 1e-12);
}

TEST(BatchNorm, DegenerateBatch) {
  auto x = constant(Tensor<double>(Shape{1, 1, 1, 3}, 1.0));
  auto p = BatchNormParams<double>::identity(3);
  EXPECT_THROW(batchnorm(x, p, Mode::training), degenerate_batch_error);
  EXPECT_NO_THROW(batchnorm(x, p, Mode::inference));
}

TEST(BatchNorm, ParameterCount) {
  EXPECT_EQ(BatchNormParams<double>::identity(32).parameter_count(), 64u);
  EXPECT_EQ(ConvParams<double>::zeros(3, 3, 32).parameter_count(), 896u);
}

TEST(Relu, Values) {
  auto y = relu(constant(Tensor<double>(Shape{3}, std::vector<double>{-1, 0, 2})))->value;
  EXPECT_EQ(y, Tensor<double>(Shape{3}, std::vector<double>({0, 0, 2})));
}

TEST(Sigmoid, ZeroIsHalf) {
  EXPECT_EQ(sigmoid(constant(Tensor<double>(Shape{1}, 0.0)))->value[0], 0.5);
}

TEST(Sigmoid, MonotoneAndBounded) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-30.0, 30.0);
  for (int i = 0; i < 1000; ++i) {
    double a = u(rng), b = u(rng);
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    const auto y = sigmoid(constant(Tensor<double>(Shape{2}, std::vector<double>{a, b})))->value;
    EXPECT_LT(y[0], y[1]);
    EXPECT_GT(y[0], 0.0);
    EXPECT_LT(y[1], 1.0);
  }
}

TEST(Sigmoid, ExtremeInputsStayFinite) {
  const auto y = sigmoid(constant(Tensor<float>(Shape{2}, std::vector<float>{-1000.0f, 1000.0f})))->value;
  EXPECT_TRUE(y.all_finite());
  EXPECT_GE(y[0], 0.0f);
  EXPECT_LE(y[1], 1.0f);
}
