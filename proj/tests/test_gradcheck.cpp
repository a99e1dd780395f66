#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "mrunet/gradcheck.hpp"
#include "mrunet/harness.hpp"

using namespace mrunet;

namespace {

std::vector<std::string> suite_names() {
  std::vector<std::string> names;
  for (const auto& c : gradcheck_suite()) names.push_back(c.name);
  return names;
}

/// conv2d whose backward adds a spurious 0.01 to the first kernel gradient.
Var<double> corrupted_conv2d(const Var<double>& x, const ConvParams<double>& p) {
  Var<double> y = conv2d(x, p);
  auto original = y->backward_fn;
  y->backward_fn = [original, kernel = p.kernel](Node<double>& n) {
    original(n);
    kernel->grad_buffer()[0] += 0.01;
  };
  return y;
}

}  // namespace

class GradCheckSuite : public ::testing::TestWithParam<std::string> {};

TEST_P(GradCheckSuite, PassesThreshold) {
  for (const auto& c : gradcheck_suite()) {
    if (c.name != GetParam()) continue;
    const auto r = c.run(0);
    EXPECT_TRUE(r.passed) << r.name << " max rel err " << r.max_rel_error << " threshold " << r.threshold;
    EXPECT_GT(r.checked, 0u);
    EXPECT_LE(r.threshold, 1e-4);
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, GradCheckSuite, ::testing::ValuesIn(suite_names()),
                         [](const auto& info) { return info.param; });

TEST(GradCheck, SuiteCoversEveryOp) {
  const auto names = suite_names();
  for (const char* op : {"add", "sub", "mul", "sum", "scale", "concat_channels", "slice_channels", "conv2d",
                         "conv_transpose2d", "maxpool2d", "batchnorm_training", "batchnorm_inference", "relu",
                         "sigmoid", "bce_loss", "multires_block", "res_path", "multiresunet_tiny"})
    EXPECT_NE(std::find(names.begin(), names.end(), op), names.end()) << op;
}

TEST(GradCheck, SmoothOpsUseStrictThreshold) {
  for (const auto& c : gradcheck_suite()) {
    if (c.name == "add" || c.name == "mul" || c.name == "conv2d" || c.name == "sigmoid")
      EXPECT_EQ(c.run(1).threshold, 1e-6) << c.name;
  }
}

TEST(GradCheck, CorruptedConvBackwardIsCaught) {
  std::mt19937_64 rng(3);
  auto x = leaf(detail::random_tensor({1, 5, 5, 2}, rng));
  auto p = ConvParams<double>::zeros(3, 2, 4);
  p.kernel->value = detail::random_tensor({3, 3, 2, 4}, rng);
  p.bias->value = detail::random_tensor({4}, rng);
  const auto w = detail::random_tensor({1, 5, 5, 4}, rng);
  GradCheckOptions o;

  const auto good = check_gradients("conv2d", {x, p.kernel, p.bias},
                                    [&] { return detail::project(conv2d(x, p), w); }, o);
  EXPECT_TRUE(good.passed);

  const auto bad = check_gradients("conv2d_corrupted", {x, p.kernel, p.bias},
                                   [&] { return detail::project(corrupted_conv2d(x, p), w); }, o);
  EXPECT_FALSE(bad.passed);
  EXPECT_GT(bad.max_rel_error, 1e-6);

  std::ostringstream table;
  print_gradcheck_table(table, {good, bad});
  EXPECT_NE(table.str().find("conv2d_corrupted"), std::string::npos);
  EXPECT_NE(table.str().find("FAIL"), std::string::npos);
}

TEST(GradCheck, NonsmoothTraceSkipsKinks) {
  auto x = leaf(Tensor<double>(Shape{3}, std::vector<double>{-0.5, 1e-7, 0.8}));
  GradCheckOptions o;
  o.nonsmooth = true;
  o.threshold = 1e-4;
  const auto r = check_gradients("relu_kink", {x}, [&] { return sum(relu(x)); }, o);
  EXPECT_TRUE(r.passed);
  EXPECT_EQ(r.skipped, 1u);
  EXPECT_EQ(r.checked, 2u);
}

TEST(GradCheckCommand, SelectedOpsAndErrors) {
  RunSpec spec;
  spec.command = "gradcheck";
  spec.ops = "add,relu";
  std::ostringstream out;
  EXPECT_EQ(run_command(spec, out), 0);
  EXPECT_NE(out.str().find("relu"), std::string::npos);
  EXPECT_NE(out.str().find("all passed"), std::string::npos);

  spec.ops = "";
  EXPECT_THROW(run_command(spec, out), usage_error);
  spec.ops = ",";
  EXPECT_THROW(run_command(spec, out), usage_error);
  spec.ops = "add,nonexistent";
  EXPECT_THROW(run_command(spec, out), usage_error);
}
