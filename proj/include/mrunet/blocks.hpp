#pragma once

// MultiRes block (and the two intermediate designs it was derived from)
// plus the Res path that replaces plain skip connections.

#include <cmath>
#include <string>

#include "mrunet/model_graph.hpp"

namespace mrunet {

/// Filter budget of one MultiRes block: W = alpha * U split over three
/// successive 3x3 convs, plus the 1x1 residual projection.
struct BlockWidths {
  std::size_t u = 0;
  double alpha = 0.0;
  std::size_t w1 = 0, w2 = 0, w3 = 0;
  std::size_t w_res = 0;

  double budget() const { return alpha * static_cast<double>(u); }
  friend bool operator==(const BlockWidths&, const BlockWidths&) = default;
};

inline constexpr double width_share_1 = 0.167;
inline constexpr double width_share_2 = 0.333;
inline constexpr double width_share_3 = 0.5;

inline BlockWidths compute_block_widths(long long u, double alpha) {
  if (u < 1) throw invalid_width_error("compute_block_widths: U must be positive");
  if (!(alpha > 0.0)) throw invalid_width_error("compute_block_widths: alpha must be positive");
  BlockWidths b;
  b.u = static_cast<std::size_t>(u);
  b.alpha = alpha;
  const double w = alpha * static_cast<double>(u);
  b.w1 = static_cast<std::size_t>(std::floor(w * width_share_1));
  b.w2 = static_cast<std::size_t>(std::floor(w * width_share_2));
  b.w3 = static_cast<std::size_t>(std::floor(w * width_share_3));
  if (b.w1 == 0 || b.w2 == 0 || b.w3 == 0)
    throw invalid_width_error("compute_block_widths: U=" + std::to_string(u) + ", alpha=" +
                              std::to_string(alpha) + " yields a zero-width conv");
  b.w_res = b.w1 + b.w2 + b.w3;
  return b;
}

enum class BlockVariant { inception_parallel, factorized_sequence, multires };

inline const char* to_string(BlockVariant v) {
  switch (v) {
    case BlockVariant::inception_parallel: return "inception_parallel";
    case BlockVariant::factorized_sequence: return "factorized_sequence";
    case BlockVariant::multires: return "multires";
  }
  return "?";
}

inline BlockVariant parse_variant(const std::string& s) {
  if (s == "inception_parallel") return BlockVariant::inception_parallel;
  if (s == "factorized_sequence") return BlockVariant::factorized_sequence;
  if (s == "multires") return BlockVariant::multires;
  throw usage_error("unknown block variant '" + s + "'");
}

/// Branch width used by the two ablation variants: an equal split of w_res.
inline std::size_t ablation_branch_width(const BlockWidths& w) {
  const std::size_t b = w.w_res / 3;
  if (b == 0) throw invalid_width_error("ablation variant needs w_res >= 3");
  return b;
}

/// Appends one block to `g` and returns its output layer.
///   multires:            3x3(w1) -> 3x3(w2) -> 3x3(w3), taps concatenated,
///                        plus 1x1(w_res) projection of the input, then BN, ReLU.
///   inception_parallel:  3x3, 5x5, 7x7 on the input, concatenated.
///   factorized_sequence: three chained 3x3 of equal width, taps concatenated.
inline LayerRef build_multires_block(ModelGraph& g, LayerRef in, const BlockWidths& w, BlockVariant variant,
                                     const std::string& name) {
  switch (variant) {
    case BlockVariant::multires: {
      const LayerRef c1 = g.conv_bn(in, 3, w.w1, name + "/conv3x3_1");
      const LayerRef c2 = g.conv_bn(c1, 3, w.w2, name + "/conv3x3_2");
      const LayerRef c3 = g.conv_bn(c2, 3, w.w3, name + "/conv3x3_3");
      const LayerRef cat = g.concat(g.concat(c1, c2, name + "/concat_12"), c3, name + "/concat_123");
      const LayerRef res = g.conv_bn(in, 1, w.w_res, name + "/conv1x1_res", false);
      const LayerRef sum = g.add(cat, res, name + "/add");
      return g.relu(g.batchnorm(sum, name + "/out_bn"), name + "/out_relu");
    }
    case BlockVariant::inception_parallel: {
      const std::size_t b = ablation_branch_width(w);
      const LayerRef c3 = g.conv_bn(in, 3, b, name + "/conv3x3");
      const LayerRef c5 = g.conv_bn(in, 5, b, name + "/conv5x5");
      const LayerRef c7 = g.conv_bn(in, 7, b, name + "/conv7x7");
      return g.concat(g.concat(c3, c5, name + "/concat_35"), c7, name + "/concat_357");
    }
    case BlockVariant::factorized_sequence: {
      const std::size_t b = ablation_branch_width(w);
      const LayerRef c1 = g.conv_bn(in, 3, b, name + "/conv3x3_1");
      const LayerRef c2 = g.conv_bn(c1, 3, b, name + "/conv3x3_2");
      const LayerRef c3 = g.conv_bn(c2, 3, b, name + "/conv3x3_3");
      return g.concat(g.concat(c1, c2, name + "/concat_12"), c3, name + "/concat_123");
    }
  }
  throw usage_error("unknown block variant");
}

/// Filters of the Res path at `level` (1..4): base * 2^(level-1).
inline std::size_t res_path_filters(int level, std::size_t base = 32) {
  if (level < 1 || level > 4) throw invalid_level_error("Res path level must be in 1..4, got " + std::to_string(level));
  return base << (level - 1);
}

/// Number of residual units along the Res path at `level`: 5 - level.
inline std::size_t res_path_length(int level) {
  if (level < 1 || level > 4) throw invalid_level_error("Res path level must be in 1..4, got " + std::to_string(level));
  return static_cast<std::size_t>(5 - level);
}

/// Appends the Res path for `level`; each unit is
/// relu(bn(relu(bn(conv3x3(x))) + bn(conv1x1(x)))).
inline LayerRef build_res_path(ModelGraph& g, LayerRef in, int level, const std::string& name,
                               std::size_t base = 32) {
  const std::size_t f = res_path_filters(level, base);
  const std::size_t units = res_path_length(level);
  LayerRef x = in;
  for (std::size_t u = 1; u <= units; ++u) {
    const std::string unit = name + "/unit" + std::to_string(u);
    const LayerRef main = g.conv_bn(x, 3, f, unit + "/conv3x3");
    const LayerRef shortcut = g.conv_bn(x, 1, f, unit + "/conv1x1", false);
    const LayerRef sum = g.add(main, shortcut, unit + "/add");
    x = g.relu(g.batchnorm(sum, unit + "/out_bn"), unit + "/out_relu");
  }
  return x;
}

/// Standalone graph holding a single block, for inspection and testing.
inline ModelGraph multires_block_graph(std::size_t in_channels, const BlockWidths& w, BlockVariant variant,
                                       std::vector<std::size_t> extents = {16, 16}) {
  const std::size_t rank = extents.size();
  ModelGraph g(rank, std::move(extents), in_channels);
  g.architecture = "multires_block";
  g.variant = to_string(variant);
  g.set_output(build_multires_block(g, g.input(), w, variant, "block"));
  return g;
}

inline ModelGraph res_path_graph(int level, std::size_t in_channels, std::size_t base = 32,
                                 std::vector<std::size_t> extents = {16, 16}) {
  const std::size_t rank = extents.size();
  ModelGraph g(rank, std::move(extents), in_channels);
  g.architecture = "res_path";
  g.set_output(build_res_path(g, g.input(), level, "respath" + std::to_string(level), base));
  return g;
}

}  // namespace mrunet
