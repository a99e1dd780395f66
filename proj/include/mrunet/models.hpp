#pragma once

#include <array>
#include <string>
#include <vector>

#include "mrunet/blocks.hpp"

namespace mrunet {

inline constexpr std::size_t default_u_base = 32;
inline constexpr double default_alpha = 1.67;

namespace detail {

inline void require_divisible(const std::vector<std::size_t>& extents, std::size_t by) {
  for (auto e : extents)
    if (e == 0 || e % by)
      throw shape_error("input extent " + std::to_string(e) + " is not divisible by " + std::to_string(by));
}

}  // namespace detail

/// MultiResUNet: MultiRes blocks at five depths (U = u_base * 2^(level-1)),
/// Res paths on the four skip connections, 2x2 transposed-conv upsampling
/// with U(target level) filters, 1x1 sigmoid head.
inline ModelGraph build_multiresunet(std::size_t rank, std::vector<std::size_t> extents, std::size_t in_channels,
                                     std::size_t u_base = default_u_base, double alpha = default_alpha,
                                     BlockVariant variant = BlockVariant::multires) {
  if (rank != 2 && rank != 3) throw unsupported_rank_error("rank must be 2 or 3");
  detail::require_divisible(extents, 16);
  ModelGraph g(rank, std::move(extents), in_channels);
  g.architecture = "multiresunet";
  g.variant = to_string(variant);
  g.u_base = u_base;
  g.alpha = alpha;

  std::array<LayerRef, 4> encoder{};
  std::array<LayerRef, 4> bridge{};
  LayerRef x = g.input();
  for (int level = 1; level <= 4; ++level) {
    const std::size_t u = u_base << (level - 1);
    const std::string idx = std::to_string(level);
    encoder[level - 1] = build_multires_block(g, x, compute_block_widths(static_cast<long long>(u), alpha), variant,
                                              "mresblock" + idx);
    bridge[level - 1] = build_res_path(g, encoder[level - 1], level, "respath" + idx, u_base);
    x = g.maxpool(encoder[level - 1], "pool" + idx);
  }
  x = build_multires_block(g, x, compute_block_widths(static_cast<long long>(u_base * 16), alpha), variant,
                           "mresblock5");

  for (int level = 4; level >= 1; --level) {
    const std::size_t u = u_base << (level - 1);
    const std::string idx = std::to_string(10 - level);
    const LayerRef up = g.conv_transpose(x, u, "up" + idx);
    const LayerRef cat = g.concat(up, bridge[level - 1], "concat" + idx);
    g.add_skip({static_cast<std::size_t>(level), encoder[level - 1], bridge[level - 1], cat});
    x = build_multires_block(g, cat, compute_block_widths(static_cast<long long>(u), alpha), variant,
                             "mresblock" + idx);
  }
  g.set_output(g.sigmoid(g.conv(x, 1, 1, "head/conv"), "head/sigmoid"));
  return g;
}

/// Baseline U-Net.
///   rank 2: five levels with u_base * {1,2,4,8,16} filters, two 3x3
///           conv+ReLU per level, transposed convs halving filters.
///   rank 3: one level shallower, filters doubled before each pooling,
///           batch-normalized convs, transposed convs keep channel count.
inline ModelGraph build_unet_baseline(std::size_t rank, std::vector<std::size_t> extents, std::size_t in_channels,
                                      std::size_t u_base = default_u_base) {
  if (rank != 2 && rank != 3) throw unsupported_rank_error("rank must be 2 or 3");
  const int levels = rank == 2 ? 5 : 4;
  detail::require_divisible(extents, std::size_t{1} << (levels - 1));
  ModelGraph g(rank, std::move(extents), in_channels);
  g.architecture = "unet";
  g.variant = "plain";
  g.u_base = u_base;

  auto conv_unit = [&](LayerRef in, std::size_t f, const std::string& name) {
    return rank == 2 ? g.relu(g.conv(in, 3, f, name + "/conv"), name + "/relu") : g.conv_bn(in, 3, f, name);
  };

  std::vector<LayerRef> encoder;
  LayerRef x = g.input();
  for (int level = 1; level <= levels; ++level) {
    const std::string idx = std::to_string(level);
    const std::size_t f = u_base << (level - 1);
    if (rank == 2) {
      x = conv_unit(conv_unit(x, f, "enc" + idx + "/a"), f, "enc" + idx + "/b");
    } else {
      x = conv_unit(conv_unit(x, f, "enc" + idx + "/a"), 2 * f, "enc" + idx + "/b");
    }
    if (level < levels) {
      encoder.push_back(x);
      x = g.maxpool(x, "pool" + idx);
    }
  }
  for (int level = levels - 1; level >= 1; --level) {
    const std::string idx = std::to_string(level);
    const LayerRef skip = encoder[static_cast<std::size_t>(level - 1)];
    const std::size_t up_filters = rank == 2 ? (u_base << (level - 1)) : g.channels(x);
    const LayerRef up = g.conv_transpose(x, up_filters, "dec" + idx + "/up");
    const LayerRef cat = g.concat(up, skip, "dec" + idx + "/concat");
    g.add_skip({static_cast<std::size_t>(level), skip, skip, cat});
    const std::size_t f = g.channels(skip);
    x = conv_unit(conv_unit(cat, f, "dec" + idx + "/a"), f, "dec" + idx + "/b");
  }
  g.set_output(g.sigmoid(g.conv(x, 1, 1, "head/conv"), "head/sigmoid"));
  return g;
}

inline ModelGraph build_model(Architecture arch, std::size_t rank, std::vector<std::size_t> extents,
                              std::size_t in_channels, std::size_t u_base = default_u_base,
                              double alpha = default_alpha, BlockVariant variant = BlockVariant::multires) {
  return arch == Architecture::unet ? build_unet_baseline(rank, std::move(extents), in_channels, u_base)
                                    : build_multiresunet(rank, std::move(extents), in_channels, u_base, alpha, variant);
}

}  // namespace mrunet
