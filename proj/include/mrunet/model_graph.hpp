#pragma once

// Symbolic, rank-generic layer graph. Layers are stored in topological
// order: every input index is smaller than the layer's own index.

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mrunet/error.hpp"
#include "mrunet/tensor.hpp"

namespace mrunet {

enum class LayerKind { input, conv, conv_transpose, batchnorm, relu, sigmoid, maxpool, concat, add };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::input: return "input";
    case LayerKind::conv: return "conv";
    case LayerKind::conv_transpose: return "conv_transpose";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::concat: return "concat";
    case LayerKind::add: return "add";
  }
  return "?";
}

enum class Architecture { unet, multiresunet };

inline const char* to_string(Architecture a) {
  return a == Architecture::unet ? "unet" : "multiresunet";
}

inline Architecture parse_architecture(const std::string& s) {
  if (s == "unet") return Architecture::unet;
  if (s == "multiresunet") return Architecture::multiresunet;
  throw usage_error("unknown architecture '" + s + "' (expected unet or multiresunet)");
}

using LayerRef = std::size_t;

struct Layer {
  std::string name;
  LayerKind kind = LayerKind::input;
  std::vector<LayerRef> inputs;
  std::size_t kernel = 0;       // conv kinds only
  std::size_t in_channels = 0;  // conv kinds only
  std::size_t channels = 0;     // output channels
  bool bias = false;
  std::vector<std::size_t> extents;  // output spatial extents

  /// Closed-form trainable parameter count for a given spatial rank.
  std::size_t parameter_count(std::size_t rank) const {
    std::size_t taps = 1;
    switch (kind) {
      case LayerKind::conv:
      case LayerKind::conv_transpose:
        for (std::size_t r = 0; r < rank; ++r) taps *= kernel;
        return taps * in_channels * channels + (bias ? channels : 0);
      case LayerKind::batchnorm:
        return 2 * channels;
      default:
        return 0;
    }
  }
};

/// An encoder level feeding the decoder stage of the same depth.
struct SkipConnection {
  std::size_t level;
  LayerRef encoder;  // encoder feature map (before any Res path)
  LayerRef bridge;   // what actually reaches the decoder (Res path output or encoder itself)
  LayerRef concat;   // decoder concat layer
};

class ModelGraph {
 public:
  ModelGraph(std::size_t rank, std::vector<std::size_t> extents, std::size_t in_channels)
      : rank_(rank) {
    if (rank != 2 && rank != 3) throw unsupported_rank_error("model rank must be 2 or 3");
    if (extents.size() != rank) throw shape_error("input extents do not match rank");
    if (in_channels == 0) throw shape_error("input needs at least one channel");
    for (auto e : extents)
      if (e == 0) throw invalid_shape_error("zero input extent");
    Layer in;
    in.name = "input";
    in.kind = LayerKind::input;
    in.channels = in_channels;
    in.extents = std::move(extents);
    layers_.push_back(std::move(in));
  }

  std::size_t rank() const noexcept { return rank_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  const Layer& layer(LayerRef r) const { return layers_.at(r); }
  LayerRef input() const noexcept { return 0; }
  std::size_t in_channels() const { return layers_[0].channels; }
  const std::vector<std::size_t>& input_extents() const { return layers_[0].extents; }
  std::size_t channels(LayerRef r) const { return layers_.at(r).channels; }

  LayerRef output() const noexcept { return output_; }
  void set_output(LayerRef r) { output_ = r; }

  const std::vector<SkipConnection>& skips() const noexcept { return skips_; }
  void add_skip(SkipConnection s) { skips_.push_back(s); }

  // Metadata describing how the graph was built.
  std::string architecture = "custom";
  std::string variant = "multires";
  std::size_t u_base = 0;
  double alpha = 0.0;

  LayerRef conv(LayerRef in, std::size_t kernel, std::size_t filters, std::string name, bool bias = true) {
    if (filters == 0) throw invalid_width_error(name + ": zero filters");
    Layer l = derived(in, LayerKind::conv, std::move(name));
    l.kernel = kernel;
    l.in_channels = channels(in);
    l.channels = filters;
    l.bias = bias;
    return push(std::move(l));
  }

  LayerRef conv_transpose(LayerRef in, std::size_t filters, std::string name) {
    if (filters == 0) throw invalid_width_error(name + ": zero filters");
    Layer l = derived(in, LayerKind::conv_transpose, std::move(name));
    l.kernel = 2;
    l.in_channels = channels(in);
    l.channels = filters;
    l.bias = true;
    for (auto& e : l.extents) e *= 2;
    return push(std::move(l));
  }

  LayerRef batchnorm(LayerRef in, std::string name) {
    return push(derived(in, LayerKind::batchnorm, std::move(name)));
  }
  LayerRef relu(LayerRef in, std::string name) { return push(derived(in, LayerKind::relu, std::move(name))); }
  LayerRef sigmoid(LayerRef in, std::string name) {
    return push(derived(in, LayerKind::sigmoid, std::move(name)));
  }

  LayerRef maxpool(LayerRef in, std::string name) {
    Layer l = derived(in, LayerKind::maxpool, std::move(name));
    for (auto& e : l.extents) {
      if (e % 2) throw shape_error(l.name + ": odd extent cannot be pooled");
      e /= 2;
    }
    return push(std::move(l));
  }

  LayerRef concat(LayerRef a, LayerRef b, std::string name) {
    if (layer(a).extents != layer(b).extents) throw shape_error(name + ": spatial extents differ");
    Layer l = derived(a, LayerKind::concat, std::move(name));
    l.inputs.push_back(b);
    l.channels = channels(a) + channels(b);
    return push(std::move(l));
  }

  LayerRef add(LayerRef a, LayerRef b, std::string name) {
    if (layer(a).extents != layer(b).extents || channels(a) != channels(b))
      throw shape_error(name + ": residual addition needs identical shapes (" +
                        std::to_string(channels(a)) + " vs " + std::to_string(channels(b)) + " channels)");
    Layer l = derived(a, LayerKind::add, std::move(name));
    l.inputs.push_back(b);
    return push(std::move(l));
  }

  /// conv -> batchnorm -> (optional) relu, the basic unit of both models.
  LayerRef conv_bn(LayerRef in, std::size_t kernel, std::size_t filters, const std::string& name,
                   bool activate = true) {
    LayerRef r = conv(in, kernel, filters, name + "/conv");
    r = batchnorm(r, name + "/bn");
    return activate ? relu(r, name + "/relu") : r;
  }

 private:
  Layer derived(LayerRef in, LayerKind kind, std::string name) const {
    const Layer& src = layer(in);
    Layer l;
    l.name = std::move(name);
    l.kind = kind;
    l.inputs = {in};
    l.channels = src.channels;
    l.extents = src.extents;
    return l;
  }

  LayerRef push(Layer l) {
    layers_.push_back(std::move(l));
    return layers_.size() - 1;
  }

  std::size_t rank_;
  std::vector<Layer> layers_;
  std::vector<SkipConnection> skips_;
  LayerRef output_ = 0;
};

struct LayerCount {
  std::string name;
  std::string type;
  std::size_t params;
};

struct ParamReport {
  std::vector<LayerCount> layers;  // only layers that own parameters
  std::size_t total = 0;
};

inline ParamReport count_parameters(const ModelGraph& g) {
  ParamReport r;
  for (const auto& l : g.layers()) {
    const std::size_t n = l.parameter_count(g.rank());
    if (n == 0) continue;
    r.layers.push_back({l.name, to_string(l.kind), n});
    r.total += n;
  }
  return r;
}

/// Parameter totals grouped by the first path component of layer names
/// ("mresblock3", "respath2", ...), in build order.
inline std::vector<std::pair<std::string, std::size_t>> group_parameters(const ParamReport& r) {
  std::vector<std::pair<std::string, std::size_t>> groups;
  for (const auto& l : r.layers) {
    const std::string key = l.name.substr(0, l.name.find('/'));
    if (groups.empty() || groups.back().first != key) groups.emplace_back(key, 0);
    groups.back().second += l.params;
  }
  return groups;
}

struct Reconciliation {
  std::size_t target;
  std::size_t total;
  long long delta;
  double relative;  // delta / target
};

inline Reconciliation reconcile(const ParamReport& r, std::size_t target) {
  const long long delta = static_cast<long long>(r.total) - static_cast<long long>(target);
  return {target, r.total, delta, static_cast<double>(delta) / static_cast<double>(target)};
}

inline nlohmann::json summary_json(const ModelGraph& g) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : g.layers()) {
    layers.push_back({{"name", l.name},
                      {"type", to_string(l.kind)},
                      {"output_channels", l.channels},
                      {"params", l.parameter_count(g.rank())}});
  }
  std::vector<std::size_t> input_shape = g.input_extents();
  input_shape.push_back(g.in_channels());
  return {{"architecture", g.architecture},
          {"rank", g.rank()},
          {"input_shape", input_shape},
          {"layers", layers},
          {"total_params", count_parameters(g).total}};
}

}  // namespace mrunet
