#pragma once

// Parameters and execution for a ModelGraph. Counting works for any rank;
// forward execution is rank-2 only.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mrunet/model_graph.hpp"
#include "mrunet/nn_ops.hpp"
#include "mrunet/tensor_io.hpp"

namespace mrunet {

template <Real T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

struct NetworkOptions {
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-3;
};

template <Real T>
class Network {
 public:
  /// Glorot-uniform kernels, zero biases, unit gamma, zero beta.
  Network(ModelGraph graph, std::uint64_t seed, NetworkOptions options = {})
      : graph_(std::move(graph)), state_(graph_.layers().size()) {
    std::mt19937_64 rng(seed);
    const std::size_t rank = graph_.rank();
    for (std::size_t i = 0; i < state_.size(); ++i) {
      const Layer& l = graph_.layers()[i];
      auto& s = state_[i];
      if (l.kind == LayerKind::conv || l.kind == LayerKind::conv_transpose) {
        Shape ks(rank, l.kernel);
        ks.push_back(l.in_channels);
        ks.push_back(l.channels);
        Tensor<T> kernel(ks);
        std::size_t taps = 1;
        for (std::size_t r = 0; r < rank; ++r) taps *= l.kernel;
        const double limit = std::sqrt(6.0 / static_cast<double>(taps * (l.in_channels + l.channels)));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (auto& v : kernel.values()) v = static_cast<T>(dist(rng));
        s.conv.kernel = leaf(std::move(kernel));
        if (l.bias) s.conv.bias = leaf(Tensor<T>(Shape{l.channels}));
        s.conv.stride = l.kind == LayerKind::conv_transpose ? 2 : 1;
        s.conv.padding = Padding::same;
        if (s.conv.parameter_count() != l.parameter_count(rank))
          throw shape_error(l.name + ": allocated parameters disagree with the layer formula");
      } else if (l.kind == LayerKind::batchnorm) {
        s.bn = BatchNormParams<T>::identity(l.channels);
        s.bn.momentum = static_cast<T>(options.bn_momentum);
        s.bn.epsilon = static_cast<T>(options.bn_epsilon);
        if (s.bn.parameter_count() != l.parameter_count(rank))
          throw shape_error(l.name + ": allocated parameters disagree with the layer formula");
      }
    }
  }

  const ModelGraph& graph() const noexcept { return graph_; }

  /// Trainable tensors in build order.
  std::vector<NamedParam<T>> parameters() const {
    std::vector<NamedParam<T>> out;
    for (std::size_t i = 0; i < state_.size(); ++i) {
      const Layer& l = graph_.layers()[i];
      const auto& s = state_[i];
      if (s.conv.kernel) {
        out.push_back({l.name + "/kernel", s.conv.kernel});
        if (s.conv.bias) out.push_back({l.name + "/bias", s.conv.bias});
      } else if (s.bn.gamma) {
        out.push_back({l.name + "/gamma", s.bn.gamma});
        out.push_back({l.name + "/beta", s.bn.beta});
      }
    }
    return out;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.var->zero_grad();
  }

  /// Runs the graph on x [N, H, W, C].
  Var<T> forward(const Tensor<T>& x, Mode mode) {
    if (graph_.rank() != 2) throw unsupported_rank_error("forward: only rank-2 models can be executed");
    const auto& ext = graph_.input_extents();
    if (x.rank() != 4 || x.extent(1) != ext[0] || x.extent(2) != ext[1] || x.extent(3) != graph_.in_channels())
      throw shape_error("forward: input " + shape_string(x.shape()) + " does not match model input [N," +
                        std::to_string(ext[0]) + "," + std::to_string(ext[1]) + "," +
                        std::to_string(graph_.in_channels()) + "]");
    const auto& layers = graph_.layers();
    std::vector<Var<T>> acts(layers.size());
    std::vector<std::size_t> uses(layers.size(), 0);
    for (const auto& l : layers)
      for (auto in : l.inputs) ++uses[in];
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const Layer& l = layers[i];
      auto arg = [&](std::size_t k) -> const Var<T>& { return acts[l.inputs[k]]; };
      switch (l.kind) {
        case LayerKind::input: acts[i] = constant(x); break;
        case LayerKind::conv: acts[i] = conv2d(arg(0), state_[i].conv); break;
        case LayerKind::conv_transpose: acts[i] = conv_transpose2d(arg(0), state_[i].conv); break;
        case LayerKind::batchnorm: acts[i] = batchnorm(arg(0), state_[i].bn, mode); break;
        case LayerKind::relu: acts[i] = relu(arg(0)); break;
        case LayerKind::sigmoid: acts[i] = sigmoid(arg(0)); break;
        case LayerKind::maxpool: acts[i] = maxpool2d(arg(0)); break;
        case LayerKind::concat: acts[i] = concat_channels(arg(0), arg(1)); break;
        case LayerKind::add: acts[i] = add(arg(0), arg(1)); break;
      }
      // Drop references to activations nobody else reads; the graph keeps
      // what backward needs.
      for (auto in : l.inputs)
        if (--uses[in] == 0) acts[in].reset();
    }
    return acts[graph_.output()];
  }

  Tensor<T> predict(const Tensor<T>& x) { return forward(x, Mode::inference)->value; }

  /// Every tensor in the checkpoint: trainable parameters plus batch-norm
  /// running statistics.
  std::vector<std::pair<std::string, Tensor<T>*>> state_tensors() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (std::size_t i = 0; i < state_.size(); ++i) {
      const std::string& n = graph_.layers()[i].name;
      auto& s = state_[i];
      if (s.conv.kernel) {
        out.emplace_back(n + "/kernel", &s.conv.kernel->value);
        if (s.conv.bias) out.emplace_back(n + "/bias", &s.conv.bias->value);
      } else if (s.bn.gamma) {
        out.emplace_back(n + "/gamma", &s.bn.gamma->value);
        out.emplace_back(n + "/beta", &s.bn.beta->value);
        out.emplace_back(n + "/running_mean", &s.bn.running_mean);
        out.emplace_back(n + "/running_var", &s.bn.running_var);
      }
    }
    return out;
  }

  /// Checkpoint layout: TNSR blobs back to back, then a JSON index
  /// {"architecture", "total_params", "tensors": {name: byte offset}},
  /// then the index length as u64 LE.
  void save_checkpoint(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open " + path + " for writing");
    nlohmann::json offsets = nlohmann::json::object();
    std::uint64_t offset = 0;
    for (auto& [name, t] : state_tensors()) {
      offsets[name] = offset;
      write_tnsr(os, *t);
      offset += tnsr_size(*t);
    }
    const nlohmann::json index = {{"architecture", graph_.architecture},
                                  {"total_params", count_parameters(graph_).total},
                                  {"tensors", offsets}};
    const std::string text = index.dump();
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    detail::put_le<std::uint64_t>(os, text.size());
    if (!os) throw io_error("write failed: " + path);
  }

  void load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open " + path);
    is.seekg(0, std::ios::end);
    const auto size = static_cast<std::uint64_t>(is.tellg());
    if (size < 8) throw format_error(path + ": too short for a checkpoint");
    is.seekg(static_cast<std::streamoff>(size - 8));
    const auto json_len = detail::get_le<std::uint64_t>(is);
    if (json_len + 8 > size) throw format_error(path + ": bad index length");
    std::string text(json_len, '\0');
    is.seekg(static_cast<std::streamoff>(size - 8 - json_len));
    is.read(text.data(), static_cast<std::streamsize>(json_len));
    nlohmann::json index;
    try {
      index = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw format_error(path + ": unreadable index: " + e.what());
    }
    if (index.value("architecture", std::string{}) != graph_.architecture)
      throw format_error(path + ": checkpoint is for a different architecture");
    const auto& offsets = index.at("tensors");
    for (auto& [name, t] : state_tensors()) {
      if (!offsets.contains(name)) throw format_error(path + ": missing tensor " + name);
      is.seekg(static_cast<std::streamoff>(offsets[name].template get<std::uint64_t>()));
      Tensor<T> loaded = read_tnsr<T>(is);
      if (loaded.shape() != t->shape()) throw format_error(path + ": shape mismatch for " + name);
      *t = std::move(loaded);
    }
  }

 private:
  struct LayerState {
    ConvParams<T> conv;
    BatchNormParams<T> bn;
  };

  ModelGraph graph_;
  std::vector<LayerState> state_;
};

/// Brute-force count: sums the element counts of every trainable tensor.
template <Real T>
std::size_t enumerate_parameters(const Network<T>& net) {
  std::size_t n = 0;
  for (const auto& p : net.parameters()) n += p.var->value.size();
  return n;
}

}  // namespace mrunet
