#pragma once

// Differentiable layers over NHWC tensors. Convolutions are plain
// cross-correlations lowered to GEMM; Eigen runs single-threaded so the
// reduction order, and therefore every result, is fixed.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mrunet/autodiff.hpp"

namespace mrunet {

enum class Padding { same, valid };
enum class Mode { training, inference };

template <Real T>
struct ConvParams {
  Var<T> kernel;  // [kh, kw, in_channels, out_channels]
  Var<T> bias;    // [out_channels], may be null
  std::size_t stride = 1;
  Padding padding = Padding::same;

  std::size_t kernel_h() const { return kernel->value.extent(0); }
  std::size_t kernel_w() const { return kernel->value.extent(1); }
  std::size_t in_channels() const { return kernel->value.extent(2); }
  std::size_t out_channels() const { return kernel->value.extent(3); }

  std::size_t parameter_count() const {
    return kernel->value.size() + (bias ? bias->value.size() : 0);
  }

  /// Zero-initialized parameters; the model builder fills them.
  static ConvParams zeros(std::size_t k, std::size_t cin, std::size_t cout, bool with_bias = true,
                          std::size_t stride = 1, Padding padding = Padding::same) {
    ConvParams p;
    p.kernel = leaf(Tensor<T>(Shape{k, k, cin, cout}));
    if (with_bias) p.bias = leaf(Tensor<T>(Shape{cout}));
    p.stride = stride;
    p.padding = padding;
    return p;
  }
};

template <Real T>
struct BatchNormParams {
  Var<T> gamma;
  Var<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T epsilon = T(1e-3);
  T momentum = T(0.9);

  std::size_t channels() const { return gamma->value.size(); }
  std::size_t parameter_count() const { return gamma->value.size() + beta->value.size(); }

  static BatchNormParams identity(std::size_t c) {
    BatchNormParams p;
    p.gamma = leaf(Tensor<T>(Shape{c}, T(1)));
    p.beta = leaf(Tensor<T>(Shape{c}, T(0)));
    p.running_mean = Tensor<T>(Shape{c}, T(0));
    p.running_var = Tensor<T>(Shape{c}, T(1));
    return p;
  }
};

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  std::size_t n, in_h, in_w, cin;
  std::size_t kh, kw, stride;
  std::size_t out_h, out_w, cout;
  std::size_t pad_top, pad_left;

  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1; }
  std::size_t patch() const { return kh * kw * cin; }
};

inline void axis_geometry(std::size_t in, std::size_t k, std::size_t stride, Padding pad,
                          std::size_t& out, std::size_t& before) {
  if (pad == Padding::same) {
    out = (in + stride - 1) / stride;
    const std::size_t needed = (out - 1) * stride + k;
    before = needed > in ? (needed - in) / 2 : 0;
  } else {
    if (k > in) throw shape_error("conv2d: kernel larger than input");
    out = (in - k) / stride + 1;
    before = 0;
  }
}

template <Real T>
ConvGeometry conv_geometry(const Tensor<T>& x, const ConvParams<T>& p) {
  if (x.rank() != 4) throw shape_error("conv2d: expected [N,H,W,C], got " + shape_string(x.shape()));
  if (p.kernel->value.rank() != 4) throw shape_error("conv2d: kernel must be [kh,kw,cin,cout]");
  if (x.channels() != p.in_channels())
    throw shape_error("conv2d: input has " + std::to_string(x.channels()) +
                      " channels, kernel expects " + std::to_string(p.in_channels()));
  if (p.bias && p.bias->value.size() != p.out_channels())
    throw shape_error("conv2d: bias size does not match out_channels");
  if (p.stride < 1) throw shape_error("conv2d: stride must be positive");
  ConvGeometry g{};
  g.n = x.extent(0);
  g.in_h = x.extent(1);
  g.in_w = x.extent(2);
  g.cin = x.extent(3);
  g.kh = p.kernel_h();
  g.kw = p.kernel_w();
  g.stride = p.stride;
  g.cout = p.out_channels();
  axis_geometry(g.in_h, g.kh, g.stride, p.padding, g.out_h, g.pad_top);
  axis_geometry(g.in_w, g.kw, g.stride, p.padding, g.out_w, g.pad_left);
  return g;
}

template <Real T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
  const std::size_t patch = g.patch();
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      T* row = cols + (oy * g.out_w + ox) * patch;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                        static_cast<std::ptrdiff_t>(g.pad_top);
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                          static_cast<std::ptrdiff_t>(g.pad_left);
          T* dst = row + (ky * g.kw + kx) * g.cin;
          if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h) ||
              ix >= static_cast<std::ptrdiff_t>(g.in_w)) {
            std::fill_n(dst, g.cin, T(0));
          } else {
            std::copy_n(x + (static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)) * g.cin,
                        g.cin, dst);
          }
        }
      }
    }
  }
}

template <Real T>
void col2im_add(const ConvGeometry& g, const T* cols, T* gx) {
  const std::size_t patch = g.patch();
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      const T* row = cols + (oy * g.out_w + ox) * patch;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                        static_cast<std::ptrdiff_t>(g.pad_top);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                          static_cast<std::ptrdiff_t>(g.pad_left);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
          const T* src = row + (ky * g.kw + kx) * g.cin;
          T* dst = gx + (static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)) * g.cin;
          for (std::size_t c = 0; c < g.cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation of x [N,H,W,Cin] with p.kernel, plus bias.
template <Real T>
Var<T> conv2d(const Var<T>& x, const ConvParams<T>& p) {
  using namespace detail;
  const ConvGeometry g = conv_geometry(x->value, p);
  const std::size_t in_px = g.in_h * g.in_w, out_px = g.out_h * g.out_w;
  Tensor<T> out(Shape{g.n, g.out_h, g.out_w, g.cout});
  ConstMatMap<T> k(p.kernel->value.data(), g.patch(), g.cout);
  std::vector<T> cols(g.pointwise() ? 0 : out_px * g.patch());
  for (std::size_t n = 0; n < g.n; ++n) {
    const T* xn = x->value.data() + n * in_px * g.cin;
    MatMap<T> y(out.data() + n * out_px * g.cout, out_px, g.cout);
    if (g.pointwise()) {
      y.noalias() = ConstMatMap<T>(xn, in_px, g.cin) * k;
    } else {
      im2col(g, xn, cols.data());
      y.noalias() = ConstMatMap<T>(cols.data(), out_px, g.patch()) * k;
    }
    if (p.bias) {
      Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(p.bias->value.data(), g.cout);
      y.rowwise() += b;
    }
  }
  std::vector<Var<T>> parents{x, p.kernel};
  if (p.bias) parents.push_back(p.bias);
  return make_node<T>("conv2d", std::move(out), std::move(parents), [g](Node<T>& self) {
    using namespace detail;
    auto& px = self.parents[0];
    auto& pk = self.parents[1];
    Node<T>* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
    const std::size_t in_px = g.in_h * g.in_w, out_px = g.out_h * g.out_w;
    ConstMatMap<T> k(pk->value.data(), g.patch(), g.cout);
    std::vector<T> cols(g.pointwise() ? 0 : out_px * g.patch());
    std::vector<T> dcols(g.pointwise() || !px->requires_grad ? 0 : out_px * g.patch());
    for (std::size_t n = 0; n < g.n; ++n) {
      ConstMatMap<T> gy(self.grad.data() + n * out_px * g.cout, out_px, g.cout);
      const T* xn = px->value.data() + n * in_px * g.cin;
      if (pk->requires_grad) {
        MatMap<T> gk(pk->grad_buffer().data(), g.patch(), g.cout);
        if (g.pointwise()) {
          gk.noalias() += ConstMatMap<T>(xn, in_px, g.cin).transpose() * gy;
        } else {
          im2col(g, xn, cols.data());
          gk.noalias() += ConstMatMap<T>(cols.data(), out_px, g.patch()).transpose() * gy;
        }
      }
      if (pb && pb->requires_grad) {
        T* gb = pb->grad_buffer().data();
        const T* gyn = self.grad.data() + n * out_px * g.cout;
        for (std::size_t q = 0; q < out_px; ++q)
          for (std::size_t co = 0; co < g.cout; ++co) gb[co] += gyn[q * g.cout + co];
      }
      if (px->requires_grad) {
        T* gxn = px->grad_buffer().data() + n * in_px * g.cin;
        if (g.pointwise()) {
          MatMap<T>(gxn, in_px, g.cin).noalias() += gy * k.transpose();
        } else {
          MatMap<T>(dcols.data(), out_px, g.patch()).noalias() = gy * k.transpose();
          col2im_add(g, dcols.data(), gxn);
        }
      }
    }
  });
}

/// 2x2, stride-2 transposed convolution: every input pixel paints one 2x2
/// output patch. Kernel layout [2, 2, in_channels, out_channels].
template <Real T>
Var<T> conv_transpose2d(const Var<T>& x, const ConvParams<T>& p) {
  using namespace detail;
  const Tensor<T>& xv = x->value;
  if (xv.rank() != 4) throw shape_error("conv_transpose2d: expected [N,H,W,C]");
  const Shape& ks = p.kernel->value.shape();
  if (ks.size() != 4 || ks[0] != 2 || ks[1] != 2 || p.stride != 2)
    throw shape_error("conv_transpose2d: only 2x2 kernels with stride 2 are supported");
  if (xv.channels() != p.in_channels())
    throw shape_error("conv_transpose2d: input has " + std::to_string(xv.channels()) +
                      " channels, kernel expects " + std::to_string(p.in_channels()));
  const std::size_t n = xv.extent(0), h = xv.extent(1), w = xv.extent(2);
  const std::size_t cin = p.in_channels(), cout = p.out_channels();
  if (p.bias && p.bias->value.size() != cout)
    throw shape_error("conv_transpose2d: bias size does not match out_channels");
  const std::size_t rows = n * h * w;

  // Regroup the kernel as [cin, (a,b,cout)] so one GEMM produces every tap.
  auto regroup = [cin, cout](const T* k) {
    RowMat<T> kr(cin, 4 * cout);
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t co = 0; co < cout; ++co) kr(ci, t * cout + co) = k[(t * cin + ci) * cout + co];
    return kr;
  };
  const RowMat<T> z = ConstMatMap<T>(xv.data(), rows, cin) * regroup(p.kernel->value.data());

  Tensor<T> out(Shape{n, 2 * h, 2 * w, cout});
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t b = r / (h * w), i = (r / w) % h, j = r % w;
    for (std::size_t t = 0; t < 4; ++t) {
      T* dst = out.data() + ((b * 2 * h + 2 * i + t / 2) * 2 * w + 2 * j + t % 2) * cout;
      for (std::size_t co = 0; co < cout; ++co)
        dst[co] = z(r, t * cout + co) + (p.bias ? p.bias->value[co] : T(0));
    }
  }

  std::vector<Var<T>> parents{x, p.kernel};
  if (p.bias) parents.push_back(p.bias);
  return make_node<T>("conv_transpose2d", std::move(out), std::move(parents),
                      [n, h, w, cin, cout, rows, regroup](Node<T>& self) {
    using namespace detail;
    auto& px = self.parents[0];
    auto& pk = self.parents[1];
    Node<T>* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
    RowMat<T> gz(rows, 4 * cout);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t b = r / (h * w), i = (r / w) % h, j = r % w;
      for (std::size_t t = 0; t < 4; ++t) {
        const T* src = self.grad.data() + ((b * 2 * h + 2 * i + t / 2) * 2 * w + 2 * j + t % 2) * cout;
        for (std::size_t co = 0; co < cout; ++co) gz(r, t * cout + co) = src[co];
      }
    }
    if (px->requires_grad) {
      MatMap<T>(px->grad_buffer().data(), rows, cin).noalias() +=
          gz * regroup(pk->value.data()).transpose();
    }
    if (pk->requires_grad) {
      const RowMat<T> gkr = ConstMatMap<T>(px->value.data(), rows, cin).transpose() * gz;
      T* gk = pk->grad_buffer().data();
      for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t co = 0; co < cout; ++co) gk[(t * cin + ci) * cout + co] += gkr(ci, t * cout + co);
    }
    if (pb && pb->requires_grad) {
      T* gb = pb->grad_buffer().data();
      const std::size_t px_out = self.grad.size() / cout;
      for (std::size_t q = 0; q < px_out; ++q)
        for (std::size_t co = 0; co < cout; ++co) gb[co] += self.grad[q * cout + co];
    }
  });
}

/// 2x2 max-pooling, stride 2. Ties go to the first element in row-major
/// window order.
template <Real T>
Var<T> maxpool2d(const Var<T>& x) {
  const Tensor<T>& xv = x->value;
  if (xv.rank() != 4) throw shape_error("maxpool2d: expected [N,H,W,C]");
  const std::size_t n = xv.extent(0), h = xv.extent(1), w = xv.extent(2), c = xv.extent(3);
  if (h % 2 || w % 2)
    throw shape_error("maxpool2d: odd spatial extent in " + shape_string(xv.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor<T> out(Shape{n, oh, ow, c});
  std::vector<std::size_t> argmax(out.size());
  std::uint64_t trace_word = 0;
  const bool tracing = NonsmoothTrace::active() != nullptr;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t ch = 0; ch < c; ++ch) {
          std::size_t best = ((b * h + 2 * i) * w + 2 * j) * c + ch;
          std::size_t tap = 0;
          for (std::size_t t = 1; t < 4; ++t) {
            const std::size_t idx = ((b * h + 2 * i + t / 2) * w + 2 * j + t % 2) * c + ch;
            if (xv[idx] > xv[best]) {
              best = idx;
              tap = t;
            }
          }
          const std::size_t o = ((b * oh + i) * ow + j) * c + ch;
          out[o] = xv[best];
          argmax[o] = best;
          if (tracing) {
            trace_word = (trace_word << 2) | tap;
            if ((o & 31) == 31) detail::trace_mix(trace_word);
          }
        }
  if (tracing) detail::trace_mix(trace_word);
  return make_node<T>("maxpool2d", std::move(out), {x},
                      [argmax = std::move(argmax)](Node<T>& self) {
    T* gx = self.parents[0]->grad_buffer().data();
    for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += self.grad[o];
  });
}

/// Per-channel normalization over every axis but the last. Training mode
/// uses batch statistics (biased variance) and updates the running
/// estimates; inference mode uses the running estimates.
template <Real T>
Var<T> batchnorm(const Var<T>& x, BatchNormParams<T>& p, Mode mode) {
  const Tensor<T>& xv = x->value;
  const std::size_t c = xv.channels();
  if (c != p.channels())
    throw shape_error("batchnorm: input has " + std::to_string(c) + " channels, params have " +
                      std::to_string(p.channels()));
  const std::size_t m = xv.size() / c;
  std::vector<T> mean(c), invstd(c);

  if (mode == Mode::training) {
    if (m < 2) throw degenerate_batch_error("batchnorm: a channel population of one has no variance");
    std::vector<double> s(c, 0.0), ss(c, 0.0);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t ch = 0; ch < c; ++ch) s[ch] += xv[r * c + ch];
    for (std::size_t ch = 0; ch < c; ++ch) s[ch] /= static_cast<double>(m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double d = xv[r * c + ch] - s[ch];
        ss[ch] += d * d;
      }
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double var = ss[ch] / static_cast<double>(m);
      mean[ch] = static_cast<T>(s[ch]);
      invstd[ch] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(p.epsilon)));
      const double unbiased = ss[ch] / static_cast<double>(m - 1);
      p.running_mean[ch] = p.momentum * p.running_mean[ch] + (T(1) - p.momentum) * mean[ch];
      p.running_var[ch] = p.momentum * p.running_var[ch] + (T(1) - p.momentum) * static_cast<T>(unbiased);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = p.running_mean[ch];
      invstd[ch] = T(1) / std::sqrt(p.running_var[ch] + p.epsilon);
    }
  }

  Tensor<T> xhat(xv.shape());
  Tensor<T> out(xv.shape());
  const T* gamma = p.gamma->value.data();
  const T* beta = p.beta->value.data();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t i = r * c + ch;
      xhat[i] = (xv[i] - mean[ch]) * invstd[ch];
      out[i] = gamma[ch] * xhat[i] + beta[ch];
    }

  return make_node<T>("batchnorm", std::move(out), {x, p.gamma, p.beta},
                      [xhat = std::move(xhat), invstd = std::move(invstd), m, c,
                       training = mode == Mode::training](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pg = self.parents[1];
    auto& pbeta = self.parents[2];
    const T* g = self.grad.data();
    std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t ch = 0; ch < c; ++ch) {
        sum_g[ch] += g[r * c + ch];
        sum_gx[ch] += static_cast<double>(g[r * c + ch]) * xhat[r * c + ch];
      }
    if (pg->requires_grad) {
      T* gg = pg->grad_buffer().data();
      for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += static_cast<T>(sum_gx[ch]);
    }
    if (pbeta->requires_grad) {
      T* gb = pbeta->grad_buffer().data();
      for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += static_cast<T>(sum_g[ch]);
    }
    if (px->requires_grad) {
      T* gx = px->grad_buffer().data();
      const T* gamma = pg->value.data();
      if (training) {
        const T inv_m = T(1) / static_cast<T>(m);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t i = r * c + ch;
            gx[i] += gamma[ch] * invstd[ch] * inv_m *
                     (static_cast<T>(m) * g[i] - static_cast<T>(sum_g[ch]) -
                      xhat[i] * static_cast<T>(sum_gx[ch]));
          }
      } else {
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t ch = 0; ch < c; ++ch) gx[r * c + ch] += g[r * c + ch] * gamma[ch] * invstd[ch];
      }
    }
  });
}

template <Real T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out(x->value.shape());
  const bool tracing = NonsmoothTrace::active() != nullptr;
  std::uint64_t word = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x->value[i];
    out[i] = v > T(0) ? v : T(0);
    if (tracing) {
      word = (word << 1) | (v > T(0) ? 1u : 0u);
      if ((i & 63) == 63) detail::trace_mix(word);
    }
  }
  if (tracing) detail::trace_mix(word);
  return make_node<T>("relu", std::move(out), {x}, [](Node<T>& self) {
    const auto& xv = self.parents[0]->value;
    T* gx = self.parents[0]->grad_buffer().data();
    for (std::size_t i = 0; i < xv.size(); ++i)
      if (xv[i] > T(0)) gx[i] += self.grad[i];
  });
}

template <Real T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out(x->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x->value[i];
    if (v >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T(1) + e);
    }
  }
  return make_node<T>("sigmoid", std::move(out), {x}, [](Node<T>& self) {
    T* gx = self.parents[0]->grad_buffer().data();
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      const T y = self.value[i];
      gx[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

}  // namespace mrunet
