#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mef/error.hpp"
#include "mef/tensor.hpp"

// Forward and backward kernels for the closed layer set of the forecasting
// networks. All kernels are plain loops over the sample-major layout of
// Tensor4; convolution skips taps that fall in the zero padding, so a kernel
// much longer than its input costs no more than the overlapping part.

namespace mef::nn {

enum class Padding { Same, None };

struct Stride {
  std::size_t h = 1;
  std::size_t w = 1;
  bool operator==(const Stride&) const = default;
};

/// Output length and leading pad of one convolution axis.
struct ConvAxis {
  std::size_t out = 0;
  std::size_t pad_before = 0;
};

/// 'Same' keeps ceil(in / stride) outputs; the total pad is split floor/ceil
/// (kernel 146 on length 48 pads 72 before and 73 after).
inline ConvAxis conv_axis(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding) {
  if (padding == Padding::Same) {
    const std::size_t out = (in + stride - 1) / stride;
    const std::ptrdiff_t total =
        static_cast<std::ptrdiff_t>((out - 1) * stride + kernel) - static_cast<std::ptrdiff_t>(in);
    const std::size_t pad = total > 0 ? static_cast<std::size_t>(total) : 0;
    return {out, pad / 2};
  }
  if (in < kernel) return {0, 0};
  return {(in - kernel) / stride + 1, 0};
}

inline std::size_t pool_axis(std::size_t in, std::size_t pool, std::size_t stride) {
  if (in < pool) return 0;
  return (in - pool) / stride + 1;
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip)
// weights: kernel_h x kernel_w x in_c x num_filters; bias: num_filters

inline Tensor4 conv2d_forward(const Tensor4& input, const Tensor4& weights, std::span<const double> bias,
                              Stride stride, Padding padding) {
  require_nonempty(input, "conv input");
  require_nonempty(weights, "conv weights");
  const Shape4 in = input.shape();
  const Shape4 k = weights.shape();
  require(k.c == in.c, ErrorCode::ChannelMismatch,
          "kernel expects " + std::to_string(k.c) + " channels, input has " + std::to_string(in.c));
  require(bias.size() == k.n, ErrorCode::DimMismatch, "conv bias length != filter count");
  require(stride.h >= 1 && stride.w >= 1, ErrorCode::InvalidSpec, "stride must be >= 1");
  const ConvAxis ah = conv_axis(in.h, k.h, stride.h, padding);
  const ConvAxis aw = conv_axis(in.w, k.w, stride.w, padding);
  require(ah.out >= 1 && aw.out >= 1, ErrorCode::ShapeUnderflow, "kernel larger than unpadded input");

  Tensor4 out({ah.out, aw.out, k.n, in.n});
  const std::size_t C = in.c;
  const double* wbase = weights.data().data();
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t oh = 0; oh < ah.out; ++oh) {
      for (std::size_t ow = 0; ow < aw.out; ++ow) {
        double* y = &out(oh, ow, 0, n);
        for (std::size_t f = 0; f < k.n; ++f) y[f] = bias[f];
        for (std::size_t i = 0; i < k.h; ++i) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride.h + i) -
                                    static_cast<std::ptrdiff_t>(ah.pad_before);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(in.h)) continue;
          for (std::size_t j = 0; j < k.w; ++j) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride.w + j) -
                                      static_cast<std::ptrdiff_t>(aw.pad_before);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(in.w)) continue;
            const double* x = &input(static_cast<std::size_t>(ih), static_cast<std::size_t>(iw), 0, n);
            for (std::size_t f = 0; f < k.n; ++f) {
              const double* w = wbase + ((f * k.h + i) * k.w + j) * C;
              double acc = 0.0;
              for (std::size_t c = 0; c < C; ++c) acc += x[c] * w[c];
              y[f] += acc;
            }
          }
        }
      }
    }
  }
  return out;
}

inline Tensor4 conv2d_same_forward(const Tensor4& input, const Tensor4& weights, std::span<const double> bias,
                                   Stride stride = {}) {
  return conv2d_forward(input, weights, bias, stride, Padding::Same);
}

struct ConvGrads {
  Tensor4 d_input;
  Tensor4 d_weights;
  std::vector<double> d_bias;
};

inline ConvGrads conv2d_backward(const Tensor4& input, const Tensor4& weights, const Tensor4& d_out, Stride stride,
                                 Padding padding) {
  const Shape4 in = input.shape();
  const Shape4 k = weights.shape();
  const ConvAxis ah = conv_axis(in.h, k.h, stride.h, padding);
  const ConvAxis aw = conv_axis(in.w, k.w, stride.w, padding);
  require(d_out.shape() == Shape4{ah.out, aw.out, k.n, in.n}, ErrorCode::ShapeMismatch,
          "conv output gradient has shape " + to_string(d_out.shape()));

  ConvGrads g{Tensor4(in), Tensor4(k), std::vector<double>(k.n, 0.0)};
  const std::size_t C = in.c;
  const double* wbase = weights.data().data();
  double* dwbase = g.d_weights.data().data();
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t oh = 0; oh < ah.out; ++oh) {
      for (std::size_t ow = 0; ow < aw.out; ++ow) {
        const double* dy = &d_out(oh, ow, 0, n);
        for (std::size_t f = 0; f < k.n; ++f) g.d_bias[f] += dy[f];
        for (std::size_t i = 0; i < k.h; ++i) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride.h + i) -
                                    static_cast<std::ptrdiff_t>(ah.pad_before);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(in.h)) continue;
          for (std::size_t j = 0; j < k.w; ++j) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride.w + j) -
                                      static_cast<std::ptrdiff_t>(aw.pad_before);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(in.w)) continue;
            const auto uh = static_cast<std::size_t>(ih);
            const auto uw = static_cast<std::size_t>(iw);
            const double* x = &input(uh, uw, 0, n);
            double* dx = &g.d_input(uh, uw, 0, n);
            for (std::size_t f = 0; f < k.n; ++f) {
              const double gf = dy[f];
              if (gf == 0.0) continue;
              const std::size_t base = ((f * k.h + i) * k.w + j) * C;
              const double* w = wbase + base;
              double* dw = dwbase + base;
              for (std::size_t c = 0; c < C; ++c) {
                dw[c] += gf * x[c];
                dx[c] += gf * w[c];
              }
            }
          }
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Batch normalization over (H, W, N) per channel

enum class Mode { Train, Inference };

struct BatchNormConfig {
  double epsilon = 1e-5;
  double momentum = 0.1;
};

struct BatchNormCache {
  Tensor4 xhat;
  std::vector<double> inv_std;
};

/// Normalizes each channel and applies scale/offset. In Train mode the batch
/// statistics are used and the running statistics are blended in place with
/// weight `momentum`; in Inference mode the running statistics are used and
/// nothing is modified. The returned cache is only meaningful for Train mode.
inline Tensor4 batchnorm_forward(const Tensor4& input, std::span<const double> gamma, std::span<const double> beta,
                                 std::span<double> running_mean, std::span<double> running_var, Mode mode,
                                 const BatchNormConfig& cfg = {}, BatchNormCache* cache = nullptr) {
  require_nonempty(input, "batchnorm input");
  const Shape4 s = input.shape();
  const std::size_t C = s.c;
  require(gamma.size() == C && beta.size() == C && running_mean.size() == C && running_var.size() == C,
          ErrorCode::ChannelMismatch,
          "batchnorm has " + std::to_string(gamma.size()) + " channels, input has " + std::to_string(C));
  const std::size_t cells = s.h * s.w * s.n;
  const auto& x = input.values();

  std::vector<double> mean(C, 0.0);
  std::vector<double> var(C, 0.0);
  if (mode == Mode::Train) {
    for (std::size_t p = 0; p < cells; ++p)
      for (std::size_t c = 0; c < C; ++c) mean[c] += x[p * C + c];
    for (std::size_t c = 0; c < C; ++c) mean[c] /= static_cast<double>(cells);
    for (std::size_t p = 0; p < cells; ++p)
      for (std::size_t c = 0; c < C; ++c) {
        const double d = x[p * C + c] - mean[c];
        var[c] += d * d;
      }
    for (std::size_t c = 0; c < C; ++c) var[c] /= static_cast<double>(cells);
    for (std::size_t c = 0; c < C; ++c) {
      running_mean[c] = (1.0 - cfg.momentum) * running_mean[c] + cfg.momentum * mean[c];
      running_var[c] = (1.0 - cfg.momentum) * running_var[c] + cfg.momentum * var[c];
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = running_mean[c];
      var[c] = running_var[c];
    }
  }

  std::vector<double> inv_std(C);
  for (std::size_t c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + cfg.epsilon);

  Tensor4 out(s);
  Tensor4 xhat(s);
  auto xh = xhat.data();
  auto y = out.data();
  for (std::size_t p = 0; p < cells; ++p)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t idx = p * C + c;
      xh[idx] = (x[idx] - mean[c]) * inv_std[c];
      y[idx] = gamma[c] * xh[idx] + beta[c];
    }
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

struct BatchNormGrads {
  Tensor4 d_input;
  std::vector<double> d_gamma;
  std::vector<double> d_beta;
};

/// Backward pass through a Train-mode batch normalization.
inline BatchNormGrads batchnorm_backward(const BatchNormCache& cache, std::span<const double> gamma,
                                         const Tensor4& d_out) {
  const Shape4 s = d_out.shape();
  require(cache.xhat.shape() == s, ErrorCode::ShapeMismatch, "batchnorm cache does not match gradient");
  const std::size_t C = s.c;
  const std::size_t cells = s.h * s.w * s.n;
  const double m = static_cast<double>(cells);
  const auto& xh = cache.xhat.values();
  const auto& dy = d_out.values();

  BatchNormGrads g{Tensor4(s), std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
  for (std::size_t p = 0; p < cells; ++p)
    for (std::size_t c = 0; c < C; ++c) {
      g.d_beta[c] += dy[p * C + c];
      g.d_gamma[c] += dy[p * C + c] * xh[p * C + c];
    }
  // d_gamma and d_beta already hold sum(dy * xhat) and sum(dy)
  auto dx = g.d_input.data();
  for (std::size_t p = 0; p < cells; ++p)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t idx = p * C + c;
      dx[idx] = gamma[c] * cache.inv_std[c] / m * (m * dy[idx] - g.d_beta[c] - xh[idx] * g.d_gamma[c]);
    }
  return g;
}

// ---------------------------------------------------------------------------
// ReLU

inline Tensor4 relu_forward(const Tensor4& input) {
  require_nonempty(input, "relu input");
  Tensor4 out = input;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

inline Tensor4 relu_backward(const Tensor4& input, const Tensor4& d_out) {
  require(input.shape() == d_out.shape(), ErrorCode::ShapeMismatch, "relu gradient shape");
  Tensor4 dx = d_out;
  auto g = dx.data();
  const auto& x = input.values();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(x[i] > 0.0)) g[i] = 0.0;
  return dx;
}

// ---------------------------------------------------------------------------
// Average pooling (no padding)

struct Pool {
  std::size_t h = 1;
  std::size_t w = 1;
  bool operator==(const Pool&) const = default;
};

inline Tensor4 avgpool_forward(const Tensor4& input, Pool pool, Stride stride) {
  require_nonempty(input, "avgpool input");
  const Shape4 in = input.shape();
  require(pool.h >= 1 && pool.w >= 1 && stride.h >= 1 && stride.w >= 1, ErrorCode::InvalidSpec,
          "pool and stride must be >= 1");
  require(in.h >= pool.h && in.w >= pool.w, ErrorCode::PoolLargerThanInput,
          "pool " + std::to_string(pool.h) + "x" + std::to_string(pool.w) + " on input " + to_string(in));
  const std::size_t oh_n = pool_axis(in.h, pool.h, stride.h);
  const std::size_t ow_n = pool_axis(in.w, pool.w, stride.w);
  const double scale = 1.0 / static_cast<double>(pool.h * pool.w);
  Tensor4 out({oh_n, ow_n, in.c, in.n});
  for (std::size_t n = 0; n < in.n; ++n)
    for (std::size_t oh = 0; oh < oh_n; ++oh)
      for (std::size_t ow = 0; ow < ow_n; ++ow) {
        double* y = &out(oh, ow, 0, n);
        for (std::size_t i = 0; i < pool.h; ++i)
          for (std::size_t j = 0; j < pool.w; ++j) {
            const double* x = &input(oh * stride.h + i, ow * stride.w + j, 0, n);
            for (std::size_t c = 0; c < in.c; ++c) y[c] += x[c];
          }
        for (std::size_t c = 0; c < in.c; ++c) y[c] *= scale;
      }
  return out;
}

inline Tensor4 avgpool_backward(const Shape4& input_shape, Pool pool, Stride stride, const Tensor4& d_out) {
  const std::size_t oh_n = pool_axis(input_shape.h, pool.h, stride.h);
  const std::size_t ow_n = pool_axis(input_shape.w, pool.w, stride.w);
  require(d_out.shape() == Shape4{oh_n, ow_n, input_shape.c, input_shape.n}, ErrorCode::ShapeMismatch,
          "avgpool gradient shape");
  const double scale = 1.0 / static_cast<double>(pool.h * pool.w);
  Tensor4 dx(input_shape);
  for (std::size_t n = 0; n < input_shape.n; ++n)
    for (std::size_t oh = 0; oh < oh_n; ++oh)
      for (std::size_t ow = 0; ow < ow_n; ++ow) {
        const double* dy = &d_out(oh, ow, 0, n);
        for (std::size_t i = 0; i < pool.h; ++i)
          for (std::size_t j = 0; j < pool.w; ++j) {
            double* g = &dx(oh * stride.h + i, ow * stride.w + j, 0, n);
            for (std::size_t c = 0; c < input_shape.c; ++c) g[c] += dy[c] * scale;
          }
      }
  return dx;
}

// ---------------------------------------------------------------------------
// Fully connected
// weights: 1 x flat_in x 1 x out_units, i.e. a row-major out_units x flat_in
// matrix. Inputs are flattened height-major, then width, then channel.

inline Tensor4 fully_connected_forward(const Tensor4& input, const Tensor4& weights, std::span<const double> bias) {
  require_nonempty(input, "fc input");
  require_nonempty(weights, "fc weights");
  const std::size_t flat = input.shape().sample_size();
  const std::size_t out_units = weights.shape().n;
  require(weights.shape().w == flat, ErrorCode::DimMismatch,
          "fc expects " + std::to_string(weights.shape().w) + " inputs, got " + std::to_string(flat));
  require(bias.size() == out_units, ErrorCode::DimMismatch, "fc bias length != out units");
  const std::size_t N = input.batch();
  Tensor4 out({1, 1, out_units, N});
  const double* w = weights.data().data();
  for (std::size_t n = 0; n < N; ++n) {
    const auto x = input.sample(n);
    for (std::size_t o = 0; o < out_units; ++o) {
      const double* row = w + o * flat;
      double acc = bias[o];
      for (std::size_t i = 0; i < flat; ++i) acc += row[i] * x[i];
      out(0, 0, o, n) = acc;
    }
  }
  return out;
}

struct FcGrads {
  Tensor4 d_input;
  Tensor4 d_weights;
  std::vector<double> d_bias;
};

inline FcGrads fully_connected_backward(const Tensor4& input, const Tensor4& weights, const Tensor4& d_out) {
  const std::size_t flat = input.shape().sample_size();
  const std::size_t out_units = weights.shape().n;
  const std::size_t N = input.batch();
  require(d_out.shape() == Shape4{1, 1, out_units, N}, ErrorCode::ShapeMismatch, "fc gradient shape");
  FcGrads g{Tensor4(input.shape()), Tensor4(weights.shape()), std::vector<double>(out_units, 0.0)};
  const double* w = weights.data().data();
  double* dw = g.d_weights.data().data();
  for (std::size_t n = 0; n < N; ++n) {
    const auto x = input.sample(n);
    auto dx = g.d_input.sample(n);
    for (std::size_t o = 0; o < out_units; ++o) {
      const double gy = d_out(0, 0, o, n);
      g.d_bias[o] += gy;
      if (gy == 0.0) continue;
      const double* row = w + o * flat;
      double* drow = dw + o * flat;
      for (std::size_t i = 0; i < flat; ++i) {
        drow[i] += gy * x[i];
        dx[i] += gy * row[i];
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Mean squared error

inline double mse_loss(std::span<const double> pred, std::span<const double> target) {
  require(pred.size() == target.size(), ErrorCode::LengthMismatch,
          "pred length " + std::to_string(pred.size()) + " != target length " + std::to_string(target.size()));
  require(!pred.empty(), ErrorCode::LengthMismatch, "mse of empty vectors");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

/// d(mse)/d(pred) = 2 (pred - target) / len.
inline std::vector<double> mse_gradient(std::span<const double> pred, std::span<const double> target) {
  require(pred.size() == target.size() && !pred.empty(), ErrorCode::LengthMismatch, "mse gradient lengths");
  std::vector<double> g(pred.size());
  const double scale = 2.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) g[i] = scale * (pred[i] - target[i]);
  return g;
}

}  // namespace mef::nn
