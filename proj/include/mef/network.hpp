#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mef/error.hpp"
#include "mef/layer_spec.hpp"
#include "mef/layers.hpp"
#include "mef/tensor.hpp"

namespace mef {

/// Parameters of one layer. Only the fields relevant to the layer kind are
/// populated: conv/fc use `weights` + `bias`, batchnorm uses the four
/// per-channel vectors. Parameter-free layers keep everything empty.
struct LayerParams {
  Tensor4 weights;
  std::vector<double> bias;
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;

  bool operator==(const LayerParams&) const = default;
};

/// Gradients share the LayerParams layout; running statistics stay empty.
using Gradients = std::vector<LayerParams>;

/// Visits the learnable arrays (weights, bias, gamma, beta) in a fixed order.
template <typename Params, typename F>
void for_each_learnable(Params& params, F&& f) {
  for (auto& p : params) {
    if (!p.weights.empty()) f(p.weights.data());
    if (!p.bias.empty()) f(std::span(p.bias));
    if (!p.gamma.empty()) f(std::span(p.gamma));
    if (!p.beta.empty()) f(std::span(p.beta));
  }
}

/// Visits learnables followed by the batchnorm running statistics.
template <typename Params, typename F>
void for_each_state(Params& params, F&& f) {
  for_each_learnable(params, f);
  for (auto& p : params) {
    if (!p.running_mean.empty()) f(std::span(p.running_mean));
    if (!p.running_var.empty()) f(std::span(p.running_var));
  }
}

class Network {
 public:
  Network() = default;

  /// Builds zero-valued parameters shaped for `spec` (batchnorm: gamma 1,
  /// beta 0, running mean 0, running var 1).
  explicit Network(NetworkSpec spec) : spec_(std::move(spec)), shapes_(activation_shapes(spec_)) {
    params_.resize(spec_.layers.size());
    Shape3 prev{};
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const auto& l = spec_.layers[i];
      auto& p = params_[i];
      if (const auto* cv = std::get_if<Conv2DSpec>(&l)) {
        p.weights = Tensor4({cv->kernel_h, cv->kernel_w, prev.c, cv->num_filters});
        p.bias.assign(cv->num_filters, 0.0);
      } else if (std::holds_alternative<BatchNormSpec>(l)) {
        p.gamma.assign(prev.c, 1.0);
        p.beta.assign(prev.c, 0.0);
        p.running_mean.assign(prev.c, 0.0);
        p.running_var.assign(prev.c, 1.0);
      } else if (const auto* fc = std::get_if<FullyConnectedSpec>(&l)) {
        p.weights = Tensor4({1, prev.size(), 1, fc->out_units});
        p.bias.assign(fc->out_units, 0.0);
      }
      prev = shapes_[i];
    }
  }

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<Shape3>& shapes() const { return shapes_; }
  Shape3 input_shape() const { return shapes_.front(); }
  std::size_t output_units() const { return shapes_.back().c; }

  std::vector<LayerParams>& params() { return params_; }
  const std::vector<LayerParams>& params() const { return params_; }

  /// Per-element training mean subtracted under ZeroCenter (H x W x C x 1).
  const Tensor4& input_mean() const { return input_mean_; }
  void set_input_mean(Tensor4 mean) {
    const Shape3 s = input_shape();
    require(mean.shape() == Shape4{s.h, s.w, s.c, 1}, ErrorCode::ShapeMismatch, "input mean shape");
    input_mean_ = std::move(mean);
    ++version_;
  }

  std::size_t num_learnable() const {
    std::size_t n = 0;
    for_each_learnable(params_, [&](auto s) { n += s.size(); });
    return n;
  }

  /// Incremented whenever parameters are replaced; caches from an older
  /// version are rejected by backward().
  std::uint64_t version() const { return version_; }
  void mark_updated() { ++version_; }

  bool operator==(const Network& o) const {
    return spec_ == o.spec_ && params_ == o.params_ && input_mean_ == o.input_mean_;
  }

 private:
  NetworkSpec spec_;
  std::vector<Shape3> shapes_;
  std::vector<LayerParams> params_;
  Tensor4 input_mean_;
  std::uint64_t version_ = 0;
};

/// Glorot-uniform weights from `seed`, zero biases, unit batchnorm scale.
inline Network make_network(const NetworkSpec& spec, std::uint64_t seed) {
  Network net(spec);
  std::mt19937_64 rng(seed);
  const auto& shapes = net.shapes();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    auto& p = net.params()[i];
    if (p.weights.empty()) continue;
    double fan_in = 0.0;
    double fan_out = 0.0;
    if (const auto* cv = std::get_if<Conv2DSpec>(&spec.layers[i])) {
      const double k = static_cast<double>(cv->kernel_h * cv->kernel_w);
      fan_in = k * static_cast<double>(shapes[i - 1].c);
      fan_out = k * static_cast<double>(cv->num_filters);
    } else {
      fan_in = static_cast<double>(p.weights.shape().w);
      fan_out = static_cast<double>(p.weights.shape().n);
    }
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& w : p.weights.data()) w = dist(rng);
  }
  net.mark_updated();
  return net;
}

struct ForwardCache {
  std::vector<Tensor4> layer_inputs;
  std::vector<nn::BatchNormCache> batchnorm;
  std::uint64_t version = 0;
  bool trained = false;
};

namespace detail {

inline Tensor4 forward_impl(const Network& net, const Tensor4& batch, nn::Mode mode, ForwardCache* cache,
                            std::vector<LayerParams>* running_sink) {
  require_nonempty(batch, "input batch");
  const Shape3 in = net.input_shape();
  if (batch.shape().sample() != in)
    throw LayerError(ErrorCode::ShapeMismatch, 0,
                     "batch sample shape " + to_string(batch.shape().sample()) + " != input " + to_string(in));
  const auto& spec = net.spec();
  const auto& params = net.params();
  if (cache != nullptr) {
    cache->layer_inputs.assign(spec.layers.size(), Tensor4{});
    cache->batchnorm.assign(spec.layers.size(), nn::BatchNormCache{});
    cache->version = net.version();
    cache->trained = mode == nn::Mode::Train;
  }

  Tensor4 x = batch;
  if (spec.input().normalization == Normalization::ZeroCenter && !net.input_mean().empty()) {
    const auto mean = net.input_mean().sample(0);
    for (std::size_t n = 0; n < x.batch(); ++n) {
      auto s = x.sample(n);
      for (std::size_t i = 0; i < s.size(); ++i) s[i] -= mean[i];
    }
  }

  for (std::size_t i = 1; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const auto& p = params[i];
    if (cache != nullptr) cache->layer_inputs[i] = x;
    try {
      if (const auto* cv = std::get_if<Conv2DSpec>(&l)) {
        x = nn::conv2d_forward(x, p.weights, p.bias, cv->stride, cv->padding);
      } else if (std::holds_alternative<BatchNormSpec>(l)) {
        std::vector<double> rm = p.running_mean;
        std::vector<double> rv = p.running_var;
        x = nn::batchnorm_forward(x, p.gamma, p.beta, rm, rv, mode, {},
                                  cache != nullptr ? &cache->batchnorm[i] : nullptr);
        if (running_sink != nullptr && mode == nn::Mode::Train) {
          (*running_sink)[i].running_mean = std::move(rm);
          (*running_sink)[i].running_var = std::move(rv);
        }
      } else if (std::holds_alternative<ReLUSpec>(l)) {
        x = nn::relu_forward(x);
      } else if (const auto* pl = std::get_if<AvgPoolSpec>(&l)) {
        x = nn::avgpool_forward(x, pl->pool, pl->stride);
      } else if (std::holds_alternative<FullyConnectedSpec>(l)) {
        x = nn::fully_connected_forward(x, p.weights, p.bias);
      }
    } catch (const LayerError&) {
      throw;
    } catch (const Error& e) {
      throw LayerError(e.code(), i, e.what());
    }
  }
  return x;
}

}  // namespace detail

/// Runs the network on a batch (H x W x C x N). Returns 1 x 1 x K x N.
/// Train mode uses batch statistics in batchnorm and blends them into the
/// running statistics; Inference mode leaves the network untouched.
inline Tensor4 forward(Network& net, const Tensor4& batch, nn::Mode mode, ForwardCache* cache = nullptr) {
  return detail::forward_impl(net, batch, mode, cache, &net.params());
}

/// Inference-mode forward on an immutable network.
inline Tensor4 predict(const Network& net, const Tensor4& batch) {
  return detail::forward_impl(net, batch, nn::Mode::Inference, nullptr, nullptr);
}

/// Same-shaped zero gradients for `net`.
inline Gradients zero_gradients(const Network& net) {
  Gradients g(net.params().size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& p = net.params()[i];
    if (!p.weights.empty()) g[i].weights = Tensor4(p.weights.shape());
    g[i].bias.assign(p.bias.size(), 0.0);
    g[i].gamma.assign(p.gamma.size(), 0.0);
    g[i].beta.assign(p.beta.size(), 0.0);
  }
  return g;
}

/// Backpropagates `loss_grad` (shape of the forward output) through the
/// cached Train-mode forward pass.
inline Gradients backward(const Network& net, const ForwardCache& cache, const Tensor4& loss_grad) {
  require(cache.trained && cache.version == net.version() &&
              cache.layer_inputs.size() == net.spec().layers.size(),
          ErrorCode::StaleCache, "backward needs a Train-mode forward cache of the current parameters");
  const auto& spec = net.spec();
  Gradients grads = zero_gradients(net);
  Tensor4 g = loss_grad;
  for (std::size_t i = spec.layers.size() - 1; i >= 1; --i) {
    const auto& l = spec.layers[i];
    const auto& p = net.params()[i];
    const Tensor4& x = cache.layer_inputs[i];
    if (const auto* cv = std::get_if<Conv2DSpec>(&l)) {
      auto cg = nn::conv2d_backward(x, p.weights, g, cv->stride, cv->padding);
      grads[i].weights = std::move(cg.d_weights);
      grads[i].bias = std::move(cg.d_bias);
      g = std::move(cg.d_input);
    } else if (std::holds_alternative<BatchNormSpec>(l)) {
      auto bg = nn::batchnorm_backward(cache.batchnorm[i], p.gamma, g);
      grads[i].gamma = std::move(bg.d_gamma);
      grads[i].beta = std::move(bg.d_beta);
      g = std::move(bg.d_input);
    } else if (std::holds_alternative<ReLUSpec>(l)) {
      g = nn::relu_backward(x, g);
    } else if (const auto* pl = std::get_if<AvgPoolSpec>(&l)) {
      g = nn::avgpool_backward(x.shape(), pl->pool, pl->stride, g);
    } else if (std::holds_alternative<FullyConnectedSpec>(l)) {
      auto fg = nn::fully_connected_backward(x, p.weights, g);
      grads[i].weights = std::move(fg.d_weights);
      grads[i].bias = std::move(fg.d_bias);
      g = std::move(fg.d_input);
    }
  }
  return grads;
}

/// MSE between a forward output (1 x 1 x K x N) and row-major N x K targets;
/// writes d(loss)/d(pred) into `grad` when given.
inline double regression_loss(const Tensor4& pred, std::span<const double> targets, Tensor4* grad = nullptr) {
  const double loss = nn::mse_loss(pred.data(), targets);
  if (grad != nullptr) *grad = Tensor4(pred.shape(), nn::mse_gradient(pred.data(), targets));
  return loss;
}

}  // namespace mef
