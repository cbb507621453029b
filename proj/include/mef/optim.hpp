#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mef/error.hpp"
#include "mef/network.hpp"
#include "mef/windows.hpp"

namespace mef {

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;

  AdamState() = default;
  explicit AdamState(const Network& net, AdamConfig cfg = {}) : config(cfg) {
    for_each_learnable(net.params(), [&](std::span<const double> s) {
      m.emplace_back(s.size(), 0.0);
      v.emplace_back(s.size(), 0.0);
    });
  }
};

/// One bias-corrected Adam update over parallel lists of parameter and
/// gradient arrays. Moment buffers are allocated on first use.
inline void adam_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
                      AdamState& state) {
  require(params.size() == grads.size(), ErrorCode::ShapeMismatch, "adam: parameter/gradient list lengths differ");
  if (state.m.empty() && state.v.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  require(state.m.size() == params.size(), ErrorCode::ShapeMismatch, "adam: state does not match parameters");
  for (std::size_t a = 0; a < params.size(); ++a)
    require(params[a].size() == grads[a].size() && state.m[a].size() == params[a].size(), ErrorCode::ShapeMismatch,
            "adam: array " + std::to_string(a) + " size mismatch");

  const AdamConfig& c = state.config;
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t a = 0; a < params.size(); ++a) {
    auto& m = state.m[a];
    auto& v = state.v[a];
    const auto g = grads[a];
    auto p = params[a];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

inline void adam_step(Network& net, const Gradients& grads, AdamState& state) {
  std::vector<std::span<double>> p;
  std::vector<std::span<const double>> g;
  for_each_learnable(net.params(), [&](std::span<double> s) { p.push_back(s); });
  for_each_learnable(grads, [&](std::span<const double> s) { g.push_back(s); });
  adam_step(p, g, state);
  net.mark_updated();
}

// ---------------------------------------------------------------------------
// Gradient clipping by global L2 norm

inline double global_norm(const Gradients& grads) {
  double sq = 0.0;
  for_each_learnable(grads, [&](std::span<const double> s) {
    for (double v : s) sq += v * v;
  });
  return std::sqrt(sq);
}

/// Rescales all gradients by threshold / norm when the global L2 norm exceeds
/// `threshold`. An infinite threshold is the identity.
inline void clip_gradients(Gradients& grads, double threshold) {
  if (std::isinf(threshold)) return;
  require(threshold > 0.0, ErrorCode::InvalidSpec, "gradient threshold must be positive");
  const double norm = global_norm(grads);
  if (!(norm > threshold)) return;
  const double scale = threshold / norm;
  for_each_learnable(grads, [&](std::span<double> s) {
    for (double& v : s) v *= scale;
  });
}

// ---------------------------------------------------------------------------
// Mini-batch schedule

/// Seeded per-epoch shuffle of [0, n) cut into floor(n / batch_size) batches;
/// the incomplete tail batch is dropped.
inline std::vector<std::vector<std::size_t>> minibatch_schedule(std::size_t n_samples, std::size_t batch_size,
                                                                std::uint64_t seed, std::uint64_t epoch) {
  require(batch_size >= 1, ErrorCode::InvalidSpec, "batch size must be >= 1");
  const std::size_t iters = n_samples / batch_size;
  require(iters >= 1, ErrorCode::BatchLargerThanDataset,
          "batch size " + std::to_string(batch_size) + " exceeds " + std::to_string(n_samples) + " training windows");
  std::vector<std::size_t> order(n_samples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches(iters);
  for (std::size_t b = 0; b < iters; ++b)
    batches[b].assign(order.begin() + static_cast<std::ptrdiff_t>(b * batch_size),
                      order.begin() + static_cast<std::ptrdiff_t>((b + 1) * batch_size));
  return batches;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t max_epochs = 400;
  std::size_t batch_size = 700;
  double learning_rate = 0.01;
  double gradient_threshold = std::numeric_limits<double>::infinity();
  std::uint64_t shuffle_seed = 0;
  /// Optional held-out windows, evaluated at every log point. Non-owning.
  const WindowSet* validation = nullptr;
  std::size_t log_every = 50;
};

struct HistoryPoint {
  std::size_t epoch = 0;
  std::size_t iteration = 0;
  double elapsed_seconds = 0.0;
  double minibatch_rmse = 0.0;
  double minibatch_loss = 0.0;
  std::optional<double> validation_rmse;
  std::optional<double> validation_loss;
};

struct TrainHistory {
  std::vector<HistoryPoint> points;
  std::size_t iterations_per_epoch = 0;

  bool empty() const { return points.empty(); }
};

inline void write_history_csv(std::ostream& os, const TrainHistory& h) {
  os << "Epoch,Iteration,ElapsedSeconds,MinibatchRMSE,ValidationRMSE,MinibatchLoss,ValidationLoss\n";
  auto opt = [](const std::optional<double>& v) {
    if (!v) return std::string();
    std::ostringstream s;
    s.precision(17);
    s << *v;
    return s.str();
  };
  for (const auto& p : h.points) {
    std::ostringstream row;
    row.precision(17);
    row << p.epoch << ',' << p.iteration << ',';
    row.precision(6);
    row << std::fixed << p.elapsed_seconds << std::defaultfloat;
    row.precision(17);
    row << ',' << p.minibatch_rmse << ',' << opt(p.validation_rmse) << ',' << p.minibatch_loss << ','
        << opt(p.validation_loss) << '\n';
    os << row.str();
  }
}

/// Thrown when a mini-batch loss becomes NaN/Inf; carries the parameters from
/// before the update that produced it.
class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(std::size_t epoch, std::size_t iteration, Network last_good)
      : Error(ErrorCode::NonFiniteLoss,
              "non-finite loss at epoch " + std::to_string(epoch) + ", iteration " + std::to_string(iteration)),
        last_good_(std::move(last_good)) {}
  const Network& last_good() const { return last_good_; }

 private:
  Network last_good_;
};

/// Inference over a whole window set in chunks; returns row-major N x K.
inline std::vector<double> predict_windows(const Network& net, const WindowSet& ws, std::size_t chunk = 256) {
  std::vector<double> out;
  out.reserve(ws.size() * net.output_units());
  for (std::size_t start = 0; start < ws.size(); start += chunk) {
    const std::size_t end = std::min(ws.size(), start + chunk);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor4 y = predict(net, ws.gather(idx).inputs);
    out.insert(out.end(), y.values().begin(), y.values().end());
  }
  return out;
}

/// Per-element mean of the training inputs (the zero-center statistic).
inline Tensor4 input_mean(const WindowSet& ws) {
  require(!ws.empty(), ErrorCode::InsufficientData, "input mean of empty window set");
  const Shape3 s = ws.sample_shape();
  Tensor4 mean({s.h, s.w, s.c, 1});
  auto m = mean.data();
  for (std::size_t n = 0; n < ws.size(); ++n) {
    const auto x = ws.inputs.sample(n);
    for (std::size_t i = 0; i < x.size(); ++i) m[i] += x[i];
  }
  for (double& v : m) v /= static_cast<double>(ws.size());
  return mean;
}

/// Drives one network through mini-batch iterations. Shared by centralized
/// and federated training so both follow the identical update sequence.
class Trainer {
 public:
  Trainer(Network& net, const WindowSet& data, const TrainConfig& cfg)
      : net_(net), data_(data), cfg_(cfg), adam_(net, AdamConfig{cfg.learning_rate}) {
    require(!data.empty(), ErrorCode::InsufficientData, "empty training set");
    const Shape3 in = net.input_shape();
    require(data.sample_shape() == in, ErrorCode::ShapeMismatch,
            "training windows " + to_string(data.sample_shape()) + " do not match network input " + to_string(in));
    require(data.outputs == net.output_units(), ErrorCode::ShapeMismatch, "target width != network outputs");
    iterations_per_epoch_ = data.size() / std::max<std::size_t>(cfg.batch_size, 1);
    require(cfg.batch_size >= 1 && iterations_per_epoch_ >= 1, ErrorCode::BatchLargerThanDataset,
            "batch size " + std::to_string(cfg.batch_size) + " exceeds " + std::to_string(data.size()) +
                " training windows");
  }

  /// Captures the zero-center statistic from the training windows.
  void capture_input_mean() {
    if (net_.spec().input().normalization == Normalization::ZeroCenter) net_.set_input_mean(input_mean(data_));
  }

  std::size_t iterations_per_epoch() const { return iterations_per_epoch_; }
  std::size_t total_iterations() const { return iterations_per_epoch_ * cfg_.max_epochs; }
  std::size_t completed() const { return completed_; }
  bool finished() const { return completed_ >= total_iterations(); }
  double last_loss() const { return last_loss_; }
  const AdamState& adam() const { return adam_; }

  /// Runs the next scheduled iteration: forward, loss, backward, clip, Adam.
  /// Returns the mini-batch MSE measured before the update.
  double step() {
    const std::size_t epoch = completed_ / iterations_per_epoch_;
    const std::size_t within = completed_ % iterations_per_epoch_;
    if (within == 0 || epoch != schedule_epoch_) {
      schedule_ = minibatch_schedule(data_.size(), cfg_.batch_size, cfg_.shuffle_seed, epoch);
      schedule_epoch_ = epoch;
    }
    const WindowSet batch = data_.gather(schedule_[within]);
    ForwardCache cache;
    Tensor4 grad_out;
    const Tensor4 pred = forward(net_, batch.inputs, nn::Mode::Train, &cache);
    const double loss = regression_loss(pred, batch.targets, &grad_out);
    if (!std::isfinite(loss)) throw NonFiniteLossError(epoch + 1, completed_ + 1, last_good_ ? *last_good_ : net_);
    Gradients grads = backward(net_, cache, grad_out);
    clip_gradients(grads, cfg_.gradient_threshold);
    last_good_ = net_;
    adam_step(net_, grads, adam_);
    ++completed_;
    last_loss_ = loss;
    return loss;
  }

 private:
  Network& net_;
  const WindowSet& data_;
  TrainConfig cfg_;
  AdamState adam_;
  std::size_t iterations_per_epoch_ = 0;
  std::size_t completed_ = 0;
  std::size_t schedule_epoch_ = std::numeric_limits<std::size_t>::max();
  std::vector<std::vector<std::size_t>> schedule_;
  std::optional<Network> last_good_;
  double last_loss_ = 0.0;
};

struct Evaluation {
  double rmse = 0.0;
  double loss = 0.0;
};

inline Evaluation evaluate_loss(const Network& net, const WindowSet& ws) {
  const double loss = nn::mse_loss(predict_windows(net, ws), ws.targets);
  return {std::sqrt(loss), loss};
}

struct TrainResult {
  Network net;
  TrainHistory history;
  /// Snapshot with the lowest validation loss seen at a log point.
  std::optional<Network> best_validation;
};

/// Mini-batch Adam training for `cfg.max_epochs` epochs. Logs the first
/// iteration, every `log_every` epochs and the final epoch.
inline TrainResult train(Network net, const WindowSet& data, const TrainConfig& cfg) {
  TrainResult result{std::move(net), {}, std::nullopt};
  Trainer trainer(result.net, data, cfg);
  result.history.iterations_per_epoch = trainer.iterations_per_epoch();
  trainer.capture_input_mean();
  if (cfg.max_epochs == 0) return result;

  const auto t0 = std::chrono::steady_clock::now();
  double best = std::numeric_limits<double>::infinity();
  auto log_point = [&](std::size_t epoch, double loss) {
    HistoryPoint p;
    p.epoch = epoch;
    p.iteration = trainer.completed();
    p.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    p.minibatch_loss = loss;
    p.minibatch_rmse = std::sqrt(loss);
    if (cfg.validation != nullptr && !cfg.validation->empty()) {
      const Evaluation ev = evaluate_loss(result.net, *cfg.validation);
      p.validation_loss = ev.loss;
      p.validation_rmse = ev.rmse;
      if (ev.loss < best) {
        best = ev.loss;
        result.best_validation = result.net;
      }
    }
    result.history.points.push_back(p);
  };

  const std::size_t ipe = trainer.iterations_per_epoch();
  const std::size_t log_every = std::max<std::size_t>(cfg.log_every, 1);
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    for (std::size_t it = 0; it < ipe; ++it) {
      const double loss = trainer.step();
      if (epoch == 1 && it == 0) log_point(1, loss);
    }
    if (epoch % log_every == 0 || epoch == cfg.max_epochs) {
      if (!(epoch == 1 && ipe == 1)) log_point(epoch, trainer.last_loss());
    }
  }
  return result;
}

}  // namespace mef
