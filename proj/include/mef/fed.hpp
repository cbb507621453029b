#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <future>
#include <limits>
#include <memory>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "mef/error.hpp"
#include "mef/network.hpp"
#include "mef/optim.hpp"
#include "mef/windows.hpp"

namespace mef {

using WeightVector = std::vector<double>;

namespace detail {

/// Mean of one coordinate across nodes: sort, then accumulate offsets from
/// the smallest value. The result depends only on the multiset of values, and
/// k identical values give that value back exactly.
inline double pivot_mean(std::vector<std::pair<double, double>>& vw) {
  if (vw.size() == 1) return vw[0].first;
  std::sort(vw.begin(), vw.end());
  const double v0 = vw.front().first;
  if (vw.back().first == v0) return v0;
  double acc = 0.0;
  for (const auto& [v, w] : vw) acc += w * (v - v0);
  return v0 + acc;
}

}  // namespace detail

/// Weighted element-wise mean; `weights` are normalized internally.
inline WeightVector fedavg(const std::vector<WeightVector>& locals, const std::vector<double>& weights) {
  require(!locals.empty(), ErrorCode::EmptyList, "fedavg over zero local models");
  require(weights.size() == locals.size(), ErrorCode::LengthMismatch, "one weight per local model required");
  const std::size_t n = locals[0].size();
  for (const auto& w : locals)
    require(w.size() == n, ErrorCode::LengthMismatch,
            "local weight vectors differ in length: " + std::to_string(w.size()) + " vs " + std::to_string(n));
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  require(total > 0.0, ErrorCode::InvalidSpec, "fedavg weights must sum to a positive value");
  WeightVector out(n);
  std::vector<std::pair<double, double>> vw(locals.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < locals.size(); ++k) vw[k] = {locals[k][i], weights[k] / total};
    out[i] = detail::pivot_mean(vw);
  }
  return out;
}

/// Unweighted element-wise mean.
inline WeightVector fedavg(const std::vector<WeightVector>& locals) {
  return fedavg(locals, std::vector<double>(locals.size(), 1.0));
}

/// Learnables, batchnorm running statistics and the zero-center mean, flattened.
inline WeightVector flatten_state(const Network& net) {
  WeightVector out;
  for_each_state(net.params(), [&](std::span<const double> s) { out.insert(out.end(), s.begin(), s.end()); });
  const auto m = net.input_mean().data();
  out.insert(out.end(), m.begin(), m.end());
  return out;
}

/// Inverse of flatten_state for a network of the same architecture.
inline void load_state(Network& net, const WeightVector& w) {
  std::size_t at = 0;
  for_each_state(net.params(), [&](std::span<double> s) {
    require(at + s.size() <= w.size(), ErrorCode::LengthMismatch, "state vector too short");
    std::copy(w.begin() + static_cast<std::ptrdiff_t>(at), w.begin() + static_cast<std::ptrdiff_t>(at + s.size()),
              s.begin());
    at += s.size();
  });
  if (!net.input_mean().empty()) {
    Tensor4 mean = net.input_mean();
    auto m = mean.data();
    require(at + m.size() <= w.size(), ErrorCode::LengthMismatch, "state vector too short");
    std::copy(w.begin() + static_cast<std::ptrdiff_t>(at), w.begin() + static_cast<std::ptrdiff_t>(at + m.size()),
              m.begin());
    at += m.size();
    net.set_input_mean(std::move(mean));
  }
  require(at == w.size(), ErrorCode::LengthMismatch, "state vector length does not match the network");
  net.mark_updated();
}

struct FedTopology {
  /// Local training windows, one entry per node; node 0 hosts the global model.
  std::vector<WindowSet> nodes;
  /// Local iterations between averaging steps; 0 averages only once, at the end.
  std::size_t sync_period = 1;
  /// Weight nodes by their number of training windows instead of uniformly.
  bool sample_weighted = false;
  /// Threads used to advance nodes within a round.
  std::size_t workers = 1;
};

struct FedRoundLog {
  std::size_t round = 0;
  std::size_t node = 0;
  double local_loss = 0.0;
  /// L2 distance between a node's pre-average state and the averaged state.
  double post_avg_delta_norm = 0.0;
};

inline void write_round_log_csv(std::ostream& os, const std::vector<FedRoundLog>& log) {
  os << "round,node_id,local_loss,post_avg_delta_norm\n";
  for (const auto& r : log) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g\n", r.round, r.node, r.local_loss, r.post_avg_delta_norm);
    os << buf;
  }
}

struct FedResult {
  Network global;
  /// Final local models. With sync_period 0 these are the independent,
  /// never-averaged trajectories.
  std::vector<Network> locals;
  std::vector<TrainHistory> histories;
  std::vector<FedRoundLog> rounds;
  /// Nodes without enough windows for one mini-batch.
  std::vector<std::size_t> excluded;
};

/// Average federated training. Every node starts from `init`, runs
/// `sync_period` Adam iterations on its own windows with its own optimizer
/// state, then all nodes still training are replaced by their mean. Training
/// ends after `cfg.max_epochs` local epochs on every node.
inline FedResult federated_train(const Network& init, const FedTopology& topo, const TrainConfig& cfg) {
  require(!topo.nodes.empty(), ErrorCode::EmptyList, "federated topology has no nodes");
  FedResult res;
  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < topo.nodes.size(); ++k) {
    if (topo.nodes[k].size() >= std::max<std::size_t>(cfg.batch_size, 1) && !topo.nodes[k].empty())
      active.push_back(k);
    else
      res.excluded.push_back(k);
  }
  require(!active.empty(), ErrorCode::InsufficientData, "no node has enough windows for one mini-batch");

  const std::size_t K = topo.nodes.size();
  res.locals.assign(K, init);
  res.histories.resize(K);
  std::vector<std::unique_ptr<Trainer>> trainers(K);
  for (std::size_t k : active) {
    trainers[k] = std::make_unique<Trainer>(res.locals[k], topo.nodes[k], cfg);
    trainers[k]->capture_input_mean();
    res.histories[k].iterations_per_epoch = trainers[k]->iterations_per_epoch();
  }

  const std::size_t log_every = std::max<std::size_t>(cfg.log_every, 1);
  auto advance = [&](std::size_t k, std::size_t max_steps) {
    Trainer& t = *trainers[k];
    const std::size_t ipe = t.iterations_per_epoch();
    for (std::size_t s = 0; s < max_steps && !t.finished(); ++s) {
      const double loss = t.step();
      const std::size_t done = t.completed();
      const std::size_t epoch = (done + ipe - 1) / ipe;
      const bool epoch_end = done % ipe == 0;
      const bool first = done == 1;
      if (first || (epoch_end && (epoch % log_every == 0 || epoch == cfg.max_epochs) && !(epoch == 1 && ipe == 1))) {
        HistoryPoint p;
        p.epoch = epoch;
        p.iteration = done;
        p.minibatch_loss = loss;
        p.minibatch_rmse = std::sqrt(loss);
        res.histories[k].points.push_back(p);
      }
    }
  };

  auto weight_of = [&](std::size_t k) {
    return topo.sample_weighted ? static_cast<double>(topo.nodes[k].size()) : 1.0;
  };

  auto average = [&](const std::vector<std::size_t>& members, std::size_t round) {
    std::vector<WeightVector> states;
    std::vector<double> weights;
    for (std::size_t k : members) {
      states.push_back(flatten_state(res.locals[k]));
      weights.push_back(weight_of(k));
    }
    const WeightVector avg = fedavg(states, weights);
    for (std::size_t j = 0; j < members.size(); ++j) {
      double sq = 0.0;
      for (std::size_t i = 0; i < avg.size(); ++i) sq += (states[j][i] - avg[i]) * (states[j][i] - avg[i]);
      res.rounds.push_back({round, members[j], trainers[members[j]]->last_loss(), std::sqrt(sq)});
      load_state(res.locals[members[j]], avg);
    }
    return avg;
  };

  if (cfg.max_epochs == 0) {
    res.global = res.locals[active.front()];
    if (active.size() > 1) load_state(res.global, average(active, 0));
    return res;
  }

  const std::size_t period = topo.sync_period == 0 ? std::numeric_limits<std::size_t>::max() : topo.sync_period;
  std::size_t round = 0;
  while (true) {
    std::vector<std::size_t> running;
    for (std::size_t k : active)
      if (!trainers[k]->finished()) running.push_back(k);
    if (running.empty()) break;
    ++round;
    if (topo.workers <= 1 || running.size() == 1) {
      for (std::size_t k : running) advance(k, period);
    } else {
      std::vector<std::future<void>> jobs;
      const std::size_t per = (running.size() + topo.workers - 1) / topo.workers;
      for (std::size_t s = 0; s < running.size(); s += per)
        jobs.push_back(std::async(std::launch::async, [&, s] {
          for (std::size_t j = s; j < std::min(running.size(), s + per); ++j) advance(running[j], period);
        }));
      for (auto& j : jobs) j.get();
    }
    if (topo.sync_period != 0) average(running, round);
  }

  res.global = res.locals[active.front()];
  if (topo.sync_period == 0) {
    std::vector<WeightVector> states;
    std::vector<double> weights;
    for (std::size_t k : active) {
      states.push_back(flatten_state(res.locals[k]));
      weights.push_back(weight_of(k));
    }
    load_state(res.global, fedavg(states, weights));
  }
  return res;
}

}  // namespace mef
