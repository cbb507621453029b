#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "mef/arch.hpp"
#include "mef/data.hpp"
#include "mef/featsel.hpp"
#include "mef/fed.hpp"
#include "mef/kv.hpp"
#include "mef/metrics.hpp"
#include "mef/optim.hpp"

namespace mef {

inline constexpr const char* kVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Configuration

/// Experiment description read from `key = value` text. Keys:
///
///   data.csv, data.synth_seed, synth.<SynthConfig field>
///   frameworks, vectors, buildings (ids or `all`)
///   split (train_test | train_val_test), split.by_month
///   epochs, batch_size, learning_rate, gradient_threshold, shuffle_seed,
///   log_every, init_seed
///   arch.filters, arch.kernel, arch.blocks, arch.pool_stride
///   input.temperature, input.solar, input.minmax, select.threshold
///   fed.nodes, fed.sync_period, fed.sample_weighted
///   workers, output_dir, models_dir
struct ExperimentConfig {
  std::string csv_path;
  std::optional<std::uint64_t> synth_seed;
  SynthConfig synth;
  std::vector<FrameworkId> frameworks{FrameworkId::CNN1};
  std::vector<EnergyVector> vectors{kVectors.begin(), kVectors.end()};
  std::optional<std::vector<int>> building_ids;
  SplitSpec split;
  TrainConfig train;
  std::uint64_t init_seed = 0;
  std::optional<std::size_t> filters, kernel, blocks, pool_stride;
  InputOptions input;
  double threshold = 0.3;
  std::optional<std::size_t> fed_nodes;
  std::size_t fed_sync_period = 1;
  bool fed_sample_weighted = false;
  std::size_t workers = 1;
  std::string output_dir = "results";
  /// When set, models are loaded from this directory instead of trained.
  std::string models_dir;
  /// Resolved key-value form, used for the manifest and config hash.
  KeyValues raw;

  static ExperimentConfig from(const KeyValues& kv);

  BlockOptions block_options(FrameworkId fw) const {
    BlockOptions o = fw == FrameworkId::CNN2                               ? cnn2_defaults()
                     : (fw == FrameworkId::CNN4 || fw == FrameworkId::CNN5) ? cnn45_defaults()
                                                                            : BlockOptions{};
    if (filters) o.num_filters = *filters;
    if (kernel) o.kernel_h = *kernel;
    if (blocks) o.blocks = *blocks;
    if (pool_stride) o.pool_stride = *pool_stride;
    return o;
  }

  /// CNN_3 always trains with a validation partition.
  SplitSpec split_for(FrameworkId fw) const {
    if (fw != FrameworkId::CNN3) return split;
    return {SplitSpec::Mode::TrainValTest, false};
  }
};

namespace detail {

inline std::vector<std::string> list_of(const std::string& s) {
  std::vector<std::string> out;
  for (auto& f : split_fields(s, ','))
    if (!f.empty()) out.push_back(f);
  return out;
}

inline std::size_t count_key(const KeyValues& kv, const std::string& key, std::size_t fallback, std::size_t min = 0) {
  const long long v = kv.get_int(key, static_cast<long long>(fallback));
  if (v < static_cast<long long>(min))
    throw Error(ErrorCode::ConfigError, "'" + key + "' must be >= " + std::to_string(min));
  return static_cast<std::size_t>(v);
}

inline const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys{
      "data.csv", "data.synth_seed", "frameworks", "vectors", "buildings", "split", "split.by_month", "epochs",
      "batch_size", "learning_rate", "gradient_threshold", "shuffle_seed", "log_every", "init_seed", "arch.filters",
      "arch.kernel", "arch.blocks", "arch.pool_stride", "input.temperature", "input.solar", "input.minmax",
      "select.threshold", "fed.nodes", "fed.sync_period", "fed.sample_weighted", "workers", "output_dir",
      "models_dir"};
  return keys;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::from(const KeyValues& kv) {
  using detail::count_key;
  ExperimentConfig c;
  c.raw = kv;
  KeyValues synth_kv;
  for (const auto& [k, v] : kv.values()) {
    if (k.rfind("synth.", 0) == 0) {
      synth_kv.set(k.substr(6), v);
      continue;
    }
    const auto& known = detail::known_keys();
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw Error(ErrorCode::ConfigError, "unknown config key '" + k + "'");
  }
  c.csv_path = kv.get("data.csv", std::string());
  if (kv.has("data.synth_seed")) c.synth_seed = count_key(kv, "data.synth_seed", 0);
  if (c.csv_path.empty() && !c.synth_seed)
    throw Error(ErrorCode::ConfigError, "set either data.csv or data.synth_seed");
  if (!c.csv_path.empty() && c.synth_seed)
    throw Error(ErrorCode::ConfigError, "data.csv and data.synth_seed are mutually exclusive");
  if (kv.has("fed.nodes")) {
    c.fed_nodes = count_key(kv, "fed.nodes", 20, 1);
    if (!synth_kv.has("num_nodes")) synth_kv.set("num_nodes", std::to_string(*c.fed_nodes));
  }
  c.synth = SynthConfig::from(synth_kv);

  if (kv.has("frameworks")) {
    c.frameworks.clear();
    auto names = detail::list_of(kv.get("frameworks", std::string()));
    if (names.size() == 1 && names[0] == "all") names = {"1", "2", "3", "4", "5", "6"};
    for (const auto& n : names) {
      const auto f = parse_framework(n);
      if (!f) throw Error(ErrorCode::ConfigError, "unknown framework '" + n + "' (expected CNN_1 .. CNN_6)");
      if (std::find(c.frameworks.begin(), c.frameworks.end(), *f) == c.frameworks.end()) c.frameworks.push_back(*f);
    }
    if (c.frameworks.empty()) throw Error(ErrorCode::ConfigError, "frameworks is empty");
  }
  if (kv.has("vectors")) {
    c.vectors.clear();
    auto names = detail::list_of(kv.get("vectors", std::string()));
    if (names.size() == 1 && names[0] == "all") names = {"electric", "heat", "gas"};
    for (const auto& n : names) {
      const auto v = parse_vector(n);
      if (!v) throw Error(ErrorCode::ConfigError, "unknown energy vector '" + n + "' (expected electric, heat, gas)");
      if (std::find(c.vectors.begin(), c.vectors.end(), *v) == c.vectors.end()) c.vectors.push_back(*v);
    }
    if (c.vectors.empty()) throw Error(ErrorCode::ConfigError, "vectors is empty");
    std::sort(c.vectors.begin(), c.vectors.end());
  }
  if (const std::string b = kv.get("buildings", std::string("all")); b != "all") {
    c.building_ids = std::vector<int>{};
    for (const auto& f : detail::list_of(b)) {
      char* end = nullptr;
      const long id = std::strtol(f.c_str(), &end, 10);
      if (end != f.c_str() + f.size()) throw Error(ErrorCode::ConfigError, "bad building id '" + f + "'");
      c.building_ids->push_back(static_cast<int>(id));
    }
    if (c.building_ids->empty()) throw Error(ErrorCode::ConfigError, "buildings is empty");
  }

  const std::string split = kv.get("split", std::string("train_test"));
  if (split == "train_test") c.split.mode = SplitSpec::Mode::TrainTest;
  else if (split == "train_val_test") c.split.mode = SplitSpec::Mode::TrainValTest;
  else throw Error(ErrorCode::ConfigError, "split must be train_test or train_val_test, got '" + split + "'");
  c.split.by_month = kv.get_bool("split.by_month", false);
  if (c.split.by_month && c.split.mode != SplitSpec::Mode::TrainTest)
    throw Error(ErrorCode::ConfigError, "split.by_month applies to train_test only");

  c.train.max_epochs = count_key(kv, "epochs", c.train.max_epochs);
  c.train.batch_size = count_key(kv, "batch_size", c.train.batch_size, 1);
  c.train.learning_rate = kv.get("learning_rate", c.train.learning_rate);
  if (!(c.train.learning_rate > 0.0)) throw Error(ErrorCode::ConfigError, "learning_rate must be > 0");
  c.train.gradient_threshold = kv.get("gradient_threshold", c.train.gradient_threshold);
  if (!(c.train.gradient_threshold > 0.0)) throw Error(ErrorCode::ConfigError, "gradient_threshold must be > 0");
  c.train.shuffle_seed = count_key(kv, "shuffle_seed", 0);
  c.train.log_every = count_key(kv, "log_every", c.train.log_every, 1);
  c.init_seed = count_key(kv, "init_seed", 0);

  auto opt_count = [&](const char* key, std::optional<std::size_t>& dst) {
    if (kv.has(key)) dst = count_key(kv, key, 1, 1);
  };
  opt_count("arch.filters", c.filters);
  opt_count("arch.kernel", c.kernel);
  opt_count("arch.blocks", c.blocks);
  opt_count("arch.pool_stride", c.pool_stride);

  c.input.temperature = kv.get_bool("input.temperature", false);
  c.input.solar = kv.get_bool("input.solar", false);
  c.input.minmax = kv.get_bool("input.minmax", false);
  c.threshold = kv.get("select.threshold", c.threshold);
  c.fed_sync_period = count_key(kv, "fed.sync_period", 1);
  c.fed_sample_weighted = kv.get_bool("fed.sample_weighted", false);
  c.workers = count_key(kv, "workers", 1, 1);
  c.output_dir = kv.get("output_dir", c.output_dir);
  c.models_dir = kv.get("models_dir", std::string());
  return c;
}

inline MultiEnergyDataset load_dataset(const ExperimentConfig& cfg) {
  if (cfg.synth_seed) return synth_generate(cfg.synth, *cfg.synth_seed);
  MultiEnergyDataset ds = load_csv(cfg.csv_path);
  if (cfg.fed_nodes) assign_default_meta(ds, *cfg.fed_nodes);
  return ds;
}

/// Dataset indices of the configured buildings.
inline std::vector<std::size_t> selected_buildings(const ExperimentConfig& cfg, const MultiEnergyDataset& ds) {
  std::vector<std::size_t> out;
  if (!cfg.building_ids) {
    for (std::size_t b = 0; b < ds.num_buildings(); ++b) out.push_back(b);
    return out;
  }
  for (int id : *cfg.building_ids) {
    const auto it = std::find_if(ds.meta.begin(), ds.meta.end(), [&](const BuildingMeta& m) { return m.id == id; });
    if (it == ds.meta.end()) throw Error(ErrorCode::ConfigError, "building " + std::to_string(id) + " is not in the dataset");
    const auto b = static_cast<std::size_t>(it - ds.meta.begin());
    if (std::find(out.begin(), out.end(), b) == out.end()) out.push_back(b);
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Rejects every framework/data/shape mismatch; no training happens here.
inline void validate(const ExperimentConfig& cfg, const MultiEnergyDataset& ds) {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::ConfigError, m); };
  const auto chosen = selected_buildings(cfg, ds);
  const bool exo = cfg.input.temperature || cfg.input.solar;
  if (cfg.input.temperature && !ds.temperature) fail("input.temperature needs a dataset with a temperature series");
  if (cfg.input.solar && !ds.solar) fail("input.solar needs a dataset with a solar series");
  if (!cfg.models_dir.empty() && !std::filesystem::is_directory(cfg.models_dir))
    fail("models_dir '" + cfg.models_dir + "' is not a directory");

  for (EnergyVector v : cfg.vectors) {
    const bool any = std::any_of(chosen.begin(), chosen.end(), [&](std::size_t b) { return !ds.is_zero(b, v); });
    if (!any) fail("no selected building consumes " + to_string(v));
  }

  for (FrameworkId fw : cfg.frameworks) {
    const std::string name = to_string(fw);
    if (exo && (fw == FrameworkId::CNN2 || fw == FrameworkId::CNN4 || fw == FrameworkId::CNN5))
      fail(name + " does not take temperature/solar inputs; use CNN_1, CNN_3 or CNN_6");
    if (fw == FrameworkId::CNN2) {
      if (cfg.building_ids) {
        for (std::size_t b : chosen)
          if (!ds.meta[b].multi_vector())
            fail("CNN_2 requires coupled buildings; building " + std::to_string(ds.meta[b].id) +
                 " has fewer than two coupled vectors");
      } else if (std::none_of(chosen.begin(), chosen.end(), [&](std::size_t b) { return ds.meta[b].multi_vector(); })) {
        fail("CNN_2 requires at least one coupled building");
      }
    }
    SplitBounds bounds;
    try {
      bounds = split_bounds(ds, cfg.split_for(fw));
    } catch (const Error& e) {
      fail(name + ": " + e.what());
    }
    const std::size_t train_windows = bounds.train_end - kWindow;
    if (fw != FrameworkId::CNN6 && cfg.train.batch_size > train_windows)
      fail(name + ": batch_size " + std::to_string(cfg.train.batch_size) + " exceeds the " +
           std::to_string(train_windows) + " training windows");
    const std::size_t width = fw == FrameworkId::CNN2 ? 3 : 1 + cfg.input.temperature + cfg.input.solar;
    try {
      const NetworkSpec spec = build_for({fw, width, ds.num_buildings(), cfg.block_options(fw)});
      (void)activation_shapes(spec);
    } catch (const Error& e) {
      fail(name + " architecture: " + e.what());
    }
  }
}

// ---------------------------------------------------------------------------
// Results

/// A trained (or loaded) network with what is needed to rebuild its inputs.
struct ModelArtifact {
  std::string name;
  FrameworkId framework = FrameworkId::CNN1;
  std::optional<EnergyVector> vector;
  std::optional<int> building_id;
  std::vector<std::string> variables;
  MinMaxScaler scaler;
  Network net;
  TrainHistory history;
  /// Full-batch MSE on the training windows after training.
  double train_loss = 0.0;
};

/// Predictions of one framework for one vector over every target index
/// 48..T-1, per selected building.
struct SeriesResult {
  FrameworkId framework = FrameworkId::CNN1;
  EnergyVector vector = EnergyVector::Electric;
  SplitBounds bounds;
  std::vector<std::size_t> buildings;
  std::vector<bool> modelled;
  std::vector<std::vector<double>> predicted;
};

struct ExperimentResults {
  MultiEnergyDataset data;
  std::vector<SeriesResult> series;
  std::vector<ModelArtifact> models;
  std::vector<std::pair<std::string, std::vector<FedRoundLog>>> fed_rounds;
  std::vector<std::pair<std::string, CorrTable>> correlations;
  std::vector<std::string> notes;
};

inline nlohmann::json to_json(const ModelArtifact& m) {
  nlohmann::json j;
  j["name"] = m.name;
  j["framework"] = to_string(m.framework);
  j["vector"] = m.vector ? nlohmann::json(to_string(*m.vector)) : nlohmann::json(nullptr);
  j["building_id"] = m.building_id ? nlohmann::json(*m.building_id) : nlohmann::json(nullptr);
  j["variables"] = m.variables;
  j["scaler"] = {{"lo", m.scaler.lo}, {"hi", m.scaler.hi}};
  j["spec"] = to_text(m.net.spec());
  j["has_input_mean"] = !m.net.input_mean().empty();
  j["state"] = flatten_state(m.net);
  j["train_loss"] = m.train_loss;
  return j;
}

inline Network network_from_json(const nlohmann::json& j) {
  Network net(parse_spec(j.at("spec").get<std::string>()));
  if (j.at("has_input_mean").get<bool>()) {
    const Shape3 s = net.input_shape();
    net.set_input_mean(Tensor4({s.h, s.w, s.c, 1}));
  }
  load_state(net, j.at("state").get<WeightVector>());
  return net;
}

namespace detail {

/// Runs `n` independent jobs on up to `workers` threads; job i writes only
/// slot i, so results do not depend on scheduling.
template <class F>
void parallel_for(std::size_t n, std::size_t workers, F&& job) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(workers, n); ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

inline std::string model_name(FrameworkId fw, std::optional<EnergyVector> v, std::optional<int> id) {
  std::string n = to_string(fw);
  n += v ? "_" + to_string(*v) : std::string("_all");
  if (id) n += "_b" + std::to_string(*id);
  return n;
}

inline std::uint64_t init_seed_for(std::uint64_t base, FrameworkId fw, std::optional<EnergyVector> v,
                                   std::optional<std::size_t> b) {
  std::uint64_t h = splitmix(base);
  h = splitmix(h ^ static_cast<std::uint64_t>(fw));
  h = splitmix(h ^ (v ? index(*v) + 1 : 0));
  return splitmix(h ^ (b ? *b + 1 : 0));
}

/// Re-throws with the framework/building the failure belongs to.
template <class F>
auto with_context(const std::string& ctx, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.code(), ctx + ": " + e.what());
  }
}

struct Job {
  FrameworkId fw;
  std::optional<EnergyVector> vector;
  std::optional<std::size_t> building;
  std::vector<EnergyVector> channels;
};

struct JobOutput {
  ModelArtifact model;
  /// (T - 48) x outputs predictions over every window.
  std::vector<double> predicted;
  std::size_t outputs = 1;
};

inline ModelArtifact load_artifact(const std::string& dir, const std::string& name) {
  const std::string path = dir + "/" + name + ".json";
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorCode::MissingResults, "model artifact " + path + " not found");
  const nlohmann::json j = nlohmann::json::parse(is);
  ModelArtifact m;
  m.name = name;
  m.net = network_from_json(j);
  m.train_loss = j.value("train_loss", 0.0);
  m.variables = j.value("variables", std::vector<std::string>{});
  return m;
}

inline JobOutput run_job(const ExperimentConfig& cfg, const MultiEnergyDataset& ds, const Job& job) {
  const FrameworkId fw = job.fw;
  const EnergyVector target = job.vector.value_or(EnergyVector::Electric);
  const SplitBounds bounds = split_bounds(ds, cfg.split_for(fw));
  const std::size_t building = job.building.value_or(0);
  AssembledInput in = assemble_input(ds, building, fw, target, job.channels, cfg.input, bounds.train_end);
  const Partitions parts = split(in.windows, bounds);

  JobOutput out;
  ModelArtifact& m = out.model;
  m.framework = fw;
  m.vector = job.vector;
  if (job.building) m.building_id = ds.meta[*job.building].id;
  m.name = model_name(fw, job.vector, m.building_id);
  m.variables = in.variables;
  m.scaler = in.scaler;

  if (!cfg.models_dir.empty()) {
    ModelArtifact loaded = load_artifact(cfg.models_dir, m.name);
    require(loaded.net.input_shape() == in.windows.sample_shape(), ErrorCode::ShapeMismatch,
            "stored model " + m.name + " expects a different input shape");
    m.net = std::move(loaded.net);
    m.train_loss = evaluate_loss(m.net, parts.train).loss;
  } else {
    const NetworkSpec spec = build_for({fw, in.input_width, ds.num_buildings(), cfg.block_options(fw)});
    TrainConfig tc = cfg.train;
    tc.validation = (fw == FrameworkId::CNN3 && !parts.validation.empty()) ? &parts.validation : nullptr;
    TrainResult r = train(make_network(spec, init_seed_for(cfg.init_seed, fw, job.vector, job.building)),
                          parts.train, tc);
    m.net = std::move(r.net);
    m.history = std::move(r.history);
    m.train_loss = evaluate_loss(m.net, parts.train).loss;
  }
  out.outputs = in.windows.outputs;
  out.predicted = predict_windows(m.net, in.windows);
  return out;
}

inline std::string building_context(const MultiEnergyDataset& ds, const Job& j) {
  std::string s = to_string(j.fw);
  if (j.vector) s += " " + to_string(*j.vector);
  if (j.building) s += " building " + std::to_string(ds.meta[*j.building].id);
  return s;
}

}  // namespace detail

/// Correlation tables over the training period of `spec`: next/previous-day
/// matrices and cross-building matrices per vector.
inline std::vector<std::pair<std::string, CorrTable>> correlation_tables(const MultiEnergyDataset& ds,
                                                                         const std::vector<EnergyVector>& vectors,
                                                                         const SplitSpec& spec) {
  const Period p{0, split_bounds(ds, spec).train_end};
  std::vector<std::pair<std::string, CorrTable>> out;
  for (EnergyVector v : vectors) out.emplace_back("next_prev_" + to_string(v), next_prev_correlation_matrix(ds, v, p));
  for (EnergyVector v : vectors) out.emplace_back("cross_building_" + to_string(v), cross_building_correlation(ds, v, p));
  return out;
}

/// Trains (or loads) every requested model and predicts the whole horizon.
inline ExperimentResults run_models(const ExperimentConfig& cfg, MultiEnergyDataset ds) {
  validate(cfg, ds);
  ExperimentResults res;
  const auto chosen = selected_buildings(cfg, ds);
  const std::size_t T = ds.length();
  const std::size_t N = T - kWindow;

  for (FrameworkId fw : cfg.frameworks) {
    const SplitBounds bounds = split_bounds(ds, cfg.split_for(fw));
    auto new_series = [&](EnergyVector v) {
      SeriesResult s;
      s.framework = fw;
      s.vector = v;
      s.bounds = bounds;
      s.buildings = chosen;
      s.modelled.assign(chosen.size(), false);
      s.predicted.assign(chosen.size(), std::vector<double>(N, 0.0));
      return s;
    };

    if (fw == FrameworkId::CNN6) {
      for (EnergyVector v : cfg.vectors) {
        SeriesResult s = new_series(v);
        const std::string ctx = to_string(fw) + " " + to_string(v);
        detail::with_context(ctx, [&] {
          std::vector<std::size_t> members;
          for (std::size_t b : chosen)
            if (!ds.is_zero(b, v)) members.push_back(b);
          std::vector<AssembledInput> inputs(members.size());
          int max_node = 0;
          for (std::size_t j = 0; j < members.size(); ++j) {
            inputs[j] = assemble_input(ds, members[j], fw, v, {}, cfg.input, bounds.train_end);
            max_node = std::max(max_node, ds.meta[members[j]].node[index(v)]);
          }
          FedTopology topo;
          topo.sync_period = cfg.fed_sync_period;
          topo.sample_weighted = cfg.fed_sample_weighted;
          topo.workers = cfg.workers;
          topo.nodes.resize(static_cast<std::size_t>(max_node) + 1);
          {
            std::vector<std::vector<WindowSet>> per_node(topo.nodes.size());
            for (std::size_t j = 0; j < members.size(); ++j)
              per_node[static_cast<std::size_t>(ds.meta[members[j]].node[index(v)])].push_back(
                  split(inputs[j].windows, bounds).train);
            for (std::size_t k = 0; k < per_node.size(); ++k)
              if (!per_node[k].empty()) topo.nodes[k] = concat(per_node[k]);
          }
          ModelArtifact m;
          m.framework = fw;
          m.vector = v;
          m.name = detail::model_name(fw, v, std::nullopt) + "_global";
          m.variables = inputs.front().variables;
          if (!cfg.models_dir.empty()) {
            m.net = detail::load_artifact(cfg.models_dir, m.name).net;
          } else {
            const Network init =
                make_network(build_cnn6_local(cfg.block_options(fw)), detail::init_seed_for(cfg.init_seed, fw, v, {}));
            FedResult fr = federated_train(init, topo, cfg.train);
            m.net = std::move(fr.global);
            for (std::size_t k : fr.excluded)
              res.notes.push_back(ctx + ": node " + std::to_string(k) + " has " + std::to_string(topo.nodes[k].size()) +
                                  " training windows, fewer than one batch; excluded");
            for (std::size_t k = 0; k < fr.histories.size(); ++k)
              if (!fr.histories[k].empty()) {
                ModelArtifact h;
                h.name = detail::model_name(fw, v, std::nullopt) + "_node" + std::to_string(k);
                h.history = std::move(fr.histories[k]);
                h.framework = fw;
                res.models.push_back(std::move(h));
              }
            res.fed_rounds.emplace_back(detail::model_name(fw, v, std::nullopt), std::move(fr.rounds));
          }
          double loss_sum = 0.0;
          std::size_t loss_n = 0;
          for (std::size_t j = 0; j < members.size(); ++j) {
            const auto pos = static_cast<std::size_t>(std::find(chosen.begin(), chosen.end(), members[j]) - chosen.begin());
            s.predicted[pos] = predict_windows(m.net, inputs[j].windows);
            s.modelled[pos] = true;
            const WindowSet tr = split(inputs[j].windows, bounds).train;
            loss_sum += evaluate_loss(m.net, tr).loss * static_cast<double>(tr.size());
            loss_n += tr.size();
          }
          m.train_loss = loss_sum / static_cast<double>(loss_n);
          res.models.push_back(std::move(m));
          return 0;
        });
        res.series.push_back(std::move(s));
      }
      continue;
    }

    std::vector<detail::Job> jobs;
    if (fw == FrameworkId::CNN4) {
      jobs.push_back({fw, std::nullopt, std::nullopt, {}});
    } else if (fw == FrameworkId::CNN5) {
      for (EnergyVector v : cfg.vectors) jobs.push_back({fw, v, std::nullopt, {}});
    } else {
      for (EnergyVector v : cfg.vectors)
        for (std::size_t b : chosen) {
          if (ds.is_zero(b, v)) continue;
          std::vector<EnergyVector> channels;
          if (fw == FrameworkId::CNN2) {
            const Period p{0, bounds.train_end};
            const CorrTable t = building_correlation(ds, b, p);
            channels = select_input_channels(t, ds.meta[b], v, cfg.threshold);
            const std::string name = "building_" + std::to_string(ds.meta[b].id);
            if (std::none_of(res.correlations.begin(), res.correlations.end(),
                             [&](const auto& c) { return c.first == name; }))
              res.correlations.emplace_back(name, t);
          }
          jobs.push_back({fw, v, b, channels});
        }
    }

    std::vector<detail::JobOutput> outs(jobs.size());
    detail::parallel_for(jobs.size(), cfg.workers, [&](std::size_t i) {
      outs[i] = detail::with_context(detail::building_context(ds, jobs[i]),
                                     [&] { return detail::run_job(cfg, ds, jobs[i]); });
    });

    std::map<EnergyVector, SeriesResult> by_vector;
    for (EnergyVector v : cfg.vectors) by_vector.emplace(v, new_series(v));
    const std::size_t B = ds.num_buildings();
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      const auto& o = outs[i];
      auto put = [&](EnergyVector v, std::size_t b, std::size_t col) {
        const auto it = std::find(chosen.begin(), chosen.end(), b);
        if (it == chosen.end() || ds.is_zero(b, v) || !by_vector.count(v)) return;
        SeriesResult& s = by_vector.at(v);
        const auto pos = static_cast<std::size_t>(it - chosen.begin());
        for (std::size_t n = 0; n < N; ++n) s.predicted[pos][n] = o.predicted[n * o.outputs + col];
        s.modelled[pos] = true;
      };
      if (fw == FrameworkId::CNN4) {
        for (EnergyVector v : kVectors)
          for (std::size_t b = 0; b < B; ++b) put(v, b, index(v) * B + b);
      } else if (fw == FrameworkId::CNN5) {
        for (std::size_t b = 0; b < B; ++b) put(*jobs[i].vector, b, b);
      } else {
        put(*jobs[i].vector, *jobs[i].building, 0);
      }
      res.models.push_back(std::move(outs[i].model));
    }
    for (EnergyVector v : cfg.vectors) res.series.push_back(std::move(by_vector.at(v)));
  }
  res.data = std::move(ds);
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation

enum class SplitPart { Train, Validation, Test };

inline std::string to_string(SplitPart p) {
  switch (p) {
    case SplitPart::Train: return "train";
    case SplitPart::Validation: return "validation";
    case SplitPart::Test: return "test";
  }
  return "?";
}

/// Target-index range [begin, end) of one partition, clipped to the windows.
inline std::pair<std::size_t, std::size_t> part_range(const SplitBounds& b, SplitPart p) {
  const std::size_t lo = p == SplitPart::Train ? 0 : p == SplitPart::Validation ? b.train_end : b.val_end;
  const std::size_t hi = p == SplitPart::Train ? b.train_end : p == SplitPart::Validation ? b.val_end : b.total;
  return {std::max(lo, kWindow), std::max(hi, kWindow)};
}

inline std::vector<SplitPart> parts_of(const SplitBounds& b) {
  if (b.val_end > b.train_end) return {SplitPart::Train, SplitPart::Validation, SplitPart::Test};
  return {SplitPart::Train, SplitPart::Test};
}

/// Like `evaluate`, but a partition without a positive actual yields an
/// undefined nrmse instead of throwing.
inline MetricReport evaluate_lenient(std::span<const double> y, std::span<const double> p) {
  if (std::any_of(y.begin(), y.end(), [](double v) { return v > 0.0; })) return evaluate(y, p);
  MetricReport r;
  r.snr_db = snr_db(y, p);
  r.nrmse = std::numeric_limits<double>::quiet_NaN();
  const MapeResult m = mape_pct(y, p);
  r.mape_pct = m.value;
  r.n_excluded_zero_targets = m.excluded;
  r.n = y.size();
  return r;
}

struct SeriesSlice {
  std::vector<std::size_t> target_index;
  std::vector<double> actual;
  std::vector<double> predicted;
};

/// Network total (sum over selected buildings, zero buildings predicted 0)
/// within one partition.
inline SeriesSlice total_slice(const MultiEnergyDataset& ds, const SeriesResult& s, SplitPart part) {
  const auto [lo, hi] = part_range(s.bounds, part);
  SeriesSlice out;
  for (std::size_t t = lo; t < hi; ++t) {
    double a = 0.0, p = 0.0;
    for (std::size_t j = 0; j < s.buildings.size(); ++j) {
      a += ds.at(s.buildings[j], s.vector)[t];
      p += s.predicted[j][t - kWindow];
    }
    out.target_index.push_back(t);
    out.actual.push_back(a);
    out.predicted.push_back(p);
  }
  return out;
}

inline SeriesSlice building_slice(const MultiEnergyDataset& ds, const SeriesResult& s, std::size_t j, SplitPart part) {
  const auto [lo, hi] = part_range(s.bounds, part);
  SeriesSlice out;
  for (std::size_t t = lo; t < hi; ++t) {
    out.target_index.push_back(t);
    out.actual.push_back(ds.at(s.buildings[j], s.vector)[t]);
    out.predicted.push_back(s.predicted[j][t - kWindow]);
  }
  return out;
}

struct MetricRow {
  MetricKey key;
  MetricReport report;
};

/// Per-building rows (modelled buildings only) followed by the total, for
/// every series and partition.
inline std::vector<MetricRow> metric_rows(const ExperimentResults& r) {
  std::vector<MetricRow> rows;
  for (const auto& s : r.series)
    for (SplitPart part : parts_of(s.bounds)) {
      MetricKey k{to_string(s.framework), to_string(s.vector), to_string(part), ""};
      for (std::size_t j = 0; j < s.buildings.size(); ++j) {
        if (!s.modelled[j]) continue;
        const SeriesSlice sl = building_slice(r.data, s, j, part);
        if (sl.actual.empty()) continue;
        k.entity = std::to_string(r.data.meta[s.buildings[j]].id);
        rows.push_back({k, evaluate_lenient(sl.actual, sl.predicted)});
      }
      const SeriesSlice tot = total_slice(r.data, s, part);
      if (tot.actual.empty()) continue;
      k.entity = "total";
      rows.push_back({k, evaluate_lenient(tot.actual, tot.predicted)});
    }
  return rows;
}

// ---------------------------------------------------------------------------
// Output

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  require(static_cast<bool>(os), ErrorCode::IoError, "cannot write " + p.string());
  return os;
}

}  // namespace detail

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows) {
  os << kMetricsCsvHeader << '\n';
  for (const auto& r : rows) write_metrics_row(os, r.key, r.report);
}

/// One row per framework; columns are vector x split x {SNR, NRMSE} of the
/// network totals (train and test).
inline void write_summary_csv(std::ostream& os, const ExperimentResults& r, const std::vector<MetricRow>& rows) {
  std::vector<std::string> fws;
  std::vector<std::string> vecs;
  for (const auto& s : r.series) {
    if (std::find(fws.begin(), fws.end(), to_string(s.framework)) == fws.end()) fws.push_back(to_string(s.framework));
    if (std::find(vecs.begin(), vecs.end(), to_string(s.vector)) == vecs.end()) vecs.push_back(to_string(s.vector));
  }
  std::sort(vecs.begin(), vecs.end(), [](const std::string& a, const std::string& b) {
    return index(*parse_vector(a)) < index(*parse_vector(b));
  });
  os << "framework";
  for (const auto& v : vecs)
    for (const char* sp : {"train", "test"}) os << ',' << v << '_' << sp << "_snr_db," << v << '_' << sp << "_nrmse";
  os << '\n';
  for (const auto& f : fws) {
    os << f;
    for (const auto& v : vecs)
      for (const char* sp : {"train", "test"}) {
        const auto it = std::find_if(rows.begin(), rows.end(), [&](const MetricRow& m) {
          return m.key.framework == f && m.key.vector == v && m.key.split == sp && m.key.entity == "total";
        });
        if (it == rows.end()) os << ",,";
        else os << ',' << metric_text(it->report.snr_db) << ',' << metric_text(it->report.nrmse);
      }
    os << '\n';
  }
}

inline void write_prediction_csv(std::ostream& os, const MultiEnergyDataset& ds, const SeriesSlice& s) {
  os << "timestamp,actual,predicted\n";
  for (std::size_t i = 0; i < s.actual.size(); ++i)
    os << format_timestamp(ds.time(s.target_index[i])) << ',' << format_double(s.actual[i]) << ','
       << format_double(s.predicted[i]) << '\n';
}

/// Inputs of the plotting files: actual-vs-predicted overlays and
/// correlation heat maps.
struct PlotData {
  struct Overlay {
    std::string name;
    std::vector<double> actual;
    std::vector<double> predicted;
  };
  std::vector<Overlay> overlays;
  std::vector<std::pair<std::string, CorrTable>> heatmaps;

  bool empty() const { return overlays.empty() && heatmaps.empty(); }
};

inline PlotData plot_data(const ExperimentResults& r) {
  PlotData d;
  for (const auto& s : r.series) {
    const SeriesSlice t = total_slice(r.data, s, SplitPart::Test);
    d.overlays.push_back({to_string(s.framework) + "_" + to_string(s.vector) + "_test", t.actual, t.predicted});
  }
  d.heatmaps = r.correlations;
  return d;
}

/// Writes overlay_<name>.csv (t, actual, predicted) and heatmap_<name>.csv
/// (row_signal, col_entity, r) under `dir`.
inline std::vector<std::filesystem::path> emit_plot_data(const PlotData& d, const std::filesystem::path& dir) {
  require(!d.empty(), ErrorCode::MissingResults, "no predictions or correlation tables to plot");
  std::vector<std::filesystem::path> written;
  for (const auto& o : d.overlays) {
    const auto p = dir / ("overlay_" + o.name + ".csv");
    auto os = detail::open_out(p);
    os << "t,actual,predicted\n";
    for (std::size_t i = 0; i < o.actual.size(); ++i)
      os << (i + 1) << ',' << format_double(o.actual[i]) << ',' << format_double(o.predicted[i]) << '\n';
    written.push_back(p);
  }
  for (const auto& [name, t] : d.heatmaps) {
    const auto p = dir / ("heatmap_" + name + ".csv");
    auto os = detail::open_out(p);
    t.write_long_csv(os);
    written.push_back(p);
  }
  return written;
}

/// Rebuilds plot inputs from a results directory written by write_results.
inline PlotData load_plot_data(const std::filesystem::path& results_dir) {
  namespace fs = std::filesystem;
  require(fs::is_directory(results_dir), ErrorCode::MissingResults, results_dir.string() + " does not exist");
  PlotData d;
  auto sorted_files = [](const fs::path& dir) {
    std::vector<fs::path> files;
    if (fs::is_directory(dir))
      for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    return files;
  };
  auto number = [](const std::string& s) {
    if (s == "undefined") return kUndefined;
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    return std::stod(s);
  };
  for (const auto& p : sorted_files(results_dir / "predictions")) {
    const std::string stem = p.stem().string();
    if (stem.size() < 5 || stem.substr(stem.size() - 5) != "_test") continue;
    std::ifstream is(p);
    std::string line;
    std::getline(is, line);
    PlotData::Overlay o{stem, {}, {}};
    while (std::getline(is, line)) {
      const auto f = split_fields(line, ',');
      if (f.size() != 3) throw ParseError(o.actual.size() + 2, p.string() + ": expected 3 fields");
      o.actual.push_back(number(f[1]));
      o.predicted.push_back(number(f[2]));
    }
    d.overlays.push_back(std::move(o));
  }
  for (const auto& p : sorted_files(results_dir / "correlation")) {
    std::ifstream is(p);
    std::string line;
    std::getline(is, line);
    CorrTable t;
    std::vector<std::pair<std::string, std::string>> cells;
    while (std::getline(is, line)) {
      const auto f = split_fields(line, ',');
      if (f.size() != 3) throw ParseError(cells.size() + 2, p.string() + ": expected 3 fields");
      if (std::find(t.rows.begin(), t.rows.end(), f[0]) == t.rows.end()) t.rows.push_back(f[0]);
      if (std::find(t.cols.begin(), t.cols.end(), f[1]) == t.cols.end()) t.cols.push_back(f[1]);
      t.values.push_back(number(f[2]));
    }
    require(t.values.size() == t.rows.size() * t.cols.size(), ErrorCode::ParseError, p.string() + " is not a full table");
    d.heatmaps.emplace_back(p.stem().string(), std::move(t));
  }
  require(!d.empty(), ErrorCode::MissingResults, "no prediction or correlation files under " + results_dir.string());
  return d;
}

/// Canonical `key = value` text of the resolved configuration. With
/// `results_only`, keys that cannot change results (output location, thread
/// count) are left out.
inline std::string config_text(const ExperimentConfig& cfg, bool results_only = false) {
  std::string s;
  for (const auto& [k, v] : cfg.raw.values()) {
    if (results_only && (k == "output_dir" || k == "workers")) continue;
    s += k + " = " + v + "\n";
  }
  return s;
}

inline nlohmann::json manifest(const ExperimentConfig& cfg, const ExperimentResults& r) {
  std::ostringstream data;
  write_csv(data, r.data);
  nlohmann::json j;
  j["tool"] = "mefcast";
  j["version"] = kVersion;
  j["config_hash"] = "fnv1a64:" + detail::hex64(detail::fnv1a(config_text(cfg, true)));
  j["config"] = cfg.raw.values();
  j["data_hash"] = "fnv1a64:" + detail::hex64(detail::fnv1a(data.str()));
  j["seeds"] = {{"init_seed", cfg.init_seed},
                {"shuffle_seed", cfg.train.shuffle_seed},
                {"synth_seed", cfg.synth_seed ? nlohmann::json(*cfg.synth_seed) : nlohmann::json(nullptr)}};
  j["build"] = {{"compiler", __VERSION__},
                {"cplusplus", __cplusplus},
                {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                      std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                      std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
  std::vector<std::string> models;
  for (const auto& m : r.models)
    if (!m.net.spec().layers.empty()) models.push_back(m.name);
  j["models"] = models;
  j["notes"] = r.notes;
  return j;
}

/// Writes the result bundle; returns the metric rows.
inline std::vector<MetricRow> write_results(const ExperimentConfig& cfg, const ExperimentResults& r) {
  namespace fs = std::filesystem;
  const fs::path dir = cfg.output_dir;
  const auto rows = metric_rows(r);
  {
    auto os = detail::open_out(dir / "metrics.csv");
    write_metrics_csv(os, rows);
  }
  {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& m : rows) {
      nlohmann::json j = to_json(m.report);
      j["framework"] = m.key.framework;
      j["vector"] = m.key.vector;
      j["split"] = m.key.split;
      j["entity"] = m.key.entity;
      arr.push_back(j);
    }
    auto os = detail::open_out(dir / "metrics.json");
    os << arr.dump(2) << '\n';
  }
  {
    auto os = detail::open_out(dir / "summary.csv");
    write_summary_csv(os, r, rows);
  }
  {
    auto os = detail::open_out(dir / "metrics_daily.csv");
    os << "framework,vector,split,days,mean_daily_snr_db,mean_daily_nrmse\n";
    for (const auto& s : r.series)
      for (SplitPart part : parts_of(s.bounds)) {
        const SeriesSlice t = total_slice(r.data, s, part);
        if (t.actual.size() < kSamplesPerDay) continue;
        const DailyBreakdown d = per_day(t.actual, t.predicted);
        os << to_string(s.framework) << ',' << to_string(s.vector) << ',' << to_string(part) << ','
           << d.snr_db.size() << ',' << metric_text(d.mean_snr_db()) << ',' << metric_text(d.mean_nrmse()) << '\n';
      }
  }
  for (const auto& s : r.series) {
    const std::string base = to_string(s.framework) + "_" + to_string(s.vector);
    for (SplitPart part : parts_of(s.bounds)) {
      auto os = detail::open_out(dir / "predictions" / (base + "_" + to_string(part) + ".csv"));
      write_prediction_csv(os, r.data, total_slice(r.data, s, part));
    }
    auto os = detail::open_out(dir / "predictions" / (base + "_buildings.csv"));
    os << "timestamp,split,building_id,actual,predicted\n";
    for (std::size_t j = 0; j < s.buildings.size(); ++j) {
      if (!s.modelled[j]) continue;
      for (SplitPart part : parts_of(s.bounds)) {
        const SeriesSlice sl = building_slice(r.data, s, j, part);
        for (std::size_t i = 0; i < sl.actual.size(); ++i)
          os << format_timestamp(r.data.time(sl.target_index[i])) << ',' << to_string(part) << ','
             << r.data.meta[s.buildings[j]].id << ',' << format_double(sl.actual[i]) << ','
             << format_double(sl.predicted[i]) << '\n';
      }
    }
  }
  for (const auto& m : r.models) {
    if (!m.history.empty()) {
      auto os = detail::open_out(dir / "history" / (m.name + ".csv"));
      write_history_csv(os, m.history);
    }
    if (!m.net.spec().layers.empty()) {
      auto os = detail::open_out(dir / "models" / (m.name + ".json"));
      os << to_json(m).dump() << '\n';
    }
  }
  for (const auto& [name, log] : r.fed_rounds) {
    auto os = detail::open_out(dir / "fed" / (name + "_rounds.csv"));
    write_round_log_csv(os, log);
  }
  for (const auto& [name, t] : r.correlations) {
    auto os = detail::open_out(dir / "correlation" / (name + ".csv"));
    t.write_long_csv(os);
  }
  {
    auto os = detail::open_out(dir / "config.txt");
    os << config_text(cfg);
  }
  {
    auto os = detail::open_out(dir / "manifest.json");
    os << manifest(cfg, r).dump(2) << '\n';
  }
  emit_plot_data(plot_data(r), dir / "plot");
  return rows;
}

/// Loads data, trains, evaluates and writes the result bundle.
inline ExperimentResults run_experiment(const ExperimentConfig& cfg) {
  ExperimentResults r = run_models(cfg, load_dataset(cfg));
  write_results(cfg, r);
  return r;
}

// ---------------------------------------------------------------------------
// Epoch sweep

struct SweepRow {
  std::size_t epochs = 0;
  std::string framework;
  std::string vector;
  MetricReport test;
  /// Mean full-batch training MSE over the models behind the series.
  double train_loss = 0.0;
};

/// Trains from scratch for each epoch budget with identical seeds and records
/// test metrics of the network totals.
inline std::vector<SweepRow> epoch_sweep(const ExperimentConfig& cfg, const MultiEnergyDataset& ds,
                                         const std::vector<std::size_t>& epoch_list) {
  require(!epoch_list.empty(), ErrorCode::ConfigError, "epoch list is empty");
  std::vector<SweepRow> rows;
  for (std::size_t e : epoch_list) {
    ExperimentConfig c = cfg;
    c.train.max_epochs = e;
    c.models_dir.clear();
    const ExperimentResults r = run_models(c, ds);
    for (const auto& s : r.series) {
      SweepRow row;
      row.epochs = e;
      row.framework = to_string(s.framework);
      row.vector = to_string(s.vector);
      const SeriesSlice t = total_slice(r.data, s, SplitPart::Test);
      row.test = evaluate_lenient(t.actual, t.predicted);
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& m : r.models) {
        if (m.framework != s.framework || m.net.spec().layers.empty()) continue;
        if (m.vector && *m.vector != s.vector) continue;
        sum += m.train_loss;
        ++n;
      }
      row.train_loss = n == 0 ? kUndefined : sum / static_cast<double>(n);
      rows.push_back(row);
    }
  }
  return rows;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "epochs,framework,vector,test_snr_db,test_nrmse,test_mape_pct,train_loss\n";
  for (const auto& r : rows)
    os << r.epochs << ',' << r.framework << ',' << r.vector << ',' << metric_text(r.test.snr_db) << ','
       << metric_text(r.test.nrmse) << ',' << metric_text(r.test.mape_pct) << ',' << metric_text(r.train_loss) << '\n';
}

}  // namespace mef
