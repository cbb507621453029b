// mefcast: multi-energy CNN forecasting experiments.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mef/experiment.hpp"

namespace {

using namespace mef;

constexpr int kOk = 0;
constexpr int kConfigFailure = 1;
constexpr int kRuntimeFailure = 2;

/// Thrown for anything the user has to fix in the config or command line.
struct ConfigFailure {
  std::string what;
};

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::size_t workers = 0;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "key = value config file");
  app->add_option("-s,--set", c.sets, "override one config key (key=value); repeatable");
  app->add_option("-o,--out", c.out, "output directory (overrides output_dir)");
  app->add_option("-w,--workers", c.workers, "training threads (overrides workers)");
}

KeyValues read_kv(const Common& c) {
  try {
    KeyValues kv;
    if (!c.config.empty()) {
      std::ifstream is(c.config);
      if (!is) throw ConfigFailure{"cannot read config file " + c.config};
      kv = KeyValues::parse(is);
    }
    for (const auto& s : c.sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigFailure{"--set expects key=value, got '" + s + "'"};
      kv.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
    if (!c.out.empty()) kv.set("output_dir", c.out);
    if (c.workers > 0) kv.set("workers", std::to_string(c.workers));
    return kv;
  } catch (const Error& e) {
    throw ConfigFailure{c.config + ": " + e.what()};
  }
}

ExperimentConfig read_config(const Common& c) {
  const KeyValues kv = read_kv(c);
  try {
    return ExperimentConfig::from(kv);
  } catch (const Error& e) {
    throw ConfigFailure{e.what()};
  }
}

void print_summary(const ExperimentConfig& cfg, const std::vector<MetricRow>& rows) {
  std::printf("%-8s %-9s %-11s %12s %10s\n", "model", "vector", "split", "SNR[dB]", "NRMSE");
  for (const auto& r : rows) {
    if (r.key.entity != "total") continue;
    std::printf("%-8s %-9s %-11s %12s %10s\n", r.key.framework.c_str(), r.key.vector.c_str(), r.key.split.c_str(),
                metric_text(r.report.snr_db).substr(0, 10).c_str(), metric_text(r.report.nrmse).substr(0, 8).c_str());
  }
  std::printf("results in %s\n", cfg.output_dir.c_str());
}

int cmd_synth(const Common& c, std::uint64_t seed, const std::string& out_csv) {
  const KeyValues kv = read_kv(c);
  KeyValues synth_kv;
  for (const auto& [k, v] : kv.values()) {
    if (k == "output_dir" || k == "workers") continue;
    synth_kv.set(k.rfind("synth.", 0) == 0 ? k.substr(6) : k, v);
  }
  SynthConfig sc;
  try {
    sc = SynthConfig::from(synth_kv);
  } catch (const Error& e) {
    throw ConfigFailure{e.what()};
  }
  const std::string path = out_csv.empty() ? "synth.csv" : out_csv;
  save_csv(path, synth_generate(sc, seed));
  std::printf("wrote %s (%zu buildings, %zu days)\n", path.c_str(), sc.num_buildings, sc.num_days);
  return kOk;
}

int cmd_correlate(const Common& c) {
  const ExperimentConfig cfg = read_config(c);
  const MultiEnergyDataset ds = load_dataset(cfg);
  auto tables = correlation_tables(ds, cfg.vectors, cfg.split);
  for (std::size_t b : selected_buildings(cfg, ds))
    tables.emplace_back("building_" + std::to_string(ds.meta[b].id),
                        building_correlation(ds, b, Period{0, split_bounds(ds, cfg.split).train_end}));
  const std::filesystem::path dir = std::filesystem::path(cfg.output_dir) / "correlation";
  std::filesystem::create_directories(dir);
  for (const auto& [name, t] : tables) {
    std::ofstream os(dir / (name + ".csv"));
    require(static_cast<bool>(os), ErrorCode::IoError, "cannot write " + (dir / name).string());
    t.write_long_csv(os);
  }
  for (const auto& [name, t] : tables)
    if (name.rfind("cross_building_", 0) == 0)
      std::printf("%-26s off-diagonal mean r = %s\n", name.c_str(), metric_text(off_diagonal_mean(t)).c_str());
  std::printf("%zu tables in %s\n", tables.size(), dir.string().c_str());
  return kOk;
}

int cmd_train(ExperimentConfig cfg) {
  const ExperimentResults r = run_models(cfg, load_dataset(cfg));
  const auto rows = write_results(cfg, r);
  for (const auto& n : r.notes) std::fprintf(stderr, "note: %s\n", n.c_str());
  print_summary(cfg, rows);
  return kOk;
}

int cmd_sweep(const ExperimentConfig& cfg, const std::string& epochs) {
  std::vector<std::size_t> list;
  for (const auto& f : split_fields(epochs, ',')) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(f.c_str(), &end, 10);
    if (f.empty() || end != f.c_str() + f.size()) throw ConfigFailure{"bad epoch budget '" + f + "'"};
    list.push_back(static_cast<std::size_t>(v));
  }
  if (list.empty()) throw ConfigFailure{"--epochs is empty"};
  const auto rows = epoch_sweep(cfg, load_dataset(cfg), list);
  std::filesystem::create_directories(cfg.output_dir);
  const std::string path = (std::filesystem::path(cfg.output_dir) / "sweep.csv").string();
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorCode::IoError, "cannot write " + path);
  write_sweep_csv(os, rows);
  write_sweep_csv(std::cout, rows);
  return kOk;
}

int cmd_report(const std::string& dir) {
  const std::filesystem::path root(dir);
  const auto summary = root / "summary.csv";
  if (std::filesystem::exists(summary)) {
    std::ifstream is(summary);
    std::cout << is.rdbuf();
  }
  const auto written = emit_plot_data(load_plot_data(root), root / "plot");
  std::printf("%zu plot files in %s\n", written.size(), (root / "plot").string().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-energy CNN forecasting: synthetic data, correlation analysis, training and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(mef::kVersion));

  Common common;
  std::uint64_t seed = 0;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic campus dataset CSV");
  synth->add_option("-c,--config", common.config, "generator config (key = value)");
  synth->add_option("-s,--set", common.sets, "override one generator key (key=value)");
  synth->add_option("--seed", seed, "generator seed")->required();
  synth->add_option("-o,--out", synth_out, "output CSV path");

  auto* correlate = app.add_subcommand("correlate", "next/previous-day and cross-building correlation tables");
  add_common(correlate, common);
  auto* train = app.add_subcommand("train", "train, evaluate and write the result bundle");
  add_common(train, common);
  std::string models;
  auto* evaluate = app.add_subcommand("evaluate", "evaluate stored models without training");
  add_common(evaluate, common);
  evaluate->add_option("--models", models, "directory of model JSON files (default: <output_dir>/models)");
  std::string epochs;
  auto* sweep = app.add_subcommand("sweep", "retrain for several epoch budgets");
  add_common(sweep, common);
  sweep->add_option("--epochs", epochs, "comma-separated budgets, e.g. 200,400,600")->required();
  auto* fed = app.add_subcommand("fed", "federated CNN_6 run");
  add_common(fed, common);
  std::string results;
  auto* report = app.add_subcommand("report", "print the summary and write plot CSVs");
  report->add_option("results", results, "results directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigFailure;
  }

  try {
    if (synth->parsed()) return cmd_synth(common, seed, synth_out);
    if (correlate->parsed()) return cmd_correlate(common);
    if (report->parsed()) return cmd_report(results);
    ExperimentConfig cfg = read_config(common);
    if (evaluate->parsed()) {
      cfg.models_dir = models.empty() ? (std::filesystem::path(cfg.output_dir) / "models").string() : models;
      cfg.raw.set("models_dir", cfg.models_dir);
    }
    if (fed->parsed()) {
      cfg.frameworks = {FrameworkId::CNN6};
      cfg.raw.set("frameworks", "CNN_6");
    }
    if (sweep->parsed()) return cmd_sweep(cfg, epochs);
    return cmd_train(cfg);
  } catch (const ConfigFailure& e) {
    std::fprintf(stderr, "config error: %s\n", e.what.c_str());
    return kConfigFailure;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigError) {
      std::fprintf(stderr, "config error: %s\n", e.what());
      return kConfigFailure;
    }
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeFailure;
  }
}
