#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mef/experiment.hpp"

using namespace mef;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mef_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream s;
  s << is.rdbuf();
  return s.str();
}

std::size_t lines(const fs::path& p) {
  const std::string s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

KeyValues small(const std::string& out) {
  return KeyValues::parse(
      "data.synth_seed = 2\n"
      "synth.num_days = 12\n"
      "frameworks = CNN_1\n"
      "vectors = electric\n"
      "buildings = 0,1\n"
      "epochs = 5\n"
      "batch_size = 32\n"
      "arch.filters = 4\n"
      "arch.kernel = 5\n"
      "arch.blocks = 2\n"
      "log_every = 1\n"
      "output_dir = " + out + "\n");
}

ErrorCode config_code(KeyValues kv) {
  try {
    const ExperimentConfig c = ExperimentConfig::from(kv);
    validate(c, load_dataset(c));
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::EmptyList;  // sentinel: nothing thrown
}

}  // namespace

TEST(Config, ParsesAndOverrides) {
  KeyValues kv = small("x");
  kv.set("frameworks", "CNN_2, cnn6");
  kv.set("vectors", "gas,electric");
  kv.set("gradient_threshold", "inf");
  kv.set("split", "train_val_test");
  const ExperimentConfig c = ExperimentConfig::from(kv);
  EXPECT_EQ(c.frameworks, (std::vector<FrameworkId>{FrameworkId::CNN2, FrameworkId::CNN6}));
  EXPECT_EQ(c.vectors, (std::vector<EnergyVector>{EnergyVector::Electric, EnergyVector::Gas}));
  EXPECT_EQ(c.synth.num_days, 12u);
  EXPECT_EQ(c.train.max_epochs, 5u);
  EXPECT_TRUE(std::isinf(c.train.gradient_threshold));
  EXPECT_EQ(c.split.mode, SplitSpec::Mode::TrainValTest);
  EXPECT_EQ(c.block_options(FrameworkId::CNN2).num_filters, 4u);
  EXPECT_EQ(c.split_for(FrameworkId::CNN3).mode, SplitSpec::Mode::TrainValTest);

  const ExperimentConfig d = ExperimentConfig::from(KeyValues::parse("data.synth_seed = 1\n"));
  EXPECT_EQ(d.train.max_epochs, 400u);
  EXPECT_EQ(d.train.batch_size, 700u);
  EXPECT_EQ(d.block_options(FrameworkId::CNN1), BlockOptions{});
  EXPECT_EQ(d.block_options(FrameworkId::CNN5), cnn45_defaults());
}

TEST(Config, RejectsMismatchesBeforeTraining) {
  auto with = [](std::initializer_list<std::pair<const char*, const char*>> sets) {
    KeyValues kv = small("unused");
    for (const auto& [k, v] : sets) kv.set(k, v);
    return config_code(kv);
  };
  EXPECT_EQ(with({{"bogus", "1"}}), ErrorCode::ConfigError);
  EXPECT_EQ(with({{"frameworks", "CNN_7"}}), ErrorCode::ConfigError);
  EXPECT_EQ(with({{"vectors", "steam"}}), ErrorCode::ConfigError);
  EXPECT_EQ(with({{"data.csv", "x.csv"}}), ErrorCode::ConfigError);
  EXPECT_EQ(with({{"epochs", "-1"}}), ErrorCode::ConfigError);
  EXPECT_EQ(with({{"split", "random"}}), ErrorCode::ConfigError);
  EXPECT_EQ(with({{"buildings", "99"}}), ErrorCode::ConfigError);
  EXPECT_EQ(with({{"batch_size", "100000"}}), ErrorCode::ConfigError);
  EXPECT_EQ(with({{"frameworks", "CNN_5"}, {"input.solar", "true"}}), ErrorCode::ConfigError);
  EXPECT_EQ(with({{"synth.num_days", "2"}}), ErrorCode::ConfigError);
  EXPECT_EQ(with({{"synth.weather", "false"}, {"input.temperature", "true"}}), ErrorCode::ConfigError);

  // CNN_2 on an explicitly chosen building without coupled vectors.
  const ExperimentConfig c = ExperimentConfig::from(small("unused"));
  const MultiEnergyDataset ds = load_dataset(c);
  std::string uncoupled;
  for (const auto& m : ds.meta)
    if (!m.multi_vector() && !ds.is_zero(static_cast<std::size_t>(m.id), EnergyVector::Electric)) {
      uncoupled = std::to_string(m.id);
      break;
    }
  ASSERT_FALSE(uncoupled.empty());
  EXPECT_EQ(with({{"frameworks", "CNN_2"}, {"buildings", uncoupled.c_str()}}), ErrorCode::ConfigError);
  EXPECT_EQ(with({}), ErrorCode::EmptyList);
}

TEST(RunExperiment, SmokeCnn1TwoBuildings) {
  const fs::path out = scratch("smoke");
  const ExperimentConfig cfg = ExperimentConfig::from(small(out.string()));
  const ExperimentResults r = run_experiment(cfg);

  std::size_t artifacts = 0;
  for (const auto& e : fs::directory_iterator(out / "models")) artifacts += e.path().extension() == ".json";
  EXPECT_EQ(artifacts, 2u);
  EXPECT_TRUE(fs::exists(out / "models" / "CNN_1_electric_b0.json"));
  EXPECT_TRUE(fs::exists(out / "history" / "CNN_1_electric_b1.csv"));
  // First iteration plus the end of each of the 5 epochs.
  EXPECT_EQ(lines(out / "history" / "CNN_1_electric_b1.csv"), 1u + 6u);

  // header + (2 buildings + total) x (train, test)
  EXPECT_EQ(lines(out / "metrics.csv"), 1u + 6u);
  EXPECT_EQ(slurp(out / "metrics.csv").substr(0, std::string(kMetricsCsvHeader).size()), kMetricsCsvHeader);

  // 12 days: 7 train days, 5 test days of 48 samples.
  EXPECT_EQ(lines(out / "predictions" / "CNN_1_electric_test.csv"), 1u + 5u * 48u);
  EXPECT_EQ(lines(out / "predictions" / "CNN_1_electric_train.csv"), 1u + 6u * 48u);
  EXPECT_EQ(slurp(out / "predictions" / "CNN_1_electric_test.csv").substr(0, 27), "timestamp,actual,predicted\n");

  const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(manifest["seeds"]["synth_seed"], 2);
  EXPECT_EQ(manifest["models"].size(), 2u);
  EXPECT_EQ(manifest["config_hash"].get<std::string>().size(), std::string("fnv1a64:").size() + 16);

  // The total is the sum of the per-building predictions.
  const auto& s = r.series.at(0);
  const SeriesSlice tot = total_slice(r.data, s, SplitPart::Test);
  const SeriesSlice b0 = building_slice(r.data, s, 0, SplitPart::Test);
  const SeriesSlice b1 = building_slice(r.data, s, 1, SplitPart::Test);
  for (std::size_t i = 0; i < tot.predicted.size(); ++i) {
    EXPECT_DOUBLE_EQ(tot.predicted[i], b0.predicted[i] + b1.predicted[i]);
    EXPECT_DOUBLE_EQ(tot.actual[i], b0.actual[i] + b1.actual[i]);
  }
}

TEST(RunExperiment, RerunIsByteIdenticalAcrossWorkerCounts) {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  KeyValues kv = small(a.string());
  kv.set("frameworks", "CNN_1,CNN_5,CNN_6");
  kv.set("buildings", "all");
  kv.set("epochs", "2");
  run_experiment(ExperimentConfig::from(kv));
  kv.set("output_dir", b.string());
  kv.set("workers", "3");
  run_experiment(ExperimentConfig::from(kv));
  for (const char* f : {"metrics.csv", "summary.csv", "predictions/CNN_1_electric_test.csv",
                        "predictions/CNN_5_electric_buildings.csv", "predictions/CNN_6_electric_train.csv",
                        "fed/CNN_6_electric_rounds.csv", "models/CNN_6_electric_global.json"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  const auto ma = nlohmann::json::parse(slurp(a / "manifest.json"));
  const auto mb = nlohmann::json::parse(slurp(b / "manifest.json"));
  EXPECT_EQ(ma["config_hash"], mb["config_hash"]);
}

TEST(RunExperiment, ZeroBuildingsPredictedAsZero) {
  KeyValues kv = small("unused");
  kv.set("buildings", "all");
  kv.set("frameworks", "CNN_4");
  kv.set("epochs", "1");
  const ExperimentConfig cfg = ExperimentConfig::from(kv);
  const ExperimentResults r = run_models(cfg, load_dataset(cfg));
  ASSERT_EQ(r.series.size(), 1u);
  const auto& s = r.series[0];
  std::size_t zero = 0;
  for (std::size_t j = 0; j < s.buildings.size(); ++j) {
    if (!r.data.is_zero(s.buildings[j], EnergyVector::Electric)) continue;
    ++zero;
    EXPECT_FALSE(s.modelled[j]);
    for (double p : s.predicted[j]) EXPECT_EQ(p, 0.0);
  }
  EXPECT_EQ(zero, 11u);
  std::size_t rows = 0;
  for (const auto& m : metric_rows(r)) rows += m.key.split == "test";
  EXPECT_EQ(rows, 28u + 1u);
}

TEST(RunExperiment, SixFrameworksGiveSixSummaryRows) {
  const fs::path out = scratch("six");
  KeyValues kv = small(out.string());
  kv.set("frameworks", "all");
  kv.set("vectors", "all");
  kv.set("buildings", "all");
  kv.set("synth.num_days", "10");
  kv.set("epochs", "1");
  kv.set("arch.filters", "2");
  kv.set("arch.kernel", "3");
  run_experiment(ExperimentConfig::from(kv));
  EXPECT_EQ(lines(out / "summary.csv"), 1u + 6u);
  std::istringstream is(slurp(out / "summary.csv"));
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), 12);
  EXPECT_EQ(header.rfind("framework,electric_train_snr_db,electric_train_nrmse,electric_test_snr_db", 0), 0u);
  EXPECT_TRUE(fs::exists(out / "metrics_daily.csv"));
  std::size_t cnn3_histories = 0;
  for (const auto& e : fs::directory_iterator(out / "history"))
    cnn3_histories += e.path().filename().string().rfind("CNN_3_heat_b", 0) == 0;
  EXPECT_EQ(cnn3_histories, 30u);
  EXPECT_NE(slurp(out / "metrics.csv").find("CNN_3,gas,validation,total"), std::string::npos);
}

TEST(RunExperiment, StoredModelsReproduceMetrics) {
  const fs::path a = scratch("store_a"), b = scratch("store_b");
  KeyValues kv = small(a.string());
  kv.set("frameworks", "CNN_1,CNN_6");
  run_experiment(ExperimentConfig::from(kv));
  kv.set("output_dir", b.string());
  kv.set("models_dir", (a / "models").string());
  run_experiment(ExperimentConfig::from(kv));
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));

  kv.set("frameworks", "CNN_5");
  EXPECT_THROW(run_experiment(ExperimentConfig::from(kv)), Error);
}

TEST(ModelArtifact, JsonRoundTrip) {
  ModelArtifact m;
  m.name = "x";
  m.net = make_network(build_cnn1({3, 5, 2, 4}, 2), 9);
  m.net.set_input_mean(Tensor4({48, 2, 1, 1}, 0.25));
  m.net.params()[2].running_var[1] = 3.5;
  const Network back = network_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_TRUE(back == m.net);
  EXPECT_EQ(flatten_state(back), flatten_state(m.net));
}

TEST(PlotData, OverlayAndHeatmapShapes) {
  const fs::path out = scratch("plot");
  KeyValues kv = small(out.string());
  kv.set("frameworks", "CNN_2");
  kv.set("buildings", "all");
  kv.set("epochs", "1");
  const ExperimentConfig cfg = ExperimentConfig::from(kv);
  const ExperimentResults r = run_experiment(cfg);
  ASSERT_FALSE(r.correlations.empty());
  for (const auto& [name, t] : r.correlations)
    EXPECT_EQ(lines(out / "plot" / ("heatmap_" + name + ".csv")), 1u + t.rows.size() * t.cols.size());
  const fs::path overlay = out / "plot" / "overlay_CNN_2_electric_test.csv";
  EXPECT_EQ(slurp(overlay).substr(0, 19), "t,actual,predicted\n");
  EXPECT_EQ(lines(overlay), 1u + 5u * 48u);

  // Rebuilding from disk gives the same files.
  const fs::path again = out / "again";
  emit_plot_data(load_plot_data(out), again);
  EXPECT_EQ(slurp(again / "overlay_CNN_2_electric_test.csv"), slurp(overlay));

  EXPECT_THROW(emit_plot_data(PlotData{}, again), Error);
  try {
    load_plot_data(scratch("empty"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingResults);
  }
}

TEST(PlotData, MarchTestMonthHas1488Rows) {
  KeyValues kv = small("unused");
  kv.set("synth.num_days", "90");
  kv.set("synth.start_date", "2013-01-01");
  kv.set("split.by_month", "true");
  kv.set("buildings", "0");
  kv.set("epochs", "0");
  const ExperimentConfig cfg = ExperimentConfig::from(kv);
  const ExperimentResults r = run_models(cfg, load_dataset(cfg));
  const PlotData d = plot_data(r);
  ASSERT_EQ(d.overlays.size(), 1u);
  EXPECT_EQ(d.overlays[0].actual.size(), 1488u);
  EXPECT_EQ(format_timestamp(r.data.time(total_slice(r.data, r.series[0], SplitPart::Test).target_index[0])),
            "2013-03-01T00:00:00");
}

TEST(EpochSweep, ZeroBudgetAndLossAcrossBudgets) {
  KeyValues kv = small("unused");
  kv.set("buildings", "0");
  kv.set("synth.num_days", "20");
  const ExperimentConfig cfg = ExperimentConfig::from(kv);
  const MultiEnergyDataset ds = load_dataset(cfg);

  const auto zero = epoch_sweep(cfg, ds, {0});
  ASSERT_EQ(zero.size(), 1u);
  EXPECT_EQ(zero[0].epochs, 0u);
  EXPECT_TRUE(std::isfinite(zero[0].train_loss));

  const auto rows = epoch_sweep(cfg, ds, {0, 5, 20});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].train_loss, zero[0].train_loss);
  EXPECT_GT(rows[0].train_loss, rows[1].train_loss);
  EXPECT_GT(rows[1].train_loss, rows[2].train_loss);

  std::ostringstream os;
  write_sweep_csv(os, rows);
  const std::string text = os.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
  EXPECT_THROW(epoch_sweep(cfg, ds, {}), Error);
}

#ifdef MEFCAST_BIN
namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MEFCAST_BIN) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("cli");
  const fs::path cfg = dir / "exp.cfg";
  {
    std::ofstream os(cfg);
    const KeyValues kv = small((dir / "out").string());
    for (const auto& [k, v] : kv.values()) os << k << " = " << v << "\n";
  }
  const std::string c = "-c " + cfg.string();
  EXPECT_EQ(run_cli("train " + c), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "metrics.csv"));
  EXPECT_EQ(run_cli("evaluate " + c + " -o " + (dir / "eval").string() + " --models " + (dir / "out" / "models").string()), 0);
  EXPECT_EQ(slurp(dir / "out" / "metrics.csv"), slurp(dir / "eval" / "metrics.csv"));
  EXPECT_EQ(run_cli("report " + (dir / "out").string()), 0);
  EXPECT_EQ(run_cli("sweep " + c + " --epochs 0,1 -o " + (dir / "sweep").string()), 0);
  EXPECT_EQ(lines(dir / "sweep" / "sweep.csv"), 3u);
  EXPECT_EQ(run_cli("fed " + c + " -s epochs=1 -o " + (dir / "fed").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "fed" / "fed" / "CNN_6_electric_rounds.csv"));
  EXPECT_EQ(run_cli("synth --seed 4 -s num_days=10 -o " + (dir / "d.csv").string()), 0);
  EXPECT_EQ(run_cli("correlate -s data.csv=" + (dir / "d.csv").string() + " -o " + (dir / "corr").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "corr" / "correlation" / "cross_building_gas.csv"));
  EXPECT_EQ(run_cli("synth --seed 4 -s num_days=3 -o " + (dir / "short.csv").string()), 0);
  // Three days leave a single training day.
  EXPECT_EQ(run_cli("correlate -s data.csv=" + (dir / "short.csv").string() + " -o " + (dir / "corr").string()), 2);
  EXPECT_EQ(run_cli("synth --seed 4 -s num_days=1"), 1);

  EXPECT_EQ(run_cli("train " + c + " -s frameworks=CNN_9"), 1);
  EXPECT_EQ(run_cli("train " + c + " -s batch_size=99999"), 1);
  EXPECT_EQ(run_cli("train -c /nonexistent.cfg"), 1);
  EXPECT_EQ(run_cli("train " + c + " -s nonsense"), 1);
  EXPECT_EQ(run_cli("unknown-verb"), 1);
  EXPECT_EQ(run_cli("train -s data.csv=/nonexistent.csv"), 2);
  EXPECT_EQ(run_cli("report " + (dir / "missing").string()), 2);
}
#endif
