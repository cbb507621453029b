#pragma once

#include <algorithm>
#include <cctype>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mef/arch.hpp"
#include "mef/error.hpp"
#include "mef/kv.hpp"
#include "mef/windows.hpp"

namespace mef {

// ---------------------------------------------------------------------------
// Energy vectors and time

enum class EnergyVector { Electric = 0, Heat = 1, Gas = 2 };
inline constexpr std::array<EnergyVector, 3> kVectors{EnergyVector::Electric, EnergyVector::Heat, EnergyVector::Gas};

inline std::string to_string(EnergyVector v) {
  switch (v) {
    case EnergyVector::Electric: return "electric";
    case EnergyVector::Heat: return "heat";
    case EnergyVector::Gas: return "gas";
  }
  return "?";
}

inline std::optional<EnergyVector> parse_vector(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "electric" || s == "electricity" || s == "e") return EnergyVector::Electric;
  if (s == "heat" || s == "h") return EnergyVector::Heat;
  if (s == "gas" || s == "g") return EnergyVector::Gas;
  return std::nullopt;
}

inline std::size_t index(EnergyVector v) { return static_cast<std::size_t>(v); }

using TimePoint = std::chrono::sys_seconds;
inline constexpr std::chrono::seconds kCadence{1800};
inline constexpr std::size_t kSamplesPerDay = 48;

/// Parses `YYYY-MM-DDTHH:MM[:SS][Z]` (a space may replace `T`).
inline std::optional<TimePoint> parse_timestamp(const std::string& s) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0, used = 0;
  char sep = 0;
  if (std::sscanf(s.c_str(), "%4d-%2d-%2d%c%2d:%2d%n", &y, &mo, &d, &sep, &h, &mi, &used) != 6) return std::nullopt;
  if (sep != 'T' && sep != ' ') return std::nullopt;
  std::string rest = s.substr(static_cast<std::size_t>(used));
  if (!rest.empty() && rest[0] == ':') {
    int more = 0;
    if (std::sscanf(rest.c_str(), ":%2d%n", &sec, &more) != 1) return std::nullopt;
    rest = rest.substr(static_cast<std::size_t>(more));
  }
  if (rest == "Z") rest.clear();
  if (!rest.empty()) return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year(y), std::chrono::month(static_cast<unsigned>(mo)),
                                        std::chrono::day(static_cast<unsigned>(d))};
  if (!ymd.ok() || h > 23 || mi > 59 || sec > 59) return std::nullopt;
  return TimePoint(std::chrono::sys_days(ymd)) + std::chrono::hours(h) + std::chrono::minutes(mi) +
         std::chrono::seconds(sec);
}

inline std::string format_timestamp(TimePoint t) {
  const auto day = std::chrono::floor<std::chrono::days>(t);
  const std::chrono::year_month_day ymd(day);
  const std::chrono::hh_mm_ss hms(t - day);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return buf;
}

// ---------------------------------------------------------------------------
// Dataset

/// Network node of each vector (-1 when the building has no connection) and
/// whether the building hosts a physical conversion link into that vector's
/// network. A building is eligible for multi-vector inputs when at least two
/// vectors are coupled.
struct BuildingMeta {
  int id = 0;
  std::array<int, 3> node{-1, -1, -1};
  std::array<bool, 3> coupled{false, false, false};

  bool multi_vector() const { return std::count(coupled.begin(), coupled.end(), true) >= 2; }
  bool operator==(const BuildingMeta&) const = default;
};

struct MultiEnergyDataset {
  TimePoint start{};
  /// series[b][v], all of length T.
  std::vector<std::array<std::vector<double>, 3>> series;
  std::optional<std::vector<double>> temperature;
  std::optional<std::vector<double>> solar;
  std::vector<BuildingMeta> meta;

  std::size_t num_buildings() const { return series.size(); }
  std::size_t length() const { return series.empty() ? 0 : series[0][0].size(); }
  std::size_t days() const { return length() / kSamplesPerDay; }
  TimePoint time(std::size_t i) const { return start + kCadence * static_cast<long long>(i); }

  const std::vector<double>& at(std::size_t b, EnergyVector v) const { return series.at(b)[index(v)]; }

  bool is_zero(std::size_t b, EnergyVector v) const {
    const auto& s = at(b, v);
    return std::all_of(s.begin(), s.end(), [](double x) { return x == 0.0; });
  }

  std::vector<std::size_t> nonzero_buildings(EnergyVector v) const {
    std::vector<std::size_t> out;
    for (std::size_t b = 0; b < num_buildings(); ++b)
      if (!is_zero(b, v)) out.push_back(b);
    return out;
  }

  /// Checks the structural invariants; throws on the first violation.
  void validate() const {
    require(!series.empty(), ErrorCode::RaggedSeries, "dataset has no buildings");
    const std::size_t T = length();
    require(T > 0 && T % kSamplesPerDay == 0, ErrorCode::RaggedSeries,
            "series length " + std::to_string(T) + " is not a whole number of days");
    for (std::size_t b = 0; b < series.size(); ++b)
      for (EnergyVector v : kVectors) {
        const auto& s = at(b, v);
        require(s.size() == T, ErrorCode::RaggedSeries, "building " + std::to_string(b) + " " + to_string(v) +
                                                             " has length " + std::to_string(s.size()));
        for (double x : s)
          require(std::isfinite(x) && x >= 0.0, ErrorCode::NegativeValue,
                  "building " + std::to_string(b) + " " + to_string(v) + " has value " + std::to_string(x));
      }
    if (temperature) require(temperature->size() == T, ErrorCode::RaggedSeries, "temperature length mismatch");
    if (solar) require(solar->size() == T, ErrorCode::RaggedSeries, "solar length mismatch");
    require(meta.size() == series.size(), ErrorCode::RaggedSeries, "building metadata count mismatch");
  }

  bool operator==(const MultiEnergyDataset&) const = default;
};

/// Round-robin node ids over the buildings with a non-zero series, and
/// coupling wherever the building actually consumes the vector.
inline void assign_default_meta(MultiEnergyDataset& ds, std::size_t num_nodes = 20) {
  ds.meta.resize(ds.num_buildings());
  for (EnergyVector v : kVectors) {
    std::size_t k = 0;
    for (std::size_t b = 0; b < ds.num_buildings(); ++b) {
      const bool used = !ds.is_zero(b, v);
      ds.meta[b].node[index(v)] = used ? static_cast<int>(k++ % num_nodes) : -1;
      ds.meta[b].coupled[index(v)] = used;
    }
  }
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr const char* kCsvHeader = "timestamp,building_id,electric_kw,heat_kw,gas_kw";

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// One row per (timestamp, building). Building ids are sorted ascending into
/// dataset indices; every building must cover every timestamp of a gapless
/// 30-minute grid. Empty fields are rejected.
inline MultiEnergyDataset read_csv(std::istream& is) {
  std::string line;
  std::size_t n = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(is, line)) {
      ++n;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!trim(line).empty()) return true;
    }
    return false;
  };
  if (!next_line()) throw ParseError(1, "missing header");
  const auto header = split_fields(line, ',');
  const std::vector<std::string> base{"timestamp", "building_id", "electric_kw", "heat_kw", "gas_kw"};
  if (header.size() < base.size() || !std::equal(base.begin(), base.end(), header.begin()))
    throw ParseError(n, std::string("header must start with ") + kCsvHeader);
  bool has_temp = false, has_solar = false;
  for (std::size_t i = base.size(); i < header.size(); ++i) {
    if (header[i] == "temp_c" && !has_temp && !has_solar) has_temp = true;
    else if (header[i] == "solar_wm2" && !has_solar) has_solar = true;
    else throw ParseError(n, "unexpected column '" + header[i] + "'");
  }

  struct Row {
    std::array<double, 3> kw;
    double temp = 0.0;
    double solar = 0.0;
  };
  std::map<long long, std::map<TimePoint, Row>> by_building;
  std::set<TimePoint> stamps;
  while (next_line()) {
    const auto f = split_fields(line, ',');
    if (f.size() != header.size())
      throw ParseError(n, "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
    const auto t = parse_timestamp(f[0]);
    if (!t) throw ParseError(n, "bad timestamp '" + f[0] + "'");
    auto number = [&](std::size_t i) {
      if (f[i].empty()) throw ParseError(n, "missing value in column '" + header[i] + "'");
      char* end = nullptr;
      const double d = std::strtod(f[i].c_str(), &end);
      if (end != f[i].c_str() + f[i].size() || !std::isfinite(d))
        throw ParseError(n, "bad number '" + f[i] + "' in column '" + header[i] + "'");
      return d;
    };
    const double idd = number(1);
    if (idd != std::floor(idd)) throw ParseError(n, "building_id must be an integer");
    Row r{{number(2), number(3), number(4)}};
    for (std::size_t v = 0; v < 3; ++v)
      if (r.kw[v] < 0.0)
        throw Error(ErrorCode::NegativeValue, "line " + std::to_string(n) + ": negative " + header[2 + v]);
    std::size_t col = 5;
    if (has_temp) r.temp = number(col++);
    if (has_solar) r.solar = number(col++);
    auto& rows = by_building[static_cast<long long>(idd)];
    if (!rows.emplace(*t, r).second) throw ParseError(n, "duplicate row for building " + f[1] + " at " + f[0]);
    stamps.insert(*t);
  }
  require(!stamps.empty(), ErrorCode::RaggedSeries, "no data rows");

  MultiEnergyDataset ds;
  ds.start = *stamps.begin();
  const std::vector<TimePoint> grid(stamps.begin(), stamps.end());
  for (std::size_t i = 1; i < grid.size(); ++i)
    require(grid[i] - grid[i - 1] == kCadence, ErrorCode::RaggedSeries,
            "timestamps are not on a gapless 30-minute grid near " + format_timestamp(grid[i]));
  const std::size_t T = grid.size();
  if (has_temp) ds.temperature.emplace(T);
  if (has_solar) ds.solar.emplace(T);
  for (const auto& [id, rows] : by_building) {
    require(rows.size() == T, ErrorCode::RaggedSeries,
            "building " + std::to_string(id) + " has " + std::to_string(rows.size()) + " of " + std::to_string(T) +
                " timestamps");
    std::array<std::vector<double>, 3> s;
    for (auto& v : s) v.reserve(T);
    std::size_t i = 0;
    for (const auto& [t, r] : rows) {
      for (std::size_t v = 0; v < 3; ++v) s[v].push_back(r.kw[v]);
      if (ds.series.empty()) {
        if (has_temp) (*ds.temperature)[i] = r.temp;
        if (has_solar) (*ds.solar)[i] = r.solar;
      }
      ++i;
    }
    ds.series.push_back(std::move(s));
  }
  assign_default_meta(ds);
  std::size_t b = 0;
  for (const auto& entry : by_building) ds.meta[b++].id = static_cast<int>(entry.first);
  ds.validate();
  return ds;
}

inline MultiEnergyDataset load_csv(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorCode::IoError, "cannot open " + path);
  return read_csv(is);
}

inline void write_csv(std::ostream& os, const MultiEnergyDataset& ds) {
  os << kCsvHeader;
  if (ds.temperature) os << ",temp_c";
  if (ds.solar) os << ",solar_wm2";
  os << '\n';
  for (std::size_t i = 0; i < ds.length(); ++i) {
    const std::string ts = format_timestamp(ds.time(i));
    for (std::size_t b = 0; b < ds.num_buildings(); ++b) {
      os << ts << ',' << ds.meta[b].id;
      for (EnergyVector v : kVectors) os << ',' << format_double(ds.at(b, v)[i]);
      if (ds.temperature) os << ',' << format_double((*ds.temperature)[i]);
      if (ds.solar) os << ',' << format_double((*ds.solar)[i]);
      os << '\n';
    }
  }
}

inline void save_csv(const std::string& path, const MultiEnergyDataset& ds) {
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorCode::IoError, "cannot write " + path);
  write_csv(os, ds);
}

// ---------------------------------------------------------------------------
// Synthetic generator

struct SynthConfig {
  std::size_t num_days = 90;
  std::string start_date = "2013-01-01";
  std::size_t num_buildings = 39;
  std::size_t electric_zero = 11;
  std::size_t heat_zero = 9;
  std::size_t gas_zero = 18;
  std::size_t low_gas = 13;
  std::size_t num_nodes = 20;
  /// Multiplicative white noise on electric demand.
  double electric_noise = 0.02;
  /// Day-to-day variation of the driver shared by all buildings.
  double shared_driver = 0.05;
  /// Multiplicative AR(1) noise on heat demand.
  double heat_noise = 0.12;
  /// Heating demand per degree below the base temperature, relative.
  double heat_temp_coupling = 0.1;
  double heat_base_temp = 16.0;
  /// Fraction of a coupled building's electric profile leaking into heat.
  double electric_heat_coupling = 0.3;
  /// Per-sample spike probability for gas (scaled by occupancy).
  double gas_spike_rate = 0.05;
  double low_gas_scale = 0.05;
  /// Probability that a building with several vectors hosts a conversion link.
  double coupled_fraction = 0.6;
  bool weather = true;

  static SynthConfig from(const KeyValues& kv) {
    SynthConfig c;
    auto count = [&](const char* k, std::size_t& dst) {
      const long long v = kv.get_int(k, static_cast<long long>(dst));
      if (v < 0) throw Error(ErrorCode::ConfigError, std::string("'") + k + "' must be >= 0");
      dst = static_cast<std::size_t>(v);
    };
    count("num_days", c.num_days);
    count("num_buildings", c.num_buildings);
    count("electric_zero", c.electric_zero);
    count("heat_zero", c.heat_zero);
    count("gas_zero", c.gas_zero);
    count("low_gas", c.low_gas);
    count("num_nodes", c.num_nodes);
    c.start_date = kv.get("start_date", c.start_date);
    c.electric_noise = kv.get("electric_noise", c.electric_noise);
    c.shared_driver = kv.get("shared_driver", c.shared_driver);
    c.heat_noise = kv.get("heat_noise", c.heat_noise);
    c.heat_temp_coupling = kv.get("heat_temp_coupling", c.heat_temp_coupling);
    c.heat_base_temp = kv.get("heat_base_temp", c.heat_base_temp);
    c.electric_heat_coupling = kv.get("electric_heat_coupling", c.electric_heat_coupling);
    c.gas_spike_rate = kv.get("gas_spike_rate", c.gas_spike_rate);
    c.low_gas_scale = kv.get("low_gas_scale", c.low_gas_scale);
    c.coupled_fraction = kv.get("coupled_fraction", c.coupled_fraction);
    c.weather = kv.get_bool("weather", c.weather);
    c.validate();
    return c;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::ConfigError, m); };
    if (num_days < 2) fail("num_days must be >= 2");
    if (num_buildings < 1) fail("num_buildings must be >= 1");
    if (electric_zero + heat_zero > num_buildings) fail("electric_zero + heat_zero exceeds num_buildings");
    if (gas_zero + low_gas > num_buildings) fail("gas_zero + low_gas exceeds num_buildings");
    if (num_nodes < 1) fail("num_nodes must be >= 1");
    if (!parse_timestamp(start_date + "T00:00")) fail("start_date must be YYYY-MM-DD");
    for (double v : {electric_noise, shared_driver, heat_noise, heat_temp_coupling, electric_heat_coupling,
                     gas_spike_rate, low_gas_scale, coupled_fraction})
      if (!(v >= 0.0)) fail("noise, coupling and rate parameters must be >= 0");
  }
};

namespace detail {

/// Smooth 0..1 bump that is 1 on [on, off] hours with half-hour cosine ramps.
inline double bump(double hour, double on, double off) {
  constexpr double ramp = 1.5;
  if (hour <= on - ramp || hour >= off + ramp) return 0.0;
  if (hour >= on && hour <= off) return 1.0;
  const double x = hour < on ? (hour - (on - ramp)) / ramp : ((off + ramp) - hour) / ramp;
  return 0.5 * (1.0 - std::cos(std::numbers::pi * x));
}

inline double day_of_year(TimePoint t) {
  const auto day = std::chrono::floor<std::chrono::days>(t);
  const std::chrono::year_month_day ymd(day);
  const auto jan1 = std::chrono::sys_days(ymd.year() / std::chrono::January / 1);
  return static_cast<double>((day - jan1).count());
}

inline bool is_weekend(TimePoint t) {
  const std::chrono::weekday wd(std::chrono::floor<std::chrono::days>(t));
  return wd == std::chrono::Saturday || wd == std::chrono::Sunday;
}

}  // namespace detail

/// Seeded stand-in for a 39-building campus: smooth occupancy-driven electric
/// demand with a shared daily driver, temperature-driven noisy heat demand and
/// sparse spiky gas demand. Zero masks follow the configured counts; the
/// electric-zero and heat-zero sets are disjoint.
inline MultiEnergyDataset synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const std::size_t B = cfg.num_buildings;
  const std::size_t T = cfg.num_days * kSamplesPerDay;

  MultiEnergyDataset ds;
  ds.start = *parse_timestamp(cfg.start_date + "T00:00");
  ds.series.resize(B);
  ds.meta.resize(B);

  // Zero masks.
  std::vector<std::size_t> order(B);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> e_zero(B, false), h_zero(B, false), g_zero(B, false), g_low(B, false);
  for (std::size_t i = 0; i < cfg.electric_zero; ++i) e_zero[order[i]] = true;
  for (std::size_t i = 0; i < cfg.heat_zero; ++i) h_zero[order[cfg.electric_zero + i]] = true;
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < cfg.gas_zero; ++i) g_zero[order[i]] = true;
  for (std::size_t i = 0; i < cfg.low_gas; ++i) g_low[order[cfg.gas_zero + i]] = true;

  // Weather.
  std::vector<double> temp(T), solar(T);
  {
    double anomaly = 0.0;
    double cloud = 0.5;
    for (std::size_t i = 0; i < T; ++i) {
      const TimePoint t = ds.time(i);
      const double doy = detail::day_of_year(t);
      const double hour = static_cast<double>(i % kSamplesPerDay) / 2.0;
      if (i % kSamplesPerDay == 0) cloud = 0.2 + 0.8 * unif(rng);
      anomaly = 0.995 * anomaly + 0.15 * normal(rng);
      const double seasonal = 9.5 - 6.0 * std::cos(2.0 * std::numbers::pi * (doy - 15.0) / 365.0);
      temp[i] = seasonal + 3.0 * std::sin(2.0 * std::numbers::pi * (hour - 9.0) / 24.0) + anomaly;
      const double daylight = 12.0 - 4.5 * std::cos(2.0 * std::numbers::pi * (doy + 10.0) / 365.0);
      const double rise = 12.0 - daylight / 2.0;
      const double elev = (hour > rise && hour < rise + daylight) ? std::sin(std::numbers::pi * (hour - rise) / daylight)
                                                                  : 0.0;
      const double peak = 500.0 - 300.0 * std::cos(2.0 * std::numbers::pi * (doy + 10.0) / 365.0);
      solar[i] = std::max(0.0, peak * elev * cloud);
    }
  }

  // Shared day-level driver (e.g. term-time activity).
  std::vector<double> driver(cfg.num_days);
  {
    double a = 0.0;
    for (auto& d : driver) {
      a = 0.8 * a + cfg.shared_driver * normal(rng);
      d = std::max(0.2, 1.0 + a);
    }
  }

  for (std::size_t b = 0; b < B; ++b) {
    const double e_base = 20.0 + 180.0 * unif(rng);
    const double h_base = 30.0 + 270.0 * unif(rng);
    const double g_base = (g_low[b] ? cfg.low_gas_scale : 1.0) * (20.0 + 80.0 * unif(rng));
    const double shift = 2.0 * unif(rng) - 1.0;  // hours
    const double night = 0.25 + 0.2 * unif(rng);
    const bool link = unif(rng) < cfg.coupled_fraction;
    std::array<std::vector<double>, 3> s;
    for (auto& v : s) v.assign(T, 0.0);
    double heat_ar = 0.0;
    std::size_t spike_left = 0;
    double spike_size = 0.0;
    for (std::size_t i = 0; i < T; ++i) {
      const TimePoint t = ds.time(i);
      const double hour = static_cast<double>(i % kSamplesPerDay) / 2.0;
      const bool weekend = detail::is_weekend(t);
      const double occ = night + (1.0 - night) * (weekend ? 0.3 : 1.0) * detail::bump(hour - shift, 8.0, 17.5);
      const double drive = driver[i / kSamplesPerDay];
      const double electric = e_base * occ * drive * (1.0 + cfg.electric_noise * normal(rng));
      const double heating = std::max(0.0, cfg.heat_base_temp - temp[i]) * cfg.heat_temp_coupling + 0.2;
      const double heat_profile = 0.5 + 0.5 * std::max(detail::bump(hour, 6.0, 9.0), detail::bump(hour, 16.5, 20.5));
      heat_ar = 0.6 * heat_ar + cfg.heat_noise * normal(rng);
      double heat = h_base * heating * heat_profile * std::max(0.0, 1.0 + heat_ar);
      if (link && !e_zero[b]) heat += cfg.electric_heat_coupling * h_base * (occ - night);
      if (spike_left == 0 && unif(rng) < cfg.gas_spike_rate * occ) {
        spike_left = 1 + static_cast<std::size_t>(3.0 * unif(rng));
        spike_size = g_base * (0.5 - std::log(1.0 - unif(rng)));
      }
      double gas = 0.1 * g_base * heat_profile * (0.5 + unif(rng));
      if (spike_left > 0) {
        gas += spike_size;
        --spike_left;
      }
      s[0][i] = e_zero[b] ? 0.0 : std::max(0.0, electric);
      s[1][i] = h_zero[b] ? 0.0 : std::max(0.0, heat);
      s[2][i] = g_zero[b] ? 0.0 : std::max(0.0, gas);
    }
    ds.series[b] = std::move(s);
    ds.meta[b].id = static_cast<int>(b);
    ds.meta[b].coupled = {link && !e_zero[b], link && !h_zero[b], link && !g_zero[b]};
  }
  for (EnergyVector v : kVectors) {
    std::size_t k = 0;
    for (std::size_t b = 0; b < B; ++b)
      ds.meta[b].node[index(v)] = ds.is_zero(b, v) ? -1 : static_cast<int>(k++ % cfg.num_nodes);
  }
  if (cfg.weather) {
    ds.temperature = std::move(temp);
    ds.solar = std::move(solar);
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Windowing

/// Stride-1 windows over a grid of equally long series. `grid[w][c]` fills
/// input column w, channel c; window i covers samples [i, i + 47] and its
/// targets are `targets[k][i + 48]`. Yields T - 48 windows.
inline WindowSet make_windows(const std::vector<std::vector<std::span<const double>>>& grid,
                              const std::vector<std::span<const double>>& targets) {
  require(!grid.empty() && !grid[0].empty() && !targets.empty(), ErrorCode::InvalidSpec,
          "windowing needs at least one input series and one target");
  const std::size_t W = grid.size();
  const std::size_t C = grid[0].size();
  const std::size_t T = grid[0][0].size();
  for (const auto& col : grid) {
    require(col.size() == C, ErrorCode::RaggedInput, "input grid columns have different channel counts");
    for (const auto& s : col) require(s.size() == T, ErrorCode::LengthMismatch, "input series lengths differ");
  }
  for (const auto& s : targets) require(s.size() == T, ErrorCode::LengthMismatch, "target length differs");
  require(T > kWindow, ErrorCode::SeriesTooShort,
          "series of length " + std::to_string(T) + " has no complete 48-sample window plus target");
  const std::size_t N = T - kWindow;
  const std::size_t K = targets.size();

  WindowSet ws;
  ws.outputs = K;
  ws.inputs = Tensor4({kWindow, W, C, N});
  ws.targets.resize(N * K);
  ws.target_index.resize(N);
  auto data = ws.inputs.data();
  for (std::size_t i = 0; i < N; ++i) {
    double* dst = data.data() + i * kWindow * W * C;
    for (std::size_t h = 0; h < kWindow; ++h)
      for (std::size_t w = 0; w < W; ++w)
        for (std::size_t c = 0; c < C; ++c) *dst++ = grid[w][c][i + h];
    for (std::size_t k = 0; k < K; ++k) ws.targets[i * K + k] = targets[k][i + kWindow];
    ws.target_index[i] = i + kWindow;
  }
  return ws;
}

/// Single series predicting itself: 48 x 1 x 1 x (T - 48).
inline WindowSet make_windows(std::span<const double> series) { return make_windows({{series}}, {series}); }

/// Several variables stacked along the width axis; the first one is the
/// target: 48 x V x 1 x (T - 48).
inline WindowSet make_windows(const std::vector<std::span<const double>>& variables) {
  require(!variables.empty(), ErrorCode::InvalidSpec, "no input variables");
  std::vector<std::vector<std::span<const double>>> grid;
  for (const auto& v : variables) grid.push_back({v});
  return make_windows(grid, {variables[0]});
}

// ---------------------------------------------------------------------------
// Splits

struct SplitSpec {
  enum class Mode { TrainTest, TrainValTest };
  Mode mode = Mode::TrainTest;
  /// TrainTest only: train on every whole calendar month but the last.
  bool by_month = false;
};

inline std::string to_string(SplitSpec::Mode m) { return m == SplitSpec::Mode::TrainTest ? "train_test" : "train_val_test"; }

/// Day-aligned sample boundaries: train targets lie in [0, train_end),
/// validation in [train_end, val_end), test in [val_end, T).
struct SplitBounds {
  std::size_t train_end = 0;
  std::size_t val_end = 0;
  std::size_t total = 0;

  std::size_t train_days() const { return train_end / kSamplesPerDay; }
  std::size_t val_days() const { return (val_end - train_end) / kSamplesPerDay; }
  std::size_t test_days() const { return (total - val_end) / kSamplesPerDay; }
  bool operator==(const SplitBounds&) const = default;
};

/// TrainTest: floor(0.66 * days) training days, or the calendar-month rule.
/// TrainValTest: floor(0.6 * days) / floor(0.1 * days) / remainder.
inline SplitBounds split_bounds(std::size_t days, TimePoint start, const SplitSpec& spec) {
  std::size_t train = 0, val = 0;
  if (spec.mode == SplitSpec::Mode::TrainTest) {
    if (spec.by_month) {
      // Last sample's month is the test month.
      const auto first_day = std::chrono::floor<std::chrono::days>(start);
      const auto last_day = first_day + std::chrono::days(static_cast<long long>(days) - 1);
      const std::chrono::year_month_day last(last_day);
      const auto test_start = std::chrono::sys_days(last.year() / last.month() / 1);
      const auto d = (test_start - first_day).count();
      train = d > 0 ? static_cast<std::size_t>(d) : 0;
    } else {
      train = days * 66 / 100;
    }
  } else {
    train = days * 60 / 100;
    val = days * 10 / 100;
  }
  const std::size_t test = days - std::min(days, train + val);
  require(train >= 2, ErrorCode::InsufficientData,
          "split leaves " + std::to_string(train) + " training days (need >= 2) of " + std::to_string(days));
  require(test >= 1, ErrorCode::InsufficientData, "split leaves no test days");
  require(spec.mode == SplitSpec::Mode::TrainTest || val >= 1, ErrorCode::InsufficientData,
          "split leaves no validation days");
  return {train * kSamplesPerDay, (train + val) * kSamplesPerDay, days * kSamplesPerDay};
}

inline SplitBounds split_bounds(const MultiEnergyDataset& ds, const SplitSpec& spec) {
  return split_bounds(ds.days(), ds.start, spec);
}

struct Partitions {
  WindowSet train;
  WindowSet validation;
  WindowSet test;
};

/// Partitions windows by target index. Inputs of the first windows of a later
/// partition reach back into the previous one; targets never do.
inline Partitions split(const WindowSet& all, const SplitBounds& b) {
  Partitions p{all.slice_by_target(0, b.train_end), all.slice_by_target(b.train_end, b.val_end),
               all.slice_by_target(b.val_end, b.total)};
  require(!p.train.empty(), ErrorCode::InsufficientData, "no training windows");
  require(!p.test.empty(), ErrorCode::InsufficientData, "no test windows");
  return p;
}

// ---------------------------------------------------------------------------
// Input assembly

struct InputOptions {
  bool temperature = false;
  bool solar = false;
  bool minmax = false;
};

/// Per-variable min-max scaling to [0, 1], fit on a prefix of the series.
struct MinMaxScaler {
  std::vector<double> lo;
  std::vector<double> hi;

  double apply(std::size_t var, double x) const {
    const double span = hi[var] - lo[var];
    return span > 0.0 ? (x - lo[var]) / span : 0.0;
  }
  bool empty() const { return lo.empty(); }
};

struct AssembledInput {
  WindowSet windows;
  /// Variable names in input order (column-major over width then channel).
  std::vector<std::string> variables;
  MinMaxScaler scaler;
  FrameworkId framework = FrameworkId::CNN1;
  std::size_t input_width = 1;
};

/// Builds the framework-specific windows for one model over the whole series.
///
/// - CNN_1/3/6: the target series, optionally followed by temperature and
///   solar columns along width.
/// - CNN_2: `channels` (target first) stacked along width.
/// - CNN_4: width = buildings, channels = electric/heat/gas; targets ordered
///   vector-major (k = v * B + b).
/// - CNN_5: width = buildings of the target vector; one target per building.
///
/// With `opt.minmax`, every input variable is scaled by a min-max fit on
/// samples [0, fit_end); targets stay in kW.
inline AssembledInput assemble_input(const MultiEnergyDataset& ds, std::size_t building, FrameworkId fw,
                                     EnergyVector target, std::vector<EnergyVector> channels,
                                     const InputOptions& opt, std::size_t fit_end) {
  const std::size_t B = ds.num_buildings();
  AssembledInput out;
  out.framework = fw;
  std::vector<std::vector<std::span<const double>>> grid;
  std::vector<std::span<const double>> targets;
  auto need = [&](std::size_t b, EnergyVector v) {
    require(b < B, ErrorCode::ChannelUnavailable, "building " + std::to_string(b) + " does not exist");
    require(!ds.is_zero(b, v), ErrorCode::ChannelUnavailable,
            "building " + std::to_string(ds.meta[b].id) + " has no " + to_string(v) + " consumption");
    return std::span<const double>(ds.at(b, v));
  };
  auto exogenous = [&]() {
    if (opt.temperature) {
      require(ds.temperature.has_value(), ErrorCode::ChannelUnavailable, "dataset has no temperature series");
      grid.push_back({*ds.temperature});
      out.variables.push_back("temperature");
    }
    if (opt.solar) {
      require(ds.solar.has_value(), ErrorCode::ChannelUnavailable, "dataset has no solar series");
      grid.push_back({*ds.solar});
      out.variables.push_back("solar");
    }
  };
  const bool exo = opt.temperature || opt.solar;

  switch (fw) {
    case FrameworkId::CNN1:
    case FrameworkId::CNN3:
    case FrameworkId::CNN6: {
      const auto s = need(building, target);
      grid.push_back({s});
      targets.push_back(s);
      out.variables.push_back(to_string(target));
      exogenous();
      break;
    }
    case FrameworkId::CNN2: {
      require(!exo, ErrorCode::InvalidSpec, "CNN_2 does not take exogenous inputs");
      if (channels.empty() || channels.front() != target) channels.insert(channels.begin(), target);
      for (std::size_t i = 0; i < channels.size(); ++i)
        for (std::size_t j = 0; j < i; ++j)
          require(channels[i] != channels[j], ErrorCode::BadChannelCount, "duplicate input channel");
      require(channels.size() <= 3, ErrorCode::BadChannelCount, "CNN_2 takes at most 3 channels");
      for (EnergyVector v : channels) {
        grid.push_back({need(building, v)});
        out.variables.push_back(to_string(v));
      }
      targets.push_back(grid[0][0]);
      break;
    }
    case FrameworkId::CNN4: {
      require(!exo, ErrorCode::InvalidSpec, "CNN_4 does not take exogenous inputs");
      for (std::size_t b = 0; b < B; ++b) {
        std::vector<std::span<const double>> col;
        for (EnergyVector v : kVectors) {
          col.push_back(ds.at(b, v));
          out.variables.push_back(std::to_string(ds.meta[b].id) + ":" + to_string(v));
        }
        grid.push_back(col);
      }
      for (EnergyVector v : kVectors)
        for (std::size_t b = 0; b < B; ++b) targets.push_back(ds.at(b, v));
      break;
    }
    case FrameworkId::CNN5: {
      require(!exo, ErrorCode::InvalidSpec, "CNN_5 does not take exogenous inputs");
      for (std::size_t b = 0; b < B; ++b) {
        grid.push_back({ds.at(b, target)});
        targets.push_back(ds.at(b, target));
        out.variables.push_back(std::to_string(ds.meta[b].id) + ":" + to_string(target));
      }
      break;
    }
  }
  out.input_width = grid.size();

  std::vector<std::vector<double>> scaled;
  if (opt.minmax) {
    require(fit_end >= 1 && fit_end <= ds.length(), ErrorCode::InsufficientData, "scaler fit range is empty");
    scaled.reserve(grid.size() * grid[0].size());
    for (auto& col : grid)
      for (auto& s : col) {
        const auto fit = s.first(fit_end);
        const auto [mn, mx] = std::minmax_element(fit.begin(), fit.end());
        out.scaler.lo.push_back(*mn);
        out.scaler.hi.push_back(*mx);
        const std::size_t var = out.scaler.lo.size() - 1;
        std::vector<double> v(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) v[i] = out.scaler.apply(var, s[i]);
        scaled.push_back(std::move(v));
        s = scaled.back();
      }
  }
  out.windows = make_windows(grid, targets);
  return out;
}

}  // namespace mef
