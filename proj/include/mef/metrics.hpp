#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mef/error.hpp"

namespace mef {

namespace detail {

inline void check_pair(std::span<const double> y, std::span<const double> p) {
  require(!y.empty(), ErrorCode::EmptyList, "metric over an empty series");
  require(y.size() == p.size(), ErrorCode::LengthMismatch,
          "actual and predicted lengths differ: " + std::to_string(y.size()) + " vs " + std::to_string(p.size()));
}

}  // namespace detail

/// Root-mean-square error normalized by the largest actual value.
inline double nrmse(std::span<const double> y, std::span<const double> p) {
  detail::check_pair(y, p);
  double se = 0.0;
  double mx = y[0];
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = p[i] - y[i];
    se += e * e;
    mx = std::max(mx, y[i]);
  }
  require(mx > 0.0, ErrorCode::NonPositiveMax, "nrmse needs a positive maximum actual value");
  return std::sqrt(se / static_cast<double>(y.size())) / mx;
}

/// 10 log10(signal energy / residual energy). A zero residual gives +inf,
/// a zero signal with non-zero residual gives -inf.
inline double snr_db(std::span<const double> y, std::span<const double> p) {
  detail::check_pair(y, p);
  double sig = 0.0, err = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = p[i] - y[i];
    sig += y[i] * y[i];
    err += e * e;
  }
  if (err == 0.0) return std::numeric_limits<double>::infinity();
  if (sig == 0.0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(sig / err);
}

struct MapeResult {
  std::optional<double> value;
  std::size_t excluded = 0;
  std::size_t included = 0;
};

/// Mean absolute percentage error over the points with non-zero actuals.
inline MapeResult mape_pct(std::span<const double> y, std::span<const double> p) {
  detail::check_pair(y, p);
  MapeResult r;
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == 0.0) {
      ++r.excluded;
      continue;
    }
    acc += std::abs((y[i] - p[i]) / y[i]);
    ++r.included;
  }
  if (r.included > 0) r.value = acc / static_cast<double>(r.included) * 100.0;
  return r;
}

/// Element-wise sum over buildings (rows); every row must share one length.
inline std::vector<double> network_total(const std::vector<std::vector<double>>& per_building) {
  require(!per_building.empty(), ErrorCode::EmptyList, "no building series to sum");
  const std::size_t T = per_building[0].size();
  std::vector<double> total(T, 0.0);
  for (std::size_t b = 0; b < per_building.size(); ++b) {
    require(per_building[b].size() == T, ErrorCode::RaggedInput,
            "building row " + std::to_string(b) + " has length " + std::to_string(per_building[b].size()) +
                ", expected " + std::to_string(T));
    for (std::size_t t = 0; t < T; ++t) total[t] += per_building[b][t];
  }
  return total;
}

inline constexpr double kSnrThresholdDb = 8.0;
inline constexpr double kNrmseThreshold = 0.15;

struct MetricReport {
  double snr_db = 0.0;
  double nrmse = 0.0;
  std::optional<double> mape_pct;
  std::size_t n_excluded_zero_targets = 0;
  std::size_t n = 0;

  bool acceptable() const { return snr_db > kSnrThresholdDb && nrmse < kNrmseThreshold; }
};

inline MetricReport evaluate(std::span<const double> y, std::span<const double> p) {
  MetricReport r;
  r.snr_db = snr_db(y, p);
  r.nrmse = nrmse(y, p);
  const MapeResult m = mape_pct(y, p);
  r.mape_pct = m.value;
  r.n_excluded_zero_targets = m.excluded;
  r.n = y.size();
  return r;
}

/// Metrics per consecutive block of `block` samples (one day by default);
/// blocks whose actuals have no positive value get a NaN nrmse.
struct DailyBreakdown {
  std::vector<double> snr_db;
  std::vector<double> nrmse;

  /// Means over the finite entries.
  double mean_snr_db() const { return finite_mean(snr_db); }
  double mean_nrmse() const { return finite_mean(nrmse); }

 private:
  static double finite_mean(const std::vector<double>& v) {
    double s = 0.0;
    std::size_t n = 0;
    for (double x : v)
      if (std::isfinite(x)) {
        s += x;
        ++n;
      }
    return n == 0 ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(n);
  }
};

inline DailyBreakdown per_day(std::span<const double> y, std::span<const double> p, std::size_t block = 48) {
  detail::check_pair(y, p);
  require(block >= 1, ErrorCode::InvalidSpec, "block must be >= 1");
  DailyBreakdown d;
  for (std::size_t s = 0; s + block <= y.size(); s += block) {
    const auto yb = y.subspan(s, block), pb = p.subspan(s, block);
    d.snr_db.push_back(snr_db(yb, pb));
    const bool positive = std::any_of(yb.begin(), yb.end(), [](double v) { return v > 0.0; });
    d.nrmse.push_back(positive ? nrmse(yb, pb) : std::numeric_limits<double>::quiet_NaN());
  }
  return d;
}

// ---------------------------------------------------------------------------
// Serialization

/// Text form of a metric value: `inf`, `-inf`, `undefined` or %.17g.
inline std::string metric_text(double v) {
  if (std::isnan(v)) return "undefined";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string metric_text(const std::optional<double>& v) { return v ? metric_text(*v) : "undefined"; }

inline nlohmann::json metric_json(double v) {
  if (std::isfinite(v)) return v;
  return metric_text(v);
}

inline nlohmann::json to_json(const MetricReport& r) {
  return {{"snr_db", metric_json(r.snr_db)},
          {"nrmse", metric_json(r.nrmse)},
          {"mape_pct", r.mape_pct ? metric_json(*r.mape_pct) : nlohmann::json("undefined")},
          {"n_excluded_zero_targets", r.n_excluded_zero_targets},
          {"n", r.n},
          {"acceptable", r.acceptable()}};
}

/// Identifies what a metrics row describes. `entity` is a building id or
/// "total" for the network aggregate.
struct MetricKey {
  std::string framework;
  std::string vector;
  std::string split;
  std::string entity;
};

inline constexpr const char* kMetricsCsvHeader = "framework,vector,split,entity,snr_db,nrmse,mape_pct,n_excluded";

inline void write_metrics_row(std::ostream& os, const MetricKey& k, const MetricReport& r) {
  os << k.framework << ',' << k.vector << ',' << k.split << ',' << k.entity << ',' << metric_text(r.snr_db) << ','
     << metric_text(r.nrmse) << ',' << metric_text(r.mape_pct) << ',' << r.n_excluded_zero_targets << '\n';
}

}  // namespace mef
