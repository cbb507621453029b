#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mef/data.hpp"
#include "mef/error.hpp"

namespace mef {

inline constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();
inline bool is_undefined(double r) { return std::isnan(r); }

/// Pearson r of two equally long blocks; NaN when either side has zero variance.
inline double pearson(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return kUndefined;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Mean of block-wise Pearson r over aligned blocks of `window` samples taken
/// every `step` samples. Degenerate blocks are skipped; NaN if all are.
inline double sliding_mean_correlation(std::span<const double> x, std::span<const double> y,
                                       std::size_t window = kWindow, std::size_t step = kWindow) {
  require(x.size() == y.size(), ErrorCode::LengthMismatch,
          "correlation inputs differ in length: " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  require(window >= 2 && step >= 1, ErrorCode::InvalidSpec, "window must be >= 2 and step >= 1");
  require(x.size() >= window, ErrorCode::SeriesTooShort,
          "series of length " + std::to_string(x.size()) + " is shorter than the window");
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t s = 0; s + window <= x.size(); s += step) {
    const double r = pearson(x.subspan(s, window), y.subspan(s, window));
    if (is_undefined(r)) continue;
    sum += r;
    ++used;
  }
  return used == 0 ? kUndefined : sum / static_cast<double>(used);
}

/// Dense labelled matrix of correlation values; NaN marks Undefined.
struct CorrTable {
  std::vector<std::string> rows;
  std::vector<std::string> cols;
  std::vector<double> values;

  CorrTable() = default;
  CorrTable(std::vector<std::string> r, std::vector<std::string> c)
      : rows(std::move(r)), cols(std::move(c)), values(rows.size() * cols.size(), kUndefined) {}

  double& at(std::size_t r, std::size_t c) { return values[r * cols.size() + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols.size() + c]; }

  /// Heat-map long format: one line per cell.
  void write_long_csv(std::ostream& os) const {
    os << "row_signal,col_entity,r\n";
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < cols.size(); ++c) {
        os << rows[r] << ',' << cols[c] << ',';
        if (is_undefined(at(r, c))) os << "undefined";
        else os << format_double(at(r, c));
        os << '\n';
      }
  }
};

/// Sample range [begin, end) over which correlations are averaged.
struct Period {
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Candidate previous-day signals: the three vectors of `building` plus the
/// weather series present in the dataset.
inline std::vector<std::pair<std::string, std::span<const double>>> candidate_signals(const MultiEnergyDataset& ds,
                                                                                       std::size_t building) {
  std::vector<std::pair<std::string, std::span<const double>>> out;
  for (EnergyVector v : kVectors) out.emplace_back("prev_" + to_string(v), ds.at(building, v));
  if (ds.temperature) out.emplace_back("prev_temperature", *ds.temperature);
  if (ds.solar) out.emplace_back("prev_solar", *ds.solar);
  return out;
}

namespace detail {

/// Correlation of previous-day `candidate` with next-day `target` over whole
/// days of `p`.
inline double next_prev(std::span<const double> candidate, std::span<const double> target, Period p) {
  const std::size_t len = p.end - p.begin;
  require(len >= 2 * kSamplesPerDay, ErrorCode::SeriesTooShort, "correlation period must cover >= 2 days");
  return sliding_mean_correlation(candidate.subspan(p.begin, len - kSamplesPerDay),
                                  target.subspan(p.begin + kSamplesPerDay, len - kSamplesPerDay));
}

inline Period whole(const MultiEnergyDataset& ds, Period p) {
  if (p.end == 0) p.end = ds.length();
  require(p.begin < p.end && p.end <= ds.length(), ErrorCode::InvalidSpec, "correlation period out of range");
  return p;
}

}  // namespace detail

/// Previous-day candidates (rows) against next-day consumption of `target`
/// for every building (cols). Zero-consumption buildings are all Undefined.
inline CorrTable next_prev_correlation_matrix(const MultiEnergyDataset& ds, EnergyVector target, Period period = {}) {
  period = detail::whole(ds, period);
  std::vector<std::string> rows;
  for (const auto& c : candidate_signals(ds, 0)) rows.push_back(c.first);
  std::vector<std::string> cols;
  for (const auto& m : ds.meta) cols.push_back("building_" + std::to_string(m.id));
  CorrTable t(rows, cols);
  for (std::size_t b = 0; b < ds.num_buildings(); ++b) {
    if (ds.is_zero(b, target)) continue;
    const auto cands = candidate_signals(ds, b);
    for (std::size_t r = 0; r < cands.size(); ++r) t.at(r, b) = detail::next_prev(cands[r].second, ds.at(b, target), period);
  }
  return t;
}

/// One building's previous-day candidates (rows) against its next-day
/// electric/heat/gas consumption (cols).
inline CorrTable building_correlation(const MultiEnergyDataset& ds, std::size_t building, Period period = {}) {
  period = detail::whole(ds, period);
  const auto cands = candidate_signals(ds, building);
  std::vector<std::string> rows;
  for (const auto& c : cands) rows.push_back(c.first);
  std::vector<std::string> cols;
  for (EnergyVector v : kVectors) cols.push_back("next_" + to_string(v));
  CorrTable t(rows, cols);
  for (std::size_t r = 0; r < cands.size(); ++r)
    for (EnergyVector v : kVectors)
      if (!ds.is_zero(building, v)) t.at(r, index(v)) = detail::next_prev(cands[r].second, ds.at(building, v), period);
  return t;
}

/// Symmetric matrix of same-time block correlations between every pair of
/// buildings with a non-zero `vector` series.
inline CorrTable cross_building_correlation(const MultiEnergyDataset& ds, EnergyVector vector, Period period = {}) {
  period = detail::whole(ds, period);
  const auto nz = ds.nonzero_buildings(vector);
  require(!nz.empty(), ErrorCode::InsufficientData, "no building has non-zero " + to_string(vector) + " consumption");
  std::vector<std::string> names;
  for (std::size_t b : nz) names.push_back("building_" + std::to_string(ds.meta[b].id));
  CorrTable t(names, names);
  const std::size_t len = period.end - period.begin;
  for (std::size_t i = 0; i < nz.size(); ++i) {
    const std::span<const double> a = std::span<const double>(ds.at(nz[i], vector)).subspan(period.begin, len);
    t.at(i, i) = is_undefined(sliding_mean_correlation(a, a)) ? kUndefined : 1.0;
    for (std::size_t j = i + 1; j < nz.size(); ++j) {
      const std::span<const double> b = std::span<const double>(ds.at(nz[j], vector)).subspan(period.begin, len);
      t.at(i, j) = t.at(j, i) = sliding_mean_correlation(a, b);
    }
  }
  return t;
}

/// Mean of the defined off-diagonal entries of a square table.
inline double off_diagonal_mean(const CorrTable& t) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    for (std::size_t j = 0; j < t.cols.size(); ++j)
      if (i != j && !is_undefined(t.at(i, j))) {
        s += t.at(i, j);
        ++n;
      }
  return n == 0 ? kUndefined : s / static_cast<double>(n);
}

/// Input vectors for predicting `target`: the same vector first, then every
/// other vector the building is physically coupled through whose previous-day
/// correlation with the next-day target reaches `threshold`, in
/// electric/heat/gas order. `corr` is a `building_correlation` table.
inline std::vector<EnergyVector> select_input_channels(const CorrTable& corr, const BuildingMeta& meta,
                                                       EnergyVector target, double threshold = 0.3) {
  auto cell = [&](EnergyVector from) {
    const std::string row = "prev_" + to_string(from), col = "next_" + to_string(target);
    for (std::size_t r = 0; r < corr.rows.size(); ++r)
      if (corr.rows[r] == row)
        for (std::size_t c = 0; c < corr.cols.size(); ++c)
          if (corr.cols[c] == col) return corr.at(r, c);
    throw Error(ErrorCode::InvalidSpec, "correlation table lacks " + row + " x " + col);
  };
  require(!is_undefined(cell(target)), ErrorCode::UndefinedCorrelation,
          "building " + std::to_string(meta.id) + " has a degenerate " + to_string(target) + " series");
  std::vector<EnergyVector> out{target};
  if (!meta.coupled[index(target)]) return out;
  for (EnergyVector v : kVectors) {
    if (v == target || !meta.coupled[index(v)]) continue;
    const double r = cell(v);
    if (!is_undefined(r) && r >= threshold) out.push_back(v);
  }
  return out;
}

}  // namespace mef
