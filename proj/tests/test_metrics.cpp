#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "mef/metrics.hpp"
#include "oracles.hpp"

using namespace mef;

namespace {

using Vec = std::vector<double>;

struct Pair {
  Vec y, p;
};

Pair random_pair(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> len(1, 200);
  std::uniform_real_distribution<double> val(0.1, 50.0);
  std::normal_distribution<double> noise(0.0, 2.0);
  Pair r;
  r.y.resize(len(rng));
  r.p.resize(r.y.size());
  for (std::size_t i = 0; i < r.y.size(); ++i) {
    r.y[i] = val(rng);
    r.p[i] = r.y[i] + noise(rng);
  }
  return r;
}

}  // namespace

TEST(Nrmse, HandValues) {
  EXPECT_NEAR(nrmse(Vec{2, 4}, Vec{2, 2}), 0.353553, 1e-6);
  EXPECT_EQ(nrmse(Vec{2, 4}, Vec{2, 4}), 0.0);
}

TEST(Nrmse, Errors) {
  auto code = [](auto f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoError;
  };
  EXPECT_EQ(code([] { nrmse(Vec{0, 0}, Vec{1, 1}); }), ErrorCode::NonPositiveMax);
  EXPECT_EQ(code([] { nrmse(Vec{-1, -2}, Vec{1, 1}); }), ErrorCode::NonPositiveMax);
  EXPECT_EQ(code([] { nrmse(Vec{1, 2}, Vec{1}); }), ErrorCode::LengthMismatch);
  EXPECT_EQ(code([] { snr_db(Vec{}, Vec{}); }), ErrorCode::EmptyList);
}

TEST(Snr, HandValuesAndMarkers) {
  EXPECT_NEAR(snr_db(Vec{3, 4}, Vec{3, 3}), 13.9794, 1e-4);
  EXPECT_EQ(snr_db(Vec{3, 4}, Vec{3, 4}), std::numeric_limits<double>::infinity());
  EXPECT_EQ(snr_db(Vec{0, 0}, Vec{1, 0}), -std::numeric_limits<double>::infinity());
}

TEST(Mape, HandValuesAndExclusion) {
  const MapeResult a = mape_pct(Vec{100}, Vec{90});
  ASSERT_TRUE(a.value);
  EXPECT_DOUBLE_EQ(*a.value, 10.0);
  EXPECT_EQ(*mape_pct(Vec{1, 2, 3}, Vec{1, 2, 3}).value, 0.0);

  const MapeResult b = mape_pct(Vec{0, 50, 0, 200}, Vec{3, 25, 1, 200});
  EXPECT_EQ(b.excluded, 2u);
  EXPECT_EQ(b.included + b.excluded, 4u);
  EXPECT_DOUBLE_EQ(*b.value, 25.0);

  const MapeResult z = mape_pct(Vec{0, 0}, Vec{1, 2});
  EXPECT_FALSE(z.value);
  EXPECT_EQ(z.excluded, 2u);
}

TEST(Metrics, AgreeWithOracleOnRandomSeries) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const Pair s = random_pair(rng);
    EXPECT_NEAR(nrmse(s.y, s.p), oracle::nrmse(s.y, s.p), 1e-12);
    EXPECT_NEAR(snr_db(s.y, s.p), oracle::snr_db(s.y, s.p), 1e-12);
    EXPECT_NEAR(*mape_pct(s.y, s.p).value, oracle::mape_pct(s.y, s.p), 1e-12);
  }
}

TEST(Metrics, ScalingInvariance) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const Pair s = random_pair(rng);
    for (double c : {0.001, 3.0, 1e4}) {
      Vec ys = s.y, ps = s.p;
      for (auto& v : ys) v *= c;
      for (auto& v : ps) v *= c;
      EXPECT_NEAR(nrmse(ys, ps), nrmse(s.y, s.p), 1e-12);
      EXPECT_NEAR(snr_db(ys, ps), snr_db(s.y, s.p), 1e-9);
    }
    Vec yn = s.y, pn = s.p;
    for (auto& v : yn) v = -v;
    for (auto& v : pn) v = -v;
    EXPECT_NEAR(snr_db(yn, pn), snr_db(s.y, s.p), 1e-12);
  }
}

TEST(Snr, DecreasesWithResidualEnergy) {
  const Vec y{5, 6, 7, 8};
  double prev = std::numeric_limits<double>::infinity();
  for (double e : {0.01, 0.1, 0.5, 1.0, 3.0}) {
    const Vec p{5 + e, 6 - e, 7 + e, 8};
    const double s = snr_db(y, p);
    EXPECT_LT(s, prev);
    prev = s;
  }
}

TEST(NetworkTotal, Examples) {
  EXPECT_EQ(network_total({{1.5, 2.5}}), (Vec{1.5, 2.5}));
  EXPECT_EQ(network_total({{3, 3, 3}, {4, 4, 4}}), (Vec{7, 7, 7}));
  EXPECT_THROW(network_total({{1, 2}, {1}}), Error);

  std::mt19937_64 rng(39);
  std::uniform_real_distribution<double> val(0.0, 500.0);
  std::vector<Vec> rows(39, Vec(1488));
  for (auto& r : rows)
    for (auto& v : r) v = val(rng);
  const Vec total = network_total(rows);
  for (std::size_t t = 0; t < 1488; ++t) {
    long double acc = 0.0L;  // reverse order, extended precision
    for (std::size_t b = 39; b-- > 0;) acc += rows[b][t];
    ASSERT_NEAR(total[t], static_cast<double>(acc), 1e-9);
  }
}

TEST(Report, AcceptableFlag) {
  MetricReport r;
  r.snr_db = 8.5;
  r.nrmse = 0.1;
  EXPECT_TRUE(r.acceptable());
  r.snr_db = 8.0;
  EXPECT_FALSE(r.acceptable());
  r.snr_db = 20.0;
  r.nrmse = 0.15;
  EXPECT_FALSE(r.acceptable());

  const MetricReport e = evaluate(Vec{0, 50, 100}, Vec{1, 45, 100});
  EXPECT_EQ(e.n, 3u);
  EXPECT_EQ(e.n_excluded_zero_targets, 1u);
  EXPECT_DOUBLE_EQ(*e.mape_pct, 5.0);
}

TEST(Report, Serialization) {
  const MetricReport perfect = evaluate(Vec{0, 2}, Vec{0, 2});
  const nlohmann::json j = to_json(perfect);
  EXPECT_EQ(j["snr_db"], "inf");
  EXPECT_EQ(j["nrmse"], 0.0);
  EXPECT_EQ(j["n_excluded_zero_targets"], 1);
  EXPECT_EQ(j["acceptable"], true);

  std::ostringstream os;
  write_metrics_row(os, {"CNN_1", "electric", "test", "total"}, evaluate(Vec{3, 4}, Vec{3, 3}));
  EXPECT_EQ(os.str().substr(0, 30), "CNN_1,electric,test,total,13.9");
  EXPECT_EQ(std::string(kMetricsCsvHeader), "framework,vector,split,entity,snr_db,nrmse,mape_pct,n_excluded");
}

TEST(PerDay, BreakdownMatchesBlocks) {
  Vec y(96), p(96);
  for (std::size_t i = 0; i < 96; ++i) {
    y[i] = i < 48 ? 0.0 : 10.0 + static_cast<double>(i % 5);
    p[i] = y[i] + 0.5;
  }
  const DailyBreakdown d = per_day(y, p);
  ASSERT_EQ(d.snr_db.size(), 2u);
  EXPECT_TRUE(std::isnan(d.nrmse[0]));
  EXPECT_EQ(d.snr_db[0], -std::numeric_limits<double>::infinity());
  const std::span<const double> ys(y), ps(p);
  EXPECT_EQ(d.nrmse[1], nrmse(ys.subspan(48), ps.subspan(48)));
  EXPECT_EQ(d.mean_nrmse(), d.nrmse[1]);
  EXPECT_EQ(d.mean_snr_db(), d.snr_db[1]);
}
