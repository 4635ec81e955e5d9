#include <gtest/gtest.h>

#include <random>

#include "agln/trainer.hpp"
#include "../support/temp_dir.hpp"

using namespace agln;

namespace {

LossLog log_of(const std::vector<double>& cyc) {
  LossLog log;
  for (std::size_t i = 0; i < cyc.size(); ++i) log.append({i + 1, 2 * cyc[i], cyc[i], 0.25, 0.5});
  return log;
}

// Trailing mean computed from scratch at every emitted index.
std::vector<SmoothedPoint> smooth_oracle(const std::vector<double>& xs, std::size_t window, std::size_t stride) {
  std::vector<SmoothedPoint> out;
  for (std::size_t k = 1; k <= xs.size(); ++k) {
    if (k % stride != 0) continue;
    const std::size_t n = std::min(window, k);
    double acc = 0.0;
    for (std::size_t i = k - n; i < k; ++i) acc += xs[i];
    out.push_back({k, acc / static_cast<double>(n)});
  }
  return out;
}

}  // namespace

TEST(SmoothLog, ConstantSeriesStaysConstant) {
  const auto pts = smooth_log(log_of(std::vector<double>(1000, 0.75)), LossField::loss_cyc);
  ASSERT_EQ(pts.size(), 100u);
  for (const auto& p : pts) EXPECT_EQ(p.value, 0.75);
}

TEST(SmoothLog, FortyThousandRecordsGiveFourThousandPoints) {
  const auto pts = smooth_log(log_of(std::vector<double>(40000, 1.0)), LossField::loss_g, 300, 10);
  EXPECT_EQ(pts.size(), 4000u);
  EXPECT_EQ(pts.front().iter, 10u);
  EXPECT_EQ(pts.back().iter, 40000u);
}

TEST(SmoothLog, RampMeanOfLastWindow) {
  std::vector<double> ramp;
  for (int i = 1; i <= 600; ++i) ramp.push_back(i);
  const auto pts = smooth_log(log_of(ramp), LossField::loss_cyc, 300, 10);
  ASSERT_EQ(pts.back().iter, 600u);
  EXPECT_EQ(pts.back().value, 450.5);
  // Before the window fills, the mean covers all records so far: mean(1..10).
  EXPECT_EQ(pts.front().value, 5.5);
}

TEST(SmoothLog, MatchesDirectSummationOracle) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (std::size_t trial = 0; trial < 5; ++trial) {
    std::vector<double> xs(1234 + trial * 97);
    for (auto& x : xs) x = u(rng);
    const auto got = smooth_log(log_of(xs), LossField::loss_cyc, 300, 10);
    const auto want = smooth_oracle(xs, 300, 10);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].iter, want[i].iter);
      EXPECT_EQ(got[i].value, want[i].value);
    }
  }
}

TEST(SmoothLog, EmptyLogGivesEmptySeries) { EXPECT_TRUE(smooth_log(LossLog{}, LossField::loss_g).empty()); }

TEST(SmoothLog, RejectsZeroWindowOrStride) {
  EXPECT_THROW(smooth_log(LossLog{}, LossField::loss_g, 0, 10), std::invalid_argument);
  EXPECT_THROW(smooth_log(LossLog{}, LossField::loss_g, 300, 0), std::invalid_argument);
}

TEST(LossLog, RejectsNonIncreasingIterations) {
  LossLog log;
  log.append({1, 0, 0, 0, 0});
  EXPECT_THROW(log.append({1, 0, 0, 0, 0}), std::invalid_argument);
  EXPECT_THROW(log.append({0, 0, 0, 0, 0}), std::invalid_argument);
}

TEST(LossLog, CsvRoundTripIsExact) {
  agln::testing::TempDir dir;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  LossLog log;
  for (std::uint64_t i = 1; i <= 50; ++i) log.append({i, u(rng), u(rng), u(rng), u(rng)});
  log.write_csv(dir / "loss.csv");
  EXPECT_EQ(LossLog::read_csv(dir / "loss.csv").records(), log.records());
}
