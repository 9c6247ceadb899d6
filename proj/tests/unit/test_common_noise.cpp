#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mfcn/common_noise.hpp"
#include "support.hpp"

using namespace mfcn;
using namespace mfcn::test;

TEST(SamplePointPath, ZeroRateIsEmpty) {
  for (std::uint64_t s = 0; s < 20; ++s) EXPECT_TRUE(sample_point_path(rate(0.0), 1.0, s).events.empty());
}

TEST(SamplePointPath, DeterministicInSeed) {
  const auto a = sample_point_path(rate(3.0), 2.0, 99), b = sample_point_path(rate(3.0), 2.0, 99);
  EXPECT_EQ(format_point_path(a), format_point_path(b));
  EXPECT_EQ(digest(a), digest(b));
}

TEST(SamplePointPath, TimesSortedInsideHorizon) {
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto p = sample_point_path(rate(5.0), 1.5, s);
    double prev = 0.0;
    for (const auto& e : p.events) {
      EXPECT_GT(e.time, prev);
      EXPECT_LE(e.time, 1.5);
      prev = e.time;
    }
  }
}

TEST(SamplePointPath, MeanCountMatchesRate) {
  const int n = 100000;
  double sum = 0.0;
  for (int s = 0; s < n; ++s) sum += static_cast<double>(jump_count(sample_point_path(rate(2.0), 1.0, s)));
  EXPECT_NEAR(sum / n, 2.0, 3.0 * std::sqrt(2.0 / n));
}

TEST(SamplePointPath, DisjointIncrementsUncorrelated) {
  const int n = 20000;
  double sa = 0, sb = 0, sab = 0;
  for (int s = 0; s < n; ++s) {
    const auto p = sample_point_path(rate(2.0), 1.0, 1000 + s);
    const double a = static_cast<double>(counting_measure(p, 0.5));
    const double b = static_cast<double>(jump_count(p)) - a;
    sa += a;
    sb += b;
    sab += a * b;
  }
  const double cov = sab / n - (sa / n) * (sb / n);
  // Each half is Poisson(1): the covariance estimator has sd about 1/sqrt(n).
  EXPECT_NEAR(cov, 0.0, 4.0 / std::sqrt(n));
}

TEST(SamplePointPath, FiniteMarksFollowLaw) {
  IntensitySpec in = rate(4.0);
  in.marks = MarkDistribution::finite({{-1.0}, {2.0}}, {0.25, 0.75});
  double hits = 0, total = 0;
  for (std::uint64_t s = 0; s < 5000; ++s) {
    for (const auto& e : sample_point_path(in, 1.0, s).events) {
      total += 1;
      if (e.mark[0] == 2.0) hits += 1;
      else EXPECT_EQ(e.mark[0], -1.0);
    }
  }
  EXPECT_NEAR(hits / total, 0.75, 4.0 * std::sqrt(0.75 * 0.25 / total));
}

TEST(CountingMeasure, Examples) {
  const auto empty = make_point_path(1.0, {});
  for (double t : {0.0, 0.5, 1.0}) EXPECT_EQ(counting_measure(empty, t), 0u);
  const auto p = two_jump_path();
  EXPECT_EQ(counting_measure(p, 0.5), 1u);
  EXPECT_EQ(counting_measure(p, 0.3), 1u);  // right-continuous
  EXPECT_EQ(counting_measure(p, 0.2999999), 0u);
  EXPECT_EQ(counting_measure(p, 1.0, [](std::span<const double>) { return false; }), 0u);
  EXPECT_EQ(jump_count(p), counting_measure(p, 1.0));
  EXPECT_THROW(counting_measure(p, 1.5), std::out_of_range);
  EXPECT_THROW(counting_measure(p, -0.1), std::out_of_range);
}

TEST(JumpCount, ThreeEvents) {
  EXPECT_EQ(jump_count(make_point_path(1.0, {{0.1, {1.0}}, {0.2, {1.0}}, {0.9, {1.0}}})), 3u);
}

TEST(MakePointPath, RejectsBadTimes) {
  EXPECT_THROW(make_point_path(1.0, {{0.5, {1.0}}, {0.5, {1.0}}}), std::invalid_argument);
  EXPECT_THROW(make_point_path(1.0, {{0.0, {1.0}}}), std::invalid_argument);
  EXPECT_THROW(make_point_path(1.0, {{1.2, {1.0}}}), std::invalid_argument);
}

TEST(PointPathText, RoundTripIsBitExact) {
  const auto p = sample_point_path(rate(6.0), 1.0, 1234);
  std::stringstream ss;
  write_point_path(ss, p);
  const auto q = read_point_path(ss);
  ASSERT_EQ(q.events.size(), p.events.size());
  for (std::size_t i = 0; i < p.events.size(); ++i) {
    EXPECT_EQ(q.events[i].time, p.events[i].time);
    EXPECT_EQ(q.events[i].mark, p.events[i].mark);
  }
  EXPECT_EQ(q.horizon, p.horizon);
  EXPECT_EQ(q.source_seed, p.source_seed);
  EXPECT_EQ(digest(q), digest(p));
}

TEST(PointPathText, MissingMarkDefaultsToOne) {
  std::istringstream in("horizon 1\nseed 0\n0.25\n");
  const auto p = read_point_path(in);
  ASSERT_EQ(p.events.size(), 1u);
  EXPECT_EQ(p.events[0].mark, Vector{1.0});
}
