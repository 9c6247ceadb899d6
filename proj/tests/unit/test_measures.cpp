#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>
#include <vector>

#include "mfcn/measures.hpp"
#include "mfcn/rng.hpp"

using namespace mfcn;

namespace {

// Optimal assignment by enumerating permutations (equal-size uniform clouds).
double brute_w2(const ParticleCloud& a, const ParticleCloud& b) {
  std::vector<std::size_t> perm(a.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = INFINITY;
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      for (std::size_t d = 0; d < a.dim(); ++d) {
        const double diff = a.point(i)[d] - b.point(perm[i])[d];
        c += diff * diff;
      }
    }
    best = std::min(best, c / static_cast<double>(a.size()));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best);
}

ParticleCloud random_cloud(StreamRng& rng, std::size_t n, std::size_t dim) {
  std::vector<double> pts(n * dim);
  for (double& v : pts) v = rng.normal();
  return ParticleCloud(dim, pts);
}

PiecewisePath step_path(double jump, double height) {
  auto grid = std::make_shared<std::vector<double>>();
  for (int k = 0; k <= 20; ++k) grid->push_back(k / 20.0);
  PiecewisePath p;
  p.grid = grid;
  for (double t : *grid) p.values.push_back(t >= jump - 1e-12 ? height : 0.0);
  p.jump_times = {jump};
  return p;
}

PiecewisePath constant_path(double v) {
  auto grid = std::make_shared<std::vector<double>>(std::vector<double>{0.0, 0.5, 1.0});
  PiecewisePath p;
  p.grid = grid;
  p.values = {v, v, v};
  return p;
}

}  // namespace

TEST(Wasserstein, TwoDiracs) {
  EXPECT_DOUBLE_EQ(wasserstein2(ParticleCloud(1, {0.0}), ParticleCloud(1, {1.0})).value, 1.0);
}

TEST(Wasserstein, IdenticalClouds) {
  const ParticleCloud a(1, {0.3, -1.0, 2.5});
  EXPECT_DOUBLE_EQ(wasserstein2(a, a).value, 0.0);
}

TEST(Wasserstein, ShiftedPairMatchesBruteForce) {
  const ParticleCloud a(1, {0.0, 2.0}), b(1, {1.0, 3.0});
  EXPECT_NEAR(brute_w2(a, b), 1.0, 1e-15);
  EXPECT_NEAR(wasserstein2(a, b).value, 1.0, 1e-12);
}

TEST(Wasserstein, RelabelingInvariance) {
  const ParticleCloud a(2, {0, 0, 1, 2, 3, -1}), b(2, {3, -1, 0, 0, 1, 2});
  EXPECT_NEAR(wasserstein2(a, b).value, 0.0, 1e-12);
}

TEST(Wasserstein, MatchesBruteForceInTwoDimensions) {
  StreamRng rng(17);
  for (int rep = 0; rep < 10; ++rep) {
    const auto a = random_cloud(rng, 6, 2), b = random_cloud(rng, 6, 2);
    const auto r = wasserstein2(a, b);
    EXPECT_EQ(r.method, TransportMethod::network_simplex);
    EXPECT_NEAR(r.value, brute_w2(a, b), 1e-9);
  }
}

TEST(Wasserstein, MetricAxiomsOnRandomTriples) {
  StreamRng rng(23);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t dim = 1 + rep % 2;
    const auto a = random_cloud(rng, 12, dim), b = random_cloud(rng, 12, dim),
               c = random_cloud(rng, 12, dim);
    const double ab = wasserstein2(a, b).value, ba = wasserstein2(b, a).value;
    EXPECT_NEAR(ab, ba, 1e-9);
    EXPECT_LE(ab, wasserstein2(a, c).value + wasserstein2(c, b).value + 1e-9);
  }
}

TEST(Wasserstein, OneDimensionalAgreesWithTransportLp) {
  StreamRng rng(29);
  WassersteinOptions lp;
  lp.force_network_simplex = true;
  for (int rep = 0; rep < 10; ++rep) {
    const auto a = random_cloud(rng, 15, 1), b = random_cloud(rng, 11, 1);
    const auto exact = wasserstein2(a, b);
    const auto simplex = wasserstein2(a, b, lp);
    EXPECT_EQ(exact.method, TransportMethod::exact_1d);
    EXPECT_EQ(simplex.method, TransportMethod::network_simplex);
    EXPECT_NEAR(exact.value, simplex.value, 1e-9);
  }
}

TEST(Wasserstein, WeightedOneDimensional) {
  // Mass 3/4 at 0 and 1/4 at 4 against a Dirac at 1: cost 3/4 * 1 + 1/4 * 9.
  const ParticleCloud a(1, {0.0, 4.0}, {0.75, 0.25});
  EXPECT_NEAR(wasserstein2(a, ParticleCloud(1, {1.0})).value, std::sqrt(3.0), 1e-12);
}

TEST(Wasserstein, RejectsDimensionMismatch) {
  EXPECT_THROW(wasserstein2(ParticleCloud(1, {0.0}), ParticleCloud(2, {0.0, 0.0})),
               std::invalid_argument);
}

TEST(Wasserstein, SlicedAboveLpCutoff) {
  StreamRng rng(31);
  const auto a = random_cloud(rng, 50, 2), b = random_cloud(rng, 50, 2);
  WassersteinOptions small;
  small.lp_size_limit = 100;
  const auto r = wasserstein2(a, b, small);
  EXPECT_EQ(r.method, TransportMethod::sliced);
  EXPECT_EQ(r.projections, 64u);
  // Sliced W2 never exceeds the exact value.
  EXPECT_LE(r.value, wasserstein2(a, b).value + 1e-12);
}

TEST(ParticleCloud, RejectsBadInput) {
  EXPECT_THROW(ParticleCloud(1, {}), std::invalid_argument);
  EXPECT_THROW(ParticleCloud(1, {0.0, NAN}), std::invalid_argument);
  EXPECT_THROW(ParticleCloud(1, {0.0, 1.0}, {0.5, 0.6}), std::invalid_argument);
}

TEST(Moment, Examples) {
  EXPECT_DOUBLE_EQ(moment(ParticleCloud(1, {0.0}), 2.0), 0.0);
  EXPECT_NEAR(moment(ParticleCloud(1, {-1.0, 1.0}), 2.0), 1.0, 1e-15);
  EXPECT_NEAR(moment(ParticleCloud(1, {0.0, 1.0, 2.0, 3.0}), 4.0), std::pow(98.0 / 4.0, 0.25),
              1e-14);
}

TEST(Moment, NondecreasingInOrderOutsideUnitBall) {
  StreamRng rng(37);
  std::vector<double> pts(40);
  for (double& v : pts) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (1.0 + 3.0 * rng.uniform());
  const ParticleCloud c(1, pts);
  double prev = 0.0;
  for (double p = 1.0; p <= 8.0; p += 0.5) {
    const double m = moment(c, p);
    EXPECT_GE(m, prev - 1e-12);
    prev = m;
  }
}

TEST(Skorokhod, IdenticalPaths) {
  const auto a = step_path(0.4, 1.0);
  EXPECT_NEAR(skorokhod_distance_restricted(a, a).value, 0.0, 1e-15);
}

TEST(Skorokhod, ShiftedStepsAlignByTimeChange) {
  const auto r = skorokhod_distance_restricted(step_path(0.4, 1.0), step_path(0.5, 1.0));
  EXPECT_FALSE(r.identity_only);
  EXPECT_NEAR(r.value, 0.1, 1e-12);
}

TEST(Skorokhod, ContinuousConstants) {
  EXPECT_NEAR(skorokhod_distance_restricted(constant_path(0.0), constant_path(0.3)).value, 0.3,
              1e-15);
}

TEST(Skorokhod, BoundedBySupNorm) {
  const auto a = step_path(0.4, 1.0), b = step_path(0.45, 1.2);
  double sup = 0.0;
  for (int k = 0; k <= 1000; ++k) {
    const double t = k / 1000.0;
    sup = std::max(sup, std::abs(a.at(t)[0] - b.at(t)[0]));
  }
  EXPECT_LE(skorokhod_distance_restricted(a, b).value, sup + 1e-12);
}

TEST(Skorokhod, DifferentJumpCountsFallBackToIdentity) {
  const auto r = skorokhod_distance_restricted(step_path(0.4, 1.0), constant_path(0.0));
  EXPECT_TRUE(r.identity_only);
  EXPECT_NEAR(r.value, 1.0, 1e-12);
}

TEST(FlowCsv, HeaderAndRows) {
  MeasureFlow flow;
  flow.grid = {0.0, 1.0};
  flow.clouds = {ParticleCloud(1, {0.0, 1.0}), ParticleCloud(1, {0.5, 1.5})};
  std::ostringstream os;
  write_flow_csv(os, flow);
  const std::string s = os.str();
  EXPECT_EQ(s.substr(0, s.find('\n')), "time,index,x0,weight");
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 5);
}
