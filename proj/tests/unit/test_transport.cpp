#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mfcn/rng.hpp"
#include "mfcn/transport.hpp"

using namespace mfcn;

namespace {

double assignment_oracle(const std::vector<double>& cost, std::size_t n) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = INFINITY;
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) c += cost[i * n + perm[i]];
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(n);
}

}  // namespace

TEST(Transport, AssignmentMatchesEnumeration) {
  StreamRng rng(41);
  for (int rep = 0; rep < 25; ++rep) {
    const std::size_t n = 3 + rep % 4;
    std::vector<double> cost(n * n);
    for (double& c : cost) c = rng.uniform(0.0, 10.0);
    const std::vector<double> mass(n, 1.0 / static_cast<double>(n));
    const auto sol = solve_transport(mass, mass, cost);
    EXPECT_NEAR(sol.cost, assignment_oracle(cost, n), 1e-12);
  }
}

TEST(Transport, PlanRespectsMarginals) {
  StreamRng rng(43);
  const std::vector<double> supply = {0.5, 0.3, 0.2};
  const std::vector<double> demand = {0.1, 0.25, 0.25, 0.4};
  std::vector<double> cost(12);
  for (double& c : cost) c = rng.uniform();
  const auto sol = solve_transport(supply, demand, cost);
  std::vector<double> rows(3, 0.0), cols(4, 0.0);
  double total = 0.0;
  for (const auto& e : sol.plan) {
    EXPECT_GT(e.mass, 0.0);
    rows[e.source] += e.mass;
    cols[e.target] += e.mass;
    total += e.mass * cost[e.source * 4 + e.target];
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(rows[i], supply[i], 1e-12);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(cols[j], demand[j], 1e-12);
  EXPECT_NEAR(total, sol.cost, 1e-12);
}

TEST(Transport, SingleSourceIsForced) {
  const auto sol = solve_transport(std::vector<double>{1.0}, std::vector<double>{0.25, 0.75},
                                   std::vector<double>{2.0, 4.0});
  EXPECT_NEAR(sol.cost, 0.25 * 2.0 + 0.75 * 4.0, 1e-14);
}

TEST(Transport, RejectsUnbalancedMass) {
  EXPECT_THROW(solve_transport(std::vector<double>{1.0}, std::vector<double>{0.5},
                               std::vector<double>{1.0}),
               std::invalid_argument);
}
