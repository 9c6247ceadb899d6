#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "mfcn/mfg.hpp"
#include "mfcn/riccati.hpp"
#include "support.hpp"

using namespace mfcn;
using namespace mfcn::test;

namespace {

Problem meanfield(double coupling, double rate_value = 1.0) {
  LqParams p;
  p.coupling = coupling;
  return make_lq_problem(p, rate(rate_value), 1.0, 0.5, 1.0);
}

IterConfig small_iter() {
  IterConfig c;
  c.flow_particles = 400;
  c.max_iters = 6;
  c.opt.time_cells = 4;
  c.opt.space_cells = 8;
  c.opt.control_lo = -3.0;
  c.opt.control_hi = 3.0;
  c.opt.control_points = 13;
  c.opt.dt = 1.0 / 32.0;
  c.opt.particles = 200;
  c.opt.eval_particles = 800;
  c.opt.max_sweeps = 3;
  return c;
}

// Step lookup of the flow mean, right-continuous at jump nodes.
std::function<double(double)> mean_target(const MeasureFlow& flow, double s) {
  std::vector<double> means;
  for (const auto& c : flow.clouds) means.push_back(s * c.mean()[0]);
  return [grid = flow.grid, means](double t) {
    const auto it = std::upper_bound(grid.begin(), grid.end(), t);
    const auto k = static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - grid.begin() - 1, 0));
    return means[std::min(k, means.size() - 1)];
  };
}

MeasureFlow zero_control_flow(const Problem& p, const PointPath& path, const OptConfig& cfg,
                              std::size_t particles) {
  const auto k = ControlKernel::midpoint(make_time_edges(1.0, 4, path.times()),
                                         SpacePartition::around(p.initial_law, 8),
                                         linear_control_grid(-1.0, 1.0, 3));
  return propagate_fp(p, path, k, solver_grid(path, cfg), particles, 17).flow;
}

}  // namespace

TEST(IterConfig, RejectsBadDamping) {
  IterConfig c;
  c.damping = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.damping = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.damping = 1.0;
  EXPECT_NO_THROW(c.validate());
}

TEST(PathwiseMfe, MeasureFreeProblemSettlesAfterOneUpdate) {
  const auto res = solve_pathwise_mfe(lq_problem(0.1), two_jump_path(), small_iter());
  ASSERT_EQ(res.residual_history.size(), 2u);
  EXPECT_GT(res.residual_history[0], 0.0);
  EXPECT_EQ(res.residual_history[1], 0.0);
  EXPECT_TRUE(res.converged);
}

TEST(PathwiseMfe, CostFreeProblemIsAFixedPoint) {
  FunctionCoefficients c;
  c.b = [](double, std::span<const double>, const ParticleCloud& mu, std::span<const double>,
           std::span<double> out) { out[0] = 0.5 * mu.mean()[0]; };
  c.sigma = constant(0.2);
  c.f = constant_cost(0.0);
  const Problem p = scalar_problem(c, 1.0, 0.5);
  auto cfg = small_iter();
  cfg.opt.control_lo = -1.0;
  cfg.opt.control_hi = 1.0;
  cfg.opt.control_points = 5;
  const auto res = solve_pathwise_mfe(p, two_jump_path(), cfg);
  EXPECT_EQ(res.value, 0.0);
  EXPECT_EQ(res.exploitability.value, 0.0);
  EXPECT_EQ(res.residual_history.back(), 0.0);
  EXPECT_TRUE(res.converged);
}

TEST(BestResponse, MatchesTrackingRiccati) {
  const double s = 0.3;
  const Problem p = meanfield(s);
  const auto path = two_jump_path();
  OptConfig cfg;
  cfg.seed = 3;
  const auto flow = zero_control_flow(p, path, cfg, 4000);
  const auto br = best_response(p, path, flow, cfg);
  RiccatiOptions opts;
  opts.target = mean_target(flow, s);
  const double oracle = riccati_oracle(*p.lq, path, 1.0, 1.0, 0.5, opts).value;
  EXPECT_GT(br.value, oracle - 3.0 * br.value_se - 0.01 * oracle);
  EXPECT_LT(br.value, oracle * 1.05 + 3.0 * br.value_se);
}

TEST(Exploitability, BestResponseIsUnexploitableAndZeroControlIsNot) {
  const Problem p = meanfield(0.3);
  const auto path = two_jump_path();
  const auto cfg = small_iter().opt;
  const auto flow = zero_control_flow(p, path, cfg, 1000);
  const auto br = best_response(p, path, flow, cfg);
  const auto e = exploitability(p, path, flow, br.kernel, cfg);
  EXPECT_LE(e.value, 3.0 * e.se + 0.02 * std::abs(e.kernel_cost));
  const auto zero = ControlKernel::midpoint(br.kernel.time_edges(), br.kernel.space(),
                                            br.kernel.control_grid());
  const auto ez = exploitability(p, path, flow, zero, cfg);
  EXPECT_GT(ez.value, 3.0 * ez.se);
  EXPECT_NEAR(ez.value, ez.kernel_cost - ez.best_value, 1e-12);
}

TEST(PathwiseMfe, CoupledLqConvergesAndIsConsistent) {
  const Problem p = meanfield(0.1);
  auto cfg = small_iter();
  cfg.max_iters = 12;
  const auto res = solve_pathwise_mfe(p, two_jump_path(), cfg);
  EXPECT_TRUE(res.converged);
  EXPECT_LE(res.residual_history.back(), cfg.residual_tol);
  EXPECT_EQ(res.iterations, res.residual_history.size());
  EXPECT_LE(consistency_w2(p, two_jump_path(), res, cfg, 5), 0.15);
}

TEST(StrongMfe, ZeroIntensitySolvesOnce) {
  const auto est = assemble_strong_mfe(meanfield(0.1, 0.0), 3, small_iter(), 9);
  EXPECT_EQ(est.distinct_solves, 1u);
  ASSERT_EQ(est.paths.size(), 3u);
  for (const auto& path : est.paths) EXPECT_TRUE(path.events.empty());
  EXPECT_EQ(est.per_path[0].kernel.table(), est.per_path[2].kernel.table());
}

TEST(StrongMfe, DigestIndependentOfWorkers) {
  auto cfg = small_iter();
  cfg.max_iters = 2;
  const Problem p = meanfield(0.1);
  const auto a = assemble_strong_mfe(p, 2, cfg, 12, 1);
  const auto b = assemble_strong_mfe(p, 2, cfg, 12, 2);
  const auto c = assemble_strong_mfe(p, 2, cfg, 13, 1);
  EXPECT_EQ(a.digest, b.digest);
  EXPECT_NE(a.digest, c.digest);
}
