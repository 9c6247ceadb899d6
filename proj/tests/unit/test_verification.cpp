#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "mfcn/verification.hpp"
#include "support.hpp"

using namespace mfcn;
using namespace mfcn::test;

namespace {

OptConfig small_config() {
  OptConfig c;
  c.time_cells = 2;
  c.space_cells = 4;
  c.control_grid = {{-1.0}, {0.0}, {1.0}};
  c.dt = 1.0 / 16.0;
  c.particles = 100;
  c.eval_particles = 400;
  c.max_sweeps = 2;
  return c;
}

ControlKernel zero_kernel(const Problem& p) {
  return ControlKernel::midpoint(make_time_edges(p.horizon, 2), SpacePartition::around(p.initial_law, 4),
                                 linear_control_grid(-1.0, 1.0, 3));
}

Problem controlled_cost_problem(double mean = 0.0) {
  FunctionCoefficients c;
  c.b = [](double, std::span<const double>, const ParticleCloud&, std::span<const double> u,
           std::span<double> out) { out[0] = u[0]; };
  c.f = [](double, std::span<const double>, const ParticleCloud&, std::span<const double> u) {
    return u[0] * u[0];
  };
  c.measure_dependent = false;
  return scalar_problem(c, mean);
}

}  // namespace

TEST(Report, JsonCarriesMetricsTrendsAndFlags) {
  VerificationReport r;
  r.check_name = "demo";
  r.inputs_digest = 0xabc;
  r.set("x", 1.5);
  r.set("x", 2.5);
  r.trend("t", {3.0, 2.0});
  r.flags.push_back("note");
  r.pass = true;
  EXPECT_EQ(r.get("x"), 2.5);
  EXPECT_TRUE(r.has("x"));
  EXPECT_FALSE(r.has("y"));
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_EQ(j["check"], "demo");
  EXPECT_EQ(j["inputs_digest"], "0000000000000abc");
  EXPECT_EQ(j["pass"], true);
  EXPECT_EQ(j["metrics"]["x"], 2.5);
  EXPECT_EQ(j["refinement_trend"]["t"][1], 2.0);
  EXPECT_EQ(j["flags"][0], "note");
}

TEST(Superposition, DeterministicFlowReconstructsExactly) {
  FunctionCoefficients c;
  c.b = constant(1.0);
  c.gamma = constant(0.5);
  const Problem p = scalar_problem(c, 0.0, 0.0);
  const auto path = two_jump_path();
  const auto r = check_superposition(p, path, zero_kernel(p), {{100, 0.1}, {200, 0.05}}, 3);
  EXPECT_TRUE(r.pass);
  EXPECT_EQ(r.get("w2_finest"), 0.0);
}

TEST(Superposition, ReportsNonMonotoneMetric) {
  const Problem p = lq_problem(0.2);
  const auto path = two_jump_path();
  // The coarse level has far more particles than the fine one.
  const auto r = check_superposition(p, path, zero_kernel(p), {{2000, 0.1}, {20, 0.05}}, 4);
  EXPECT_FALSE(r.pass);
  EXPECT_FALSE(r.flags.empty());
}

TEST(ZeroIntensity, FreeControlGivesZeroEverywhere) {
  const auto r = check_zero_intensity(controlled_cost_problem(), small_config(), PolicyConfig{}, 5);
  EXPECT_TRUE(r.pass);
  EXPECT_EQ(r.get("pathwise_value"), 0.0);
  EXPECT_EQ(r.get("common_noise_value"), 0.0);
  EXPECT_FALSE(r.has("riccati_value"));
}

TEST(ValueEquivalence, FreeControlGivesZeroGap) {
  EquivalenceOptions opts;
  opts.budget_paths = 2;
  PolicyConfig pc;
  pc.max_jumps = 1;
  pc.particles_per_path = 50;
  pc.eval_particles_per_path = 100;
  Problem p = controlled_cost_problem();
  p.intensity = rate(1.0);
  const auto r = check_value_equivalence(p, 4, small_config(), pc, 6, opts);
  EXPECT_TRUE(r.pass);
  EXPECT_EQ(r.get("gap"), 0.0);
}

TEST(StrictGap, DiracOptimumHasNoGap) {
  const auto r = check_strict_gap(controlled_cost_problem(), two_jump_path(), small_config());
  EXPECT_TRUE(r.pass);
  EXPECT_EQ(r.get("gap"), 0.0);
  EXPECT_EQ(r.get("mean_cell_entropy"), 0.0);
}

TEST(Continuity, ZeroCostIsFlat) {
  const auto r = check_value_continuity(controlled_cost_problem(), {0.4, 0.2, 0.1}, small_config(), 7);
  EXPECT_TRUE(r.pass);
  EXPECT_EQ(r.get("base_value"), 0.0);
}

TEST(Martingale, StaticParticlesHaveZeroResidual) {
  FunctionCoefficients c;
  const Problem p = scalar_problem(c);
  const auto r = check_martingale_residual(p, two_jump_path(), zero_kernel(p),
                                           {QuadraticForm::squared_norm(1)},
                                           {{200, 0.1}, {200, 0.05}}, 8);
  EXPECT_TRUE(r.pass);
  EXPECT_EQ(r.get("phi0_residual"), 0.0);
  EXPECT_EQ(r.flags.size(), 1u);
}

TEST(MomentGrowth, LqWithinBound) {
  const Problem p = lq_problem(0.1, 2.0);
  MomentOptions opts;
  opts.paths = 10;
  opts.particles = 100;
  const auto r = check_moment_growth(p, zero_kernel(p), {2.0}, 4.0, 9, opts);
  EXPECT_TRUE(r.pass);
  EXPECT_GT(r.get("jump_checks"), 0.0);
  EXPECT_EQ(r.get("violations"), 0.0);
}

TEST(MomentGrowth, UnderstatedConstantIsCaught) {
  FunctionCoefficients c;
  c.gamma = [](double, std::span<const double> x, const ParticleCloud&, std::span<const double>,
               std::span<double> out) { out[0] = 5.0 * x[0]; };
  c.measure_dependent = false;
  Problem p = scalar_problem(c, 10.0, 0.1);
  p.intensity = rate(2.0);
  MomentOptions opts;
  opts.paths = 10;
  opts.particles = 50;
  const auto r = check_moment_growth(p, zero_kernel(p), {2.0}, 4.0, 10, opts);
  EXPECT_FALSE(r.pass);
  EXPECT_GT(r.get("violations"), 0.0);
}
