#include <gtest/gtest.h>

#include <cmath>

#include "mfcn/dynamics.hpp"
#include "mfcn/model.hpp"
#include "support.hpp"

using namespace mfcn;
using namespace mfcn::test;

TEST(ValidateProblem, ConstantCoefficientsHaveZeroRatios) {
  FunctionCoefficients c;
  c.sigma = constant(1.0);
  const auto report = validate_problem(scalar_problem(c), 200, 1);
  EXPECT_EQ(report.drift.ratio_state, 0.0);
  EXPECT_EQ(report.diffusion.ratio_state, 0.0);
  EXPECT_EQ(report.jump.ratio_state, 0.0);
  EXPECT_EQ(report.drift.ratio_measure, 0.0);
  EXPECT_FALSE(report.flagged());
}

TEST(ValidateProblem, LqDriftRatioApproachesA) {
  const Problem p = lq_problem();
  const auto report = validate_problem(p, 5000, 2);
  EXPECT_LE(report.drift.ratio_state, 0.5 * (1.0 + 1e-9));
  EXPECT_NEAR(report.drift.ratio_state, 0.5, 1e-9);
  EXPECT_NEAR(report.drift.ratio_control, 1.0, 1e-9);
  EXPECT_LE(report.jump.ratio_state, 0.1 * (1.0 + 1e-9));
  EXPECT_FALSE(report.flagged());
}

TEST(ValidateProblem, SquareJumpIsFlagged) {
  FunctionCoefficients c;
  c.gamma = [](double, std::span<const double> x, const ParticleCloud&, std::span<const double>,
               std::span<double> out) { out[0] = x[0] * x[0]; };
  ProbeOptions box;
  box.state_half_width = 2.0;
  const auto report = validate_problem(scalar_problem(c), 200, 3, box);
  EXPECT_TRUE(report.jump.flagged);
  EXPECT_GT(report.jump.ratio_state, 1.01);
}

TEST(ValidateProblem, NonFiniteCoefficientNamesIt) {
  FunctionCoefficients c;
  c.b = constant(NAN);
  try {
    validate_problem(scalar_problem(c), 5, 4);
    FAIL() << "expected an exception";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("drift"), std::string::npos);
  }
}

TEST(ValidateProblem, DeterministicInSeed) {
  const Problem p = lq_problem();
  const auto a = validate_problem(p, 300, 9), b = validate_problem(p, 300, 9);
  EXPECT_EQ(a.drift.ratio_state, b.drift.ratio_state);
  EXPECT_EQ(a.growth_ratio, b.growth_ratio);
}

TEST(MakeLqProblem, ZeroJumpScaleGivesZeroGamma) {
  const Problem p = lq_problem(0.0);
  const ParticleCloud mu(1, {1.0});
  double out = 7.0;
  const double x = 3.0, z = 1.0;
  p.coefficients->jump(0.5, {&x, 1}, mu, {&z, 1}, {&out, 1});
  EXPECT_EQ(out, 0.0);
}

TEST(MakeLqProblem, DiracInitialLaw) {
  const Problem p = make_lq_problem(LqParams{}, rate(1.0), 0.7, 0.0, 1.0);
  const PointPath path = make_point_path(1.0, {});
  const Engine engine(p, SimGrid::build(1.0, 0.1), path, 5);
  for (double x : engine.initial_states(50)) EXPECT_EQ(x, 0.7);
}

TEST(MakeLqProblem, ControlBoxContainsFeedback) {
  const Problem p = make_lq_problem(LqParams{}, rate(1.0), 1.0, 0.5, 1.0);
  EXPECT_EQ(p.control_set.lower[0], -20.0);
  EXPECT_EQ(p.control_set.upper[0], 20.0);
}

TEST(MakeLqProblem, RejectsNonCoerciveCost) {
  LqParams bad;
  bad.cost_r = 0.0;
  EXPECT_THROW(make_lq_problem(bad, rate(1.0), 1.0, 0.5, 1.0), std::invalid_argument);
}

TEST(Benchmarks, AddressableByName) {
  const auto names = benchmark_names();
  EXPECT_NE(std::find(names.begin(), names.end(), "lq1d"), names.end());
  const Problem mf = make_benchmark("lq1d-meanfield", LqParams{}, rate(1.0), 1.0, 0.5, 1.0);
  EXPECT_TRUE(mf.coefficients->uses_measure());
  EXPECT_DOUBLE_EQ(mf.lq->coupling, 0.1);
  EXPECT_FALSE(make_benchmark("lq1d", LqParams{}, rate(1.0), 1.0, 0.5, 1.0).coefficients->uses_measure());
  EXPECT_THROW(make_benchmark("nope", LqParams{}, rate(1.0), 1.0, 0.5, 1.0), std::invalid_argument);
}

TEST(Generator, LinearTestFunctionUnitDrift) {
  FunctionCoefficients c;
  c.b = constant(1.0);
  c.sigma = constant(3.0);
  const double x = 0.4, u = 0.0;
  EXPECT_DOUBLE_EQ(eval_generator(scalar_problem(c), QuadraticForm::identity_coordinate(1, 0), 0.0,
                                  {&x, 1}, ParticleCloud(1, {0.0}), {&u, 1}),
                   1.0);
}

TEST(Generator, SquareWithConstantDiffusion) {
  FunctionCoefficients c;
  c.sigma = constant(0.3);
  const double x = -2.0, u = 0.0;
  EXPECT_NEAR(eval_generator(scalar_problem(c), QuadraticForm::squared_norm(1), 0.0, {&x, 1},
                             ParticleCloud(1, {0.0}), {&u, 1}),
              0.09, 1e-15);
}

TEST(Generator, LqSquareAtOne) {
  const double x = 1.0, u = 0.0;
  EXPECT_NEAR(eval_generator(lq_problem(), QuadraticForm::squared_norm(1), 0.2, {&x, 1},
                             ParticleCloud(1, {1.0}), {&u, 1}),
              1.04, 1e-14);
}

TEST(Generator, LinearInTestFunction) {
  const Problem p = lq_problem();
  QuadraticForm phi1 = QuadraticForm::squared_norm(1), phi2 = QuadraticForm::identity_coordinate(1, 0);
  QuadraticForm combo = phi1;
  combo.A[0] = 2.0 * phi1.A[0];
  combo.b[0] = 2.0 * phi1.b[0] - 3.0 * phi2.b[0];
  const ParticleCloud mu(1, {0.2, 1.3});
  for (double x : {-1.5, 0.0, 0.8}) {
    for (double u : {-2.0, 0.5}) {
      const double lhs = eval_generator(p, combo, 0.1, {&x, 1}, mu, {&u, 1});
      const double rhs = 2.0 * eval_generator(p, phi1, 0.1, {&x, 1}, mu, {&u, 1}) -
                         3.0 * eval_generator(p, phi2, 0.1, {&x, 1}, mu, {&u, 1});
      EXPECT_NEAR(lhs, rhs, 1e-12);
    }
  }
}

TEST(Problem, RejectsLowMomentOrder) {
  Problem p = lq_problem();
  p.moment_order = 2.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(ControlSet, UnboundedBoxRejected) {
  EXPECT_THROW(ControlSet::box({-INFINITY}, {1.0}).validate(), std::invalid_argument);
}
