#pragma once

#include <memory>
#include <utility>

#include "mfcn/common_noise.hpp"
#include "mfcn/model.hpp"

namespace mfcn::test {

// 1-D problem from callables; unset coefficients are zero.
inline Problem scalar_problem(FunctionCoefficients coeffs, double mean = 0.0, double std = 1.0,
                              double lo = -1.0, double hi = 1.0, double horizon = 1.0) {
  Problem p;
  p.name = "test";
  p.horizon = horizon;
  p.coefficients = std::make_shared<FunctionCoefficients>(std::move(coeffs));
  p.control_set = ControlSet::box({lo}, {hi});
  p.initial_law = InitialLaw{{mean}, {std}};
  p.declared_lipschitz = 1.0;
  p.validate();
  return p;
}

inline FunctionCoefficients::VectorFn constant(double v) {
  return [v](double, std::span<const double>, const ParticleCloud&, std::span<const double>,
             std::span<double> out) { out[0] = v; };
}

inline FunctionCoefficients::ScalarFn constant_cost(double v) {
  return [v](double, std::span<const double>, const ParticleCloud&, std::span<const double>) {
    return v;
  };
}

inline IntensitySpec rate(double r) {
  IntensitySpec in;
  in.total_rate = r;
  return in;
}

inline PointPath two_jump_path(double horizon = 1.0, double rate_value = 1.0) {
  return make_point_path(horizon, {{0.3, {1.0}}, {0.7, {1.0}}}, rate(rate_value));
}

inline Problem lq_problem(double jump_scale = 0.1, double rate_value = 1.0) {
  LqParams p;
  p.jump_scale = jump_scale;
  return make_lq_problem(p, rate(rate_value), 1.0, 0.5, 1.0);
}

}  // namespace mfcn::test
