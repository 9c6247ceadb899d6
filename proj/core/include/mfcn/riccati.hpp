#pragma once

#include <functional>
#include <vector>

#include "mfcn/common_noise.hpp"
#include "mfcn/model.hpp"

namespace mfcn {

struct RiccatiOptions {
  double max_step = 1e-3;
  /// Solve for u = 0 instead of the optimal feedback.
  bool zero_control = false;
  /// Tracking target h(t) in f = q (x - h(t))^2 + r u^2; zero when unset.
  std::function<double(double)> target;
};

/// Backward solution of the scalar LQ system along a frozen jump path.
/// V(t, x) = P x^2 + 2 eta x + ell; nodes are ascending and a jump time
/// appears twice (left limit first), so lookups are right-continuous.
struct RiccatiSolution {
  std::vector<double> times, P, eta, ell;
  double value = 0.0;
  double b_over_r = 0.0;
  bool zero_control = false;

  double gain(double t) const;
  double offset(double t) const;
  /// -(b/r)(P(t) x + eta(t)), or 0 for the zero-control solution.
  double feedback(double t, double x) const;
};

/// RK4 on each inter-jump interval for
///   P' = -2aP + (b^2/r)P^2 - q,  eta' = -a eta + (b^2/r)P eta + q h,
///   ell' = (b^2/r) eta^2 - sigma^2 P - q h^2,
/// all zero at T, with P(t-) = (1+cz)^2 P(t) and eta(t-) = (1+cz) eta(t)
/// at each jump. Value = P(0)(m0^2 + s0^2) + 2 eta(0) m0 + ell(0).
/// Throws when P blows up.
RiccatiSolution riccati_oracle(const LqParams& params, const PointPath& path, double horizon,
                               double initial_mean, double initial_std,
                               const RiccatiOptions& options = {});

}  // namespace mfcn
