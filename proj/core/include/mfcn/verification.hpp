#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mfcn/common_noise.hpp"
#include "mfcn/kernel.hpp"
#include "mfcn/model.hpp"
#include "mfcn/optimizer.hpp"

namespace mfcn {

struct VerificationReport {
  std::string check_name;
  std::uint64_t inputs_digest = 0;
  std::vector<std::pair<std::string, double>> metrics;
  /// Metric values per resolution level.
  std::vector<std::pair<std::string, std::vector<double>>> trends;
  std::vector<std::string> flags;
  bool pass = false;

  void set(const std::string& name, double value);
  double get(const std::string& name) const;
  bool has(const std::string& name) const;
  void trend(const std::string& name, std::vector<double> values);
  std::string to_json() const;
};

struct Level {
  std::size_t particles;
  double dt;
};

struct SuperpositionOptions {
  double tolerance = 0.05;
  /// Reuse the first run's initial particles in the reconstruction.
  bool shared_initial = false;
};

/// For each level, W2 between the flow of one run and the marginals of an
/// independent run driven by that frozen flow, maximized over nodes.
VerificationReport check_superposition(const Problem& problem, const PointPath& path,
                                       const ControlKernel& kernel,
                                       const std::vector<Level>& levels, std::uint64_t seed,
                                       const SuperpositionOptions& options = {});

struct EquivalenceOptions {
  std::size_t workers = 1;
  /// Paths used to measure the refinement budget (coarse vs configured kernel).
  std::size_t budget_paths = 10;
  /// Relative agreement required with the averaged Riccati oracle (LQ only).
  double oracle_tolerance = 0.05;
};

/// Pathwise-integrated optimal value against the best jump-history policy
/// on the same common paths and particle streams.
VerificationReport check_value_equivalence(const Problem& problem, std::size_t n_common_paths,
                                           const OptConfig& pathwise,
                                           const PolicyConfig& policy, std::uint64_t seed,
                                           const EquivalenceOptions& options = {});

struct ZeroIntensityOptions {
  std::size_t common_paths = 4;
  double relative_tolerance = 0.02;
  std::size_t workers = 1;
};

/// With the intensity set to zero: pathwise value, common-noise policy value
/// and (LQ) the no-jump Riccati value must agree pairwise.
VerificationReport check_zero_intensity(const Problem& problem, const OptConfig& pathwise,
                                        const PolicyConfig& policy, std::uint64_t seed,
                                        const ZeroIntensityOptions& options = {});

struct StrictGapOptions {
  double relative_tolerance = 0.02;
  double entropy_ratio = 0.25;
};

VerificationReport check_strict_gap(const Problem& problem, const PointPath& path,
                                    const OptConfig& config,
                                    const StrictGapOptions& options = {});

struct MartingaleResidual {
  double residual = 0.0;
  double drift = 0.0;  // deterministic (1/2) dt^2 <int b^T H b dkernel, mu> part
  double se = 0.0;
};

/// Time-summed weak-form residual of the particle flow for one test
/// function at one level.
MartingaleResidual martingale_residual(const Problem& problem, const PointPath& path,
                                       const ControlKernel& kernel, const QuadraticForm& phi,
                                       const Level& level, std::uint64_t seed);

VerificationReport check_martingale_residual(const Problem& problem, const PointPath& path,
                                             const ControlKernel& kernel,
                                             const std::vector<QuadraticForm>& phis,
                                             const std::vector<Level>& levels,
                                             std::uint64_t seed);

struct MomentOptions {
  std::size_t paths = 200;
  std::size_t particles = 500;
  double dt = 1.0 / 64.0;
  std::size_t workers = 1;
};

/// Checks M_p(after)^p <= (1+2M)^p (1 + M_p(before)^p) at every jump of
/// every sampled path for each intensity.
VerificationReport check_moment_growth(const Problem& problem, const ControlKernel& kernel,
                                       const std::vector<double>& intensity_sweep, double p,
                                       std::uint64_t seed, const MomentOptions& options = {});

struct ContinuityOptions {
  std::size_t paths = 4;
  std::size_t workers = 1;
  /// Gap allowed at the smallest scale is slope * scale.
  double slope = 5.0;
  /// Relative agreement with Riccati differences, as a fraction of the
  /// base value.
  double oracle_relative = 0.02;
};

/// Value at the base initial law and at laws with the mean shifted by each
/// scale, with common paths, particle streams and space box.
VerificationReport check_value_continuity(const Problem& problem,
                                          const std::vector<double>& scales,
                                          const OptConfig& config, std::uint64_t seed,
                                          const ContinuityOptions& options = {});

}  // namespace mfcn
