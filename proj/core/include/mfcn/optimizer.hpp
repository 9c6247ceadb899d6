#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mfcn/common_noise.hpp"
#include "mfcn/dynamics.hpp"
#include "mfcn/kernel.hpp"
#include "mfcn/measures.hpp"
#include "mfcn/model.hpp"

namespace mfcn {

/// Trapezoid-in-time sum of <int f kernel(du), mu_t> over the flow's
/// clouds (right limits at jump nodes).
double evaluate_cost(const MeasureFlow& flow, const ControlKernel& kernel,
                     const Problem& problem);

struct OptConfig {
  std::size_t time_cells = 8;
  std::size_t space_cells = 16;  // per axis
  double space_half_width = 6.0;
  /// Overrides the box built around the initial law.
  std::optional<SpacePartition> space;
  /// Scalar grid used when `control_grid` is empty.
  double control_lo = -6.0;
  double control_hi = 6.0;
  std::size_t control_points = 49;
  std::vector<Vector> control_grid;
  double dt = 1.0 / 64.0;
  std::size_t particles = 500;
  std::size_t eval_particles = 2000;
  std::size_t restarts = 0;
  std::size_t max_sweeps = 6;
  /// Accept only improvements above accept_se combined standard errors.
  double accept_se = 1.0;
  /// Relative floor on accepted improvements.
  double min_improvement = 1e-12;
  /// Search radius (grid indices) after the first sweep.
  std::size_t window = 2;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  std::optional<ControlKernel> initial_kernel;

  std::vector<Vector> grid_for(const Problem& problem) const;
  SpacePartition space_for(const Problem& problem) const;
  void validate() const;
};

struct SearchDiagnostics {
  std::size_t sweeps = 0;
  std::size_t accepted = 0;
  std::size_t evaluations = 0;
  bool converged = false;
  /// The sweep cap was reached while sweeps were still accepting updates.
  bool stalled = false;
  /// Training cost after the initial simulation and after every accepted
  /// update (nonincreasing).
  std::vector<double> history;
  std::size_t best_restart = 0;
};

struct PathwiseSolveResult {
  ControlKernel kernel;
  double value = 0.0;     // independent evaluation run
  double value_se = 0.0;
  std::vector<double> eval_costs;  // per evaluation particle
  double train_value = 0.0;
  SearchDiagnostics diagnostics;
};

/// CRN block-coordinate descent over the kernel cells for one frozen path.
/// With `frozen_flow` the measure arguments are read from that flow (best
/// response in the game).
PathwiseSolveResult optimize_pathwise(const Problem& problem, const PointPath& path,
                                      const OptConfig& config,
                                      const MeasureFlow* frozen_flow = nullptr);

/// Evaluates a kernel on a path with `particles` draws from `seed`.
struct CostEstimate {
  double value = 0.0;
  double se = 0.0;
  std::vector<double> particle_costs;
};
CostEstimate estimate_cost(const Problem& problem, const PointPath& path,
                           const ControlKernel& kernel, double dt, std::size_t particles,
                           std::uint64_t seed, const MeasureFlow* frozen_flow = nullptr);

/// Seeds of the training and evaluation particle streams for a base seed.
std::uint64_t training_seed(std::uint64_t seed);
std::uint64_t evaluation_seed(std::uint64_t seed);

/// Grid used by optimize_pathwise for a path, so callers can build a
/// compatible frozen flow.
SimGrid solver_grid(const PointPath& path, const OptConfig& config);

struct PolicyConfig {
  std::size_t max_jumps = 3;
  std::size_t time_buckets = 1;
  std::size_t particles_per_path = 200;
  std::size_t eval_particles_per_path = 2000;
};

struct PolicySolveResult {
  JumpHistoryPolicy policy;
  double value = 0.0;
  double value_se = 0.0;
  std::vector<double> path_values;  // evaluation mean per path
  std::vector<double> particle_costs;  // path-major
  double train_value = 0.0;
  SearchDiagnostics diagnostics;
};

/// Jointly optimizes a jump-history policy over a fixed set of common paths;
/// path k uses particle_seed(seed, k) for its particles.
PolicySolveResult optimize_policy(const Problem& problem, const std::vector<PointPath>& paths,
                                  const OptConfig& config, const PolicyConfig& policy_config,
                                  std::uint64_t seed);

/// Evaluates a policy on fixed paths with eval particles.
PolicySolveResult evaluate_policy(const Problem& problem, const std::vector<PointPath>& paths,
                                  const JumpHistoryPolicy& policy, const OptConfig& config,
                                  std::size_t particles_per_path, std::uint64_t seed);

}  // namespace mfcn
