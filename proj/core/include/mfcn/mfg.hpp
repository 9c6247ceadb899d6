#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mfcn/common_noise.hpp"
#include "mfcn/kernel.hpp"
#include "mfcn/measures.hpp"
#include "mfcn/model.hpp"
#include "mfcn/optimizer.hpp"
#include "mfcn/verification.hpp"

namespace mfcn {

struct IterConfig {
  std::size_t max_iters = 20;
  /// Fraction of flow particles replaced by the new flow each iteration.
  double damping = 0.5;
  double residual_tol = 0.02;
  std::size_t flow_particles = 16000;
  /// Exploitability must stay below 3 SE + this fraction of |value|.
  double exploitability_relative = 0.02;
  double consistency_tol = 0.05;
  OptConfig opt;

  void validate() const;
};

struct Exploitability {
  double value = 0.0;
  double se = 0.0;
  double kernel_cost = 0.0;
  double best_value = 0.0;
};

struct MfeResult {
  MeasureFlow flow;
  ControlKernel kernel;
  std::vector<double> residual_history;
  Exploitability exploitability;
  double value = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Optimal kernel for the dynamics whose measure arguments are all read
/// from `frozen_flow`, which must live on solver_grid(path, config).
PathwiseSolveResult best_response(const Problem& problem, const PointPath& path,
                                  const MeasureFlow& frozen_flow, const OptConfig& config);

/// Cost of `kernel` against the frozen flow minus the best-response value,
/// both on the evaluation particles of `config.seed`.
Exploitability exploitability(const Problem& problem, const PointPath& path,
                              const MeasureFlow& flow, const ControlKernel& kernel,
                              const OptConfig& config);

/// Damped Picard iteration on the flow: best response, induced flow, then a
/// fixed fraction of particles (the same indices at every node) taken from
/// the induced flow. The returned flow is the one induced by the returned
/// kernel against the last iterate.
MfeResult solve_pathwise_mfe(const Problem& problem, const PointPath& path,
                             const IterConfig& config);

/// Sup over nodes of W2 between the MFE flow and an independent simulation
/// under the MFE kernel against that flow.
double consistency_w2(const Problem& problem, const PointPath& path, const MfeResult& mfe,
                      const IterConfig& config, std::uint64_t seed);

struct StrongMfeEstimate {
  std::vector<PointPath> paths;
  std::vector<MfeResult> per_path;
  std::vector<double> consistency;
  std::size_t converged = 0;
  std::size_t consistent = 0;
  std::size_t distinct_solves = 0;
  std::uint64_t digest = 0;
};

/// Pathwise MFE per sampled common path; identical paths share one solve.
StrongMfeEstimate assemble_strong_mfe(const Problem& problem, std::size_t n_paths,
                                      const IterConfig& config, std::uint64_t seed,
                                      std::size_t workers = 1);

struct MfeCheckOptions {
  std::size_t paths = 50;
  /// Required share of assembled paths that both converge and pass the
  /// re-simulation consistency bound.
  double success_fraction = 0.9;
  std::size_t workers = 1;
};

/// Solves the MFE on `path`, then assembles over sampled paths.
VerificationReport check_pathwise_mfe(const Problem& problem, const PointPath& path,
                                      const IterConfig& config, std::uint64_t seed,
                                      const MfeCheckOptions& options = {});

}  // namespace mfcn
