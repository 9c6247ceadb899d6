#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "mfcn/common_noise.hpp"
#include "mfcn/kernel.hpp"
#include "mfcn/measures.hpp"
#include "mfcn/model.hpp"

namespace mfcn {

/// Uniform time grid with every jump time forced onto a node. Uniform
/// nodes within 1e-9 T of a jump time are replaced by the jump time.
struct SimGrid {
  double step_hint = 0.0;
  std::shared_ptr<const std::vector<double>> nodes;
  std::vector<std::size_t> jump_nodes;  // one per event, in event order

  static SimGrid build(double horizon, double step_hint,
                       std::span<const double> jump_times = {});
  static SimGrid build(const PointPath& path, double step_hint);

  std::size_t size() const { return nodes->size(); }
  std::size_t steps() const { return nodes->size() - 1; }
  double time(std::size_t k) const { return (*nodes)[k]; }
  double dt(std::size_t k) const { return (*nodes)[k + 1] - (*nodes)[k]; }
  /// Trapezoid weight of node k: (dt_{k-1} + dt_k) / 2.
  double weight(std::size_t k) const;
  /// Event index of a jump node, or -1.
  std::ptrdiff_t event_at(std::size_t node) const;
};

/// N trajectories on a shared grid, node-major. `left_states[j]` holds the
/// pre-jump states at jump_nodes[j].
struct PathEnsemble {
  SimGrid grid;
  std::size_t dim = 1;
  std::size_t particles = 0;
  std::vector<double> states;  // nodes x particles x dim
  std::vector<std::vector<double>> left_states;
  std::vector<double> jump_times;
  std::uint64_t seed = 0;
  std::uint64_t kernel_digest = 0;

  std::span<const double> state(std::size_t node, std::size_t i) const {
    return {states.data() + (node * particles + i) * dim, dim};
  }
  std::span<const double> left_state(std::size_t jump, std::size_t i) const {
    return {left_states[jump].data() + i * dim, dim};
  }
  PiecewisePath trajectory(std::size_t i) const;
  ParticleCloud marginal(std::size_t node) const;
};

/// Callbacks fired while particles are advanced.
class SimObserver {
 public:
  virtual ~SimObserver() = default;
  /// States at node k (right limits) and the per-particle cost accumulated
  /// over nodes before k.
  virtual void on_node(std::size_t, std::span<const double>, std::span<const double>) {}
  /// Pre-jump states at a jump node.
  virtual void on_left_limit(std::size_t, std::span<const double>) {}
};

/// Euler-Maruyama particle engine for one frozen common-noise path.
///
/// Random numbers are addressed by (particle id, node, slot) through
/// counter-based streams derived from the seed, so any subset of particles
/// can be re-simulated from any node and reproduce the full run exactly.
class Engine {
 public:
  /// With `frozen` set, every measure argument is read from that flow
  /// instead of the simulated cloud.
  Engine(const Problem& problem, SimGrid grid, const PointPath& path, std::uint64_t seed,
         const MeasureFlow* frozen = nullptr);

  const SimGrid& grid() const { return grid_; }
  const Problem& problem() const { return problem_; }
  /// True when particles interact and must always be advanced together.
  bool coupled() const { return coupled_; }

  /// i.i.d. draws from the initial law, particle-major.
  std::vector<double> initial_states(std::size_t n) const;

  /// Advances states from node `from` (right limits) to node `to`, applying
  /// jumps at jump nodes in (from, to]. Running cost w_k * f is added to
  /// `costs` for nodes from..to-1, and for `to` as well when
  /// `include_last` is set. `kernels[k]` is the kernel used at node k.
  void run(std::size_t from, std::size_t to, std::vector<double>& x,
           std::span<const std::uint32_t> ids,
           std::span<const ControlKernel* const> kernels, std::span<double> costs,
           bool include_last, SimObserver* observer = nullptr) const;

 private:
  const ParticleCloud& argument(std::size_t node, bool left, std::span<const double> x,
                                std::size_t n, ParticleCloud& scratch) const;

  const Problem& problem_;
  SimGrid grid_;
  const PointPath& path_;
  const MeasureFlow* frozen_;
  bool coupled_;
  std::uint64_t seed_;
  ParticleCloud dummy_;
};

struct PropagateOptions {
  const MeasureFlow* frozen_flow = nullptr;
  bool record_paths = true;
  /// Replaces the draws from the initial law (particle-major).
  const std::vector<double>* initial_states = nullptr;
};

struct Propagation {
  MeasureFlow flow;
  PathEnsemble ensemble;
  std::vector<double> particle_costs;
  double cost = 0.0;
  double cost_se = 0.0;
};

/// Particle solution of the pathwise Fokker-Planck equation under a kernel.
Propagation propagate_fp(const Problem& problem, const PointPath& path,
                         const ControlKernel& kernel, const SimGrid& grid,
                         std::size_t n_particles, std::uint64_t seed,
                         const PropagateOptions& options = {});

/// Same as propagate_fp with a kernel chosen per grid node.
Propagation propagate_with_kernels(const Problem& problem, const PointPath& path,
                                   const SimGrid& grid,
                                   std::span<const ControlKernel* const> kernels,
                                   std::size_t n_particles, std::uint64_t seed,
                                   const PropagateOptions& options = {});

/// x -> x + gamma(t, x, mu_left, mark) for every particle; weights kept.
ParticleCloud apply_jump(const ParticleCloud& cloud, double t, std::span<const double> mark,
                         const ParticleCloud& mu_left, const Problem& problem);

/// Y = X - sum of jumps up to t, per trajectory.
std::vector<PiecewisePath> extract_continuous_part(const PathEnsemble& ensemble,
                                                   const PointPath& path,
                                                   const MeasureFlow& flow,
                                                   const Problem& problem);

/// Produces the segment on [t2, t3] from the pre-jump endpoints at t2.
using TailGenerator = std::function<PathEnsemble(const std::vector<double>& left_states)>;

/// Splices head trajectories on [t1, t2) (whose last node holds the left
/// limit at t2) with tails generated from their endpoints.
PathEnsemble concatenate(const PathEnsemble& head, const TailGenerator& tail, double t2,
                         const Problem& problem, const PointPath& path,
                         const MeasureFlow& flow);

/// Simulates nodes [from, to] from given right-limit states at `from`. When
/// `jump_at_end` is false the last node keeps the pre-jump states.
PathEnsemble propagate_segment(const Problem& problem, const PointPath& path,
                               const ControlKernel& kernel, const SimGrid& grid,
                               std::size_t from, std::size_t to,
                               const std::vector<double>& start_states, std::uint64_t seed,
                               bool jump_at_end = true);

/// Tail generator backed by propagate_segment: applies the jump at t2 with
/// the cloud of left endpoints as mu_{t2-} and runs to the end of the grid.
TailGenerator make_fp_tail_generator(const Problem& problem, const PointPath& path,
                                     const ControlKernel& kernel, const SimGrid& grid,
                                     std::size_t jump_node, std::uint64_t seed);

/// Kernel selected by the jump history: number of jumps so far (capped)
/// and the bucket of the last jump time.
struct JumpHistoryPolicy {
  std::size_t max_jumps = 0;
  std::size_t time_buckets = 1;
  double horizon = 1.0;
  std::vector<ControlKernel> kernels;

  static JumpHistoryPolicy constant(const ControlKernel& kernel, std::size_t max_jumps,
                                    std::size_t time_buckets, double horizon);

  std::size_t index(std::size_t jumps, double last_jump_time) const;
  /// Kernel pointer per grid node for a given path.
  std::vector<const ControlKernel*> node_kernels(const PointPath& path,
                                                 const SimGrid& grid) const;
  std::vector<std::size_t> node_tables(const PointPath& path, const SimGrid& grid) const;
};

struct CommonNoiseSample {
  PointPath path;
  Propagation run;
};

/// Outer Monte Carlo over common-noise paths: each path is shared by all
/// particles of its sample. Paths are drawn from the seed unless given.
std::vector<CommonNoiseSample> simulate_common_noise_system(
    const Problem& problem, const JumpHistoryPolicy& policy, std::size_t n_particles,
    std::size_t n_common_paths, double grid_hint, std::uint64_t seed,
    std::size_t workers = 1, const std::vector<PointPath>* paths = nullptr,
    bool record_paths = false);

/// Seeds shared by every routine that samples common paths or particles for
/// the k-th outer sample; both sides of an equivalence check use them.
std::uint64_t common_path_seed(std::uint64_t master, std::size_t k);
std::uint64_t particle_seed(std::uint64_t master, std::size_t k);
std::vector<PointPath> sample_common_paths(const IntensitySpec& intensity, double horizon,
                                           std::size_t count, std::uint64_t master);

/// Mean and standard error of a sample.
std::pair<double, double> mean_and_se(std::span<const double> values);

}  // namespace mfcn
