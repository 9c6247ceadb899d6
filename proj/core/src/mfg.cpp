#include "mfcn/mfg.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

#include "mfcn/dynamics.hpp"
#include "mfcn/parallel.hpp"
#include "mfcn/rng.hpp"

namespace mfcn {

void IterConfig::validate() const {
  if (max_iters == 0) throw std::invalid_argument("IterConfig: max_iters must be >= 1");
  if (!(damping > 0.0 && damping <= 1.0)) {
    throw std::invalid_argument("IterConfig: damping must lie in (0, 1]");
  }
  if (flow_particles == 0) throw std::invalid_argument("IterConfig: flow_particles must be >= 1");
  opt.validate();
}

PathwiseSolveResult best_response(const Problem& problem, const PointPath& path,
                                  const MeasureFlow& frozen_flow, const OptConfig& config) {
  return optimize_pathwise(problem, path, config, &frozen_flow);
}

Exploitability exploitability(const Problem& problem, const PointPath& path,
                              const MeasureFlow& flow, const ControlKernel& kernel,
                              const OptConfig& config) {
  const auto own = estimate_cost(problem, path, kernel, config.dt, config.eval_particles,
                                 evaluation_seed(config.seed), &flow);
  OptConfig warm = config;
  warm.initial_kernel = kernel;
  const auto br = best_response(problem, path, flow, warm);
  std::vector<double> diff(own.particle_costs.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = own.particle_costs[i] - br.eval_costs[i];
  Exploitability out;
  std::tie(out.value, out.se) = mean_and_se(diff);
  out.kernel_cost = own.value;
  out.best_value = br.value;
  return out;
}

namespace {

double sup_w2(const MeasureFlow& a, const MeasureFlow& b) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.clouds.size(); ++k) {
    worst = std::max(worst, wasserstein2(a.clouds[k], b.clouds[k]).value);
  }
  for (std::size_t j = 0; j < a.left_limits.size(); ++j) {
    worst = std::max(worst, wasserstein2(a.left_limits[j], b.left_limits[j]).value);
  }
  return worst;
}

ParticleCloud mix_cloud(const ParticleCloud& keep, const ParticleCloud& fresh,
                        const std::vector<char>& take) {
  const std::size_t dim = keep.dim();
  std::vector<double> pts(keep.points().begin(), keep.points().end());
  for (std::size_t i = 0; i < take.size(); ++i) {
    if (!take[i]) continue;
    const auto p = fresh.point(i);
    std::copy(p.begin(), p.end(), pts.begin() + static_cast<std::ptrdiff_t>(i * dim));
  }
  return ParticleCloud(dim, std::move(pts));
}

}  // namespace

MfeResult solve_pathwise_mfe(const Problem& problem, const PointPath& path,
                             const IterConfig& config) {
  config.validate();
  const SimGrid grid = solver_grid(path, config.opt);
  const std::size_t n = config.flow_particles;
  const std::uint64_t flow_seed = derive_seed(config.opt.seed, "mfe-flow");
  // The best response never reads the flow when no coefficient does, so
  // one undamped update reaches the fixed point.
  const double theta = problem.coefficients->uses_measure() ? config.damping : 1.0;

  const ControlKernel start =
      config.opt.initial_kernel
          ? *config.opt.initial_kernel
          : ControlKernel::midpoint(make_time_edges(problem.horizon, config.opt.time_cells, path.times()),
                                    config.opt.space_for(problem), config.opt.grid_for(problem));
  PropagateOptions plain;
  plain.record_paths = false;
  MfeResult out;
  out.flow = propagate_fp(problem, path, start, grid, n, flow_seed, plain).flow;
  out.kernel = start;

  OptConfig opt = config.opt;
  opt.space = config.opt.space_for(problem);
  for (std::size_t it = 0; it < config.max_iters; ++it) {
    opt.initial_kernel = out.kernel;
    const auto br = best_response(problem, path, out.flow, opt);
    PropagateOptions frozen;
    frozen.record_paths = false;
    frozen.frozen_flow = &out.flow;
    const auto induced = propagate_fp(problem, path, br.kernel, grid, n, flow_seed, frozen).flow;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    StreamRng rng(derive_seed(config.opt.seed, "mfe-mix", it));
    std::shuffle(order.begin(), order.end(), rng);
    const auto replaced = static_cast<std::size_t>(std::llround(theta * static_cast<double>(n)));
    std::vector<char> take(n, 0);
    for (std::size_t i = 0; i < replaced; ++i) take[order[i]] = 1;

    MeasureFlow next = out.flow;
    for (std::size_t k = 0; k < next.clouds.size(); ++k) {
      next.clouds[k] = mix_cloud(out.flow.clouds[k], induced.clouds[k], take);
    }
    for (std::size_t j = 0; j < next.left_limits.size(); ++j) {
      next.left_limits[j] = mix_cloud(out.flow.left_limits[j], induced.left_limits[j], take);
    }
    const double residual = sup_w2(next, out.flow);
    out.residual_history.push_back(residual);
    out.flow = std::move(next);
    out.kernel = br.kernel;
    out.value = br.value;
    out.iterations = it + 1;
    if (residual <= config.residual_tol) break;
  }
  if (theta < 1.0) {
    // Retained particles were simulated under earlier kernels; the returned
    // flow is the law under the returned kernel.
    PropagateOptions frozen;
    frozen.record_paths = false;
    frozen.frozen_flow = &out.flow;
    out.flow = propagate_fp(problem, path, out.kernel, grid, n, flow_seed, frozen).flow;
  }
  out.exploitability = exploitability(problem, path, out.flow, out.kernel, opt);
  out.value = out.exploitability.kernel_cost;
  const bool settled = out.residual_history.back() <= config.residual_tol;
  const bool optimal = out.exploitability.value <=
                       3.0 * out.exploitability.se +
                           config.exploitability_relative * std::abs(out.exploitability.kernel_cost);
  out.converged = settled && optimal;
  return out;
}

double consistency_w2(const Problem& problem, const PointPath& path, const MfeResult& mfe,
                      const IterConfig& config, std::uint64_t seed) {
  const SimGrid grid = solver_grid(path, config.opt);
  PropagateOptions opts;
  opts.record_paths = false;
  opts.frozen_flow = &mfe.flow;
  const auto resim = propagate_fp(problem, path, mfe.kernel, grid, config.flow_particles,
                                  derive_seed(seed, "mfe-consistency"), opts);
  return sup_w2(resim.flow, mfe.flow);
}

StrongMfeEstimate assemble_strong_mfe(const Problem& problem, std::size_t n_paths,
                                      const IterConfig& config, std::uint64_t seed,
                                      std::size_t workers) {
  StrongMfeEstimate out;
  out.paths = sample_common_paths(problem.intensity, problem.horizon, n_paths, seed);
  // First occurrence of each distinct path is solved; duplicates reuse it.
  std::vector<std::size_t> owner(n_paths);
  std::map<std::uint64_t, std::size_t> first;
  std::vector<std::size_t> solves;
  for (std::size_t k = 0; k < n_paths; ++k) {
    const auto [it, inserted] = first.emplace(digest(out.paths[k]), k);
    owner[k] = it->second;
    if (inserted) solves.push_back(k);
  }
  std::vector<MfeResult> solved(solves.size());
  std::vector<double> consistency(solves.size());
  parallel_for(solves.size(), workers, [&](std::size_t q) {
    const std::size_t k = solves[q];
    IterConfig cfg = config;
    cfg.opt.seed = particle_seed(seed, k);
    cfg.opt.workers = 1;
    solved[q] = solve_pathwise_mfe(problem, out.paths[k], cfg);
    consistency[q] = consistency_w2(problem, out.paths[k], solved[q], cfg, cfg.opt.seed);
  });
  std::map<std::size_t, std::size_t> slot;
  for (std::size_t q = 0; q < solves.size(); ++q) slot[solves[q]] = q;
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto feed = [&](double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xFF;
      h *= 0x100000001B3ULL;
    }
  };
  for (std::size_t k = 0; k < n_paths; ++k) {
    const std::size_t q = slot[owner[k]];
    out.per_path.push_back(solved[q]);
    out.consistency.push_back(consistency[q]);
    if (solved[q].converged) ++out.converged;
    if (consistency[q] <= config.consistency_tol) ++out.consistent;
    feed(static_cast<double>(digest(out.paths[k])));
    for (double r : solved[q].residual_history) feed(r);
    for (double p : solved[q].kernel.table()) feed(p);
    feed(solved[q].exploitability.value);
    feed(consistency[q]);
  }
  out.distinct_solves = solves.size();
  out.digest = h;
  return out;
}

VerificationReport check_pathwise_mfe(const Problem& problem, const PointPath& path,
                                      const IterConfig& config, std::uint64_t seed,
                                      const MfeCheckOptions& options) {
  VerificationReport report;
  report.check_name = "pathwise-mfe";
  IterConfig cfg = config;
  cfg.opt.seed = derive_seed(seed, "mfe-single");
  const auto single = solve_pathwise_mfe(problem, path, cfg);
  const auto strong = assemble_strong_mfe(problem, options.paths, config, seed, options.workers);

  std::size_t good = 0;
  double worst_consistency = 0.0;
  for (std::size_t k = 0; k < strong.per_path.size(); ++k) {
    if (strong.per_path[k].converged && strong.consistency[k] <= config.consistency_tol) ++good;
    worst_consistency = std::max(worst_consistency, strong.consistency[k]);
  }
  const double share = options.paths ? static_cast<double>(good) / static_cast<double>(options.paths) : 1.0;
  report.inputs_digest = strong.digest ^ digest(path);
  report.set("iterations", static_cast<double>(single.iterations));
  report.set("final_residual", single.residual_history.back());
  report.set("exploitability", single.exploitability.value);
  report.set("exploitability_se", single.exploitability.se);
  report.set("value", single.value);
  report.set("paths", static_cast<double>(options.paths));
  report.set("converged_paths", static_cast<double>(strong.converged));
  report.set("consistent_paths", static_cast<double>(strong.consistent));
  report.set("success_share", share);
  report.set("worst_consistency_w2", worst_consistency);
  report.set("distinct_solves", static_cast<double>(strong.distinct_solves));
  report.trend("residual_history", single.residual_history);
  if (!single.converged) report.flags.push_back("fixed path did not converge");
  report.pass = single.converged && share >= options.success_fraction;
  return report;
}

}  // namespace mfcn
