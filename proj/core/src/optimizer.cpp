#include "mfcn/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "mfcn/parallel.hpp"
#include "mfcn/rng.hpp"

namespace mfcn {

double evaluate_cost(const MeasureFlow& flow, const ControlKernel& kernel,
                     const Problem& problem) {
  const auto& g = flow.grid;
  if (g.size() != flow.clouds.size() || g.empty()) {
    throw std::invalid_argument("evaluate_cost: flow grid and clouds differ in size");
  }
  if (std::abs(g.back() - kernel.time_edges().back()) > 1e-12 * problem.horizon) {
    throw std::invalid_argument("evaluate_cost: kernel and flow horizons differ");
  }
  const auto& coef = *problem.coefficients;
  double total = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    double w = 0.0;
    if (k > 0) w += 0.5 * (g[k] - g[k - 1]);
    if (k + 1 < g.size()) w += 0.5 * (g[k + 1] - g[k]);
    const ParticleCloud& mu = flow.clouds[k];
    const std::size_t j = kernel.time_cell(g[k]);
    const double avg = mu.integrate([&](std::span<const double> x) {
      const std::size_t s = kernel.space_cell(x);
      const auto p = kernel.probs(j, s);
      double f = 0.0;
      for (std::size_t q = 0; q < p.size(); ++q) {
        if (p[q] > 0.0) f += p[q] * coef.running_cost(g[k], x, mu, kernel.control_grid()[q]);
      }
      return f;
    });
    total += w * avg;
  }
  return total;
}

std::vector<Vector> OptConfig::grid_for(const Problem& problem) const {
  auto grid = control_grid.empty() ? linear_control_grid(control_lo, control_hi, control_points)
                                   : control_grid;
  for (const auto& u : grid) {
    if (u.size() != problem.control_set.dim() || !problem.control_set.contains(u, 1e-12)) {
      throw std::invalid_argument("optimizer: control grid leaves the control set");
    }
  }
  return grid;
}

SpacePartition OptConfig::space_for(const Problem& problem) const {
  if (space) return *space;
  return SpacePartition::around(problem.initial_law, space_cells, space_half_width);
}

void OptConfig::validate() const {
  if (time_cells == 0 || space_cells == 0 || particles == 0 || eval_particles == 0) {
    throw std::invalid_argument("OptConfig: cell and particle counts must be >= 1");
  }
  if (!(dt > 0.0)) throw std::invalid_argument("OptConfig: dt must be > 0");
  if (!(accept_se >= 0.0)) throw std::invalid_argument("OptConfig: accept_se must be >= 0");
}

std::uint64_t training_seed(std::uint64_t seed) { return derive_seed(seed, "train"); }
std::uint64_t evaluation_seed(std::uint64_t seed) { return derive_seed(seed, "eval"); }

SimGrid solver_grid(const PointPath& path, const OptConfig& config) {
  return SimGrid::build(path, config.dt);
}

CostEstimate estimate_cost(const Problem& problem, const PointPath& path,
                           const ControlKernel& kernel, double dt, std::size_t particles,
                           std::uint64_t seed, const MeasureFlow* frozen_flow) {
  PropagateOptions opts;
  opts.frozen_flow = frozen_flow;
  opts.record_paths = false;
  const SimGrid grid = SimGrid::build(path, dt);
  Propagation run = propagate_fp(problem, path, kernel, grid, particles, seed, opts);
  return {run.cost, run.cost_se, std::move(run.particle_costs)};
}

namespace {

struct Segment {
  std::size_t table, cell, start;
};

struct Scenario {
  const PointPath* path = nullptr;
  SimGrid grid;
  std::unique_ptr<Engine> engine;
  std::vector<std::size_t> node_table;
  std::vector<Segment> segments;
  std::vector<std::size_t> seg_of_node;
  std::size_t n = 0;
  std::vector<double> initial;
  // Per segment: states and accumulated costs at its first node.
  std::vector<std::vector<double>> snap_states, snap_costs;
  std::vector<std::uint64_t> masks;  // n x segments
  std::vector<double> total;

  std::ptrdiff_t find(std::size_t table, std::size_t cell) const {
    for (std::size_t q = 0; q < segments.size(); ++q) {
      if (segments[q].table == table && segments[q].cell == cell) return static_cast<std::ptrdiff_t>(q);
    }
    return -1;
  }
};

std::uint64_t cell_bit(std::size_t s, std::size_t cells) {
  return cells > 64 ? ~0ULL : (1ULL << s);
}

class Tracker final : public SimObserver {
 public:
  Tracker(Scenario& sc, std::span<const std::uint32_t> ids, std::size_t dim,
          const SpacePartition& space)
      : sc_(sc), ids_(ids), dim_(dim), space_(space), cells_(space.count()) {}

  void on_node(std::size_t k, std::span<const double> x, std::span<const double> costs) override {
    const std::size_t seg = sc_.seg_of_node[k];
    const std::size_t nseg = sc_.segments.size();
    const bool start = sc_.segments[seg].start == k;
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      const std::size_t id = ids_[i];
      const std::span<const double> xi(x.data() + i * dim_, dim_);
      if (start) {
        std::copy(xi.begin(), xi.end(), sc_.snap_states[seg].begin() + static_cast<std::ptrdiff_t>(id * dim_));
        sc_.snap_costs[seg][id] = costs[i];
      }
      sc_.masks[id * nseg + seg] |= cell_bit(space_.locate(xi), cells_);
    }
  }

 private:
  Scenario& sc_;
  std::span<const std::uint32_t> ids_;
  std::size_t dim_;
  const SpacePartition& space_;
  std::size_t cells_;
};

struct Candidate {
  Vector probs;
  double mean = 0.0;
  double se = 0.0;
};

class KernelSearch {
 public:
  KernelSearch(const Problem& problem, std::vector<Scenario>& scenarios,
               const OptConfig& config)
      : problem_(problem), scenarios_(scenarios), config_(config) {
    for (const auto& sc : scenarios_) total_particles_ += sc.n;
  }

  double objective() const {
    double s = 0.0;
    for (const auto& sc : scenarios_) s += std::accumulate(sc.total.begin(), sc.total.end(), 0.0);
    return s / static_cast<double>(total_particles_);
  }

  std::vector<ControlKernel> run(std::vector<ControlKernel> tables, SearchDiagnostics& diag) {
    tables_ = std::move(tables);
    for (auto& sc : scenarios_) simulate_base(sc);
    diag.history.push_back(objective());
    const std::size_t J = tables_.front().time_cells();
    const std::size_t S = tables_.front().space_cells();
    for (std::size_t sweep = 1; sweep <= config_.max_sweeps; ++sweep) {
      ++diag.sweeps;
      std::size_t accepted = 0;
      for (std::size_t j = J; j-- > 0;) {
        for (std::size_t h = 0; h < tables_.size(); ++h) {
          for (std::size_t s = 0; s < S; ++s) {
            if (!visited(h, j, s)) continue;
            if (improve_cell(h, j, s, sweep == 1, diag)) {
              ++accepted;
              diag.history.push_back(objective());
            }
          }
        }
      }
      diag.accepted += accepted;
      if (accepted == 0) {
        diag.converged = true;
        break;
      }
    }
    diag.stalled = !diag.converged;
    return tables_;
  }

 private:
  std::vector<const ControlKernel*> node_kernels(const Scenario& sc, std::size_t table,
                                                 const ControlKernel* replacement) const {
    std::vector<const ControlKernel*> out(sc.node_table.size());
    for (std::size_t k = 0; k < out.size(); ++k) {
      const std::size_t t = sc.node_table[k];
      out[k] = (replacement && t == table) ? replacement : &tables_[t];
    }
    return out;
  }

  void simulate_base(Scenario& sc) {
    const std::size_t dim = problem_.dim_state;
    const std::size_t nseg = sc.segments.size();
    sc.snap_states.assign(nseg, std::vector<double>(sc.n * dim));
    sc.snap_costs.assign(nseg, std::vector<double>(sc.n));
    sc.masks.assign(sc.n * nseg, 0);
    sc.total.assign(sc.n, 0.0);
    std::vector<std::uint32_t> ids(sc.n);
    std::iota(ids.begin(), ids.end(), 0u);
    std::vector<double> x = sc.initial;
    const auto kernels = node_kernels(sc, 0, nullptr);
    Tracker tracker(sc, ids, dim, tables_.front().space());
    sc.engine->run(0, sc.grid.steps(), x, ids, kernels, sc.total, true, &tracker);
  }

  std::vector<std::uint32_t> affected(const Scenario& sc, std::size_t seg, std::size_t s) const {
    std::vector<std::uint32_t> ids;
    const std::size_t nseg = sc.segments.size();
    const std::uint64_t bit = cell_bit(s, tables_.front().space_cells());
    for (std::size_t i = 0; i < sc.n; ++i) {
      if (sc.engine->coupled() || (sc.masks[i * nseg + seg] & bit)) {
        ids.push_back(static_cast<std::uint32_t>(i));
      }
    }
    // Interacting particles only move together.
    if (sc.engine->coupled()) {
      bool any = false;
      for (std::size_t i = 0; i < sc.n && !any; ++i) any = (sc.masks[i * nseg + seg] & bit) != 0;
      if (!any) ids.clear();
    }
    return ids;
  }

  bool visited(std::size_t h, std::size_t j, std::size_t s) const {
    const std::uint64_t bit = cell_bit(s, tables_.front().space_cells());
    for (const auto& sc : scenarios_) {
      const auto seg = sc.find(h, j);
      if (seg < 0) continue;
      const std::size_t nseg = sc.segments.size();
      for (std::size_t i = 0; i < sc.n; ++i) {
        if (sc.masks[i * nseg + static_cast<std::size_t>(seg)] & bit) return true;
      }
    }
    return false;
  }

  // Re-simulates the affected particles from the segment start and returns
  // their new total costs (ids per scenario).
  void resimulate(const Scenario& sc, std::size_t seg, const std::vector<std::uint32_t>& ids,
                  const std::vector<const ControlKernel*>& kernels, std::vector<double>& costs,
                  SimObserver* observer) const {
    const std::size_t dim = problem_.dim_state;
    std::vector<double> x(ids.size() * dim);
    costs.resize(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      std::copy_n(sc.snap_states[seg].begin() + static_cast<std::ptrdiff_t>(ids[i] * dim), dim,
                  x.begin() + static_cast<std::ptrdiff_t>(i * dim));
      costs[i] = sc.snap_costs[seg][ids[i]];
    }
    sc.engine->run(sc.segments[seg].start, sc.grid.steps(), x, ids, kernels, costs, true, observer);
  }

  Candidate evaluate(std::size_t h, std::size_t j, std::size_t s, Vector probs) const {
    ControlKernel replacement = tables_[h];
    replacement.set_probs(j, s, probs);
    double sum = 0.0, sum_sq = 0.0;
    for (auto& sc : scenarios_) {
      const auto seg = sc.find(h, j);
      if (seg < 0) continue;
      const auto ids = affected(sc, static_cast<std::size_t>(seg), s);
      if (ids.empty()) continue;
      std::vector<double> costs;
      resimulate(sc, static_cast<std::size_t>(seg), ids, node_kernels(sc, h, &replacement), costs,
                 nullptr);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const double d = costs[i] - sc.total[ids[i]];
        sum += d;
        sum_sq += d * d;
      }
    }
    const double n = static_cast<double>(total_particles_);
    Candidate c;
    c.probs = std::move(probs);
    c.mean = sum / n;
    if (total_particles_ > 1) {
      const double var = std::max(0.0, (sum_sq / n - c.mean * c.mean) * n / (n - 1.0));
      c.se = std::sqrt(var / n);
    }
    return c;
  }

  void rebase(std::size_t h, std::size_t j, std::size_t s) {
    const std::size_t dim = problem_.dim_state;
    for (auto& sc : scenarios_) {
      const auto sseg = sc.find(h, j);
      if (sseg < 0) continue;
      const auto seg = static_cast<std::size_t>(sseg);
      const auto ids = affected(sc, seg, s);
      if (ids.empty()) continue;
      const std::size_t nseg = sc.segments.size();
      for (std::uint32_t id : ids) {
        for (std::size_t q = seg; q < nseg; ++q) sc.masks[id * nseg + q] = 0;
      }
      // The segment's own snapshot is rewritten with identical values.
      Tracker tracker(sc, ids, dim, tables_.front().space());
      std::vector<double> costs;
      resimulate(sc, seg, ids, node_kernels(sc, 0, nullptr), costs, &tracker);
      for (std::size_t i = 0; i < ids.size(); ++i) sc.total[ids[i]] = costs[i];
    }
  }

  std::vector<Candidate> evaluate_all(std::size_t h, std::size_t j, std::size_t s,
                                      std::vector<Vector> probs, SearchDiagnostics& diag) const {
    std::vector<Candidate> out(probs.size());
    parallel_for(probs.size(), config_.workers,
                 [&](std::size_t c) { out[c] = evaluate(h, j, s, std::move(probs[c])); });
    diag.evaluations += out.size();
    return out;
  }

  bool improve_cell(std::size_t h, std::size_t j, std::size_t s, bool first_sweep,
                    SearchDiagnostics& diag) {
    const std::size_t G = tables_[h].grid_size();
    const auto current = tables_[h].probs(j, s);
    const Vector cur(current.begin(), current.end());
    const int cur_dirac = tables_[h].dirac_index(j, s);
    const auto cur_max = static_cast<std::size_t>(std::max_element(cur.begin(), cur.end()) - cur.begin());

    auto dirac = [&](std::size_t g) {
      Vector p(G, 0.0);
      p[g] = 1.0;
      return p;
    };
    auto mix = [&](std::size_t a, std::size_t b) {
      Vector p(G, 0.0);
      p[a] = 0.5;
      p[b] = 0.5;
      return p;
    };
    std::vector<char> tried(G, 0);
    if (cur_dirac >= 0) tried[static_cast<std::size_t>(cur_dirac)] = 1;
    Candidate best;  // the current vector: zero change
    best.probs = cur;
    std::size_t best_index = cur_max;

    auto run_diracs = [&](const std::vector<std::size_t>& indices) {
      std::vector<Vector> probs;
      std::vector<std::size_t> which;
      for (std::size_t g : indices) {
        if (g >= G || tried[g]) continue;
        tried[g] = 1;
        probs.push_back(dirac(g));
        which.push_back(g);
      }
      auto results = evaluate_all(h, j, s, std::move(probs), diag);
      for (std::size_t c = 0; c < results.size(); ++c) {
        if (results[c].mean < best.mean) {
          best = std::move(results[c]);
          best_index = which[c];
        }
      }
    };

    std::size_t radius = config_.window;
    if (first_sweep) {
      const std::size_t stride = std::max<std::size_t>(1, G / 12);
      std::vector<std::size_t> scan;
      for (std::size_t g = 0; g < G; g += stride) scan.push_back(g);
      scan.push_back(G - 1);
      run_diracs(scan);
      radius = stride > 1 ? stride - 1 : config_.window;
    }
    std::vector<std::size_t> local;
    const std::size_t centre = best_index;
    for (std::size_t r = 1; r <= radius; ++r) {
      if (centre >= r) local.push_back(centre - r);
      local.push_back(centre + r);
    }
    run_diracs(local);

    std::vector<Vector> mixtures;
    if (best_index > 0) mixtures.push_back(mix(best_index - 1, best_index));
    if (best_index + 1 < G) mixtures.push_back(mix(best_index, best_index + 1));
    std::erase_if(mixtures, [&](const Vector& p) { return p == cur; });
    auto results = evaluate_all(h, j, s, std::move(mixtures), diag);
    for (auto& r : results) {
      if (r.mean < best.mean) best = std::move(r);
    }

    const double gain = -best.mean;
    const double floor = config_.min_improvement * (1.0 + std::abs(objective()));
    if (!(gain > config_.accept_se * best.se) || !(gain > floor)) return false;
    tables_[h].set_probs(j, s, best.probs);
    rebase(h, j, s);
    return true;
  }

  const Problem& problem_;
  std::vector<Scenario>& scenarios_;
  const OptConfig& config_;
  std::vector<ControlKernel> tables_;
  std::size_t total_particles_ = 0;
};

Scenario make_scenario(const Problem& problem, const PointPath& path, const OptConfig& config,
                       const std::vector<std::size_t>& node_table, const ControlKernel& layout,
                       std::size_t n, std::uint64_t seed, const MeasureFlow* frozen) {
  Scenario sc;
  sc.path = &path;
  sc.grid = solver_grid(path, config);
  sc.engine = std::make_unique<Engine>(problem, sc.grid, path, seed, frozen);
  sc.node_table = node_table;
  sc.n = n;
  sc.initial = sc.engine->initial_states(n);
  sc.seg_of_node.resize(sc.grid.size());
  for (std::size_t k = 0; k < sc.grid.size(); ++k) {
    const std::size_t cell = layout.time_cell(sc.grid.time(k));
    if (sc.segments.empty() || sc.segments.back().table != node_table[k] ||
        sc.segments.back().cell != cell) {
      sc.segments.push_back({node_table[k], cell, k});
    }
    sc.seg_of_node[k] = sc.segments.size() - 1;
  }
  return sc;
}

ControlKernel random_kernel(const ControlKernel& layout, std::uint64_t seed) {
  ControlKernel k = layout;
  StreamRng rng(seed);
  Vector p(k.grid_size());
  for (std::size_t j = 0; j < k.time_cells(); ++j) {
    for (std::size_t s = 0; s < k.space_cells(); ++s) {
      double total = 0.0;
      for (double& v : p) {
        v = -std::log(1.0 - rng.uniform());
        total += v;
      }
      for (double& v : p) v /= total;
      double sum = 0.0;
      for (std::size_t g = 0; g + 1 < p.size(); ++g) sum += p[g];
      p.back() = std::max(0.0, 1.0 - sum);
      k.set_probs(j, s, p);
    }
  }
  return k;
}

// Runs the multistart search and returns the best tables.
std::vector<ControlKernel> multistart(const Problem& problem, std::vector<Scenario>& scenarios,
                                      const OptConfig& config,
                                      const std::vector<ControlKernel>& initial,
                                      SearchDiagnostics& diag, double& train_value) {
  KernelSearch search(problem, scenarios, config);
  std::vector<ControlKernel> best;
  double best_value = 0.0;
  for (std::size_t r = 0; r <= config.restarts; ++r) {
    std::vector<ControlKernel> start = initial;
    if (r > 0) {
      for (std::size_t h = 0; h < start.size(); ++h) {
        start[h] = random_kernel(initial[h], derive_seed(config.seed, "restart", r * 1000 + h));
      }
    }
    SearchDiagnostics d;
    auto tables = search.run(std::move(start), d);
    const double value = search.objective();
    if (r == 0 || value < best_value) {
      best = std::move(tables);
      best_value = value;
      d.best_restart = r;
      d.evaluations += diag.evaluations;
      diag = std::move(d);
    } else {
      diag.evaluations += d.evaluations;
    }
  }
  train_value = best_value;
  return best;
}

}  // namespace

PathwiseSolveResult optimize_pathwise(const Problem& problem, const PointPath& path,
                                      const OptConfig& config, const MeasureFlow* frozen_flow) {
  config.validate();
  const auto times = path.times();
  ControlKernel layout =
      config.initial_kernel
          ? *config.initial_kernel
          : ControlKernel::midpoint(make_time_edges(problem.horizon, config.time_cells, times),
                                    config.space_for(problem), config.grid_for(problem));
  layout.validate(&problem.control_set);
  std::vector<Scenario> scenarios;
  const SimGrid grid = solver_grid(path, config);
  scenarios.push_back(make_scenario(problem, path, config, std::vector<std::size_t>(grid.size(), 0),
                                    layout, config.particles, training_seed(config.seed),
                                    frozen_flow));
  PathwiseSolveResult out;
  auto tables = multistart(problem, scenarios, config, {layout}, out.diagnostics, out.train_value);
  out.kernel = std::move(tables.front());
  const auto eval = estimate_cost(problem, path, out.kernel, config.dt, config.eval_particles,
                                  evaluation_seed(config.seed), frozen_flow);
  out.value = eval.value;
  out.value_se = eval.se;
  out.eval_costs = eval.particle_costs;
  return out;
}

PolicySolveResult evaluate_policy(const Problem& problem, const std::vector<PointPath>& paths,
                                  const JumpHistoryPolicy& policy, const OptConfig& config,
                                  std::size_t particles_per_path, std::uint64_t seed) {
  PolicySolveResult out;
  out.policy = policy;
  out.path_values.resize(paths.size());
  std::vector<std::vector<double>> costs(paths.size());
  parallel_for(paths.size(), config.workers, [&](std::size_t k) {
    const SimGrid grid = solver_grid(paths[k], config);
    const auto kernels = policy.node_kernels(paths[k], grid);
    PropagateOptions opts;
    opts.record_paths = false;
    auto run = propagate_with_kernels(problem, paths[k], grid, kernels, particles_per_path,
                                      evaluation_seed(particle_seed(seed, k)), opts);
    out.path_values[k] = run.cost;
    costs[k] = std::move(run.particle_costs);
  });
  for (const auto& c : costs) out.particle_costs.insert(out.particle_costs.end(), c.begin(), c.end());
  std::tie(out.value, out.value_se) = mean_and_se(out.particle_costs);
  return out;
}

PolicySolveResult optimize_policy(const Problem& problem, const std::vector<PointPath>& paths,
                                  const OptConfig& config, const PolicyConfig& policy_config,
                                  std::uint64_t seed) {
  config.validate();
  if (paths.empty()) throw std::invalid_argument("optimize_policy: no paths");
  const ControlKernel layout =
      config.initial_kernel
          ? *config.initial_kernel
          : ControlKernel::midpoint(make_time_edges(problem.horizon, config.time_cells),
                                    config.space_for(problem), config.grid_for(problem));
  layout.validate(&problem.control_set);
  const JumpHistoryPolicy initial = JumpHistoryPolicy::constant(
      layout, policy_config.max_jumps, policy_config.time_buckets, problem.horizon);
  std::vector<Scenario> scenarios;
  scenarios.reserve(paths.size());
  for (std::size_t k = 0; k < paths.size(); ++k) {
    const SimGrid grid = solver_grid(paths[k], config);
    scenarios.push_back(make_scenario(problem, paths[k], config, initial.node_tables(paths[k], grid),
                                      layout, policy_config.particles_per_path,
                                      training_seed(particle_seed(seed, k)), nullptr));
  }
  SearchDiagnostics diag;
  double train = 0.0;
  auto tables = multistart(problem, scenarios, config, initial.kernels, diag, train);
  JumpHistoryPolicy policy = initial;
  policy.kernels = std::move(tables);
  PolicySolveResult out = evaluate_policy(problem, paths, policy, config,
                                          policy_config.eval_particles_per_path, seed);
  out.train_value = train;
  out.diagnostics = std::move(diag);
  return out;
}

}  // namespace mfcn
