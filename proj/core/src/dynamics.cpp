#include "mfcn/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>

#include "mfcn/parallel.hpp"
#include "mfcn/rng.hpp"

namespace mfcn {

namespace {

constexpr std::uint32_t kControlSlot = 0x80000000u;
constexpr std::uint32_t kInitialNode = 0xFFFFFFFFu;

void check_path_grid(const SimGrid& grid, const PointPath& path) {
  if (grid.jump_nodes.size() != path.events.size()) {
    throw std::invalid_argument("grid does not carry the jump times of the path");
  }
  const double tol = 1e-12 * path.horizon;
  for (std::size_t e = 0; e < path.events.size(); ++e) {
    if (std::abs(grid.time(grid.jump_nodes[e]) - path.events[e].time) > tol) {
      throw std::invalid_argument("grid does not carry the jump times of the path");
    }
  }
  if (std::abs(grid.time(grid.steps()) - path.horizon) > tol) {
    throw std::invalid_argument("grid horizon differs from the path horizon");
  }
}

void check_kernel(const ControlKernel& kernel, const Problem& problem) {
  if (std::abs(kernel.time_edges().back() - problem.horizon) > 1e-12 * problem.horizon ||
      kernel.time_edges().front() != 0.0) {
    throw std::invalid_argument("kernel time cells do not cover [0, T]");
  }
  if (kernel.space().dim() != problem.dim_state) {
    throw std::invalid_argument("kernel space partition has the wrong dimension");
  }
  if (kernel.control_dim() != problem.control_set.dim()) {
    throw std::invalid_argument("kernel control grid has the wrong dimension");
  }
}

}  // namespace

SimGrid SimGrid::build(double horizon, double step_hint, std::span<const double> jump_times) {
  if (!(horizon > 0.0) || !(step_hint > 0.0)) {
    throw std::invalid_argument("SimGrid: horizon and step must be > 0");
  }
  const auto m = static_cast<std::size_t>(
      std::max(1.0, std::ceil(horizon / step_hint - 1e-9)));
  std::vector<double> nodes(m + 1);
  for (std::size_t k = 0; k <= m; ++k) {
    nodes[k] = horizon * static_cast<double>(k) / static_cast<double>(m);
  }
  nodes.back() = horizon;
  const double snap = 1e-9 * horizon;
  for (double t : jump_times) {
    if (!(t > 0.0) || t > horizon) throw std::invalid_argument("SimGrid: jump time outside (0, T]");
    auto it = std::lower_bound(nodes.begin(), nodes.end(), t - snap);
    if (it != nodes.end() && *it == t) continue;
    if (it != nodes.begin() && it + 1 < nodes.end() && std::abs(*it - t) <= snap) {
      *it = t;
    } else {
      nodes.insert(it, t);
    }
  }
  SimGrid g;
  g.step_hint = step_hint;
  for (double t : jump_times) {
    const auto it = std::lower_bound(nodes.begin(), nodes.end(), t);
    g.jump_nodes.push_back(static_cast<std::size_t>(it - nodes.begin()));
  }
  g.nodes = std::make_shared<const std::vector<double>>(std::move(nodes));
  return g;
}

SimGrid SimGrid::build(const PointPath& path, double step_hint) {
  const auto times = path.times();
  return build(path.horizon, step_hint, times);
}

double SimGrid::weight(std::size_t k) const {
  double w = 0.0;
  if (k > 0) w += 0.5 * dt(k - 1);
  if (k < steps()) w += 0.5 * dt(k);
  return w;
}

std::ptrdiff_t SimGrid::event_at(std::size_t node) const {
  for (std::size_t e = 0; e < jump_nodes.size(); ++e) {
    if (jump_nodes[e] == node) return static_cast<std::ptrdiff_t>(e);
  }
  return -1;
}

PiecewisePath PathEnsemble::trajectory(std::size_t i) const {
  PiecewisePath p;
  p.grid = grid.nodes;
  p.dim = dim;
  p.jump_times = jump_times;
  p.values.reserve(grid.size() * dim);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const auto s = state(k, i);
    p.values.insert(p.values.end(), s.begin(), s.end());
  }
  return p;
}

ParticleCloud PathEnsemble::marginal(std::size_t node) const {
  const auto begin = states.begin() + static_cast<std::ptrdiff_t>(node * particles * dim);
  return ParticleCloud(dim, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(particles * dim)));
}

Engine::Engine(const Problem& problem, SimGrid grid, const PointPath& path, std::uint64_t seed,
               const MeasureFlow* frozen)
    : problem_(problem),
      grid_(std::move(grid)),
      path_(path),
      frozen_(frozen),
      coupled_(problem.coefficients->uses_measure() && frozen == nullptr),
      seed_(seed),
      dummy_(ParticleCloud::dirac(Vector(problem.dim_state, 0.0))) {
  check_path_grid(grid_, path_);
  if (frozen_) {
    if (frozen_->grid.size() != grid_.size()) {
      throw std::invalid_argument("frozen flow grid does not match the simulation grid");
    }
    for (std::size_t k = 0; k < grid_.size(); ++k) {
      if (std::abs(frozen_->grid[k] - grid_.time(k)) > 1e-12 * problem.horizon) {
        throw std::invalid_argument("frozen flow grid does not match the simulation grid");
      }
    }
  }
}

std::vector<double> Engine::initial_states(std::size_t n) const {
  const std::size_t dim = problem_.dim_state;
  const CounterRng rng(derive_seed(seed_, "initial"));
  std::vector<double> x(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < dim; a += 2) {
      const auto z = rng.normals(static_cast<std::uint32_t>(i), kInitialNode,
                                 static_cast<std::uint32_t>(a / 2));
      for (std::size_t b = a; b < std::min(a + 2, dim); ++b) {
        x[i * dim + b] = problem_.initial_law.mean[b] + problem_.initial_law.stddev[b] * z[b - a];
      }
    }
  }
  return x;
}

const ParticleCloud& Engine::argument(std::size_t node, bool left, std::span<const double> x,
                                      std::size_t n, ParticleCloud& scratch) const {
  if (frozen_) return left ? frozen_->left_limit(node) : frozen_->clouds[node];
  if (!coupled_) return dummy_;
  scratch = ParticleCloud(problem_.dim_state,
                          std::vector<double>(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(n * problem_.dim_state)));
  return scratch;
}

void Engine::run(std::size_t from, std::size_t to, std::vector<double>& x,
                 std::span<const std::uint32_t> ids,
                 std::span<const ControlKernel* const> kernels, std::span<double> costs,
                 bool include_last, SimObserver* observer) const {
  const std::size_t n = ids.size();
  const std::size_t dim = problem_.dim_state;
  const std::size_t d = problem_.dim_noise;
  const auto& coef = *problem_.coefficients;
  if (to >= grid_.size() || from > to) throw std::invalid_argument("Engine::run: bad node range");
  if (kernels.size() < grid_.size()) throw std::invalid_argument("Engine::run: one kernel per node");
  if (x.size() != n * dim || costs.size() != n) {
    throw std::invalid_argument("Engine::run: state/cost size mismatch");
  }
  const CounterRng noise(derive_seed(seed_, "brownian"));
  const CounterRng control(derive_seed(seed_, "control"));
  ParticleCloud scratch = dummy_;
  Vector b(dim), sig(dim * d), dw(d), g(dim);

  auto fail = [&](std::size_t k, std::size_t i, const char* what) {
    throw std::runtime_error(std::string("non-finite particle state (") + what + ") at step " +
                             std::to_string(k) + ", particle " + std::to_string(ids[i]));
  };

  for (std::size_t k = from;; ++k) {
    const double t = grid_.time(k);
    const ParticleCloud& mu = argument(k, false, x, n, scratch);
    if (observer) observer->on_node(k, x, costs);
    const ControlKernel& kernel = *kernels[k];
    const std::size_t j = kernel.time_cell(t);
    const auto& grid = kernel.control_grid();

    if (k < to || include_last) {
      const double w = grid_.weight(k);
      for (std::size_t i = 0; i < n; ++i) {
        const std::span<const double> xi(x.data() + i * dim, dim);
        const std::size_t s = kernel.space_cell(xi);
        const int dirac = kernel.dirac_index(j, s);
        double f = 0.0;
        if (dirac >= 0) {
          f = coef.running_cost(t, xi, mu, grid[static_cast<std::size_t>(dirac)]);
        } else {
          const auto p = kernel.probs(j, s);
          for (std::size_t q = 0; q < p.size(); ++q) {
            if (p[q] > 0.0) f += p[q] * coef.running_cost(t, xi, mu, grid[q]);
          }
        }
        costs[i] += w * f;
      }
    }
    if (k == to) break;

    const double h = grid_.dt(k);
    const double sq = std::sqrt(h);
    for (std::size_t i = 0; i < n; ++i) {
      const std::span<double> xi(x.data() + i * dim, dim);
      const std::size_t s = kernel.space_cell(xi);
      const int dirac = kernel.dirac_index(j, s);
      const std::size_t q =
          dirac >= 0 ? static_cast<std::size_t>(dirac)
                     : kernel.sample(j, s, control.uniforms(ids[i], static_cast<std::uint32_t>(k), kControlSlot)[0]);
      const auto& u = grid[q];
      coef.drift(t, xi, mu, u, b);
      coef.diffusion(t, xi, mu, u, sig);
      for (std::size_t m = 0; m < d; m += 2) {
        const auto z = noise.normals(ids[i], static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(m / 2));
        dw[m] = sq * z[0];
        if (m + 1 < d) dw[m + 1] = sq * z[1];
      }
      for (std::size_t a = 0; a < dim; ++a) {
        double inc = b[a] * h;
        for (std::size_t m = 0; m < d; ++m) inc += sig[a * d + m] * dw[m];
        xi[a] += inc;
        if (!std::isfinite(xi[a])) fail(k + 1, i, "diffusion step");
      }
    }

    const std::ptrdiff_t e = grid_.event_at(k + 1);
    if (e >= 0) {
      if (observer) observer->on_left_limit(k + 1, x);
      ParticleCloud left_scratch = dummy_;
      const ParticleCloud& mu_left = argument(k + 1, true, x, n, left_scratch);
      const double tj = grid_.time(k + 1);
      const auto& mark = path_.events[static_cast<std::size_t>(e)].mark;
      for (std::size_t i = 0; i < n; ++i) {
        const std::span<double> xi(x.data() + i * dim, dim);
        coef.jump(tj, xi, mu_left, mark, g);
        for (std::size_t a = 0; a < dim; ++a) {
          xi[a] += g[a];
          if (!std::isfinite(xi[a])) fail(k + 1, i, "jump");
        }
      }
    }
  }
}

namespace {

class Recorder final : public SimObserver {
 public:
  Recorder(const SimGrid& grid, std::size_t n, std::size_t dim, bool paths)
      : grid_(grid), n_(n), dim_(dim), paths_(paths) {
    if (paths_) states.resize(grid.size() * n * dim);
  }

  void on_node(std::size_t k, std::span<const double> x, std::span<const double>) override {
    clouds.emplace_back(dim_, std::vector<double>(x.begin(), x.end()));
    if (paths_) std::copy(x.begin(), x.end(), states.begin() + static_cast<std::ptrdiff_t>(k * n_ * dim_));
  }
  void on_left_limit(std::size_t, std::span<const double> x) override {
    left.emplace_back(x.begin(), x.end());
  }

  std::vector<ParticleCloud> clouds;
  std::vector<std::vector<double>> left;
  std::vector<double> states;

 private:
  const SimGrid& grid_;
  std::size_t n_, dim_;
  bool paths_;
};

}  // namespace

std::pair<double, double> mean_and_se(std::span<const double> values) {
  if (values.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

Propagation propagate_with_kernels(const Problem& problem, const PointPath& path,
                                   const SimGrid& grid,
                                   std::span<const ControlKernel* const> kernels,
                                   std::size_t n_particles, std::uint64_t seed,
                                   const PropagateOptions& options) {
  if (n_particles == 0) throw std::invalid_argument("propagate: n_particles must be >= 1");
  for (const auto* k : kernels) check_kernel(*k, problem);
  const Engine engine(problem, grid, path, seed, options.frozen_flow);
  const std::size_t dim = problem.dim_state;
  std::vector<double> x;
  if (options.initial_states) {
    if (options.initial_states->size() != n_particles * dim) {
      throw std::invalid_argument("propagate: initial_states has the wrong size");
    }
    x = *options.initial_states;
  } else {
    x = engine.initial_states(n_particles);
  }
  std::vector<std::uint32_t> ids(n_particles);
  std::iota(ids.begin(), ids.end(), 0u);
  Propagation out;
  out.particle_costs.assign(n_particles, 0.0);
  Recorder rec(grid, n_particles, dim, options.record_paths);
  engine.run(0, grid.steps(), x, ids, kernels, out.particle_costs, true, &rec);

  out.flow.grid = *grid.nodes;
  out.flow.clouds = std::move(rec.clouds);
  out.flow.jump_nodes = grid.jump_nodes;
  for (const auto& l : rec.left) out.flow.left_limits.emplace_back(dim, l);
  if (options.record_paths) {
    out.ensemble.grid = grid;
    out.ensemble.dim = dim;
    out.ensemble.particles = n_particles;
    out.ensemble.states = std::move(rec.states);
    out.ensemble.left_states = std::move(rec.left);
    out.ensemble.jump_times = path.times();
    out.ensemble.seed = seed;
    out.ensemble.kernel_digest = kernels.empty() ? 0 : digest(*kernels.front());
  }
  std::tie(out.cost, out.cost_se) = mean_and_se(out.particle_costs);
  return out;
}

Propagation propagate_fp(const Problem& problem, const PointPath& path,
                         const ControlKernel& kernel, const SimGrid& grid,
                         std::size_t n_particles, std::uint64_t seed,
                         const PropagateOptions& options) {
  const std::vector<const ControlKernel*> kernels(grid.size(), &kernel);
  return propagate_with_kernels(problem, path, grid, kernels, n_particles, seed, options);
}

ParticleCloud apply_jump(const ParticleCloud& cloud, double t, std::span<const double> mark,
                         const ParticleCloud& mu_left, const Problem& problem) {
  const std::size_t dim = cloud.dim();
  std::vector<double> pts(cloud.points().begin(), cloud.points().end());
  Vector g(dim);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    problem.coefficients->jump(t, cloud.point(i), mu_left, mark, g);
    for (std::size_t a = 0; a < dim; ++a) {
      if (!std::isfinite(g[a])) {
        throw std::runtime_error("coefficient 'jump' returned a non-finite value at t=" +
                                 std::to_string(t) + ", particle " + std::to_string(i));
      }
      pts[i * dim + a] += g[a];
    }
  }
  if (cloud.uniform()) return ParticleCloud(dim, std::move(pts));
  std::vector<double> w(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) w[i] = cloud.weight(i);
  return ParticleCloud(dim, std::move(pts), std::move(w));
}

std::vector<PiecewisePath> extract_continuous_part(const PathEnsemble& ensemble,
                                                   const PointPath& path,
                                                   const MeasureFlow& flow,
                                                   const Problem& problem) {
  const SimGrid& grid = ensemble.grid;
  if (flow.grid.size() != grid.size() || flow.jump_nodes != grid.jump_nodes ||
      path.events.size() != grid.jump_nodes.size() ||
      ensemble.left_states.size() != grid.jump_nodes.size()) {
    throw std::invalid_argument("extract_continuous_part: mismatched grids");
  }
  const std::size_t dim = ensemble.dim;
  std::vector<PiecewisePath> out(ensemble.particles);
  Vector g(dim), jumps(dim);
  for (std::size_t i = 0; i < ensemble.particles; ++i) {
    std::fill(jumps.begin(), jumps.end(), 0.0);
    PiecewisePath& y = out[i];
    y.grid = grid.nodes;
    y.dim = dim;
    y.values.resize(grid.size() * dim);
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const std::ptrdiff_t e = grid.event_at(k);
      if (e >= 0) {
        const auto ue = static_cast<std::size_t>(e);
        problem.coefficients->jump(grid.time(k), ensemble.left_state(ue, i),
                                   flow.left_limits[ue], path.events[ue].mark, g);
        for (std::size_t a = 0; a < dim; ++a) jumps[a] += g[a];
      }
      const auto x = ensemble.state(k, i);
      for (std::size_t a = 0; a < dim; ++a) y.values[k * dim + a] = x[a] - jumps[a];
    }
  }
  return out;
}

namespace {

SimGrid slice(const SimGrid& grid, std::size_t from, std::size_t to) {
  SimGrid s;
  s.step_hint = grid.step_hint;
  s.nodes = std::make_shared<const std::vector<double>>(
      grid.nodes->begin() + static_cast<std::ptrdiff_t>(from),
      grid.nodes->begin() + static_cast<std::ptrdiff_t>(to) + 1);
  for (std::size_t k : grid.jump_nodes) {
    if (k > from && k <= to) s.jump_nodes.push_back(k - from);
  }
  return s;
}

class SegmentRecorder final : public SimObserver {
 public:
  SegmentRecorder(std::size_t from, std::size_t nodes, std::size_t width)
      : from_(from), width_(width), states(nodes * width) {}
  void on_node(std::size_t k, std::span<const double> x, std::span<const double>) override {
    std::copy(x.begin(), x.end(), states.begin() + static_cast<std::ptrdiff_t>((k - from_) * width_));
  }
  void on_left_limit(std::size_t k, std::span<const double> x) override {
    left.emplace_back(x.begin(), x.end());
    left_nodes.push_back(k);
  }
  std::size_t from_, width_;
  std::vector<double> states;
  std::vector<std::vector<double>> left;
  std::vector<std::size_t> left_nodes;
};

}  // namespace

PathEnsemble propagate_segment(const Problem& problem, const PointPath& path,
                               const ControlKernel& kernel, const SimGrid& grid,
                               std::size_t from, std::size_t to,
                               const std::vector<double>& start_states, std::uint64_t seed,
                               bool jump_at_end) {
  check_kernel(kernel, problem);
  const std::size_t dim = problem.dim_state;
  if (start_states.empty() || start_states.size() % dim != 0) {
    throw std::invalid_argument("propagate_segment: bad start states");
  }
  const std::size_t n = start_states.size() / dim;
  const Engine engine(problem, grid, path, seed);
  std::vector<double> x = start_states;
  std::vector<std::uint32_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0u);
  std::vector<double> costs(n, 0.0);
  const std::vector<const ControlKernel*> kernels(grid.size(), &kernel);
  SegmentRecorder rec(from, to - from + 1, n * dim);
  engine.run(from, to, x, ids, kernels, costs, false, &rec);

  PathEnsemble out;
  out.grid = slice(grid, from, to);
  out.dim = dim;
  out.particles = n;
  out.states = std::move(rec.states);
  out.seed = seed;
  out.kernel_digest = digest(kernel);
  for (std::size_t j = 0; j < rec.left.size(); ++j) {
    const double t = grid.time(rec.left_nodes[j]);
    if (rec.left_nodes[j] == to && !jump_at_end) {
      std::copy(rec.left[j].begin(), rec.left[j].end(),
                out.states.begin() + static_cast<std::ptrdiff_t>((to - from) * n * dim));
      out.grid.jump_nodes.pop_back();
      continue;
    }
    out.left_states.push_back(std::move(rec.left[j]));
    out.jump_times.push_back(t);
  }
  return out;
}

TailGenerator make_fp_tail_generator(const Problem& problem, const PointPath& path,
                                     const ControlKernel& kernel, const SimGrid& grid,
                                     std::size_t jump_node, std::uint64_t seed) {
  const std::ptrdiff_t e = grid.event_at(jump_node);
  if (e < 0) throw std::invalid_argument("make_fp_tail_generator: node is not a jump node");
  return [&problem, &path, &kernel, &grid, jump_node, seed, e](const std::vector<double>& left) {
    const std::size_t dim = problem.dim_state;
    const ParticleCloud mu_left(dim, left);
    const ParticleCloud after = apply_jump(mu_left, grid.time(jump_node),
                                           path.events[static_cast<std::size_t>(e)].mark,
                                           mu_left, problem);
    const std::vector<double> start(after.points().begin(), after.points().end());
    return propagate_segment(problem, path, kernel, grid, jump_node, grid.steps(), start, seed);
  };
}

PathEnsemble concatenate(const PathEnsemble& head, const TailGenerator& tail, double t2,
                         const Problem& problem, const PointPath& path,
                         const MeasureFlow& flow) {
  const double tol_t = 1e-9 * path.horizon;
  const std::size_t last = head.grid.steps();
  if (std::abs(head.grid.time(last) - t2) > tol_t) {
    throw std::invalid_argument("concatenate: head does not end at t2");
  }
  std::ptrdiff_t event = -1;
  for (std::size_t e = 0; e < path.events.size(); ++e) {
    if (std::abs(path.events[e].time - t2) <= tol_t) event = static_cast<std::ptrdiff_t>(e);
  }
  if (event < 0) throw std::invalid_argument("concatenate: t2 is not a jump time of the path");
  const std::size_t n = head.particles;
  const std::size_t dim = head.dim;
  const std::vector<double> left(head.states.begin() + static_cast<std::ptrdiff_t>(last * n * dim),
                                 head.states.end());
  const PathEnsemble tl = tail(left);
  if (tl.particles != n || tl.dim != dim || std::abs(tl.grid.time(0) - t2) > tol_t) {
    throw std::invalid_argument("concatenate: tail does not start at t2 with the head's particles");
  }

  // mu_{t2-}: the flow's stored left limit when it has a node at t2.
  std::optional<ParticleCloud> own;
  const ParticleCloud* mu_left = nullptr;
  for (std::size_t j = 0; j < flow.jump_nodes.size(); ++j) {
    if (std::abs(flow.grid[flow.jump_nodes[j]] - t2) <= tol_t) mu_left = &flow.left_limits[j];
  }
  if (!mu_left) {
    own.emplace(dim, left);
    mu_left = &*own;
  }
  Vector g(dim);
  const auto& mark = path.events[static_cast<std::size_t>(event)].mark;
  for (std::size_t i = 0; i < n; ++i) {
    const std::span<const double> xl(left.data() + i * dim, dim);
    problem.coefficients->jump(t2, xl, *mu_left, mark, g);
    const auto start = tl.state(0, i);
    for (std::size_t a = 0; a < dim; ++a) {
      const double expected = xl[a] + g[a];
      if (std::abs(start[a] - expected) > 1e-10 * std::max(1.0, std::abs(expected))) {
        throw std::runtime_error("concatenate: tail violates the jump condition at t2 for particle " +
                                 std::to_string(i));
      }
    }
  }

  PathEnsemble out;
  out.dim = dim;
  out.particles = n;
  out.seed = head.seed;
  out.kernel_digest = head.kernel_digest;
  std::vector<double> nodes(head.grid.nodes->begin(), head.grid.nodes->end() - 1);
  nodes.insert(nodes.end(), tl.grid.nodes->begin(), tl.grid.nodes->end());
  out.grid.step_hint = head.grid.step_hint;
  out.states.assign(head.states.begin(), head.states.begin() + static_cast<std::ptrdiff_t>(last * n * dim));
  out.states.insert(out.states.end(), tl.states.begin(), tl.states.end());
  for (std::size_t j = 0; j < head.grid.jump_nodes.size(); ++j) {
    if (head.grid.jump_nodes[j] >= last) continue;
    out.grid.jump_nodes.push_back(head.grid.jump_nodes[j]);
    out.left_states.push_back(head.left_states[j]);
    out.jump_times.push_back(head.grid.time(head.grid.jump_nodes[j]));
  }
  out.grid.jump_nodes.push_back(last);
  out.left_states.push_back(left);
  out.jump_times.push_back(t2);
  for (std::size_t j = 0; j < tl.grid.jump_nodes.size(); ++j) {
    out.grid.jump_nodes.push_back(last + tl.grid.jump_nodes[j]);
    out.left_states.push_back(tl.left_states[j]);
    out.jump_times.push_back(tl.jump_times[j]);
  }
  out.grid.nodes = std::make_shared<const std::vector<double>>(std::move(nodes));
  return out;
}

JumpHistoryPolicy JumpHistoryPolicy::constant(const ControlKernel& kernel, std::size_t max_jumps,
                                              std::size_t time_buckets, double horizon) {
  if (time_buckets == 0) throw std::invalid_argument("JumpHistoryPolicy: time_buckets >= 1");
  JumpHistoryPolicy p;
  p.max_jumps = max_jumps;
  p.time_buckets = time_buckets;
  p.horizon = horizon;
  p.kernels.assign((max_jumps + 1) * time_buckets, kernel);
  return p;
}

std::size_t JumpHistoryPolicy::index(std::size_t jumps, double last_jump_time) const {
  const std::size_t m = std::min(jumps, max_jumps);
  std::size_t bucket = 0;
  if (jumps > 0) {
    const double pos = std::floor(last_jump_time / horizon * static_cast<double>(time_buckets));
    bucket = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(time_buckets - 1)));
  }
  return m * time_buckets + bucket;
}

std::vector<std::size_t> JumpHistoryPolicy::node_tables(const PointPath& path,
                                                        const SimGrid& grid) const {
  std::vector<std::size_t> out(grid.size());
  std::size_t jumps = 0;
  double last = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    while (jumps < grid.jump_nodes.size() && grid.jump_nodes[jumps] <= k) {
      last = path.events[jumps].time;
      ++jumps;
    }
    out[k] = index(jumps, last);
  }
  return out;
}

std::vector<const ControlKernel*> JumpHistoryPolicy::node_kernels(const PointPath& path,
                                                                  const SimGrid& grid) const {
  const auto tables = node_tables(path, grid);
  std::vector<const ControlKernel*> out(tables.size());
  for (std::size_t k = 0; k < tables.size(); ++k) out[k] = &kernels.at(tables[k]);
  return out;
}

std::uint64_t common_path_seed(std::uint64_t master, std::size_t k) {
  return derive_seed(master, "common-path", k);
}

std::uint64_t particle_seed(std::uint64_t master, std::size_t k) {
  return derive_seed(master, "particles", k);
}

std::vector<PointPath> sample_common_paths(const IntensitySpec& intensity, double horizon,
                                           std::size_t count, std::uint64_t master) {
  std::vector<PointPath> paths;
  paths.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    paths.push_back(sample_point_path(intensity, horizon, common_path_seed(master, k)));
  }
  return paths;
}

std::vector<CommonNoiseSample> simulate_common_noise_system(
    const Problem& problem, const JumpHistoryPolicy& policy, std::size_t n_particles,
    std::size_t n_common_paths, double grid_hint, std::uint64_t seed, std::size_t workers,
    const std::vector<PointPath>* paths, bool record_paths) {
  std::vector<PointPath> drawn;
  if (!paths) {
    drawn = sample_common_paths(problem.intensity, problem.horizon, n_common_paths, seed);
    paths = &drawn;
  } else if (paths->size() != n_common_paths) {
    throw std::invalid_argument("simulate_common_noise_system: path count mismatch");
  }
  std::vector<CommonNoiseSample> out(n_common_paths);
  parallel_for(n_common_paths, workers, [&](std::size_t k) {
    const PointPath& path = (*paths)[k];
    const SimGrid grid = SimGrid::build(path, grid_hint);
    const auto kernels = policy.node_kernels(path, grid);
    PropagateOptions opts;
    opts.record_paths = record_paths;
    out[k].path = path;
    out[k].run = propagate_with_kernels(problem, path, grid, kernels, n_particles,
                                        particle_seed(seed, k), opts);
  });
  return out;
}

}  // namespace mfcn
