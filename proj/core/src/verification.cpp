#include "mfcn/verification.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mfcn/dynamics.hpp"
#include "mfcn/parallel.hpp"
#include "mfcn/riccati.hpp"
#include "mfcn/rng.hpp"

namespace mfcn {

void VerificationReport::set(const std::string& name, double value) {
  for (auto& [k, v] : metrics) {
    if (k == name) {
      v = value;
      return;
    }
  }
  metrics.emplace_back(name, value);
}

bool VerificationReport::has(const std::string& name) const {
  return std::any_of(metrics.begin(), metrics.end(), [&](const auto& m) { return m.first == name; });
}

double VerificationReport::get(const std::string& name) const {
  for (const auto& [k, v] : metrics) {
    if (k == name) return v;
  }
  throw std::out_of_range("report " + check_name + " has no metric '" + name + "'");
}

void VerificationReport::trend(const std::string& name, std::vector<double> values) {
  trends.emplace_back(name, std::move(values));
}

std::string VerificationReport::to_json() const {
  nlohmann::ordered_json j;
  j["check"] = check_name;
  char digest[24];
  std::snprintf(digest, sizeof digest, "%016llx", static_cast<unsigned long long>(inputs_digest));
  j["inputs_digest"] = digest;
  j["pass"] = pass;
  auto& m = j["metrics"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : metrics) m[k] = v;
  auto& t = j["refinement_trend"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : trends) t[k] = v;
  j["flags"] = flags;
  return j.dump(2);
}

namespace {

class Digest {
 public:
  Digest& add(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h_ ^= (v >> (8 * i)) & 0xFF;
      h_ *= 0x100000001B3ULL;
    }
    return *this;
  }
  Digest& add(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    return add(bits);
  }
  Digest& add(const std::string& s) {
    for (unsigned char c : s) {
      h_ ^= c;
      h_ *= 0x100000001B3ULL;
    }
    return *this;
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xCBF29CE484222325ULL;
};

Digest& add_config(Digest& d, const OptConfig& c) {
  d.add(std::uint64_t{c.time_cells}).add(std::uint64_t{c.space_cells}).add(c.space_half_width);
  d.add(c.control_lo).add(c.control_hi).add(std::uint64_t{c.control_points}).add(c.dt);
  d.add(std::uint64_t{c.particles}).add(std::uint64_t{c.eval_particles});
  d.add(std::uint64_t{c.restarts}).add(std::uint64_t{c.max_sweeps}).add(c.accept_se);
  return d.add(c.seed);
}

std::pair<double, double> paired(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::logic_error("paired samples differ in size");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return mean_and_se(d);
}

bool nonincreasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[i - 1]) return false;
  }
  return true;
}

}  // namespace

VerificationReport check_superposition(const Problem& problem, const PointPath& path,
                                       const ControlKernel& kernel,
                                       const std::vector<Level>& levels, std::uint64_t seed,
                                       const SuperpositionOptions& options) {
  if (levels.empty()) throw std::invalid_argument("check_superposition: no levels");
  VerificationReport report;
  report.check_name = "superposition";
  Digest d;
  d.add(seed).add(digest(path)).add(digest(kernel)).add(options.tolerance);
  std::vector<double> metric;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const auto& level = levels[l];
    d.add(std::uint64_t{level.particles}).add(level.dt);
    const SimGrid grid = SimGrid::build(path, level.dt);
    PropagateOptions first;
    first.record_paths = false;
    const auto flow_run = propagate_fp(problem, path, kernel, grid, level.particles,
                                       derive_seed(seed, "superposition-flow", l), first);
    PropagateOptions second;
    second.record_paths = false;
    second.frozen_flow = &flow_run.flow;
    std::vector<double> shared;
    if (options.shared_initial) {
      const auto pts = flow_run.flow.clouds.front().points();
      shared.assign(pts.begin(), pts.end());
      second.initial_states = &shared;
    }
    const auto paths_run = propagate_fp(problem, path, kernel, grid, level.particles,
                                        derive_seed(seed, "superposition-paths", l), second);
    double worst = 0.0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      worst = std::max(worst, wasserstein2(paths_run.flow.clouds[k], flow_run.flow.clouds[k]).value);
    }
    for (std::size_t j = 0; j < flow_run.flow.left_limits.size(); ++j) {
      worst = std::max(worst, wasserstein2(paths_run.flow.left_limits[j],
                                           flow_run.flow.left_limits[j]).value);
    }
    metric.push_back(worst);
  }
  report.inputs_digest = d.value();
  report.set("w2_finest", metric.back());
  report.set("tolerance", options.tolerance);
  report.trend("w2_max_over_nodes", metric);
  const bool monotone = nonincreasing(metric);
  if (!monotone) report.flags.push_back("w2 metric not monotone under refinement");
  report.pass = monotone && metric.back() <= options.tolerance;
  return report;
}

namespace {

OptConfig coarsened(const OptConfig& c) {
  OptConfig out = c;
  out.time_cells = std::max<std::size_t>(1, c.time_cells / 2);
  out.space_cells = std::max<std::size_t>(1, c.space_cells / 2);
  out.control_points = std::max<std::size_t>(2, (c.control_points + 1) / 2);
  out.space.reset();
  out.initial_kernel.reset();
  if (!c.control_grid.empty()) {
    out.control_grid.clear();
    for (std::size_t g = 0; g < c.control_grid.size(); g += 2) out.control_grid.push_back(c.control_grid[g]);
  }
  return out;
}

double relative_error(double value, double reference) {
  if (std::abs(reference) < 1e-12) return std::abs(value - reference);
  return std::abs(value - reference) / std::abs(reference);
}

}  // namespace

VerificationReport check_value_equivalence(const Problem& problem, std::size_t n_common_paths,
                                           const OptConfig& pathwise,
                                           const PolicyConfig& policy, std::uint64_t seed,
                                           const EquivalenceOptions& options) {
  if (n_common_paths == 0) throw std::invalid_argument("check_value_equivalence: no paths");
  VerificationReport report;
  report.check_name = "value-equivalence";
  const auto paths =
      sample_common_paths(problem.intensity, problem.horizon, n_common_paths, seed);
  Digest d;
  d.add(seed).add(std::uint64_t{n_common_paths});
  add_config(d, pathwise);
  d.add(std::uint64_t{policy.max_jumps}).add(std::uint64_t{policy.time_buckets});
  d.add(std::uint64_t{policy.particles_per_path});
  for (const auto& p : paths) d.add(digest(p));
  report.inputs_digest = d.value();

  auto solve_paths = [&](const OptConfig& base, std::size_t count) {
    std::vector<PathwiseSolveResult> out(count);
    parallel_for(count, options.workers, [&](std::size_t k) {
      OptConfig cfg = base;
      cfg.seed = particle_seed(seed, k);
      cfg.workers = 1;
      out[k] = optimize_pathwise(problem, paths[k], cfg);
    });
    return out;
  };

  const auto lhs = solve_paths(pathwise, n_common_paths);
  OptConfig shared = pathwise;
  shared.workers = options.workers;
  PolicyConfig pc = policy;
  pc.eval_particles_per_path = pathwise.eval_particles;
  const auto rhs = optimize_policy(problem, paths, shared, pc, seed);

  std::vector<double> lhs_costs;
  std::size_t stalled = 0;
  for (std::size_t k = 0; k < n_common_paths; ++k) {
    lhs_costs.insert(lhs_costs.end(), lhs[k].eval_costs.begin(), lhs[k].eval_costs.end());
    if (lhs[k].diagnostics.stalled) ++stalled;
  }
  const auto [lhs_value, lhs_se] = mean_and_se(lhs_costs);
  const auto [gap, gap_se] = paired(lhs_costs, rhs.particle_costs);

  const std::size_t nb = std::min(options.budget_paths, n_common_paths);
  const auto coarse = solve_paths(coarsened(pathwise), nb);
  double fine_mean = 0.0, coarse_mean = 0.0;
  for (std::size_t k = 0; k < nb; ++k) {
    fine_mean += lhs[k].value / static_cast<double>(nb);
    coarse_mean += coarse[k].value / static_cast<double>(nb);
  }
  const double budget = std::abs(fine_mean - coarse_mean);

  report.set("lhs_pathwise_value", lhs_value);
  report.set("lhs_se", lhs_se);
  report.set("rhs_policy_value", rhs.value);
  report.set("rhs_se", rhs.value_se);
  report.set("gap", gap);
  report.set("gap_se", gap_se);
  report.set("refinement_budget", budget);
  report.set("paths", static_cast<double>(n_common_paths));
  report.set("stalled_paths", static_cast<double>(stalled));
  report.set("policy_stalled", rhs.diagnostics.stalled ? 1.0 : 0.0);
  report.trend("budget_paths_value", {coarse_mean, fine_mean});
  if (stalled > 0) report.flags.push_back("optimizer stalled on " + std::to_string(stalled) + " path(s)");
  if (rhs.diagnostics.stalled) report.flags.push_back("policy optimizer stalled");

  bool pass = std::abs(gap) <= 3.0 * gap_se + budget;
  if (problem.lq) {
    double oracle = 0.0;
    for (const auto& p : paths) {
      oracle += riccati_oracle(*problem.lq, p, problem.horizon, problem.initial_law.mean[0],
                               problem.initial_law.stddev[0])
                    .value;
    }
    oracle /= static_cast<double>(paths.size());
    const double el = relative_error(lhs_value, oracle);
    const double er = relative_error(rhs.value, oracle);
    report.set("riccati_average", oracle);
    report.set("lhs_oracle_relative_error", el);
    report.set("rhs_oracle_relative_error", er);
    report.set("oracle_tolerance", options.oracle_tolerance);
    pass = pass && el <= options.oracle_tolerance && er <= options.oracle_tolerance;
  }
  report.pass = pass;
  return report;
}

VerificationReport check_zero_intensity(const Problem& problem, const OptConfig& pathwise,
                                        const PolicyConfig& policy, std::uint64_t seed,
                                        const ZeroIntensityOptions& options) {
  VerificationReport report;
  report.check_name = "zero-intensity";
  IntensitySpec none = problem.intensity;
  none.total_rate = 0.0;
  const Problem quiet = problem.with_intensity(none);
  Digest d;
  d.add(seed).add(std::uint64_t{options.common_paths}).add(options.relative_tolerance);
  report.inputs_digest = add_config(d, pathwise).value();

  const PointPath empty = make_point_path(problem.horizon, {}, none);
  OptConfig cfg = pathwise;
  cfg.seed = particle_seed(seed, 0);
  const auto lhs = optimize_pathwise(quiet, empty, cfg);

  const auto paths = sample_common_paths(none, problem.horizon, options.common_paths,
                                         derive_seed(seed, "zero-intensity"));
  OptConfig shared = pathwise;
  shared.workers = options.workers;
  const auto rhs = optimize_policy(quiet, paths, shared, policy, derive_seed(seed, "zero-intensity"));

  std::vector<std::pair<double, double>> values = {{lhs.value, lhs.value_se},
                                                   {rhs.value, rhs.value_se}};
  report.set("pathwise_value", lhs.value);
  report.set("pathwise_se", lhs.value_se);
  report.set("common_noise_value", rhs.value);
  report.set("common_noise_se", rhs.value_se);
  if (problem.lq) {
    const double oracle = riccati_oracle(*problem.lq, empty, problem.horizon,
                                         problem.initial_law.mean[0],
                                         problem.initial_law.stddev[0])
                              .value;
    report.set("riccati_value", oracle);
    values.emplace_back(oracle, 0.0);
  }
  const double scale = std::abs(values.back().first);
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (std::size_t j = i + 1; j < values.size(); ++j) {
      const double se = std::hypot(values[i].second, values[j].second);
      const double excess = std::abs(values[i].first - values[j].first) -
                            (3.0 * se + options.relative_tolerance * scale);
      worst = std::max(worst, excess);
    }
  }
  report.set("worst_pairwise_excess", worst);
  report.set("relative_tolerance", options.relative_tolerance);
  report.pass = worst <= 0.0;
  return report;
}

VerificationReport check_strict_gap(const Problem& problem, const PointPath& path,
                                    const OptConfig& config, const StrictGapOptions& options) {
  VerificationReport report;
  report.check_name = "strict-gap";
  Digest d;
  d.add(digest(path)).add(options.relative_tolerance).add(options.entropy_ratio);
  report.inputs_digest = add_config(d, config).value();

  const auto res = optimize_pathwise(problem, path, config);
  const ControlKernel strict = strictify(res.kernel);
  const auto e = estimate_cost(problem, path, strict, config.dt, config.eval_particles,
                               evaluation_seed(config.seed));
  const auto [gap, se] = paired(e.particle_costs, res.eval_costs);

  // Cells visited by the evaluation run of k*.
  const SimGrid grid = solver_grid(path, config);
  PropagateOptions opts;
  opts.record_paths = false;
  const auto run = propagate_fp(problem, path, res.kernel, grid, config.eval_particles,
                                evaluation_seed(config.seed), opts);
  std::vector<char> seen(res.kernel.time_cells() * res.kernel.space_cells(), 0);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const std::size_t j = res.kernel.time_cell(grid.time(k));
    const auto& cloud = run.flow.clouds[k];
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      seen[j * res.kernel.space_cells() + res.kernel.space_cell(cloud.point(i))] = 1;
    }
  }
  double entropy = 0.0;
  std::size_t visited = 0;
  for (std::size_t c = 0; c < seen.size(); ++c) {
    if (!seen[c]) continue;
    entropy += res.kernel.entropy(c / res.kernel.space_cells(), c % res.kernel.space_cells());
    ++visited;
  }
  entropy /= static_cast<double>(std::max<std::size_t>(visited, 1));
  const double uniform = std::log(static_cast<double>(res.kernel.grid_size()));
  const double ratio = uniform > 0.0 ? entropy / uniform : 0.0;

  report.set("relaxed_value", res.value);
  report.set("strict_value", e.value);
  report.set("gap", gap);
  report.set("gap_se", se);
  report.set("mean_cell_entropy", entropy);
  report.set("uniform_entropy", uniform);
  report.set("entropy_ratio", ratio);
  report.set("visited_cells", static_cast<double>(visited));
  if (res.diagnostics.stalled) report.flags.push_back("optimizer stalled");
  report.pass = gap <= 3.0 * se + options.relative_tolerance * std::abs(res.value) &&
                ratio <= options.entropy_ratio;
  return report;
}

namespace {

class ResidualObserver final : public SimObserver {
 public:
  ResidualObserver(const Problem& problem, const SimGrid& grid, const ControlKernel& kernel,
                   const QuadraticForm& phi, std::size_t n)
      : per_particle(n, 0.0), problem_(problem), grid_(grid), kernel_(kernel), phi_(phi),
        hess_(phi.hessian()), prev_phi_(n), prev_gen_(n), left_done_(false) {}

  void on_left_limit(std::size_t k, std::span<const double> x) override {
    close_step(k, x);
    left_done_ = true;
  }

  void on_node(std::size_t k, std::span<const double> x, std::span<const double>) override {
    if (k > 0 && !left_done_) close_step(k, x);
    left_done_ = false;
    open_step(k, x);
  }

  std::vector<double> per_particle;
  double drift = 0.0;

 private:
  void close_step(std::size_t k, std::span<const double> x) {
    const double dt = grid_.dt(k - 1);
    const std::size_t dim = problem_.dim_state;
    for (std::size_t i = 0; i < per_particle.size(); ++i) {
      per_particle[i] += phi_.value(x.subspan(i * dim, dim)) - prev_phi_[i] - dt * prev_gen_[i];
    }
  }

  void open_step(std::size_t k, std::span<const double> x) {
    if (k == grid_.steps()) return;
    const std::size_t n = per_particle.size();
    const std::size_t dim = problem_.dim_state;
    const std::size_t d = problem_.dim_noise;
    const auto& coef = *problem_.coefficients;
    const double t = grid_.time(k);
    const double dt = grid_.dt(k);
    std::optional<ParticleCloud> own;
    const ParticleCloud dummy = ParticleCloud::dirac(Vector(dim, 0.0));
    const ParticleCloud* mu = &dummy;
    if (coef.uses_measure()) {
      own.emplace(dim, std::vector<double>(x.begin(), x.end()));
      mu = &*own;
    }
    const std::size_t j = kernel_.time_cell(t);
    Vector b(dim), sig(dim * d), grad(dim);
    double bhb_mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto xi = x.subspan(i * dim, dim);
      prev_phi_[i] = phi_.value(xi);
      phi_.gradient(xi, grad);
      const auto p = kernel_.probs(j, kernel_.space_cell(xi));
      double gen = 0.0, bhb = 0.0;
      for (std::size_t g = 0; g < p.size(); ++g) {
        if (p[g] <= 0.0) continue;
        const auto& u = kernel_.control_grid()[g];
        coef.drift(t, xi, *mu, u, b);
        coef.diffusion(t, xi, *mu, u, sig);
        double lin = 0.0, tr = 0.0, quad = 0.0;
        for (std::size_t a = 0; a < dim; ++a) lin += b[a] * grad[a];
        for (std::size_t a = 0; a < dim; ++a) {
          for (std::size_t c = 0; c < dim; ++c) {
            double ss = 0.0;
            for (std::size_t m = 0; m < d; ++m) ss += sig[a * d + m] * sig[c * d + m];
            tr += ss * hess_[c * dim + a];
            quad += b[a] * hess_[a * dim + c] * b[c];
          }
        }
        gen += p[g] * (lin + 0.5 * tr);
        bhb += p[g] * quad;
      }
      prev_gen_[i] = gen;
      bhb_mean += bhb / static_cast<double>(n);
    }
    drift += 0.5 * dt * dt * bhb_mean;
  }

  const Problem& problem_;
  const SimGrid& grid_;
  const ControlKernel& kernel_;
  const QuadraticForm& phi_;
  Vector hess_;
  std::vector<double> prev_phi_, prev_gen_;
  bool left_done_;
};

}  // namespace

MartingaleResidual martingale_residual(const Problem& problem, const PointPath& path,
                                       const ControlKernel& kernel, const QuadraticForm& phi,
                                       const Level& level, std::uint64_t seed) {
  if (phi.dim != problem.dim_state) {
    throw std::invalid_argument("martingale_residual: test function dimension mismatch");
  }
  const SimGrid grid = SimGrid::build(path, level.dt);
  const Engine engine(problem, grid, path, seed);
  std::vector<double> x = engine.initial_states(level.particles);
  std::vector<std::uint32_t> ids(level.particles);
  std::iota(ids.begin(), ids.end(), 0u);
  std::vector<double> costs(level.particles, 0.0);
  const std::vector<const ControlKernel*> kernels(grid.size(), &kernel);
  ResidualObserver obs(problem, grid, kernel, phi, level.particles);
  engine.run(0, grid.steps(), x, ids, kernels, costs, false, &obs);
  MartingaleResidual out;
  const auto [mean, se] = mean_and_se(obs.per_particle);
  out.residual = mean;
  out.se = se;
  out.drift = obs.drift;
  return out;
}

VerificationReport check_martingale_residual(const Problem& problem, const PointPath& path,
                                             const ControlKernel& kernel,
                                             const std::vector<QuadraticForm>& phis,
                                             const std::vector<Level>& levels,
                                             std::uint64_t seed) {
  if (levels.empty() || phis.empty()) {
    throw std::invalid_argument("check_martingale_residual: need levels and test functions");
  }
  VerificationReport report;
  report.check_name = "martingale-residual";
  Digest d;
  d.add(seed).add(digest(path)).add(digest(kernel));
  for (const auto& l : levels) d.add(std::uint64_t{l.particles}).add(l.dt);
  report.inputs_digest = d.value();
  bool pass = true;
  for (std::size_t f = 0; f < phis.size(); ++f) {
    const std::string tag = "phi" + std::to_string(f);
    std::vector<double> residual, drift, se;
    for (std::size_t l = 0; l < levels.size(); ++l) {
      // Same particle streams at every level and for every test function.
      const auto r = martingale_residual(problem, path, kernel, phis[f], levels[l],
                                         derive_seed(seed, "residual", l));
      residual.push_back(r.residual);
      drift.push_back(r.drift);
      se.push_back(r.se);
    }
    report.set(tag + "_residual", residual.back());
    report.set(tag + "_se", se.back());
    report.set(tag + "_drift_component", drift.back());
    report.set(tag + "_noise_component", residual.back() - drift.back());
    report.trend(tag + "_residual", residual);
    report.trend(tag + "_drift_component", drift);
    const bool small = std::abs(residual.back()) <= 3.0 * se.back() + 1e-10;
    bool trend_ok = true;
    const bool exact = std::all_of(drift.begin(), drift.end(), [](double v) { return v == 0.0; });
    for (std::size_t l = 1; l < drift.size() && !exact; ++l) {
      const double ratio = std::abs(drift[l]) > 0.0 ? drift[l - 1] / drift[l] : INFINITY;
      report.set(tag + "_drift_ratio_" + std::to_string(l), ratio);
      if (levels[l].dt < levels[l - 1].dt && !(ratio >= 1.5 && ratio <= 3.0)) trend_ok = false;
    }
    if (exact) report.flags.push_back(tag + ": drift component identically zero");
    if (!small) report.flags.push_back(tag + ": residual exceeds 3 SE");
    if (!trend_ok) report.flags.push_back(tag + ": drift component ratio outside [1.5, 3]");
    pass = pass && small && trend_ok;
  }
  report.pass = pass;
  return report;
}

VerificationReport check_moment_growth(const Problem& problem, const ControlKernel& kernel,
                                       const std::vector<double>& intensity_sweep, double p,
                                       std::uint64_t seed, const MomentOptions& options) {
  if (!(p >= 1.0)) throw std::invalid_argument("check_moment_growth: p must be >= 1");
  VerificationReport report;
  report.check_name = "moment-growth";
  Digest d;
  d.add(seed).add(p).add(digest(kernel)).add(std::uint64_t{options.paths});
  d.add(std::uint64_t{options.particles}).add(options.dt);
  for (double r : intensity_sweep) d.add(r);
  report.inputs_digest = d.value();
  const double m = problem.declared_lipschitz;
  const double factor = std::pow(1.0 + 2.0 * m, p);

  std::size_t checks = 0, violations = 0;
  double worst = 0.0;
  std::vector<double> ks, logs;
  for (std::size_t r = 0; r < intensity_sweep.size(); ++r) {
    IntensitySpec spec = problem.intensity;
    spec.total_rate = intensity_sweep[r];
    const Problem prob = problem.with_intensity(spec);
    const auto paths = sample_common_paths(spec, problem.horizon, options.paths,
                                           derive_seed(seed, "moment-paths", r));
    struct PathResult {
      std::size_t checks = 0, violations = 0;
      double worst = 0.0, sup = 0.0;
    };
    std::vector<PathResult> results(paths.size());
    parallel_for(paths.size(), options.workers, [&](std::size_t k) {
      const SimGrid grid = SimGrid::build(paths[k], options.dt);
      PropagateOptions opts;
      opts.record_paths = false;
      const auto run = propagate_fp(prob, paths[k], kernel, grid, options.particles,
                                    derive_seed(seed, "moment-particles", r * 1000003 + k), opts);
      auto& res = results[k];
      for (std::size_t j = 0; j < run.flow.jump_nodes.size(); ++j) {
        const double before = std::pow(moment(run.flow.left_limits[j], p), p);
        const double after = std::pow(moment(run.flow.clouds[run.flow.jump_nodes[j]], p), p);
        const double bound = factor * (1.0 + before);
        ++res.checks;
        res.worst = std::max(res.worst, after / bound);
        if (after > bound * (1.0 + 1e-12)) ++res.violations;
      }
      for (const auto& c : run.flow.clouds) res.sup = std::max(res.sup, std::pow(moment(c, p), p));
    });
    for (std::size_t k = 0; k < paths.size(); ++k) {
      checks += results[k].checks;
      violations += results[k].violations;
      worst = std::max(worst, results[k].worst);
      if (results[k].sup > 0.0) {
        ks.push_back(static_cast<double>(paths[k].events.size()));
        logs.push_back(std::log(results[k].sup));
      }
    }
  }
  // Least-squares slope of log sup_t M_p^p against the jump count.
  double fitted = 1.0;
  if (ks.size() >= 2) {
    const double n = static_cast<double>(ks.size());
    const double mk = std::accumulate(ks.begin(), ks.end(), 0.0) / n;
    const double ml = std::accumulate(logs.begin(), logs.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < ks.size(); ++i) {
      sxy += (ks[i] - mk) * (logs[i] - ml);
      sxx += (ks[i] - mk) * (ks[i] - mk);
    }
    if (sxx > 0.0) fitted = std::exp(sxy / sxx);
  }
  report.set("jump_checks", static_cast<double>(checks));
  report.set("violations", static_cast<double>(violations));
  report.set("max_ratio_to_bound", worst);
  report.set("bound_factor", factor);
  report.set("fitted_geometric_factor", fitted);
  report.pass = violations == 0;
  return report;
}

VerificationReport check_value_continuity(const Problem& problem,
                                          const std::vector<double>& scales,
                                          const OptConfig& config, std::uint64_t seed,
                                          const ContinuityOptions& options) {
  if (scales.empty()) throw std::invalid_argument("check_value_continuity: no scales");
  VerificationReport report;
  report.check_name = "value-continuity";
  const auto paths = sample_common_paths(problem.intensity, problem.horizon, options.paths, seed);
  Digest d;
  d.add(seed).add(options.slope).add(options.oracle_relative);
  for (double s : scales) d.add(s);
  for (const auto& p : paths) d.add(digest(p));
  report.inputs_digest = add_config(d, config).value();

  OptConfig base_cfg = config;
  base_cfg.space = config.space_for(problem);
  base_cfg.workers = 1;
  const std::size_t K = paths.size();
  std::vector<PathwiseSolveResult> base(K);
  parallel_for(K, options.workers, [&](std::size_t k) {
    OptConfig cfg = base_cfg;
    cfg.seed = particle_seed(seed, k);
    base[k] = optimize_pathwise(problem, paths[k], cfg);
  });
  std::vector<double> base_costs;
  for (const auto& b : base) base_costs.insert(base_costs.end(), b.eval_costs.begin(), b.eval_costs.end());
  const double base_value = mean_and_se(base_costs).first;
  report.set("base_value", base_value);

  std::vector<double> gaps, ses, oracle_gaps;
  bool oracle_ok = true;
  for (std::size_t j = 0; j < scales.size(); ++j) {
    InitialLaw law = problem.initial_law;
    for (double& m : law.mean) m += scales[j];
    const Problem shifted = problem.with_initial_law(law);
    std::vector<PathwiseSolveResult> runs(K);
    parallel_for(K, options.workers, [&](std::size_t k) {
      OptConfig cfg = base_cfg;
      cfg.seed = particle_seed(seed, k);
      cfg.initial_kernel = base[k].kernel;
      runs[k] = optimize_pathwise(shifted, paths[k], cfg);
    });
    std::vector<double> costs;
    for (const auto& r : runs) costs.insert(costs.end(), r.eval_costs.begin(), r.eval_costs.end());
    const auto [gap, se] = paired(costs, base_costs);
    gaps.push_back(std::abs(gap));
    ses.push_back(se);
    const std::string tag = "scale" + std::to_string(j);
    report.set(tag, scales[j]);
    report.set(tag + "_gap", gap);
    report.set(tag + "_se", se);
    if (problem.lq) {
      double od = 0.0;
      for (const auto& p : paths) {
        const double s0 = problem.initial_law.stddev[0];
        od += riccati_oracle(*problem.lq, p, problem.horizon, law.mean[0], s0).value -
              riccati_oracle(*problem.lq, p, problem.horizon, problem.initial_law.mean[0], s0).value;
      }
      od /= static_cast<double>(K);
      oracle_gaps.push_back(od);
      report.set(tag + "_oracle_gap", od);
      const bool ok = std::abs(gap - od) <= 3.0 * se + options.oracle_relative * std::abs(base_value);
      if (!ok) report.flags.push_back(tag + ": gap differs from the Riccati difference");
      oracle_ok = oracle_ok && ok;
    }
  }
  report.trend("abs_gap", gaps);
  if (!oracle_gaps.empty()) report.trend("oracle_gap", oracle_gaps);
  const bool monotone = nonincreasing(gaps);
  if (!monotone) report.flags.push_back("gaps not nonincreasing in the scale");
  const double tol = options.slope * std::abs(scales.back());
  report.set("smallest_scale_tolerance", tol);
  report.pass = monotone && gaps.back() <= tol + 2.0 * ses.back() && oracle_ok;
  return report;
}

}  // namespace mfcn
