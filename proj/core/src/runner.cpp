#include "mfcn/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mfcn/common_noise.hpp"
#include "mfcn/dynamics.hpp"
#include "mfcn/kernel.hpp"
#include "mfcn/mfg.hpp"
#include "mfcn/optimizer.hpp"
#include "mfcn/parallel.hpp"
#include "mfcn/riccati.hpp"
#include "mfcn/rng.hpp"
#include "mfcn/verification.hpp"

#ifndef MFCN_VERSION
#define MFCN_VERSION "unknown"
#endif

namespace mfcn {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

ConfigError::ConfigError(std::string field, const std::string& message)
    : std::runtime_error(field.empty() ? message : field + ": " + message),
      field_(std::move(field)) {}

std::vector<std::string> command_names() {
  return {"sample-noise", "solve-pathwise", "value", "mfg", "verify", "replay"};
}

std::vector<std::string> check_names() {
  return {"superposition", "value-equivalence", "zero-intensity", "moment-growth",
          "strict-gap",    "continuity",        "martingale",     "pathwise-mfe"};
}

std::string format_metric(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

namespace {

std::string hex(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string join(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

// Reads an object, remembering consumed keys so leftovers can be rejected.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json* take(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, double& out) {
    if (const json* v = take(key)) out = as_double(*v, join(path_, key));
  }
  void read(const std::string& key, std::size_t& out) {
    if (const json* v = take(key)) out = as_size(*v, join(path_, key));
  }
  void read(const std::string& key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) throw ConfigError(join(path_, key), "expected a string");
      out = v->get<std::string>();
    }
  }
  void read(const std::string& key, std::vector<double>& out) {
    if (const json* v = take(key)) {
      const std::string f = join(path_, key);
      if (!v->is_array()) throw ConfigError(f, "expected an array of numbers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        out.push_back(as_double((*v)[i], f + "[" + std::to_string(i) + "]"));
      }
    }
  }
  void read(const std::string& key, std::vector<std::string>& out) {
    if (const json* v = take(key)) {
      const std::string f = join(path_, key);
      if (!v->is_array()) throw ConfigError(f, "expected an array of strings");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_string()) throw ConfigError(f + "[" + std::to_string(i) + "]", "expected a string");
        out.push_back((*v)[i].get<std::string>());
      }
    }
  }
  void read(const std::string& key, std::vector<LevelSetting>& out) {
    if (const json* v = take(key)) {
      const std::string f = join(path_, key);
      if (!v->is_array()) throw ConfigError(f, "expected an array of levels");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        Reader r((*v)[i], f + "[" + std::to_string(i) + "]");
        LevelSetting level;
        r.read("particles", level.particles);
        r.read("dt", level.dt);
        r.finish();
        out.push_back(level);
      }
    }
  }

  Reader child(const std::string& key) {
    const json* v = take(key);
    static const json empty = json::object();
    return Reader(v ? *v : empty, join(path_, key));
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(join(path_, key), "unknown key");
    }
  }

 private:
  static double as_double(const json& v, const std::string& field) {
    if (!v.is_number()) throw ConfigError(field, "expected a number");
    return v.get<double>();
  }
  static std::uint64_t as_size(const json& v, const std::string& field) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer()) {
      if (v.get<std::int64_t>() < 0) throw ConfigError(field, "expected a nonnegative integer");
      return static_cast<std::uint64_t>(v.get<std::int64_t>());
    }
    throw ConfigError(field, "expected a nonnegative integer");
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json levels_json(const std::vector<LevelSetting>& levels) {
  json a = json::array();
  for (const auto& l : levels) a.push_back(json{{"particles", l.particles}, {"dt", l.dt}});
  return a;
}

json to_json_object(const RunConfig& c) {
  json j;
  j["command"] = c.command;
  j["checks"] = c.checks;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["out"] = c.out;
  j["paths"] = c.paths;
  const auto& p = c.problem;
  j["problem"] = json{{"benchmark", p.benchmark},
                      {"a", p.lq.a},
                      {"b_gain", p.lq.b_gain},
                      {"sigma", p.lq.sigma},
                      {"jump_scale", p.lq.jump_scale},
                      {"cost_q", p.lq.cost_q},
                      {"cost_r", p.lq.cost_r},
                      {"coupling", p.lq.coupling},
                      {"rate", p.rate},
                      {"marks", p.marks},
                      {"mark_probabilities", p.mark_probabilities},
                      {"initial_mean", p.initial_mean},
                      {"initial_std", p.initial_std},
                      {"horizon", p.horizon},
                      {"moment_order", p.moment_order}};
  if (c.path) j["path"] = json{{"jump_times", c.path->jump_times}, {"marks", c.path->marks}};
  const auto& s = c.solver;
  j["solver"] = json{{"time_cells", s.time_cells},
                     {"space_cells", s.space_cells},
                     {"space_half_width", s.space_half_width},
                     {"control_lo", s.control_lo},
                     {"control_hi", s.control_hi},
                     {"control_points", s.control_points},
                     {"dt", s.dt},
                     {"particles", s.particles},
                     {"eval_particles", s.eval_particles},
                     {"restarts", s.restarts},
                     {"max_sweeps", s.max_sweeps},
                     {"accept_se", s.accept_se},
                     {"window", s.window}};
  j["policy"] = json{{"max_jumps", c.policy.max_jumps},
                     {"time_buckets", c.policy.time_buckets},
                     {"particles_per_path", c.policy.particles_per_path}};
  const auto& m = c.mfg;
  j["mfg"] = json{{"max_iters", m.max_iters},
                  {"damping", m.damping},
                  {"residual_tol", m.residual_tol},
                  {"flow_particles", m.flow_particles},
                  {"exploitability_relative", m.exploitability_relative},
                  {"consistency_tol", m.consistency_tol},
                  {"paths", m.paths}};
  const auto& v = c.verify;
  j["verify"] = json{{"superposition_levels", levels_json(v.superposition_levels)},
                     {"superposition_tolerance", v.superposition_tolerance},
                     {"equivalence_paths", v.equivalence_paths},
                     {"budget_paths", v.budget_paths},
                     {"oracle_tolerance", v.oracle_tolerance},
                     {"zero_intensity_paths", v.zero_intensity_paths},
                     {"relative_tolerance", v.relative_tolerance},
                     {"entropy_ratio", v.entropy_ratio},
                     {"martingale_levels", levels_json(v.martingale_levels)},
                     {"test_functions", v.test_functions},
                     {"moment_rates", v.moment_rates},
                     {"moment_p", v.moment_p},
                     {"moment_paths", v.moment_paths},
                     {"moment_particles", v.moment_particles},
                     {"moment_dt", v.moment_dt},
                     {"continuity_scales", v.continuity_scales},
                     {"continuity_paths", v.continuity_paths},
                     {"continuity_slope", v.continuity_slope},
                     {"mfe_paths", v.mfe_paths},
                     {"mfe_success_fraction", v.mfe_success_fraction}};
  j["manifest"] = c.manifest;
  return j;
}

RunConfig from_json_object(const json& root) {
  RunConfig c;
  Reader r(root, "");
  r.read("command", c.command);
  r.read("checks", c.checks);
  if (const json* v = r.take("seed")) {
    if (!v->is_number_unsigned()) throw ConfigError("seed", "expected a nonnegative integer");
    c.seed = v->get<std::uint64_t>();
  }
  r.read("workers", c.workers);
  r.read("out", c.out);
  r.read("paths", c.paths);
  r.read("manifest", c.manifest);
  {
    Reader p = r.child("problem");
    auto& q = c.problem;
    p.read("benchmark", q.benchmark);
    p.read("a", q.lq.a);
    p.read("b_gain", q.lq.b_gain);
    p.read("sigma", q.lq.sigma);
    p.read("jump_scale", q.lq.jump_scale);
    p.read("cost_q", q.lq.cost_q);
    p.read("cost_r", q.lq.cost_r);
    p.read("coupling", q.lq.coupling);
    p.read("rate", q.rate);
    p.read("marks", q.marks);
    p.read("mark_probabilities", q.mark_probabilities);
    p.read("initial_mean", q.initial_mean);
    p.read("initial_std", q.initial_std);
    p.read("horizon", q.horizon);
    p.read("moment_order", q.moment_order);
    p.finish();
  }
  if (r.has("path")) {
    Reader p = r.child("path");
    FixedPath fp;
    p.read("jump_times", fp.jump_times);
    p.read("marks", fp.marks);
    p.finish();
    c.path = fp;
  }
  {
    Reader s = r.child("solver");
    auto& q = c.solver;
    s.read("time_cells", q.time_cells);
    s.read("space_cells", q.space_cells);
    s.read("space_half_width", q.space_half_width);
    s.read("control_lo", q.control_lo);
    s.read("control_hi", q.control_hi);
    s.read("control_points", q.control_points);
    s.read("dt", q.dt);
    s.read("particles", q.particles);
    s.read("eval_particles", q.eval_particles);
    s.read("restarts", q.restarts);
    s.read("max_sweeps", q.max_sweeps);
    s.read("accept_se", q.accept_se);
    s.read("window", q.window);
    s.finish();
  }
  {
    Reader s = r.child("policy");
    s.read("max_jumps", c.policy.max_jumps);
    s.read("time_buckets", c.policy.time_buckets);
    s.read("particles_per_path", c.policy.particles_per_path);
    s.finish();
  }
  {
    Reader s = r.child("mfg");
    auto& q = c.mfg;
    s.read("max_iters", q.max_iters);
    s.read("damping", q.damping);
    s.read("residual_tol", q.residual_tol);
    s.read("flow_particles", q.flow_particles);
    s.read("exploitability_relative", q.exploitability_relative);
    s.read("consistency_tol", q.consistency_tol);
    s.read("paths", q.paths);
    s.finish();
  }
  {
    Reader s = r.child("verify");
    auto& q = c.verify;
    s.read("superposition_levels", q.superposition_levels);
    s.read("superposition_tolerance", q.superposition_tolerance);
    s.read("equivalence_paths", q.equivalence_paths);
    s.read("budget_paths", q.budget_paths);
    s.read("oracle_tolerance", q.oracle_tolerance);
    s.read("zero_intensity_paths", q.zero_intensity_paths);
    s.read("relative_tolerance", q.relative_tolerance);
    s.read("entropy_ratio", q.entropy_ratio);
    s.read("martingale_levels", q.martingale_levels);
    s.read("test_functions", q.test_functions);
    s.read("moment_rates", q.moment_rates);
    s.read("moment_p", q.moment_p);
    s.read("moment_paths", q.moment_paths);
    s.read("moment_particles", q.moment_particles);
    s.read("moment_dt", q.moment_dt);
    s.read("continuity_scales", q.continuity_scales);
    s.read("continuity_paths", q.continuity_paths);
    s.read("continuity_slope", q.continuity_slope);
    s.read("mfe_paths", q.mfe_paths);
    s.read("mfe_success_fraction", q.mfe_success_fraction);
    s.finish();
  }
  r.finish();
  return c;
}

void require_positive(double v, const std::string& field) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(field, "must be positive and finite");
}

void require_nonzero(std::size_t v, const std::string& field) {
  if (v == 0) throw ConfigError(field, "must be at least 1");
}

void require_levels(const std::vector<LevelSetting>& levels, const std::string& field) {
  if (levels.empty()) throw ConfigError(field, "needs at least one level");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const std::string f = field + "[" + std::to_string(i) + "]";
    require_nonzero(levels[i].particles, f + ".particles");
    require_positive(levels[i].dt, f + ".dt");
  }
}

}  // namespace

void RunConfig::validate() const {
  const auto cmds = command_names();
  if (std::find(cmds.begin(), cmds.end(), command) == cmds.end()) {
    throw ConfigError("command", "unknown command '" + command + "'");
  }
  const auto known = check_names();
  for (std::size_t i = 0; i < checks.size(); ++i) {
    if (std::find(known.begin(), known.end(), checks[i]) == known.end()) {
      throw ConfigError("checks[" + std::to_string(i) + "]", "unknown check '" + checks[i] + "'");
    }
  }
  if (command == "verify" && checks.empty()) throw ConfigError("checks", "verify needs at least one check");
  if (command == "replay" && manifest.empty()) throw ConfigError("manifest", "replay needs a manifest path");
  require_nonzero(workers, "workers");
  require_nonzero(paths, "paths");
  if (out.empty()) throw ConfigError("out", "must not be empty");

  const auto benchmarks = benchmark_names();
  if (std::find(benchmarks.begin(), benchmarks.end(), problem.benchmark) == benchmarks.end()) {
    throw ConfigError("problem.benchmark", "unknown benchmark '" + problem.benchmark + "'");
  }
  if (!(problem.rate >= 0.0) || !std::isfinite(problem.rate)) {
    throw ConfigError("problem.rate", "must be nonnegative and finite");
  }
  if (problem.marks.empty()) throw ConfigError("problem.marks", "needs at least one mark");
  if (problem.marks.size() != problem.mark_probabilities.size()) {
    throw ConfigError("problem.mark_probabilities", "must match problem.marks in length");
  }
  require_positive(problem.horizon, "problem.horizon");
  if (!(problem.initial_std >= 0.0)) throw ConfigError("problem.initial_std", "must be nonnegative");
  if (!(problem.moment_order > 2.0)) throw ConfigError("problem.moment_order", "must exceed 2");
  if (path) {
    if (path->marks.size() != path->jump_times.size() && !path->marks.empty()) {
      throw ConfigError("path.marks", "must be empty or match path.jump_times in length");
    }
  }

  require_nonzero(solver.time_cells, "solver.time_cells");
  require_nonzero(solver.space_cells, "solver.space_cells");
  require_positive(solver.space_half_width, "solver.space_half_width");
  require_nonzero(solver.control_points, "solver.control_points");
  if (!(solver.control_hi >= solver.control_lo)) throw ConfigError("solver.control_hi", "must be >= solver.control_lo");
  require_positive(solver.dt, "solver.dt");
  require_nonzero(solver.particles, "solver.particles");
  require_nonzero(solver.eval_particles, "solver.eval_particles");
  require_nonzero(solver.max_sweeps, "solver.max_sweeps");
  if (!(solver.accept_se >= 0.0)) throw ConfigError("solver.accept_se", "must be nonnegative");

  require_nonzero(policy.particles_per_path, "policy.particles_per_path");
  require_nonzero(policy.time_buckets, "policy.time_buckets");

  require_nonzero(mfg.max_iters, "mfg.max_iters");
  if (!(mfg.damping > 0.0 && mfg.damping <= 1.0)) throw ConfigError("mfg.damping", "must lie in (0, 1]");
  require_positive(mfg.residual_tol, "mfg.residual_tol");
  require_nonzero(mfg.flow_particles, "mfg.flow_particles");
  require_positive(mfg.consistency_tol, "mfg.consistency_tol");

  require_levels(verify.superposition_levels, "verify.superposition_levels");
  require_levels(verify.martingale_levels, "verify.martingale_levels");
  require_positive(verify.superposition_tolerance, "verify.superposition_tolerance");
  require_nonzero(verify.equivalence_paths, "verify.equivalence_paths");
  require_positive(verify.oracle_tolerance, "verify.oracle_tolerance");
  require_nonzero(verify.zero_intensity_paths, "verify.zero_intensity_paths");
  require_positive(verify.entropy_ratio, "verify.entropy_ratio");
  for (std::size_t i = 0; i < verify.test_functions.size(); ++i) {
    const auto& f = verify.test_functions[i];
    if (f != "x" && f != "x2") {
      throw ConfigError("verify.test_functions[" + std::to_string(i) + "]", "unknown test function '" + f + "'");
    }
  }
  if (verify.moment_rates.empty()) throw ConfigError("verify.moment_rates", "needs at least one rate");
  require_positive(verify.moment_dt, "verify.moment_dt");
  if (verify.continuity_scales.empty()) throw ConfigError("verify.continuity_scales", "needs at least one scale");
  require_nonzero(verify.continuity_paths, "verify.continuity_paths");
}

RunConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    const std::size_t stop = std::min<std::size_t>(e.byte ? e.byte - 1 : 0, text.size());
    for (std::size_t i = 0; i < stop; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    const std::string where = "line " + std::to_string(line) + ", column " + std::to_string(col);
    std::string detail = e.what();
    const auto at = detail.find(where + ": ");
    if (at != std::string::npos) detail = detail.substr(at + where.size() + 2);
    throw ConfigError("", "parse error at " + where + ": " + detail);
  }
  RunConfig c = from_json_object(root);
  c.validate();
  return c;
}

std::string config_to_json(const RunConfig& config) { return to_json_object(config).dump(2); }

std::uint64_t config_digest(const RunConfig& config) {
  json j = to_json_object(config);
  j.erase("workers");
  j.erase("out");
  const std::string text = j.dump();
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  return h;
}

Problem build_problem(const ProblemConfig& config) {
  IntensitySpec intensity;
  intensity.total_rate = config.rate;
  std::vector<Vector> marks;
  for (double m : config.marks) marks.push_back(Vector{m});
  intensity.marks = MarkDistribution::finite(std::move(marks), config.mark_probabilities);
  Problem p = make_benchmark(config.benchmark, config.lq, intensity, config.initial_mean,
                             config.initial_std, config.horizon);
  p.moment_order = config.moment_order;
  return p;
}

namespace {

struct Context {
  const RunConfig& config;
  Problem problem;
  fs::path out;
  RunResult result;

  void metric(const std::string& name, double value) {
    result.metrics.emplace_back(name, format_metric(value));
  }
  void text(const std::string& name, const std::string& value) {
    result.metrics.emplace_back(name, value);
  }
  void seed(const std::string& name, std::uint64_t value) { result.seeds.emplace_back(name, value); }

  // Single writer: only the orchestrating thread reaches this.
  void write(const std::string& rel, const std::string& kind, const std::string& content) {
    const fs::path file = out / rel;
    fs::create_directories(file.parent_path());
    std::ofstream f(file, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + file.string());
    f << content;
    result.outputs.emplace_back(rel, kind);
  }
};

OptConfig make_opt(const RunConfig& c, std::uint64_t seed) {
  OptConfig o;
  o.time_cells = c.solver.time_cells;
  o.space_cells = c.solver.space_cells;
  o.space_half_width = c.solver.space_half_width;
  o.control_lo = c.solver.control_lo;
  o.control_hi = c.solver.control_hi;
  o.control_points = c.solver.control_points;
  o.dt = c.solver.dt;
  o.particles = c.solver.particles;
  o.eval_particles = c.solver.eval_particles;
  o.restarts = c.solver.restarts;
  o.max_sweeps = c.solver.max_sweeps;
  o.accept_se = c.solver.accept_se;
  o.window = c.solver.window;
  o.seed = seed;
  o.workers = c.workers;
  return o;
}

PolicyConfig make_policy(const RunConfig& c) {
  PolicyConfig p;
  p.max_jumps = c.policy.max_jumps;
  p.time_buckets = c.policy.time_buckets;
  p.particles_per_path = c.policy.particles_per_path;
  p.eval_particles_per_path = c.solver.eval_particles;
  return p;
}

IterConfig make_iter(const RunConfig& c, std::uint64_t seed) {
  IterConfig it;
  it.max_iters = c.mfg.max_iters;
  it.damping = c.mfg.damping;
  it.residual_tol = c.mfg.residual_tol;
  it.flow_particles = c.mfg.flow_particles;
  it.exploitability_relative = c.mfg.exploitability_relative;
  it.consistency_tol = c.mfg.consistency_tol;
  it.opt = make_opt(c, seed);
  it.opt.workers = 1;
  return it;
}

std::vector<Level> make_levels(const std::vector<LevelSetting>& in) {
  std::vector<Level> out;
  for (const auto& l : in) out.push_back({l.particles, l.dt});
  return out;
}

PointPath resolve_path(Context& ctx) {
  const auto& c = ctx.config;
  if (c.path) {
    std::vector<JumpEvent> events;
    for (std::size_t i = 0; i < c.path->jump_times.size(); ++i) {
      const double mark = c.path->marks.empty() ? 1.0 : c.path->marks[i];
      events.push_back({c.path->jump_times[i], Vector{mark}});
    }
    return make_point_path(ctx.problem.horizon, std::move(events), ctx.problem.intensity);
  }
  const std::uint64_t s = derive_seed(c.seed, "path");
  ctx.seed("path", s);
  return sample_point_path(ctx.problem.intensity, ctx.problem.horizon, s);
}

ControlKernel zero_kernel(const Problem& problem, const PointPath& path, const OptConfig& opt) {
  return ControlKernel::midpoint(
      make_time_edges(problem.horizon, opt.time_cells, path.times()), opt.space_for(problem),
      opt.grid_for(problem));
}

// Riccati feedback projected on the kernel cells for LQ problems, the
// midpoint kernel otherwise.
ControlKernel reference_kernel(const Problem& problem, const PointPath& path, const OptConfig& opt) {
  const ControlKernel base = zero_kernel(problem, path, opt);
  if (!problem.lq) return base;
  const auto ric = riccati_oracle(*problem.lq, path, problem.horizon, problem.initial_law.mean[0],
                                  problem.initial_law.stddev[0]);
  return ControlKernel::from_feedback(
      base.time_edges(), base.space(), base.control_grid(),
      [&](double t, std::span<const double> x) { return Vector{ric.feedback(t, x[0])}; });
}

std::string flow_csv(const MeasureFlow& flow) {
  std::ostringstream os;
  write_flow_csv(os, flow);
  return os.str();
}

void cmd_sample_noise(Context& ctx) {
  const auto& c = ctx.config;
  const auto paths = sample_common_paths(ctx.problem.intensity, ctx.problem.horizon, c.paths, c.seed);
  std::size_t total = 0;
  std::ostringstream table;
  table << "path,jumps,digest\n";
  for (std::size_t k = 0; k < paths.size(); ++k) {
    char name[48];
    std::snprintf(name, sizeof name, "noise/path_%04zu.txt", k);
    ctx.write(name, "point-path", format_point_path(paths[k]));
    ctx.seed("common_path_" + std::to_string(k), common_path_seed(c.seed, k));
    total += jump_count(paths[k]);
    table << k << ',' << jump_count(paths[k]) << ',' << hex(digest(paths[k])) << '\n';
  }
  ctx.write("noise/summary.csv", "table", table.str());
  ctx.metric("paths", static_cast<double>(paths.size()));
  ctx.metric("total_jumps", static_cast<double>(total));
  ctx.metric("mean_jumps", static_cast<double>(total) / static_cast<double>(paths.size()));
}

void cmd_solve_pathwise(Context& ctx) {
  const auto& c = ctx.config;
  const PointPath path = resolve_path(ctx);
  const OptConfig opt = make_opt(c, c.seed);
  ctx.seed("training", training_seed(c.seed));
  ctx.seed("evaluation", evaluation_seed(c.seed));
  const auto res = optimize_pathwise(ctx.problem, path, opt);

  PropagateOptions po;
  po.record_paths = false;
  const auto run = propagate_fp(ctx.problem, path, res.kernel, solver_grid(path, opt),
                                opt.eval_particles, evaluation_seed(c.seed), po);
  ctx.write("path.txt", "point-path", format_point_path(path));
  ctx.write("kernel.json", "kernel", kernel_to_json(res.kernel));
  ctx.write("flow.csv", "flow", flow_csv(run.flow));
  std::ostringstream table;
  table << "value,value_se,train_value,sweeps,accepted,converged,stalled\n";
  table << format_metric(res.value) << ',' << format_metric(res.value_se) << ','
        << format_metric(res.train_value) << ',' << res.diagnostics.sweeps << ','
        << res.diagnostics.accepted << ',' << res.diagnostics.converged << ','
        << res.diagnostics.stalled << '\n';
  ctx.write("values.csv", "table", table.str());

  ctx.metric("value", res.value);
  ctx.metric("value_se", res.value_se);
  ctx.metric("train_value", res.train_value);
  ctx.metric("sweeps", static_cast<double>(res.diagnostics.sweeps));
  ctx.metric("converged", res.diagnostics.converged ? 1.0 : 0.0);
  ctx.text("kernel_digest", hex(digest(res.kernel)));
  ctx.text("path_digest", hex(digest(path)));
  if (ctx.problem.lq) {
    const auto ric = riccati_oracle(*ctx.problem.lq, path, ctx.problem.horizon,
                                    ctx.problem.initial_law.mean[0], ctx.problem.initial_law.stddev[0]);
    ctx.metric("riccati_value", ric.value);
  }
}

void cmd_value(Context& ctx) {
  const auto& c = ctx.config;
  const auto paths = sample_common_paths(ctx.problem.intensity, ctx.problem.horizon, c.paths, c.seed);
  std::vector<PathwiseSolveResult> res(paths.size());
  parallel_for(paths.size(), c.workers, [&](std::size_t k) {
    OptConfig opt = make_opt(c, particle_seed(c.seed, k));
    opt.workers = 1;
    res[k] = optimize_pathwise(ctx.problem, paths[k], opt);
  });
  std::vector<double> costs;
  double oracle = 0.0;
  std::ostringstream table;
  table << "path,jumps,value,value_se" << (ctx.problem.lq ? ",riccati" : "") << '\n';
  for (std::size_t k = 0; k < paths.size(); ++k) {
    ctx.seed("common_path_" + std::to_string(k), common_path_seed(c.seed, k));
    ctx.seed("particles_" + std::to_string(k), particle_seed(c.seed, k));
    costs.insert(costs.end(), res[k].eval_costs.begin(), res[k].eval_costs.end());
    table << k << ',' << jump_count(paths[k]) << ',' << format_metric(res[k].value) << ','
          << format_metric(res[k].value_se);
    if (ctx.problem.lq) {
      const double v = riccati_oracle(*ctx.problem.lq, paths[k], ctx.problem.horizon,
                                      ctx.problem.initial_law.mean[0], ctx.problem.initial_law.stddev[0])
                           .value;
      oracle += v / static_cast<double>(paths.size());
      table << ',' << format_metric(v);
    }
    table << '\n';
  }
  ctx.write("values.csv", "table", table.str());
  const auto [mean, se] = mean_and_se(costs);
  ctx.metric("value", mean);
  ctx.metric("value_se", se);
  ctx.metric("paths", static_cast<double>(paths.size()));
  if (ctx.problem.lq) {
    ctx.metric("riccati_average", oracle);
    ctx.metric("oracle_relative_error", std::abs(mean - oracle) / std::max(std::abs(oracle), 1e-12));
  }
}

void cmd_mfg(Context& ctx) {
  const auto& c = ctx.config;
  const PointPath path = resolve_path(ctx);
  const IterConfig it = make_iter(c, c.seed);
  ctx.seed("training", training_seed(c.seed));
  ctx.seed("evaluation", evaluation_seed(c.seed));
  ctx.seed("flow", derive_seed(c.seed, "mfe-flow"));
  const auto mfe = solve_pathwise_mfe(ctx.problem, path, it);
  const double consistency = consistency_w2(ctx.problem, path, mfe, it, c.seed);
  ctx.seed("consistency", derive_seed(c.seed, "mfe-consistency"));

  ctx.write("path.txt", "point-path", format_point_path(path));
  ctx.write("kernel.json", "kernel", kernel_to_json(mfe.kernel));
  ctx.write("flow.csv", "flow", flow_csv(mfe.flow));
  std::ostringstream hist;
  hist << "iteration,residual\n";
  for (std::size_t i = 0; i < mfe.residual_history.size(); ++i) {
    hist << i + 1 << ',' << format_metric(mfe.residual_history[i]) << '\n';
  }
  ctx.write("residuals.csv", "table", hist.str());

  ctx.metric("iterations", static_cast<double>(mfe.iterations));
  ctx.metric("final_residual", mfe.residual_history.back());
  ctx.metric("value", mfe.value);
  ctx.metric("exploitability", mfe.exploitability.value);
  ctx.metric("exploitability_se", mfe.exploitability.se);
  ctx.metric("consistency_w2", consistency);
  ctx.metric("converged", mfe.converged ? 1.0 : 0.0);
  ctx.text("kernel_digest", hex(digest(mfe.kernel)));
  ctx.result.pass = mfe.converged;

  if (c.mfg.paths > 0) {
    const auto strong = assemble_strong_mfe(ctx.problem, c.mfg.paths, it, c.seed, c.workers);
    std::ostringstream table;
    table << "path,jumps,iterations,converged,exploitability,exploitability_se,consistency_w2\n";
    for (std::size_t k = 0; k < strong.paths.size(); ++k) {
      const auto& r = strong.per_path[k];
      table << k << ',' << jump_count(strong.paths[k]) << ',' << r.iterations << ',' << r.converged
            << ',' << format_metric(r.exploitability.value) << ','
            << format_metric(r.exploitability.se) << ',' << format_metric(strong.consistency[k])
            << '\n';
    }
    ctx.write("strong_mfe.csv", "table", table.str());
    ctx.metric("assembly_paths", static_cast<double>(c.mfg.paths));
    ctx.metric("assembly_converged", static_cast<double>(strong.converged));
    ctx.metric("assembly_consistent", static_cast<double>(strong.consistent));
    ctx.text("assembly_digest", hex(strong.digest));
  }
}

VerificationReport run_check(Context& ctx, const std::string& name) {
  const auto& c = ctx.config;
  const auto& v = c.verify;
  const Problem& problem = ctx.problem;
  if (name == "value-equivalence") {
    return check_value_equivalence(problem, v.equivalence_paths, make_opt(c, c.seed), make_policy(c),
                                   c.seed, {c.workers, v.budget_paths, v.oracle_tolerance});
  }
  if (name == "zero-intensity") {
    return check_zero_intensity(problem, make_opt(c, c.seed), make_policy(c), c.seed,
                                {v.zero_intensity_paths, v.relative_tolerance, c.workers});
  }
  if (name == "continuity") {
    ContinuityOptions o;
    o.paths = v.continuity_paths;
    o.workers = c.workers;
    o.slope = v.continuity_slope;
    o.oracle_relative = v.relative_tolerance;
    return check_value_continuity(problem, v.continuity_scales, make_opt(c, c.seed), c.seed, o);
  }
  if (name == "moment-growth") {
    const PointPath empty = make_point_path(problem.horizon, {}, problem.intensity);
    MomentOptions o;
    o.paths = v.moment_paths;
    o.particles = v.moment_particles;
    o.dt = v.moment_dt;
    o.workers = c.workers;
    return check_moment_growth(problem, zero_kernel(problem, empty, make_opt(c, c.seed)),
                               v.moment_rates, v.moment_p, c.seed, o);
  }
  const PointPath path = resolve_path(ctx);
  if (name == "superposition") {
    SuperpositionOptions o;
    o.tolerance = v.superposition_tolerance;
    return check_superposition(problem, path, zero_kernel(problem, path, make_opt(c, c.seed)),
                               make_levels(v.superposition_levels), c.seed, o);
  }
  if (name == "strict-gap") {
    return check_strict_gap(problem, path, make_opt(c, c.seed), {v.relative_tolerance, v.entropy_ratio});
  }
  if (name == "martingale") {
    std::vector<QuadraticForm> phis;
    for (const auto& f : v.test_functions) {
      phis.push_back(f == "x" ? QuadraticForm::identity_coordinate(problem.dim_state, 0)
                              : QuadraticForm::squared_norm(problem.dim_state));
    }
    return check_martingale_residual(problem, path, reference_kernel(problem, path, make_opt(c, c.seed)),
                                     phis, make_levels(v.martingale_levels), c.seed);
  }
  if (name == "pathwise-mfe") {
    MfeCheckOptions o;
    o.paths = v.mfe_paths;
    o.success_fraction = v.mfe_success_fraction;
    o.workers = c.workers;
    return check_pathwise_mfe(problem, path, make_iter(c, c.seed), c.seed, o);
  }
  throw ConfigError("checks", "unknown check '" + name + "'");
}

void cmd_verify(Context& ctx) {
  bool all = true;
  for (const auto& name : ctx.config.checks) {
    const auto report = run_check(ctx, name);
    ctx.write("reports/" + name + ".json", "report", report.to_json() + "\n");
    ctx.text(name + ".pass", report.pass ? "true" : "false");
    for (const auto& [k, val] : report.metrics) ctx.metric(name + "." + k, val);
    all = all && report.pass;
  }
  ctx.result.pass = all;
}

}  // namespace

std::string emit_manifest(const RunConfig& config, const RunResult& result) {
  json m;
  m["tool"] = "mfcn";
  m["version"] = MFCN_VERSION;
  m["command"] = config.command;
  m["config_digest"] = hex(config_digest(config));
  m["config"] = to_json_object(config);
  auto& seeds = m["seeds"] = json::object();
  seeds["master"] = config.seed;
  for (const auto& [k, s] : result.seeds) seeds[k] = s;
  auto& outputs = m["outputs"] = json::array();
  for (const auto& [file, kind] : result.outputs) outputs.push_back(json{{"file", file}, {"kind", kind}});
  auto& metrics = m["metrics"] = json::object();
  for (const auto& [k, v] : result.metrics) metrics[k] = v;
  m["pass"] = result.pass;
  m["exit_code"] = result.exit_code;
  const fs::path dir(config.out);
  fs::create_directories(dir);
  const fs::path file = dir / "manifest.json";
  std::ofstream f(file, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + file.string());
  f << m.dump(2) << '\n';
  return file.string();
}

RunResult run(const RunConfig& config) {
  config.validate();
  if (config.command == "replay") return replay(config.manifest, config.workers, config.out);
  Context ctx{config, build_problem(config.problem), fs::path(config.out), {}};
  fs::create_directories(ctx.out);
  if (config.command == "sample-noise") {
    cmd_sample_noise(ctx);
  } else if (config.command == "solve-pathwise") {
    cmd_solve_pathwise(ctx);
  } else if (config.command == "value") {
    cmd_value(ctx);
  } else if (config.command == "mfg") {
    cmd_mfg(ctx);
  } else {
    cmd_verify(ctx);
  }
  ctx.result.exit_code = ctx.result.pass ? 0 : 1;
  ctx.result.manifest_path = emit_manifest(config, ctx.result);
  return ctx.result;
}

RunResult replay(const std::string& manifest_path, std::optional<std::size_t> workers,
                 const std::string& out_dir) {
  std::ifstream f(manifest_path, std::ios::binary);
  if (!f) throw ConfigError("manifest", "cannot read '" + manifest_path + "'");
  json stored;
  try {
    stored = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("manifest", std::string("malformed manifest: ") + e.what());
  }
  if (!stored.contains("config") || !stored.contains("metrics")) {
    throw ConfigError("manifest", "missing config or metrics");
  }
  RunConfig config = parse_config(stored["config"].dump());
  if (config.command == "replay") throw ConfigError("manifest", "a replay manifest cannot be replayed");
  if (workers) config.workers = *workers;
  config.out = out_dir;
  RunResult result = run(config);

  const json& expected = stored["metrics"];
  std::string mismatch;
  std::size_t i = 0;
  for (const auto& [k, v] : expected.items()) {
    if (i >= result.metrics.size() || result.metrics[i].first != k ||
        result.metrics[i].second != v.get<std::string>()) {
      mismatch = k;
      break;
    }
    ++i;
  }
  if (mismatch.empty() && i != result.metrics.size()) mismatch = result.metrics[i].first;
  if (mismatch.empty()) {
    result.message = "replay matches " + std::to_string(i) + " metrics";
  } else {
    result.message = "replay differs at metric '" + mismatch + "'";
    result.pass = false;
    result.exit_code = 1;
  }
  return result;
}

}  // namespace mfcn
