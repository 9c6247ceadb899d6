#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mfcn/model.hpp"

namespace mfcn {

/// Bad configuration; `field` is the dotted path of the offending entry.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message);
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct ProblemConfig {
  std::string benchmark = "lq1d";
  LqParams lq;
  double rate = 1.0;
  std::vector<double> marks = {1.0};
  std::vector<double> mark_probabilities = {1.0};
  double initial_mean = 1.0;
  double initial_std = 0.5;
  double horizon = 1.0;
  double moment_order = 4.0;
};

/// Explicit common path; when absent the path is sampled from the seed.
struct FixedPath {
  std::vector<double> jump_times;
  std::vector<double> marks;
};

struct SolverConfig {
  std::size_t time_cells = 8;
  std::size_t space_cells = 16;
  double space_half_width = 6.0;
  double control_lo = -6.0;
  double control_hi = 6.0;
  std::size_t control_points = 49;
  double dt = 1.0 / 64.0;
  std::size_t particles = 500;
  std::size_t eval_particles = 2000;
  std::size_t restarts = 0;
  std::size_t max_sweeps = 6;
  double accept_se = 1.0;
  std::size_t window = 2;
};

struct PolicySettings {
  std::size_t max_jumps = 3;
  std::size_t time_buckets = 1;
  std::size_t particles_per_path = 200;
};

struct MfgSettings {
  std::size_t max_iters = 20;
  double damping = 0.5;
  double residual_tol = 0.02;
  std::size_t flow_particles = 16000;
  double exploitability_relative = 0.02;
  double consistency_tol = 0.05;
  std::size_t paths = 0;  // strong assembly size; 0 skips it
};

struct LevelSetting {
  std::size_t particles = 0;
  double dt = 0.0;
};

struct VerifySettings {
  std::vector<LevelSetting> superposition_levels = {{2500, 1.0 / 256.0}, {10000, 1.0 / 1024.0}};
  double superposition_tolerance = 0.05;
  std::size_t equivalence_paths = 100;
  std::size_t budget_paths = 10;
  double oracle_tolerance = 0.05;
  std::size_t zero_intensity_paths = 4;
  double relative_tolerance = 0.02;
  double entropy_ratio = 0.25;
  std::vector<LevelSetting> martingale_levels = {{10000, 1.0 / 512.0}, {10000, 1.0 / 1024.0}};
  std::vector<std::string> test_functions = {"x", "x2"};
  std::vector<double> moment_rates = {2.0};
  double moment_p = 4.0;
  std::size_t moment_paths = 200;
  std::size_t moment_particles = 500;
  double moment_dt = 1.0 / 64.0;
  std::vector<double> continuity_scales = {0.4, 0.2, 0.1};
  std::size_t continuity_paths = 4;
  double continuity_slope = 5.0;
  std::size_t mfe_paths = 50;
  double mfe_success_fraction = 0.9;
};

struct RunConfig {
  std::string command = "solve-pathwise";
  std::vector<std::string> checks;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  std::string out = "out";
  std::size_t paths = 1;  // sample-noise and value
  ProblemConfig problem;
  std::optional<FixedPath> path;
  SolverConfig solver;
  PolicySettings policy;
  MfgSettings mfg;
  VerifySettings verify;
  std::string manifest;  // replay source

  void validate() const;
};

std::vector<std::string> command_names();
std::vector<std::string> check_names();

/// Strict JSON: unknown keys and wrong types raise ConfigError naming the
/// field; malformed text raises ConfigError with line and column.
RunConfig parse_config(const std::string& text);
/// Canonical JSON with every field present.
std::string config_to_json(const RunConfig& config);
/// FNV-1a of the canonical JSON without the worker count and output dir.
std::uint64_t config_digest(const RunConfig& config);

Problem build_problem(const ProblemConfig& config);

struct RunResult {
  int exit_code = 0;
  bool pass = true;
  /// Summary metrics, already rendered (17 significant digits for reals).
  std::vector<std::pair<std::string, std::string>> metrics;
  std::vector<std::pair<std::string, std::uint64_t>> seeds;
  /// (relative file name, kind)
  std::vector<std::pair<std::string, std::string>> outputs;
  std::string manifest_path;
  std::string message;
};

/// Writes manifest.json into config.out and returns its path.
std::string emit_manifest(const RunConfig& config, const RunResult& result);

/// Executes the command; all files land in config.out.
RunResult run(const RunConfig& config);

/// Re-executes a stored manifest (optionally with another worker count and
/// output dir) and compares the summary metrics text byte for byte.
RunResult replay(const std::string& manifest_path, std::optional<std::size_t> workers,
                 const std::string& out_dir);

/// Metric rendered with 17 significant digits.
std::string format_metric(double value);

}  // namespace mfcn
