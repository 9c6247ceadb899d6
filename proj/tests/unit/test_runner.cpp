#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "mfcn/runner.hpp"

using namespace mfcn;
namespace fs = std::filesystem;

namespace {

std::string scratch(const std::string& name) {
  const auto dir = fs::path(::testing::TempDir()) / ("mfcn_runner_" + name);
  fs::remove_all(dir);
  return dir.string();
}

nlohmann::json read_json(const std::string& file) {
  std::ifstream in(file);
  return nlohmann::json::parse(in);
}

RunConfig small_solve(const std::string& out) {
  auto c = parse_config(R"({
    "command": "solve-pathwise",
    "seed": 4,
    "path": {"jump_times": [0.3, 0.7], "marks": [1, 1]},
    "solver": {"time_cells": 4, "space_cells": 8, "control_lo": -3, "control_hi": 3,
               "control_points": 13, "dt": 0.03125, "particles": 200,
               "eval_particles": 500, "max_sweeps": 3}
  })");
  c.out = out;
  return c;
}

}  // namespace

TEST(Config, DefaultsAreFilledIn) {
  const auto c = parse_config("{}");
  EXPECT_EQ(c.command, "solve-pathwise");
  EXPECT_EQ(c.seed, 1u);
  EXPECT_EQ(c.problem.benchmark, "lq1d");
  EXPECT_EQ(c.solver.dt, 1.0 / 64.0);
  EXPECT_FALSE(c.path.has_value());
  const auto j = nlohmann::json::parse(config_to_json(c));
  EXPECT_EQ(j["problem"]["initial_std"], 0.5);
  EXPECT_EQ(j["mfg"]["damping"], 0.5);
}

TEST(Config, RoundTripIsStable) {
  auto c = small_solve("somewhere");
  c.checks = {"superposition"};
  c.verify.continuity_scales = {0.3, 0.1};
  const std::string once = config_to_json(c);
  EXPECT_EQ(config_to_json(parse_config(once)), once);
  EXPECT_EQ(config_digest(parse_config(once)), config_digest(c));
}

TEST(Config, DigestIgnoresWorkersAndOutput) {
  auto a = small_solve("x");
  auto b = small_solve("y");
  b.workers = 4;
  EXPECT_EQ(config_digest(a), config_digest(b));
  b.seed = 5;
  EXPECT_NE(config_digest(a), config_digest(b));
}

TEST(Config, UnknownKeyNamesTheField) {
  try {
    parse_config(R"({"problem": {"rat": 2}})");
    FAIL() << "accepted an unknown key";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "problem.rat");
  }
}

TEST(Config, WrongTypeNamesTheField) {
  try {
    parse_config(R"({"solver": {"particles": "many"}})");
    FAIL() << "accepted a string count";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "solver.particles");
  }
  EXPECT_THROW(parse_config(R"({"seed": -1})"), ConfigError);
}

TEST(Config, ParseErrorGivesPosition) {
  try {
    parse_config("{\n  \"seed\": ,\n}");
    FAIL() << "accepted malformed text";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Config, RejectsUnknownCommandAndCheck) {
  EXPECT_THROW(parse_config(R"({"command": "fly"})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"command": "verify", "checks": ["nope"]})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"command": "verify"})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"problem": {"rate": -1}})"), ConfigError);
}

TEST(Run, ZeroRateNoiseIsEmpty) {
  auto c = parse_config(R"({"command": "sample-noise", "paths": 3, "problem": {"rate": 0}})");
  c.out = scratch("noise");
  const auto r = run(c);
  EXPECT_EQ(r.exit_code, 0);
  for (int k = 0; k < 3; ++k) {
    EXPECT_TRUE(fs::exists(fs::path(c.out) / "noise" / ("path_000" + std::to_string(k) + ".txt")));
  }
  std::ifstream in(fs::path(c.out) / "noise" / "summary.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "path,jumps,digest");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(line.substr(0, 4), std::to_string(rows - 1) + ",0,");
  }
  EXPECT_EQ(rows, 3u);
}

TEST(Run, ManifestListsExistingUniqueOutputs) {
  const auto c = small_solve(scratch("solve"));
  const auto r = run(c);
  ASSERT_EQ(r.exit_code, 0) << r.message;
  const auto m = read_json(r.manifest_path);
  EXPECT_EQ(m["command"], "solve-pathwise");
  EXPECT_EQ(m["exit_code"], 0);
  std::set<std::string> files;
  for (const auto& o : m["outputs"]) {
    const std::string f = o["file"];
    EXPECT_TRUE(files.insert(f).second) << f;
    EXPECT_TRUE(fs::exists(fs::path(c.out) / f)) << f;
  }
  EXPECT_TRUE(files.count("kernel.json"));
  EXPECT_EQ(m["config"]["seed"], 4);
  EXPECT_FALSE(m["seeds"].empty());
}

TEST(Run, ReplayIsIdenticalAcrossWorkerCounts) {
  const auto c = small_solve(scratch("replay_src"));
  const auto r = run(c);
  ASSERT_EQ(r.exit_code, 0) << r.message;
  const auto again = replay(r.manifest_path, 4, scratch("replay_dst"));
  EXPECT_EQ(again.exit_code, 0) << again.message;
  EXPECT_EQ(again.metrics, r.metrics);
}

TEST(Run, ReplayDetectsTamperedMetrics) {
  const auto c = small_solve(scratch("tamper"));
  const auto r = run(c);
  auto m = read_json(r.manifest_path);
  m["metrics"]["value"] = "0";
  std::ofstream(r.manifest_path) << m.dump(2);
  const auto again = replay(r.manifest_path, std::nullopt, scratch("tamper_dst"));
  EXPECT_EQ(again.exit_code, 1);
}

TEST(Metric, SeventeenDigits) {
  EXPECT_EQ(format_metric(0.1), "0.10000000000000001");
  EXPECT_EQ(format_metric(2.0), "2");
}
