// Acceptance run on the LQ benchmark (a=0.5, b=1, sigma=0.2, c=0.1, rate 1,
// T=1, m0=1, s0=0.5) with the common path {0.3, 0.7}. Prints one PASS/FAIL
// line per criterion and exits nonzero when any criterion fails.
//
//   mfcn_acceptance [out_dir] [criterion numbers...]

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "mfcn/runner.hpp"

namespace {

using mfcn::RunConfig;
using mfcn::RunResult;

const char* kBase = R"({
  "seed": 20240601,
  "path": {"jump_times": [0.3, 0.7], "marks": [1, 1]},
  "problem": {"benchmark": "lq1d", "a": 0.5, "b_gain": 1, "sigma": 0.2, "jump_scale": 0.1,
              "rate": 1, "initial_mean": 1, "initial_std": 0.5, "horizon": 1}
})";

struct Criterion {
  int id;
  std::string check;
  std::vector<std::string> shown;  // metrics echoed on the result line
};

std::string metric(const RunResult& r, const std::string& name) {
  for (const auto& [k, v] : r.metrics) {
    if (k == name) return v;
  }
  return "?";
}

RunConfig verify_config(const std::string& check, const std::string& out) {
  RunConfig c = mfcn::parse_config(kBase);
  c.command = "verify";
  c.checks = {check};
  c.out = out;
  if (check == "pathwise-mfe") {
    c.problem.benchmark = "lq1d-meanfield";
    c.problem.lq.coupling = 0.1;
  }
  return c;
}

void line(int id, const std::string& name, bool pass, double seconds, const std::string& detail) {
  std::printf("%s %d %s: %s (%.1f s)\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str(),
              seconds);
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  namespace fs = std::filesystem;
  const fs::path out = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_out");
  std::set<int> only;
  for (int i = 2; i < argc; ++i) only.insert(std::stoi(argv[i]));
  auto wanted = [&](int id) { return only.empty() || only.count(id) > 0; };

  const std::vector<Criterion> criteria = {
      {1, "superposition", {"w2_finest"}},
      {2, "value-equivalence",
       {"gap", "gap_se", "refinement_budget", "lhs_oracle_relative_error",
        "rhs_oracle_relative_error"}},
      {3, "zero-intensity", {"pathwise_value", "common_noise_value", "riccati_value",
                             "worst_pairwise_excess"}},
      {4, "moment-growth", {"jump_checks", "violations", "max_ratio_to_bound"}},
      {5, "strict-gap", {"gap", "gap_se", "entropy_ratio"}},
      {6, "continuity", {"base_value", "scale0_gap", "scale0_oracle_gap", "scale2_gap", "scale2_oracle_gap"}},
      {7, "martingale",
       {"phi0_residual", "phi0_se", "phi1_residual", "phi1_se", "phi1_drift_ratio_1"}},
      {8, "pathwise-mfe", {"iterations", "exploitability", "exploitability_se", "success_share",
                           "worst_consistency_w2"}},
  };

  int failures = 0;
  std::vector<std::string> manifests;
  for (const auto& cr : criteria) {
    if (!wanted(cr.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    bool pass = false;
    std::string detail;
    try {
      const auto r = mfcn::run(verify_config(cr.check, (out / cr.check).string()));
      pass = r.exit_code == 0 && r.pass;
      for (const auto& m : cr.shown) {
        const std::string v = metric(r, cr.check + "." + m);
        if (v != "?") detail += m + "=" + v + " ";
      }
      detail += "report=" + (out / cr.check / "reports" / (cr.check + ".json")).string();
      if (cr.check == "superposition" || cr.check == "moment-growth") {
        manifests.push_back(r.manifest_path);
      }
    } catch (const std::exception& e) {
      detail = std::string("error: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    line(cr.id, cr.check, pass, secs, detail);
    failures += pass ? 0 : 1;
  }

  if (wanted(9)) {
    const auto t0 = std::chrono::steady_clock::now();
    bool pass = true;
    std::string detail;
    try {
      RunConfig solve = mfcn::parse_config(kBase);
      solve.command = "solve-pathwise";
      solve.out = (out / "replay_source_solve").string();
      manifests.push_back(mfcn::run(solve).manifest_path);
      RunConfig mfg = verify_config("pathwise-mfe", (out / "replay_source_mfg").string());
      mfg.command = "mfg";
      mfg.checks.clear();
      manifests.push_back(mfcn::run(mfg).manifest_path);
      std::size_t compared = 0;
      for (std::size_t k = 0; k < manifests.size(); ++k) {
        for (std::size_t workers : {1u, 4u}) {
          const auto dir = out / ("replay_" + std::to_string(k) + "_w" + std::to_string(workers));
          const auto r = mfcn::replay(manifests[k], workers, dir.string());
          if (r.exit_code != 0) {
            pass = false;
            detail += "mismatch in " + manifests[k] + " at workers=" + std::to_string(workers) +
                      ": " + r.message + " ";
          }
          compared += r.metrics.size();
        }
      }
      detail += "manifests=" + std::to_string(manifests.size()) +
                " metrics_compared=" + std::to_string(compared);
    } catch (const std::exception& e) {
      pass = false;
      detail = std::string("error: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    line(9, "replay", pass, secs, detail);
    failures += pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
