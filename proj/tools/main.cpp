#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mfcn/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Mean-field control and games with Poissonian common noise"};
  std::string command;
  std::string argument;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::string out;
  std::vector<std::string> checks;

  app.add_option("command", command,
                 "sample-noise | solve-pathwise | value | mfg | verify | replay (default: from config)");
  app.add_option("argument", argument, "check name for verify, manifest path for replay");
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "master seed override");
  app.add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", out, "output directory");
  app.add_option("--check", checks, "verification check (repeatable)");
  CLI11_PARSE(app, argc, argv);

  try {
    std::string text = "{}";
    if (!config_path.empty()) {
      std::ifstream f(config_path);
      std::ostringstream ss;
      ss << f.rdbuf();
      text = ss.str();
    }
    mfcn::RunConfig config = mfcn::parse_config(text);
    if (!command.empty()) config.command = command;
    if (seed) config.seed = *seed;
    if (workers) config.workers = *workers;
    if (!out.empty()) config.out = out;
    if (!argument.empty()) {
      if (config.command == "verify") {
        checks.insert(checks.begin(), argument);
      } else if (config.command == "replay") {
        config.manifest = argument;
      } else {
        throw mfcn::ConfigError("argument", "unexpected argument '" + argument + "'");
      }
    }
    if (!checks.empty()) config.checks = checks;
    config.validate();

    mfcn::RunResult result = config.command == "replay"
                                 ? mfcn::replay(config.manifest, workers, config.out)
                                 : mfcn::run(config);
    for (const auto& [k, v] : result.metrics) std::printf("%s = %s\n", k.c_str(), v.c_str());
    if (!result.message.empty()) std::printf("%s\n", result.message.c_str());
    std::printf("manifest: %s\n", result.manifest_path.c_str());
    return result.exit_code;
  } catch (const mfcn::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
