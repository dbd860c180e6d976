// mfsim: config-driven simulation lab for parallel SGD under random
// per-gradient compute times. Subcommands: plan, simulate, sweep, histogram,
// tune. All runs are reproducible from (config, seed).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mindflayer/config.hpp"
#include "mindflayer/runner.hpp"
#include "mindflayer/version.hpp"

namespace {

mindflayer::ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw mindflayer::ConfigError("cannot open config file " + path);
  mindflayer::Json j;
  try {
    in >> j;
  } catch (const std::exception& ex) {
    throw mindflayer::ConfigError("config is not valid JSON: " +
                                  std::string(ex.what()));
  }
  return mindflayer::config_from_json(j);
}

std::filesystem::path resolve_out_dir(const std::string& flag_out,
                                      const mindflayer::ExperimentConfig& cfg) {
  if (!flag_out.empty()) return flag_out;
  if (!cfg.out_dir.empty()) return cfg.out_dir;
  if (const char* env = std::getenv("MFSIM_OUT"); env != nullptr && *env) {
    return env;
  }
  return "mfsim_out";
}

std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stod(tok));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"virtual-clock simulation lab for parallel SGD under random "
               "compute times"};
  app.set_version_flag("--version", mindflayer::kArtifactVersion);
  app.require_subcommand(1);

  std::string config_path;
  std::string out_flag;
  std::string format = "json";
  int jobs = 0;
  std::uint64_t seed_override = 0;
  bool have_seed = false;

  auto add_common = [&](CLI::App* sub, bool needs_out) {
    sub->add_option("--config", config_path, "experiment config (JSON)")
        ->required();
    sub->add_option("--jobs", jobs, "worker pool size (0 = all cores)");
    sub->add_option("--format", format, "summary table format")
        ->check(CLI::IsMember({"csv", "json"}));
    sub->add_option_function<std::uint64_t>(
           "--seed",
           [&](std::uint64_t s) {
             seed_override = s;
             have_seed = true;
           },
           "replace the config seed list with this single seed");
    if (needs_out) {
      sub->add_option("--out", out_flag,
                      "output directory (default: config out_dir, then "
                      "$MFSIM_OUT, then ./mfsim_out)");
    }
  };

  auto* plan_cmd = app.add_subcommand("plan", "print method plans as JSON");
  add_common(plan_cmd, false);

  auto* sim_cmd = app.add_subcommand(
      "simulate", "run every (method, seed) pair; write traces and a summary");
  add_common(sim_cmd, true);

  std::string axis;
  std::string values_csv;
  auto* sweep_cmd = app.add_subcommand(
      "sweep", "repeat simulate along one config axis and merge a table");
  add_common(sweep_cmd, true);
  sweep_cmd->add_option("--axis", axis, "dotted config path, e.g. cluster.delay.s")
      ->required();
  sweep_cmd->add_option("--values", values_csv, "comma-separated axis values")
      ->required();

  auto* hist_cmd = app.add_subcommand(
      "histogram", "one-round time histogram and K-fold convolution");
  add_common(hist_cmd, true);

  auto* tune_cmd =
      app.add_subcommand("tune", "run the stepsize/batch tuners and print tables");
  add_common(tune_cmd, false);

  CLI11_PARSE(app, argc, argv);

  try {
    mindflayer::ExperimentConfig cfg = load_config(config_path);
    if (have_seed) cfg.seeds = {seed_override};

    if (sweep_cmd->parsed()) {
      const auto values = parse_values(values_csv);
      const auto out = resolve_out_dir(out_flag, cfg);
      const auto outcome =
          mindflayer::cmd_sweep(cfg, axis, values, out, jobs, format);
      for (const auto& err : outcome.errors) std::cerr << "error: " << err << "\n";
      std::cout << "sweep table written to " << (out / "sweep.csv").string()
                << "\n";
      return outcome.any_error ? 1 : 0;
    }

    const mindflayer::Experiment e = mindflayer::materialize(cfg);

    if (plan_cmd->parsed()) {
      mindflayer::Json out = mindflayer::Json::array();
      for (const auto& m : e.methods) out.push_back(m.plan_json);
      std::cout << out.dump(2) << "\n";
      return 0;
    }
    if (sim_cmd->parsed()) {
      const auto out = resolve_out_dir(out_flag, cfg);
      const auto outcome = mindflayer::cmd_simulate(e, out, jobs, format);
      for (const auto& err : outcome.errors) std::cerr << "error: " << err << "\n";
      std::cout << "wrote " << (out / "summary.json").string() << "\n";
      return outcome.any_error ? 1 : 0;
    }
    if (hist_cmd->parsed()) {
      const auto out = resolve_out_dir(out_flag, cfg);
      mindflayer::cmd_histogram(e, out);
      std::cout << "wrote " << (out / "histogram.json").string() << "\n";
      return 0;
    }
    if (tune_cmd->parsed()) {
      mindflayer::Json out = mindflayer::Json::array();
      for (const auto& m : e.methods) {
        mindflayer::Json j;
        j["method"] = m.label;
        j["gamma"] = m.gamma;
        if (m.spec.name == "rennala") j["S"] = m.s_batch;
        if (!m.tune_json.empty()) j["tuning"] = m.tune_json;
        out.push_back(j);
      }
      std::cout << out.dump(2) << "\n";
      return 0;
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
