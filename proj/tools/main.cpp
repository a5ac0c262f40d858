#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dsfilter/cli.hpp"

#ifndef DSF_CONFIG_DIR
#define DSF_CONFIG_DIR "configs"
#endif

namespace {

std::filesystem::path preset_path(const std::string& name) {
  const char* env = std::getenv("DSF_CONFIG_DIR");
  const std::filesystem::path base = env && *env ? env : DSF_CONFIG_DIR;
  return base / (name + ".json");
}

// Repeated identical warnings (one per sequence in a sweep) are printed once
// and counted.
std::map<std::string, int> warning_counts;

void report_repeats() {
  for (const auto& [msg, n] : warning_counts)
    if (n > 1) std::fprintf(stderr, "warning: (%d more) %s\n", n - 1, msg.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep splitting filters: data generation, oracle runs, training and convergence studies"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(dsf::kVersion));

  std::string config_path, preset, output;
  std::vector<std::string> overrides;
  bool print_config = false;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"simulate", "Write observation-sequence CSVs"},
      {"oracle", "Run the quadrature filter or the standalone Fokker-Planck solver"},
      {"train", "Train an energy-based filter pipeline and persist it"},
      {"converge", "Sweep N (and seeds), evaluate, fit the log-log slope"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    auto* c = sub->add_option("-c,--config", config_path, "JSON config file");
    sub->add_option("-p,--preset", preset, "Preset name from the configs directory")->excludes(c);
    sub->add_option("-o,--output", output, "Output directory (overrides the config)");
    sub->add_option("--set", overrides, "key=value override, dotted keys for nested fields");
    sub->add_flag("--print-config", print_config, "Print the resolved config and exit");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  dsf::set_warning_handler([](const std::string& msg) {
    if (warning_counts[msg]++ == 0) std::fprintf(stderr, "warning: %s\n", msg.c_str());
  });
  std::atexit(report_repeats);
  try {
    if (!output.empty()) overrides.push_back("output=\"" + output + "\"");
    dsf::RunConfig cfg;
    if (!preset.empty())
      cfg = dsf::load_run_config(preset_path(preset), overrides);
    else if (!config_path.empty())
      cfg = dsf::load_run_config(config_path, overrides);
    else
      cfg = dsf::parse_run_config("{}", overrides);
    if (print_config) {
      std::cout << cfg.to_json_text() << '\n';
      return 0;
    }
    if (command == "simulate") dsf::cmd_simulate(cfg);
    else if (command == "oracle") dsf::cmd_oracle(cfg);
    else if (command == "train") dsf::cmd_train(cfg);
    else dsf::cmd_converge(cfg);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "dsfilter %s: %s\n", command.c_str(), e.what());
    return dsf::exit_code_for(e);
  }
  return 0;
}
