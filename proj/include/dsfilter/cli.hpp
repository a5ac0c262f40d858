#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dsfilter/ebds.hpp"
#include "dsfilter/grid.hpp"
#include "dsfilter/reference.hpp"

namespace dsf {

struct RunConfig {
  std::string model = "drifted_bm";
  double T = 2.0;
  int K = 20;
  std::vector<int> N_values = {16};
  double grid_lower = -8.0;
  double grid_upper = 12.0;
  int grid_points = 2000;
  int gh_order = 21;
  std::vector<std::uint64_t> seeds = {1};
  std::uint64_t data_seed = 7;
  int sequences = 100;  // M_e, or the number of simulated sequences
  // Euler-Maruyama substeps per observation window for simulated data.
  int observation_substeps = 64;
  bool normalized_updates = false;
  bool normalize_compare = true;
  bool final_time_only = true;
  std::string oracle_mode = "filter";  // filter | standalone
  std::string method = "oracle";       // converge: oracle | ebds
  std::string reference = "auto";      // kalman | particle | auto
  std::string density_format = "long";  // long | files
  ParticleFilterOptions particle{10000, 8, 0.0, 99};
  TrainConfig train;
  std::vector<std::string> observations;  // files or directories of sequence CSVs
  std::string output;
  std::string resume_from;

  Grid1D grid() const { return Grid1D(grid_lower, grid_upper, grid_points); }
  // Fully resolved configuration as JSON text.
  std::string to_json_text() const;
};

// Parses a JSON configuration on top of the defaults, applies key=value
// overrides (dotted keys, JSON or bare-string values) and validates. Unknown
// keys and invalid values throw ConfigError.
RunConfig parse_run_config(const std::string& json_text, const std::vector<std::string>& overrides = {});
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
std::string default_config_text();

// Each command validates, refuses an existing non-empty output directory,
// writes its files and a manifest.json echoing the resolved configuration.
void cmd_simulate(const RunConfig& cfg);
void cmd_oracle(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_converge(const RunConfig& cfg);

// 0 success, 2 configuration, 3 numerical failure, 4 I/O.
int exit_code_for(const std::exception& e);

// Sequence files named by the configuration, sorted within directories.
std::vector<std::filesystem::path> observation_files(const RunConfig& cfg);

}  // namespace dsf
