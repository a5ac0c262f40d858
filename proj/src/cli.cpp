#include "dsfilter/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <memory>
#include <set>

#include <json.hpp>

#include "dsfilter/eval.hpp"
#include "dsfilter/io.hpp"
#include "dsfilter/operators.hpp"
#include "dsfilter/split_quad.hpp"

namespace dsf {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Evaluation data draws from streams far above any training batch index so a
// training seed equal to the data seed never reuses its sequences.
constexpr std::uint64_t kEvaluationStreamBase = 1ULL << 40;

json defaults() {
  return json::parse(R"({
    "model": "drifted_bm",
    "T": 2.0,
    "K": 20,
    "N": [16],
    "grid": {"lower": -8.0, "upper": 12.0, "points": 2000},
    "gh_order": 21,
    "seeds": [1],
    "data_seed": 7,
    "sequences": 100,
    "observation_substeps": 64,
    "normalized_updates": false,
    "normalize_compare": true,
    "final_time_only": true,
    "oracle_mode": "filter",
    "method": "oracle",
    "reference": "auto",
    "density_format": "long",
    "particle": {"particles": 10000, "substeps": 8, "bandwidth": 0.0, "seed": 99},
    "train": {
      "M": 20000,
      "batch_size": 1024,
      "epochs": 40,
      "learning_rate": 0.001,
      "lr_decay": 1.0,
      "optimizer": {"name": "adam", "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8},
      "width": 32,
      "depth": 2,
      "warm_start": true,
      "validation_fraction": 0.1,
      "normalization_points": 101,
      "observation_substeps": 8,
      "training_density": null
    },
    "observations": [],
    "output": "",
    "resume_from": ""
  })");
}

void merge_into(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError("config" + (path.empty() ? "" : " key '" + path + "'") + " must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string full = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + full + "'");
    json& slot = base[key];
    if (full == "train.training_density") {
      if (!value.is_null()) {
        if (!value.is_object()) throw ConfigError("config key '" + full + "' must be null or {mean, std}");
        for (const auto& [k2, v2] : value.items())
          if (k2 != "mean" && k2 != "std") throw ConfigError("unknown config key '" + full + "." + k2 + "'");
        if (!value.contains("mean") || !value.contains("std"))
          throw ConfigError("config key '" + full + "' needs both mean and std");
      }
      slot = value;
    } else if (slot.is_object()) {
      merge_into(slot, value, full);
    } else if ((full == "N" || full == "seeds" || full == "observations") && !value.is_array()) {
      slot = json::array({value});
    } else {
      slot = value;
    }
  }
}

void apply_override(json& user, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &user;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' is malformed");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part) || !(*node)[part].is_object()) (*node)[part] = json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

template <class T>
T get(const json& j, const char* key, const std::string& path) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + path + key + "' has the wrong type");
  }
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

RunConfig from_json(const json& j) {
  RunConfig c;
  c.model = get<std::string>(j, "model", "");
  c.T = get<double>(j, "T", "");
  c.K = get<int>(j, "K", "");
  c.N_values = get<std::vector<int>>(j, "N", "");
  const json& g = j.at("grid");
  c.grid_lower = get<double>(g, "lower", "grid.");
  c.grid_upper = get<double>(g, "upper", "grid.");
  c.grid_points = get<int>(g, "points", "grid.");
  c.gh_order = get<int>(j, "gh_order", "");
  c.seeds = get<std::vector<std::uint64_t>>(j, "seeds", "");
  c.data_seed = get<std::uint64_t>(j, "data_seed", "");
  c.sequences = get<int>(j, "sequences", "");
  c.observation_substeps = get<int>(j, "observation_substeps", "");
  c.normalized_updates = get<bool>(j, "normalized_updates", "");
  c.normalize_compare = get<bool>(j, "normalize_compare", "");
  c.final_time_only = get<bool>(j, "final_time_only", "");
  c.oracle_mode = get<std::string>(j, "oracle_mode", "");
  c.method = get<std::string>(j, "method", "");
  c.reference = get<std::string>(j, "reference", "");
  c.density_format = get<std::string>(j, "density_format", "");
  const json& p = j.at("particle");
  c.particle.particles = get<int>(p, "particles", "particle.");
  c.particle.substeps = get<int>(p, "substeps", "particle.");
  c.particle.bandwidth = get<double>(p, "bandwidth", "particle.");
  c.particle.seed = get<std::uint64_t>(p, "seed", "particle.");
  const json& t = j.at("train");
  TrainConfig& tc = c.train;
  tc.M = get<int>(t, "M", "train.");
  tc.batch_size = get<int>(t, "batch_size", "train.");
  tc.epochs = get<int>(t, "epochs", "train.");
  tc.learning_rate = get<double>(t, "learning_rate", "train.");
  tc.lr_decay = get<double>(t, "lr_decay", "train.");
  const json& o = t.at("optimizer");
  const std::string name = get<std::string>(o, "name", "train.optimizer.");
  require(name == "adam" || name == "sgd", "train.optimizer.name must be 'adam' or 'sgd'");
  tc.optimizer = name == "adam" ? OptimizerKind::adam : OptimizerKind::sgd;
  tc.beta1 = get<double>(o, "beta1", "train.optimizer.");
  tc.beta2 = get<double>(o, "beta2", "train.optimizer.");
  tc.epsilon = get<double>(o, "epsilon", "train.optimizer.");
  tc.width = get<int>(t, "width", "train.");
  tc.depth = get<int>(t, "depth", "train.");
  tc.warm_start = get<bool>(t, "warm_start", "train.");
  tc.validation_fraction = get<double>(t, "validation_fraction", "train.");
  tc.normalization_points = get<int>(t, "normalization_points", "train.");
  tc.observation_substeps = get<int>(t, "observation_substeps", "train.");
  const json& td = t.at("training_density");
  if (!td.is_null())
    tc.training_density = std::make_pair(get<double>(td, "mean", "train.training_density."),
                                         get<double>(td, "std", "train.training_density."));
  c.observations = get<std::vector<std::string>>(j, "observations", "");
  c.output = get<std::string>(j, "output", "");
  c.resume_from = get<std::string>(j, "resume_from", "");
  return c;
}

void validate(const RunConfig& c) {
  const auto names = builtin_names();
  require(std::find(names.begin(), names.end(), c.model) != names.end(), "unknown model '" + c.model + "'");
  require(c.T > 0.0 && std::isfinite(c.T), "T must be positive");
  require(c.K >= 1, "K must be at least 1");
  require(!c.N_values.empty(), "N must list at least one value");
  for (int N : c.N_values) require(N >= 1, "every N must be at least 1");
  for (std::size_t i = 1; i < c.N_values.size(); ++i)
    require(c.N_values[i] > c.N_values[i - 1], "N values must be strictly ascending");
  require(c.grid_lower < c.grid_upper && c.grid_points >= 2, "grid needs lower < upper and at least 2 points");
  require(c.gh_order >= 5, "gh_order must be at least 5");
  require(!c.seeds.empty(), "seeds must list at least one seed");
  require(std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() == c.seeds.size(), "seeds must be distinct");
  require(c.sequences >= 1, "sequences must be at least 1");
  require(c.observation_substeps >= 1, "observation_substeps must be at least 1");
  require(c.oracle_mode == "filter" || c.oracle_mode == "standalone", "oracle_mode must be 'filter' or 'standalone'");
  require(c.method == "oracle" || c.method == "ebds", "method must be 'oracle' or 'ebds'");
  require(c.reference == "auto" || c.reference == "kalman" || c.reference == "particle",
          "reference must be 'auto', 'kalman' or 'particle'");
  require(c.density_format == "long" || c.density_format == "files", "density_format must be 'long' or 'files'");
  require(c.particle.particles >= 1 && c.particle.substeps >= 1, "particle filter needs particles, substeps >= 1");
  c.train.validate();
}

json to_json(const RunConfig& c) {
  json j = defaults();
  j["model"] = c.model;
  j["T"] = c.T;
  j["K"] = c.K;
  j["N"] = c.N_values;
  j["grid"] = {{"lower", c.grid_lower}, {"upper", c.grid_upper}, {"points", c.grid_points}};
  j["gh_order"] = c.gh_order;
  j["seeds"] = c.seeds;
  j["data_seed"] = c.data_seed;
  j["sequences"] = c.sequences;
  j["observation_substeps"] = c.observation_substeps;
  j["normalized_updates"] = c.normalized_updates;
  j["normalize_compare"] = c.normalize_compare;
  j["final_time_only"] = c.final_time_only;
  j["oracle_mode"] = c.oracle_mode;
  j["method"] = c.method;
  j["reference"] = c.reference;
  j["density_format"] = c.density_format;
  j["particle"] = {{"particles", c.particle.particles},
                   {"substeps", c.particle.substeps},
                   {"bandwidth", c.particle.bandwidth},
                   {"seed", c.particle.seed}};
  const TrainConfig& t = c.train;
  j["train"] = {{"M", t.M},
                {"batch_size", t.batch_size},
                {"epochs", t.epochs},
                {"learning_rate", t.learning_rate},
                {"lr_decay", t.lr_decay},
                {"optimizer",
                 {{"name", t.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
                  {"beta1", t.beta1},
                  {"beta2", t.beta2},
                  {"epsilon", t.epsilon}}},
                {"width", t.width},
                {"depth", t.depth},
                {"warm_start", t.warm_start},
                {"validation_fraction", t.validation_fraction},
                {"normalization_points", t.normalization_points},
                {"observation_substeps", t.observation_substeps},
                {"training_density", t.training_density ? json{{"mean", t.training_density->first},
                                                               {"std", t.training_density->second}}
                                                        : json(nullptr)}};
  j["observations"] = c.observations;
  j["output"] = c.output;
  j["resume_from"] = c.resume_from;
  return j;
}

// Fails before any computation when the directory already holds files.
fs::path prepare_output(const RunConfig& cfg) {
  if (cfg.output.empty()) throw ConfigError("no output directory configured");
  const fs::path dir(cfg.output);
  std::error_code ec;
  if (fs::exists(dir, ec)) {
    if (!fs::is_directory(dir, ec)) throw IoError("output path " + dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir, ec)) throw IoError("output directory " + dir.string() + " already exists and is not empty");
  }
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& cfg, json extra) {
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir).generic_string());
  std::sort(files.begin(), files.end());
  json m = {{"command", command}, {"library_version", kVersion}, {"config", to_json(cfg)}, {"outputs", files}};
  for (auto& [k, v] : extra.items()) m[k] = v;
  write_text_file(dir / "manifest.json", m.dump(2) + "\n");
}

std::string file_index(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu", i);
  return buf;
}

std::vector<ObservationSequence> simulated_sequences(const RunConfig& cfg, const BuiltinModel& bm) {
  const TimeGrid coarse(cfg.T, cfg.K, 1);
  return sample_observation_sequences(bm.diffusion, bm.observation, bm.initial, coarse, cfg.sequences,
                                      cfg.observation_substeps, cfg.data_seed, kEvaluationStreamBase);
}

std::vector<ObservationSequence> read_sequences(const std::vector<fs::path>& files, const TimeGrid& time) {
  std::vector<ObservationSequence> out;
  for (std::size_t i = 0; i < files.size(); ++i) {
    ObservationSequence y = read_observation_csv(files[i], &time);
    y.generating_seed = i;
    out.push_back(std::move(y));
  }
  return out;
}

bool kalman_applicable(const BuiltinModel& bm) {
  return bm.diffusion.affine && bm.diffusion.dim == 1 && bm.observation.linear && bm.initial.q0.gaussian;
}

// Rethrows with a context prefix, keeping the exit-code category.
[[noreturn]] void rethrow_with(const std::string& ctx) {
  try {
    throw;
  } catch (const ConfigError& e) {
    throw ConfigError(ctx + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(ctx + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(ctx + ": " + e.what());
  }
}

std::string cell_name(int N, std::uint64_t seed) { return "N" + std::to_string(N) + "_seed" + std::to_string(seed); }

FilterPipeline train_cell(const RunConfig& cfg, const BuiltinModel& bm, int N, std::uint64_t seed,
                          const fs::path& save_dir) {
  const TimeGrid time(cfg.T, cfg.K, N);
  std::unique_ptr<FilterPipeline> resume;
  if (!cfg.resume_from.empty()) {
    const fs::path prev = fs::path(cfg.resume_from) / save_dir.filename();
    if (fs::exists(prev / "manifest.json")) {
      BuiltinModel copy = bm;
      resume = std::make_unique<FilterPipeline>(load_pipeline(prev, &copy));
    }
  }
  auto progress = [&](const StepReport& r) {
    std::fprintf(stderr, "[train %s] network (%d, %d): %d epochs, best %d, validation loss %.4e -> %.4e\n",
                 cell_name(N, seed).c_str(), r.index.k, r.index.n, r.epochs_run, r.best_epoch,
                 r.initial_validation_loss, r.best_validation_loss);
  };
  auto checkpoint = [&](const FilterPipeline& p) { save_pipeline(p, save_dir); };
  FilterPipeline p = train_pipeline(bm.diffusion, bm.observation, bm.initial, time, cfg.train, cfg.grid(), seed,
                                    progress, resume.get(), checkpoint);
  save_pipeline(p, save_dir);
  return p;
}

}  // namespace

std::string RunConfig::to_json_text() const { return to_json(*this).dump(2); }

std::string default_config_text() { return defaults().dump(2); }

RunConfig parse_run_config(const std::string& json_text, const std::vector<std::string>& overrides) {
  json user;
  try {
    user = json_text.empty() ? json::object() : json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& o : overrides) apply_override(user, o);
  json merged = defaults();
  merge_into(merged, user, "");
  RunConfig c = from_json(merged);
  validate(c);
  return c;
}

RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const IoError&) {
    throw ConfigError("cannot read config file " + path.string());
  }
  return parse_run_config(text, overrides);
}

std::vector<fs::path> observation_files(const RunConfig& cfg) {
  std::vector<fs::path> out;
  for (const auto& entry : cfg.observations) {
    const fs::path p(entry);
    std::error_code ec;
    if (fs::is_directory(p, ec)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && e.path().extension() == ".csv") found.push_back(e.path());
      if (found.empty()) throw ConfigError("observation directory " + p.string() + " holds no CSV files");
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(p, ec)) {
      out.push_back(p);
    } else {
      throw ConfigError("observation file " + p.string() + " does not exist");
    }
  }
  return out;
}

void cmd_simulate(const RunConfig& cfg) {
  validate(cfg);
  const BuiltinModel bm = builtin_by_name(cfg.model);
  const fs::path dir = prepare_output(cfg);
  const TimeGrid coarse(cfg.T, cfg.K, 1);
  const auto seqs = simulated_sequences(cfg, bm);
  json files = json::array();
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const std::string name = "obs_" + file_index(i) + ".csv";
    write_observation_csv(seqs[i], coarse, dir / name);
    files.push_back({{"file", name}, {"stream", kEvaluationStreamBase + i}, {"generating_seed", *seqs[i].generating_seed}});
  }
  write_manifest(dir, "simulate", cfg, {{"sequences", files}});
}

void cmd_oracle(const RunConfig& cfg) {
  validate(cfg);
  const BuiltinModel bm = builtin_by_name(cfg.model);
  const Grid1D grid = cfg.grid();
  if (cfg.oracle_mode == "standalone") {
    const fs::path dir = prepare_output(cfg);
    json errors = json::array();
    for (int N : cfg.N_values) {
      const GridDensity d = standalone_fokker_planck(bm.diffusion, bm.initial.q0, grid, N, cfg.T, cfg.gh_order);
      write_density_csv(d, dir / ("standalone_N" + std::to_string(N) + ".csv"));
      json row = {{"N", N}};
      if (kalman_applicable(bm)) {
        const GaussianBelief start{bm.initial.q0.gaussian->first, bm.initial.q0.gaussian->second};
        const GridDensity exact = kalman_density(kalman_predict_affine(start, *bm.diffusion.affine, cfg.T), grid);
        double sup = 0.0;
        for (std::size_t i = 0; i < d.values.size(); ++i) sup = std::max(sup, std::abs(d.values[i] - exact.values[i]));
        row["linf_error_vs_exact"] = sup;
      }
      errors.push_back(row);
    }
    write_manifest(dir, "oracle", cfg, {{"standalone", errors}});
    return;
  }

  const auto files = observation_files(cfg);
  if (files.empty()) throw ConfigError("the filter oracle needs observation files (config key 'observations')");
  const TimeGrid coarse(cfg.T, cfg.K, 1);
  const auto seqs = read_sequences(files, coarse);
  const fs::path dir = prepare_output(cfg);
  json runs = json::array();
  for (int N : cfg.N_values) {
    const TimeGrid time(cfg.T, cfg.K, N);
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      DensityMap run;
      try {
        run = quad_filter_run(bm.diffusion, bm.observation, bm.initial.q0, grid, time, seqs[i], cfg.gh_order,
                              cfg.normalized_updates);
      } catch (...) {
        rethrow_with("oracle N=" + std::to_string(N) + ", " + files[i].filename().string());
      }
      const std::string stem = "N" + std::to_string(N) + "_" + files[i].stem().string();
      if (cfg.density_format == "long") {
        write_density_long_csv(run, time, dir / ("densities_" + stem + ".csv"));
      } else {
        const fs::path sub = dir / ("densities_" + stem);
        fs::create_directories(sub);
        for (const auto& [idx, d] : run)
          write_density_csv(d, sub / ("density_" + std::to_string(idx.k) + "_" + std::to_string(idx.n) + ".csv"));
      }
      runs.push_back({{"N", N}, {"observations", files[i].string()}, {"densities", run.size()}});
    }
  }
  write_manifest(dir, "oracle", cfg, {{"runs", runs}});
}

void cmd_train(const RunConfig& cfg) {
  validate(cfg);
  const BuiltinModel bm = builtin_by_name(cfg.model);
  if (!cfg.resume_from.empty() && !fs::is_directory(cfg.resume_from))
    throw ConfigError("resume_from directory " + cfg.resume_from + " does not exist");
  const fs::path dir = prepare_output(cfg);
  json cells = json::array();
  for (int N : cfg.N_values)
    for (std::uint64_t seed : cfg.seeds) {
      const std::string name = cell_name(N, seed);
      FilterPipeline p;
      try {
        p = train_cell(cfg, bm, N, seed, dir / name);
      } catch (...) {
        rethrow_with("train " + name);
      }
      cells.push_back({{"N", N}, {"seed", seed}, {"directory", name}, {"networks", p.networks().size()}});
    }
  write_manifest(dir, "train", cfg, {{"pipelines", cells}});
}

void cmd_converge(const RunConfig& cfg) {
  validate(cfg);
  const BuiltinModel bm = builtin_by_name(cfg.model);
  const Grid1D grid = cfg.grid();
  std::string ref = cfg.reference;
  if (ref == "auto") ref = kalman_applicable(bm) ? "kalman" : "particle";
  if (ref == "kalman" && !kalman_applicable(bm))
    throw ConfigError("model '" + cfg.model + "' has no Kalman reference");
  const TimeGrid coarse(cfg.T, cfg.K, 1);
  const auto files = observation_files(cfg);
  if (!cfg.resume_from.empty() && !fs::is_directory(cfg.resume_from))
    throw ConfigError("resume_from directory " + cfg.resume_from + " does not exist");
  const auto seqs = files.empty() ? simulated_sequences(cfg, bm) : read_sequences(files, coarse);
  const fs::path dir = prepare_output(cfg);

  auto reference_for = [&](const TimeGrid& time) {
    return ref == "kalman" ? kalman_evaluator(bm, time) : particle_evaluator(bm, time, cfg.particle);
  };
  const std::vector<std::uint64_t> seeds =
      cfg.method == "oracle" ? std::vector<std::uint64_t>{0} : cfg.seeds;

  std::vector<ConvergenceRow> rows;
  std::vector<ErrorReport> reports;
  std::map<int, std::vector<double>> per_N;
  for (std::uint64_t seed : seeds) {
    StudyBuilder builder = [&](int N) {
      const TimeGrid time(cfg.T, cfg.K, N);
      StudyCell cell;
      cell.time = time;
      cell.seed = seed;
      cell.reference = reference_for(time);
      if (cfg.method == "oracle") {
        cell.approx = quad_evaluator(bm, grid, time, cfg.gh_order, cfg.normalized_updates);
      } else {
        const fs::path save = dir / "pipelines" / cell_name(N, seed);
        auto p = std::make_shared<const FilterPipeline>(train_cell(cfg, bm, N, seed, save));
        cell.approx = pipeline_evaluator(p);
      }
      return cell;
    };
    for (int N : cfg.N_values) {
      ConvergenceTable t;
      try {
        t = convergence_study(builder, {N}, seqs, grid, cfg.final_time_only, cfg.normalize_compare);
      } catch (...) {
        rethrow_with("converge N=" + std::to_string(N) + ", seed " + std::to_string(seed));
      }
      rows.push_back({"instance", N, seed, t.final_errors[0]});
      per_N[N].push_back(t.final_errors[0]);
      reports.push_back(std::move(t.reports[0]));
    }
  }
  std::vector<int> Ns;
  std::vector<double> means;
  for (const auto& [N, errs] : per_N) {
    double s = 0.0;
    for (double e : errs) s += e;
    Ns.push_back(N);
    means.push_back(s / static_cast<double>(errs.size()));
    rows.push_back({"mean", N, std::nullopt, means.back()});
  }
  std::optional<LogLogFit> fit;
  if (Ns.size() >= 2) fit = fit_loglog(std::vector<double>(Ns.begin(), Ns.end()), means);
  emit_convergence_csv(rows, fit, dir / "convergence.csv");
  emit_error_csv(reports, dir / "errors.csv");
  emit_gnuplot(Ns, means, dir / "convergence.dat");
  json extra = {{"reference", ref},
                {"slope", fit ? json(fit->slope) : json(nullptr)},
                {"intercept", fit ? json(fit->intercept) : json(nullptr)},
                {"sequences", seqs.size()}};
  if (ref == "particle")
    extra["particle_reference"] = {{"particles", cfg.particle.particles},
                                   {"substeps", cfg.particle.substeps},
                                   {"kernel", "gaussian"},
                                   {"bandwidth", cfg.particle.bandwidth > 0 ? json(cfg.particle.bandwidth)
                                                                            : json("silverman")}};
  write_manifest(dir, "converge", cfg, extra);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const NumericalError*>(&e)) return 3;
  if (dynamic_cast<const IoError*>(&e)) return 4;
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return 4;
  if (dynamic_cast<const json::exception*>(&e)) return 2;
  return 1;
}

}  // namespace dsf
