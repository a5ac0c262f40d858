#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dsfilter/grid.hpp"
#include "dsfilter/model.hpp"
#include "dsfilter/network.hpp"
#include "dsfilter/simulate.hpp"

namespace dsf {

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  int M = 20000;
  int batch_size = 1024;
  int epochs = 40;
  double learning_rate = 1e-3;
  double lr_decay = 1.0;  // multiplicative, per epoch
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int width = 32;
  int depth = 2;
  bool warm_start = true;
  // Held out from the end of the batch; selects the best epoch.
  double validation_fraction = 0.1;
  // Points of the grid on which the per-sample closure masses are integrated
  // (same bounds as the evaluation grid); 0 uses the evaluation grid itself.
  int normalization_points = 101;
  // Euler-Maruyama substeps per fine step for the training observations.
  int observation_substeps = 8;
  // Training density override (mean, stddev) replacing q0 for the paths.
  std::optional<std::pair<double, double>> training_density;

  void validate() const;
};

struct StepReport {
  TimeIndex index;  // trained network (k, n + 1)
  int epochs_run = 0;
  int best_epoch = 0;  // 0: the initialization was never improved on
  double initial_validation_loss = 0.0;
  double best_validation_loss = 0.0;
  double final_training_loss = 0.0;
};

// Per-window training-time normalization: c_m = int pi(k, 0)(x, Y^m) dx.
struct WindowNormalizer {
  std::vector<double> masses;
};

class FilterPipeline {
 public:
  FilterPipeline() = default;
  FilterPipeline(DiffusionModel model, ObservationModel obs, InitialDensity init, TimeGrid time, TrainConfig cfg,
                 Grid1D eval_grid, std::uint64_t seed);

  const DiffusionModel& model() const { return model_; }
  const ObservationModel& observation() const { return obs_; }
  const InitialDensity& initial() const { return init_; }
  const TimeGrid& time() const { return time_; }
  const TrainConfig& config() const { return cfg_; }
  const Grid1D& eval_grid() const { return eval_grid_; }
  const Grid1D& normalization_grid() const { return norm_grid_; }
  std::uint64_t seed() const { return seed_; }

  int input_dim(int k) const { return model_.dim + obs_.d_prime * (k + 1); }

  bool has(TimeIndex i) const { return networks_.contains(i); }
  // Network approximating pi(k, n), n >= 1. Throws ConfigError when untrained.
  const EnergyNetwork& network(TimeIndex i) const;
  void set_network(TimeIndex i, EnergyNetwork net);
  const std::map<TimeIndex, EnergyNetwork>& networks() const { return networks_; }
  bool complete() const;

  std::map<int, WindowNormalizer>& normalizers() { return normalizers_; }
  const std::map<int, WindowNormalizer>& normalizers() const { return normalizers_; }
  std::vector<StepReport>& reports() { return reports_; }
  const std::vector<StepReport>& reports() const { return reports_; }

 private:
  DiffusionModel model_;
  ObservationModel obs_;
  InitialDensity init_;
  TimeGrid time_;
  TrainConfig cfg_;
  Grid1D eval_grid_;
  Grid1D norm_grid_;
  std::uint64_t seed_ = 0;
  std::map<TimeIndex, EnergyNetwork> networks_;
  std::map<int, WindowNormalizer> normalizers_;
  std::vector<StepReport> reports_;
};

// Unnormalized closure pi(k, 0)(x, y_{0:k}) without the window normalization:
// q0 L(y_0) for k = 0, network (k - 1, N) times L(y_k) otherwise. Evaluated at
// the columns of xs (dim x B); returns values and x-gradients.
EnergyNetwork::DensityGrad closure_raw(const FilterPipeline& p, int k, const Mat& xs, const ObservationSequence& y);

// int closure_raw(k)(x, y) dx on the normalization grid (1D models).
double closure_mass(const FilterPipeline& p, int k, const ObservationSequence& y);

// G pi(k, n) at z_next with the target frozen: network value and gradient for
// n >= 1, the window-normalized closure for n = 0.
double regression_target(const FilterPipeline& p, int k, int n, const Vec& z_next, const ObservationSequence& y);

// Trains network (k, n + 1) on the pairs (Z_{N-n-1}, Y_{0:k}) -> G pi(k, n)(Z_{N-n}, Y_{0:k}).
// Window k's normalizer must be present. Throws TrainingDiverged on a
// non-finite loss.
EnergyNetwork train_step_network(const FilterPipeline& p, const TrainingBatch& batch, int k, int n,
                                 StepReport* report = nullptr);

// Per-sample masses for window k from the pipeline's current networks.
WindowNormalizer compute_normalizer(const FilterPipeline& p, const TrainingBatch& batch, int k);

using ProgressFn = std::function<void(const StepReport&)>;

// Samples the batch from `seed` and trains every network in recursion order.
// When `resume` is given its trained networks are kept and skipped; the result
// equals a fresh run with the same arguments.
FilterPipeline train_pipeline(const DiffusionModel& model, const ObservationModel& obs, const InitialDensity& init,
                              const TimeGrid& time, const TrainConfig& cfg, const Grid1D& eval_grid,
                              std::uint64_t seed, const ProgressFn& progress = {},
                              const FilterPipeline* resume = nullptr,
                              const std::function<void(const FilterPipeline&)>& checkpoint = {});

TrainingBatch pipeline_training_batch(const FilterPipeline& p);

// Network value for n >= 1; closure_raw / closure_mass for (k >= 1, 0); the
// exact q0 L(y_0) at (0, 0).
double pipeline_eval(const FilterPipeline& p, int k, int n, const Vec& x, const ObservationSequence& y);

// Same as pipeline_eval at every node of grid (1D models).
GridDensity pipeline_eval_grid(const FilterPipeline& p, TimeIndex i, const ObservationSequence& y, const Grid1D& grid);

// Directory layout: manifest.json, net_<k>_<n>.txt per network,
// normalizer_<k>.txt per window. The model is rebuilt from its built-in name
// unless supplied.
void save_pipeline(const FilterPipeline& p, const std::filesystem::path& dir);
FilterPipeline load_pipeline(const std::filesystem::path& dir, const BuiltinModel* model = nullptr);

}  // namespace dsf
