#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "dsfilter/ebds.hpp"
#include "dsfilter/grid.hpp"
#include "dsfilter/reference.hpp"
#include "dsfilter/simulate.hpp"

namespace dsf {

// Densities of one filter along one observation sequence at the requested
// indices, sampled at the grid nodes.
using DensityValues = std::map<TimeIndex, std::vector<double>>;
using Evaluator =
    std::function<DensityValues(const ObservationSequence& y, const std::vector<TimeIndex>& indices, const Grid1D& grid)>;
using PointFn = std::function<double(int k, int n, const Vec& x, const ObservationSequence& y)>;

Evaluator pointwise_evaluator(PointFn fn);
// Runs the quadrature filter on its own grid and interpolates onto the requested one.
Evaluator quad_evaluator(const BuiltinModel& model, const Grid1D& quad_grid, const TimeGrid& time, int gh_order,
                         bool normalized_updates);
Evaluator kalman_evaluator(const BuiltinModel& model, const TimeGrid& time);
// Sequence i is filtered with seed stream_seed(options.seed, particles, generating seed of y).
Evaluator particle_evaluator(const BuiltinModel& model, const TimeGrid& time, const ParticleFilterOptions& options);
Evaluator pipeline_evaluator(std::shared_ptr<const FilterPipeline> pipeline);

struct ErrorReport {
  std::map<TimeIndex, double> per_time;        // sqrt(mean_m sup_B |approx - reference|^2)
  std::map<TimeIndex, double> standard_error;  // delta-method Monte Carlo error of per_time
  int Me = 0;
  Grid1D grid;
  TimeGrid time;
  std::vector<std::uint64_t> sequence_seeds;
  int N = 0;
  std::uint64_t seed = 0;  // instance (training) seed, 0 for deterministic filters
};

// Evaluates at `indices`, or at the whole index set when empty. With
// `normalize` both densities are divided by their grid mass before
// differencing; a degenerate mass throws DegenerateDensity.
ErrorReport l2linf_error(const Evaluator& approx, const Evaluator& reference,
                         const std::vector<ObservationSequence>& sequences, const Grid1D& grid, const TimeGrid& time,
                         bool normalize = true, const std::vector<TimeIndex>& indices = {});

struct LogLogFit {
  double slope = 0.0;
  double intercept = 0.0;
};

// Least squares on (log x, log y); needs two distinct positive x and positive y.
LogLogFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y);

struct StudyCell {
  Evaluator approx;
  Evaluator reference;
  TimeGrid time;
  std::uint64_t seed = 0;
};
using StudyBuilder = std::function<StudyCell(int N)>;

struct ConvergenceTable {
  std::vector<int> N_values;
  std::vector<double> final_errors;
  std::optional<double> slope;  // empty for a single N
  std::optional<double> intercept;
  std::vector<ErrorReport> reports;
};

// For each N: one l2linf_error evaluation; records the t_{K,0} entry, or the
// maximum over the index set when final_time_only is off.
ConvergenceTable convergence_study(const StudyBuilder& builder, const std::vector<int>& N_values,
                                   const std::vector<ObservationSequence>& sequences, const Grid1D& grid,
                                   bool final_time_only, bool normalize = true);

// Long format k,n,t,error,N,seed; rows ordered by report, then index.
void emit_error_csv(const std::vector<ErrorReport>& reports, const std::filesystem::path& path);
// Restores per_time, time points, N and seed of every (N, seed) block.
std::vector<ErrorReport> parse_error_csv(const std::filesystem::path& path);

struct ConvergenceRow {
  std::string kind;  // "instance" or "mean"
  int N = 0;
  std::optional<std::uint64_t> seed;
  double error = 0.0;
};

// kind,N,seed,error,slope,intercept; the slope columns are filled on the mean
// rows when a slope exists.
void emit_convergence_csv(const std::vector<ConvergenceRow>& rows, const std::optional<LogLogFit>& fit,
                          const std::filesystem::path& path);
// Two columns "N error" for gnuplot.
void emit_gnuplot(const std::vector<int>& N_values, const std::vector<double>& errors, const std::filesystem::path& path);

}  // namespace dsf
