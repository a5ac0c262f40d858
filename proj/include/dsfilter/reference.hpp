#pragma once

#include <map>
#include <optional>
#include <vector>

#include "dsfilter/grid.hpp"
#include "dsfilter/model.hpp"
#include "dsfilter/simulate.hpp"

namespace dsf {

struct GaussianBelief {
  double mean = 0.0;
  double variance = 1.0;
};

GaussianBelief kalman_predict(GaussianBelief belief, double drift_const, double dt, double diffusion_const);
// dX = (offset + slope X) dt + sigma dW, exact moments over dt.
GaussianBelief kalman_predict_affine(GaussianBelief belief, const AffineForm& form, double dt);
GaussianBelief kalman_update(GaussianBelief belief, double y, double R);
// Observation y = gain x + noise(R).
GaussianBelief kalman_update(GaussianBelief belief, double y, const LinearObservation& obs);

GridDensity kalman_density(GaussianBelief belief, const Grid1D& grid);

// Exact filter p_k(t_{k,n}) for every (k, n) of the index set. Throws
// ConfigError unless the model is affine with constant sigma, the observation
// is linear-Gaussian and q0 is Gaussian.
std::map<TimeIndex, GaussianBelief> kalman_filter_run(const DiffusionModel& model, const ObservationModel& obs,
                                                      const DensitySampler& q0, const TimeGrid& time,
                                                      const ObservationSequence& y);

struct ParticleEnsemble {
  Mat particles;  // P x d
  Vec weights;    // P, non-negative, sums to 1
  // Optional per-particle noise stream keys; index p is used when empty.
  // Cleared by resampling.
  std::vector<std::uint64_t> stream_ids;

  int size() const { return static_cast<int>(particles.rows()); }
  double effective_sample_size() const;
  double mean(int c = 0) const;
};

ParticleEnsemble pf_initialize(const DensitySampler& q0, int P, std::uint64_t seed, int dim = 1);

struct PfStepStats {
  double ess_before_resampling = 0.0;
  bool resampled = false;
};

// Bootstrap step: propagate by sub-stepped Euler-Maruyama over dt with one RNG
// stream per particle, reweight by L(y_k, .), normalize, resample
// systematically when ESS < P/2. `step_id` selects the streams so repeated
// calls draw fresh noise.
ParticleEnsemble pf_step(const ParticleEnsemble& ensemble, const DiffusionModel& model, const ObservationModel& obs,
                         const std::optional<Vec>& y_k, double dt, int substeps, std::uint64_t seed,
                         std::uint64_t step_id, PfStepStats* stats = nullptr);

// Propagation only (L = 1, no resampling).
ParticleEnsemble pf_propagate(const ParticleEnsemble& ensemble, const DiffusionModel& model, double dt, int substeps,
                              std::uint64_t seed, std::uint64_t step_id);

// Weighted Silverman bandwidth 0.9 min(sd, IQR/1.34) ESS^{-1/5}.
double silverman_bandwidth(const ParticleEnsemble& ensemble);

// Weighted Gaussian-kernel density on the grid. bandwidth <= 0 selects Silverman.
GridDensity pf_density(const ParticleEnsemble& ensemble, const Grid1D& grid, double bandwidth = 0.0);

struct ParticleFilterOptions {
  int particles = 10000;
  int substeps = 8;
  double bandwidth = 0.0;  // <= 0: Silverman
  std::uint64_t seed = 0;
};

// Runs the bootstrap filter along one observation sequence and returns the KDE
// readout at the requested indices of the (K, N) index set. Readouts at
// observation times are taken from the reweighted ensemble before resampling.
std::map<TimeIndex, GridDensity> particle_filter_run(const DiffusionModel& model, const ObservationModel& obs,
                                                     const DensitySampler& q0, const TimeGrid& time,
                                                     const ObservationSequence& y, const Grid1D& grid,
                                                     const std::vector<TimeIndex>& readouts,
                                                     const ParticleFilterOptions& options);

}  // namespace dsf
