#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dsfilter/model.hpp"

namespace dsf {

// Observation times t_{k,0} = kT/K, k = 0..K, each window split into N fine
// steps of length tau = T/(KN).
struct TimeGrid {
  double T = 1.0;
  int K = 1;
  int N = 1;

  TimeGrid() = default;
  TimeGrid(double T, int K, int N);

  double tau() const { return T / (static_cast<double>(K) * N); }
  double window() const { return T / K; }
  double time(int k, int n) const { return T * static_cast<double>(k * N + n) / (static_cast<double>(K) * N); }
  double time(TimeIndex i) const { return time(i.k, i.n); }

  // {0..K-1} x {0..N} followed by (K, 0), in recursion order.
  std::vector<TimeIndex> index_set() const;
  TimeIndex final_index() const { return {K, 0}; }
};

// M Euler-Maruyama paths over the first window: states[m][j] = Z^m_j, j = 0..N.
struct PathBatch {
  int paths = 0;
  int steps = 0;  // N
  int dim = 1;
  std::uint64_t seed = 0;
  TimeGrid grid;
  std::vector<double> states;  // (m * (N + 1) + j) * dim + c

  double at(int m, int j, int c = 0) const {
    return states[(static_cast<std::size_t>(m) * (steps + 1) + j) * dim + c];
  }
  Vec state(int m, int j) const;
};

struct ObservationSequence {
  Mat values;  // d' x (K + 1), column k is y_k
  std::optional<std::uint64_t> generating_seed;

  int count() const { return static_cast<int>(values.cols()); }
  Vec column(int k) const { return values.col(k); }
  // y_{0:k} stacked column-major into a vector of length d' (k + 1).
  Vec prefix(int k) const;
};

Vec em_step(const DiffusionModel& model, const Vec& z, double tau, const Vec& dw);

PathBatch sample_em_paths(const DiffusionModel& model, const DensitySampler& training_density, const TimeGrid& grid,
                          int M, std::uint64_t seed);

// True state by sub-stepped Euler-Maruyama from q0, observed at t_{k,0}.
// Sequence i uses the stream (seed, observations, first_index + i).
std::vector<ObservationSequence> sample_observation_sequences(const DiffusionModel& model, const ObservationModel& obs,
                                                              const InitialDensity& init, const TimeGrid& grid,
                                                              int count, int substeps, std::uint64_t seed,
                                                              std::uint64_t first_index = 0);

struct TrainingBatch {
  PathBatch paths;
  std::vector<ObservationSequence> observations;
};

// M independent pairs (Z^m, Y^m); paths and sequences come from disjoint streams.
TrainingBatch sample_training_batch(const DiffusionModel& model, const ObservationModel& obs, const InitialDensity& init,
                                    const TimeGrid& grid, int M, std::uint64_t seed, int substeps = 8);

}  // namespace dsf
