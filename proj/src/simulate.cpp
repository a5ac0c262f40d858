#include "dsfilter/simulate.hpp"

#include <cmath>
#include <sstream>

namespace dsf {

TimeGrid::TimeGrid(double T_, int K_, int N_) : T(T_), K(K_), N(N_) {
  if (!(T > 0.0)) throw ConfigError("time grid requires T > 0");
  if (K < 1 || N < 1) throw ConfigError("time grid requires K >= 1 and N >= 1");
  if (tau() > 1.0) warn("time step tau = " + std::to_string(tau()) + " exceeds 1");
}

std::vector<TimeIndex> TimeGrid::index_set() const {
  std::vector<TimeIndex> out;
  out.reserve(static_cast<std::size_t>(K) * (N + 1) + 1);
  for (int k = 0; k < K; ++k)
    for (int n = 0; n <= N; ++n) out.push_back({k, n});
  out.push_back({K, 0});
  return out;
}

Vec PathBatch::state(int m, int j) const {
  Vec v(dim);
  for (int c = 0; c < dim; ++c) v[c] = at(m, j, c);
  return v;
}

Vec ObservationSequence::prefix(int k) const {
  const auto rows = values.rows();
  Vec out(rows * (k + 1));
  for (int j = 0; j <= k; ++j) out.segment(j * rows, rows) = values.col(j);
  return out;
}

Vec em_step(const DiffusionModel& model, const Vec& z, double tau, const Vec& dw) {
  if (!(tau >= 0.0)) throw ConfigError("em_step requires tau >= 0");
  Vec next = z + model.drift(z) * tau + model.diffusion(z) * dw;
  if (!next.allFinite()) {
    std::ostringstream os;
    os << "Euler-Maruyama step diverged from z = " << z.transpose() << " with tau = " << tau;
    throw SimulationDiverged(os.str());
  }
  return next;
}

namespace {

Vec gaussian_increment(Rng& rng, int dim, double scale) {
  std::normal_distribution<double> normal;
  Vec dw(dim);
  for (int c = 0; c < dim; ++c) dw[c] = scale * normal(rng);
  return dw;
}

}  // namespace

PathBatch sample_em_paths(const DiffusionModel& model, const DensitySampler& training_density, const TimeGrid& grid,
                          int M, std::uint64_t seed) {
  if (M < 1) throw ConfigError("sample_em_paths requires M >= 1");
  PathBatch batch;
  batch.paths = M;
  batch.steps = grid.N;
  batch.dim = model.dim;
  batch.seed = seed;
  batch.grid = grid;
  batch.states.resize(static_cast<std::size_t>(M) * (grid.N + 1) * model.dim);
  const double tau = grid.tau();
  const double sqrt_tau = std::sqrt(tau);
  parallel_for(static_cast<std::size_t>(M), [&](std::size_t m) {
    Rng rng = make_stream(seed, stream_tag::em_paths, m);
    Vec z = training_density.sampler(rng);
    double* out = batch.states.data() + m * (grid.N + 1) * model.dim;
    for (int c = 0; c < model.dim; ++c) out[c] = z[c];
    for (int j = 1; j <= grid.N; ++j) {
      z = em_step(model, z, tau, gaussian_increment(rng, model.dim, sqrt_tau));
      for (int c = 0; c < model.dim; ++c) out[j * model.dim + c] = z[c];
    }
  });
  return batch;
}

std::vector<ObservationSequence> sample_observation_sequences(const DiffusionModel& model, const ObservationModel& obs,
                                                              const InitialDensity& init, const TimeGrid& grid,
                                                              int count, int substeps, std::uint64_t seed,
                                                              std::uint64_t first_index) {
  if (substeps < 1) throw ConfigError("substeps must be >= 1");
  if (count < 0) throw ConfigError("sequence count must be non-negative");
  std::vector<ObservationSequence> out(static_cast<std::size_t>(count));
  const int fine = grid.N * substeps;
  const double dt = grid.window() / fine;
  const double sqrt_dt = std::sqrt(dt);
  parallel_for(out.size(), [&](std::size_t i) {
    const std::uint64_t index = first_index + i;
    Rng rng = make_stream(seed, stream_tag::observations, index);
    Vec s = init.q0.sampler(rng);
    ObservationSequence seq;
    seq.values.resize(obs.d_prime, grid.K + 1);
    seq.generating_seed = stream_seed(seed, stream_tag::observations, index);
    seq.values.col(0) = obs.sampler(s, rng);
    for (int k = 1; k <= grid.K; ++k) {
      for (int j = 0; j < fine; ++j) s = em_step(model, s, dt, gaussian_increment(rng, model.dim, sqrt_dt));
      seq.values.col(k) = obs.sampler(s, rng);
    }
    out[i] = std::move(seq);
  });
  return out;
}

TrainingBatch sample_training_batch(const DiffusionModel& model, const ObservationModel& obs, const InitialDensity& init,
                                    const TimeGrid& grid, int M, std::uint64_t seed, int substeps) {
  TrainingBatch batch;
  batch.paths = sample_em_paths(model, init.training, grid, M, seed);
  batch.observations = sample_observation_sequences(model, obs, init, grid, M, substeps, seed);
  return batch;
}

}  // namespace dsf
