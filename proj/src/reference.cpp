#include "dsfilter/reference.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

namespace dsf {

GaussianBelief kalman_predict(GaussianBelief belief, double drift_const, double dt, double diffusion_const) {
  if (!(dt >= 0.0)) throw ConfigError("kalman_predict requires dt >= 0");
  belief.mean += drift_const * dt;
  belief.variance += diffusion_const * diffusion_const * dt;
  return belief;
}

GaussianBelief kalman_predict_affine(GaussianBelief belief, const AffineForm& form, double dt) {
  if (form.drift_slope == 0.0) return kalman_predict(belief, form.drift_offset, dt, form.sigma);
  if (!(dt >= 0.0)) throw ConfigError("kalman_predict requires dt >= 0");
  const double b = form.drift_slope;
  const double e = std::exp(b * dt);
  belief.mean = e * belief.mean + form.drift_offset * std::expm1(b * dt) / b;
  belief.variance = e * e * belief.variance + form.sigma * form.sigma * std::expm1(2.0 * b * dt) / (2.0 * b);
  return belief;
}

GaussianBelief kalman_update(GaussianBelief belief, double y, double R) {
  if (!(R > 0.0)) throw ConfigError("kalman_update requires R > 0");
  const double gain = belief.variance / (belief.variance + R);
  belief.mean += gain * (y - belief.mean);
  belief.variance = (1.0 - gain) * belief.variance;
  return belief;
}

GaussianBelief kalman_update(GaussianBelief belief, double y, const LinearObservation& obs) {
  if (!(obs.variance > 0.0)) throw ConfigError("kalman_update requires R > 0");
  const double h = obs.gain;
  const double s = h * h * belief.variance + obs.variance;
  const double gain = belief.variance * h / s;
  belief.mean += gain * (y - h * belief.mean);
  belief.variance = (1.0 - gain * h) * belief.variance;
  return belief;
}

GridDensity kalman_density(GaussianBelief belief, const Grid1D& grid) {
  GridDensity d{grid, std::vector<double>(static_cast<std::size_t>(grid.points())), {}};
  const double norm = 1.0 / std::sqrt(2.0 * std::numbers::pi * belief.variance);
  for (int i = 0; i < grid.points(); ++i) {
    const double z = grid.node(i) - belief.mean;
    d.values[static_cast<std::size_t>(i)] = norm * std::exp(-0.5 * z * z / belief.variance);
  }
  return d;
}

std::map<TimeIndex, GaussianBelief> kalman_filter_run(const DiffusionModel& model, const ObservationModel& obs,
                                                      const DensitySampler& q0, const TimeGrid& time,
                                                      const ObservationSequence& y) {
  if (!model.affine || model.dim != 1)
    throw ConfigError("Kalman reference requires a 1D affine-drift, constant-diffusion model; '" + model.name +
                      "' is not");
  if (!obs.linear || obs.d_prime != 1) throw ConfigError("Kalman reference requires a linear-Gaussian observation");
  if (!q0.gaussian) throw ConfigError("Kalman reference requires a Gaussian initial density");
  if (y.count() < time.K + 1) throw ConfigError("observation sequence shorter than K+1");

  std::map<TimeIndex, GaussianBelief> out;
  GaussianBelief b{q0.gaussian->first, q0.gaussian->second};
  b = kalman_update(b, y.values(0, 0), *obs.linear);
  out[{0, 0}] = b;
  for (int k = 0; k < time.K; ++k) {
    const GaussianBelief start = b;
    for (int n = 1; n <= time.N; ++n) {
      // Predict from the window start so the intermediate beliefs do not
      // accumulate rounding from repeated small steps.
      b = kalman_predict_affine(start, *model.affine, time.time(k, n) - time.time(k, 0));
      out[{k, n}] = b;
    }
    b = kalman_update(b, y.values(0, k + 1), *obs.linear);
    out[{k + 1, 0}] = b;
  }
  return out;
}

double ParticleEnsemble::effective_sample_size() const {
  const double s2 = weights.squaredNorm();
  return s2 > 0.0 ? 1.0 / s2 : 0.0;
}

double ParticleEnsemble::mean(int c) const { return weights.dot(particles.col(c)); }

ParticleEnsemble pf_initialize(const DensitySampler& q0, int P, std::uint64_t seed, int dim) {
  if (P < 1) throw ConfigError("particle count must be positive");
  ParticleEnsemble e;
  e.particles.resize(P, dim);
  e.weights = Vec::Constant(P, 1.0 / P);
  for (int p = 0; p < P; ++p) {
    Rng rng = make_stream(seed, stream_tag::particles, static_cast<std::uint64_t>(p));
    e.particles.row(p) = q0.sampler(rng).transpose();
  }
  return e;
}

namespace {

constexpr std::uint64_t kInitStep = ~0ULL;

void propagate_in_place(ParticleEnsemble& e, const DiffusionModel& model, double dt, int substeps, std::uint64_t seed,
                        std::uint64_t step_id) {
  if (!(dt >= 0.0)) throw ConfigError("pf_step requires dt >= 0");
  if (dt == 0.0) return;
  if (substeps < 1) throw ConfigError("substeps must be >= 1");
  const double h = dt / substeps;
  const double sqrt_h = std::sqrt(h);
  const int d = model.dim;
  parallel_for(static_cast<std::size_t>(e.size()), [&](std::size_t p) {
    const std::uint64_t key = e.stream_ids.empty() ? p : e.stream_ids[p];
    Rng rng = make_stream(stream_seed(seed, stream_tag::particles, step_id), stream_tag::particles, key);
    std::normal_distribution<double> normal;
    Vec z = e.particles.row(static_cast<Eigen::Index>(p)).transpose();
    Vec dw(d);
    for (int s = 0; s < substeps; ++s) {
      for (int c = 0; c < d; ++c) dw[c] = sqrt_h * normal(rng);
      z = em_step(model, z, h, dw);
    }
    e.particles.row(static_cast<Eigen::Index>(p)) = z.transpose();
  });
}

void reweight(ParticleEnsemble& e, const ObservationModel& obs, const Vec& y) {
  for (int p = 0; p < e.size(); ++p) e.weights[p] *= obs.likelihood(y, e.particles.row(p).transpose());
  const double total = e.weights.sum();
  if (!(total > 0.0) || !std::isfinite(total))
    throw DegenerateLikelihood("particle filter: all weights vanished (total " + std::to_string(total) + ")");
  e.weights /= total;
}

void resample_if_degenerate(ParticleEnsemble& e, std::uint64_t seed, std::uint64_t step_id, PfStepStats* stats) {
  const int P = e.size();
  const double ess = e.effective_sample_size();
  if (stats) stats->ess_before_resampling = ess;
  if (ess >= 0.5 * P) return;

  Rng rng = make_stream(seed, stream_tag::resampling, step_id);
  const double u0 = std::uniform_real_distribution<double>(0.0, 1.0 / P)(rng);
  Mat resampled(P, e.particles.cols());
  double cumulative = e.weights[0];
  int src = 0;
  for (int p = 0; p < P; ++p) {
    const double u = u0 + static_cast<double>(p) / P;
    while (u > cumulative && src + 1 < P) cumulative += e.weights[++src];
    resampled.row(p) = e.particles.row(src);
  }
  e.particles = std::move(resampled);
  e.weights.setConstant(1.0 / P);
  e.stream_ids.clear();
  if (stats) stats->resampled = true;
}

void reweight_and_resample(ParticleEnsemble& e, const ObservationModel& obs, const Vec& y, std::uint64_t seed,
                           std::uint64_t step_id, PfStepStats* stats) {
  reweight(e, obs, y);
  resample_if_degenerate(e, seed, step_id, stats);
}

}  // namespace

ParticleEnsemble pf_propagate(const ParticleEnsemble& ensemble, const DiffusionModel& model, double dt, int substeps,
                              std::uint64_t seed, std::uint64_t step_id) {
  ParticleEnsemble e = ensemble;
  propagate_in_place(e, model, dt, substeps, seed, step_id);
  return e;
}

ParticleEnsemble pf_step(const ParticleEnsemble& ensemble, const DiffusionModel& model, const ObservationModel& obs,
                         const std::optional<Vec>& y_k, double dt, int substeps, std::uint64_t seed,
                         std::uint64_t step_id, PfStepStats* stats) {
  ParticleEnsemble e = ensemble;
  propagate_in_place(e, model, dt, substeps, seed, step_id);
  if (y_k) reweight_and_resample(e, obs, *y_k, seed, step_id, stats);
  return e;
}

double silverman_bandwidth(const ParticleEnsemble& e) {
  const Vec& w = e.weights;
  const auto x = e.particles.col(0);
  const double mean = w.dot(x);
  const double var = w.dot((x.array() - mean).square().matrix());
  std::vector<int> order(static_cast<std::size_t>(e.size()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return x[a] < x[b]; });
  auto quantile = [&](double q) {
    double c = 0.0;
    for (int i : order) {
      c += w[i];
      if (c >= q) return x[i];
    }
    return x[order.back()];
  };
  const double iqr = quantile(0.75) - quantile(0.25);
  double spread = std::sqrt(var);
  if (iqr > 0.0) spread = std::min(spread, iqr / 1.34);
  const double n_eff = std::max(1.0, e.effective_sample_size());
  const double h = 0.9 * spread * std::pow(n_eff, -0.2);
  return h > 0.0 ? h : 1.0;
}

GridDensity pf_density(const ParticleEnsemble& e, const Grid1D& grid, double bandwidth) {
  const double h = bandwidth > 0.0 ? bandwidth : silverman_bandwidth(e);
  GridDensity d{grid, std::vector<double>(static_cast<std::size_t>(grid.points()), 0.0), {}};
  const double norm = 1.0 / (std::sqrt(2.0 * std::numbers::pi) * h);
  const double reach = 9.0 * h;
  for (int p = 0; p < e.size(); ++p) {
    const double w = e.weights[p];
    if (w == 0.0) continue;
    const double c = e.particles(p, 0);
    const int lo = std::max(0, static_cast<int>(std::ceil((c - reach - grid.lower()) / grid.spacing())));
    const int hi = std::min(grid.points() - 1, static_cast<int>(std::floor((c + reach - grid.lower()) / grid.spacing())));
    for (int i = lo; i <= hi; ++i) {
      const double z = (grid.node(i) - c) / h;
      d.values[static_cast<std::size_t>(i)] += w * norm * std::exp(-0.5 * z * z);
    }
  }
  return d;
}

std::map<TimeIndex, GridDensity> particle_filter_run(const DiffusionModel& model, const ObservationModel& obs,
                                                     const DensitySampler& q0, const TimeGrid& time,
                                                     const ObservationSequence& y, const Grid1D& grid,
                                                     const std::vector<TimeIndex>& readouts,
                                                     const ParticleFilterOptions& options) {
  if (y.count() < time.K + 1) throw ConfigError("observation sequence shorter than K+1");
  const std::set<TimeIndex> wanted(readouts.begin(), readouts.end());
  std::map<TimeIndex, GridDensity> out;
  auto readout = [&](const ParticleEnsemble& e, TimeIndex i) {
    if (!wanted.contains(i)) return;
    GridDensity d = pf_density(e, grid, options.bandwidth);
    d.index = i;
    out.emplace(i, std::move(d));
  };

  ParticleEnsemble e = pf_initialize(q0, options.particles, options.seed, model.dim);
  // Observation-time readouts use the weighted ensemble, before resampling.
  reweight(e, obs, y.column(0));
  readout(e, {0, 0});
  resample_if_degenerate(e, options.seed, kInitStep, nullptr);
  std::uint64_t step = 0;
  for (int k = 0; k < time.K; ++k) {
    bool interior = false;
    for (int n = 1; n < time.N; ++n) interior = interior || wanted.contains({k, n});
    if (interior) {
      for (int n = 1; n <= time.N; ++n) {
        propagate_in_place(e, model, time.tau(), options.substeps, options.seed, step++);
        if (n < time.N) readout(e, {k, n});
      }
    } else {
      propagate_in_place(e, model, time.window(), options.substeps * time.N, options.seed, step++);
    }
    readout(e, {k, time.N});
    reweight(e, obs, y.column(k + 1));
    readout(e, {k + 1, 0});
    resample_if_degenerate(e, options.seed, step++, nullptr);
  }
  return out;
}

}  // namespace dsf
