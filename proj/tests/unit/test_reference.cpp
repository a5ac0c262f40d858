#include <doctest.h>

#include <cmath>
#include <numeric>

#include "dsfilter/operators.hpp"
#include "dsfilter/reference.hpp"
#include "dsfilter/simulate.hpp"
#include "helpers.hpp"

using namespace dsf;
using testing::vec1;

TEST_CASE("kalman_predict examples") {
  auto b = kalman_predict({0.5, 0.5}, 2.0, 0.1, 1.0);
  CHECK(b.mean == doctest::Approx(0.7).epsilon(1e-14));
  CHECK(b.variance == doctest::Approx(0.6).epsilon(1e-14));
  auto same = kalman_predict({0.5, 0.5}, 2.0, 0.0, 1.0);
  CHECK(same.mean == 0.5);
  CHECK(same.variance == 0.5);
  auto heat = kalman_predict({0.0, 1.0}, 0.0, 1.0, 1.0);
  CHECK(heat.mean == 0.0);
  CHECK(heat.variance == 2.0);
  CHECK_THROWS_AS(kalman_predict({0, 1}, 0, -1, 1), ConfigError);
}

TEST_CASE("affine prediction reduces to the constant-drift case") {
  auto a = kalman_predict_affine({0.5, 0.5}, AffineForm{2.0, 0.0, 1.0}, 0.1);
  CHECK(a.mean == doctest::Approx(0.7));
  CHECK(a.variance == doctest::Approx(0.6));
  // Ornstein-Uhlenbeck: mean decays by e^{-t}, variance to 1/2 (1 - e^{-2t}) + P e^{-2t}.
  auto ou = kalman_predict_affine({1.0, 0.0}, AffineForm{0.0, -1.0, 1.0}, 1.0);
  CHECK(ou.mean == doctest::Approx(std::exp(-1.0)));
  CHECK(ou.variance == doctest::Approx(0.5 * (1 - std::exp(-2.0))));
}

TEST_CASE("kalman_update examples") {
  auto b = kalman_update({0.0, 1.0}, 1.0, 1.0);
  CHECK(b.mean == doctest::Approx(0.5));
  CHECK(b.variance == doctest::Approx(0.5));
  auto z = kalman_update({0.3, 2.0}, 0.3, 1.0);
  CHECK(z.mean == 0.3);
  auto u = kalman_update({0.3, 2.0}, 5.0, 1e12);
  CHECK(std::abs(u.mean - 0.3) <= 1e-10);
  CHECK(std::abs(u.variance - 2.0) <= 1e-10);
  CHECK_THROWS_AS(kalman_update({0, 1}, 0, 0.0), ConfigError);
}

TEST_CASE("kalman_density") {
  Grid1D g(-8, 8, 1601);
  auto d = kalman_density({0.0, 1.0}, g);
  CHECK(d.at(0.0) == doctest::Approx(0.398942).epsilon(1e-6));
  auto s = kalman_density({1.0, 0.5}, g);
  for (double a : {0.3, 1.1, 2.0}) CHECK(s.at(1.0 + a) == doctest::Approx(s.at(1.0 - a)).epsilon(1e-12));
  auto w = kalman_density({1.0, 0.8}, Grid1D(1.0 - 8 * std::sqrt(0.8), 1.0 + 8 * std::sqrt(0.8), 2000));
  CHECK(std::abs(trapezoid(w.grid, w.values) - 1.0) <= 1e-6);
}

TEST_CASE("property: Kalman variance monotonicity along a run") {
  const auto bm = builtin_drifted_bm();
  const TimeGrid t(2.0, 20, 4);
  auto y = sample_observation_sequences(bm.diffusion, bm.observation, bm.initial, TimeGrid(2, 20, 1), 1, 8, 5)[0];
  auto run = kalman_filter_run(bm.diffusion, bm.observation, bm.initial.q0, t, y);
  for (int k = 0; k < 20; ++k) {
    for (int n = 1; n <= 4; ++n) CHECK(run.at({k, n}).variance > run.at({k, n - 1}).variance);
    CHECK(run.at({k + 1, 0}).variance < run.at({k, 4}).variance);
  }
  CHECK(run.size() == t.index_set().size());
}

TEST_CASE("Kalman refuses nonlinear models") {
  const auto bs = builtin_bistable();
  ObservationSequence y;
  y.values = Mat::Zero(1, 3);
  CHECK_THROWS_AS(kalman_filter_run(bs.diffusion, bs.observation, bs.initial.q0, TimeGrid(1, 2, 1), y), ConfigError);
}

TEST_CASE("pf_step with no time and a flat likelihood is a no-op") {
  const auto bm = builtin_drifted_bm();
  ObservationModel flat = bm.observation;
  flat.likelihood = [](const Vec&, const Vec&) { return 0.5; };
  auto e = pf_initialize(bm.initial.q0, 1000, 3);
  PfStepStats stats;
  auto f = pf_step(e, bm.diffusion, flat, vec1(0.0), 0.0, 8, 3, 0, &stats);
  CHECK(f.particles == e.particles);
  CHECK(!stats.resampled);
  CHECK(std::abs(f.weights.sum() - 1.0) <= 1e-12);
  for (int p = 0; p < 1000; ++p) CHECK(f.weights[p] == doctest::Approx(1e-3).epsilon(1e-12));
}

TEST_CASE("pf_step weights stay normalized and vanishing weights throw") {
  const auto bm = builtin_drifted_bm();
  auto e = pf_initialize(bm.initial.q0, 5000, 4);
  PfStepStats stats;
  for (int s = 0; s < 5; ++s) {
    e = pf_step(e, bm.diffusion, bm.observation, vec1(0.5 * s), 0.1, 8, 4, s, &stats);
    CHECK(std::abs(e.weights.sum() - 1.0) <= 1e-12);
    CHECK(stats.ess_before_resampling > 0.0);
  }
  ObservationModel zero = bm.observation;
  zero.likelihood = [](const Vec&, const Vec&) { return 0.0; };
  CHECK_THROWS_AS(pf_step(e, bm.diffusion, zero, vec1(0.0), 0.1, 8, 4, 9), DegenerateLikelihood);
}

TEST_CASE("systematic resampling triggers below ESS P/2") {
  const auto bm = builtin_drifted_bm();
  auto e = pf_initialize(bm.initial.q0, 2000, 6);
  PfStepStats stats;
  auto f = pf_step(e, bm.diffusion, bm.observation, vec1(4.0), 0.0, 1, 6, 0, &stats);
  CHECK(stats.ess_before_resampling < 1000.0);
  CHECK(stats.resampled);
  CHECK(f.effective_sample_size() == doctest::Approx(2000.0));
}

TEST_CASE("particle filter tracks the Kalman mean on the linear model") {
  const auto bm = builtin_drifted_bm();
  const TimeGrid t(2.0, 20, 1);
  auto y = sample_observation_sequences(bm.diffusion, bm.observation, bm.initial, t, 1, 16, 77)[0];
  auto kf = kalman_filter_run(bm.diffusion, bm.observation, bm.initial.q0, t, y);
  auto e = pf_initialize(bm.initial.q0, 10000, 1);
  e = pf_step(e, bm.diffusion, bm.observation, y.column(0), 0.0, 1, 1, 100);
  double se = 0.0;
  for (int k = 1; k <= 20; ++k) {
    e = pf_step(e, bm.diffusion, bm.observation, y.column(k), t.window(), 8, 1, k);
    const double d = e.mean() - kf.at({k, 0}).mean;
    se += d * d;
  }
  CHECK(std::sqrt(se / 20) <= 0.05);
}

TEST_CASE("pf_density readout") {
  ParticleEnsemble one;
  one.particles = Mat::Zero(1, 1);
  one.weights = Vec::Ones(1);
  Grid1D g(-8, 8, 801);
  auto d = pf_density(one, g, 1.0);
  for (int i = 0; i < g.points(); i += 50) CHECK(d.values[i] == doctest::Approx(testing::normal_pdf(g.node(i), 0, 1)));

  const auto bm = builtin_drifted_bm();
  auto e = pf_initialize(bm.initial.q0, 10000, 8);
  auto kde = pf_density(e, Grid1D(-8, 8, 2000));
  CHECK(std::abs(trapezoid(kde.grid, kde.values) - 1.0) <= 0.01);
  CHECK(testing::sup_diff(kde.values, kalman_density({0, 1}, kde.grid).values) <= 0.05);
  CHECK(silverman_bandwidth(e) == doctest::Approx(0.9 * std::pow(10000.0, -0.2)).epsilon(0.05));
}

TEST_CASE("property: particle filter is exchangeable under a matching stream assignment") {
  const auto bs = builtin_bistable();
  auto e = pf_initialize(bs.initial.q0, 3000, 12);
  e.stream_ids.resize(3000);
  std::iota(e.stream_ids.begin(), e.stream_ids.end(), 0);
  ParticleEnsemble perm = e;
  for (int p = 0; p < 3000; ++p) {
    const int q = 2999 - p;
    perm.particles.row(p) = e.particles.row(q);
    perm.weights[p] = e.weights[q];
    perm.stream_ids[p] = e.stream_ids[q];
  }
  auto a = pf_propagate(e, bs.diffusion, 0.2, 8, 5, 0);
  auto b = pf_propagate(perm, bs.diffusion, 0.2, 8, 5, 0);
  CHECK(a.mean() == doctest::Approx(b.mean()).epsilon(1e-12));
  Grid1D g(-5, 5, 500);
  CHECK(testing::sup_diff(pf_density(a, g).values, pf_density(b, g).values) <= 1e-12);
}

TEST_CASE("property: pure propagation drifts the mean by E[mu]") {
  const auto bm = builtin_drifted_bm();
  auto e = pf_initialize(bm.initial.q0, 20000, 21);
  const double m0 = e.mean();
  auto f = pf_propagate(e, bm.diffusion, 0.5, 4, 21, 0);
  // Increment mean 1, standard deviation sqrt(0.5).
  CHECK(std::abs(f.mean() - m0 - 1.0) <= 3.0 * std::sqrt(0.5 / 20000));
}

TEST_CASE("particle filter run is reproducible and reads out the requested indices") {
  const auto bs = builtin_bistable();
  const TimeGrid t(0.5, 5, 2);
  auto y = sample_observation_sequences(bs.diffusion, bs.observation, bs.initial, TimeGrid(0.5, 5, 1), 1, 8, 3)[0];
  ParticleFilterOptions o;
  o.particles = 2000;
  o.seed = 4;
  Grid1D g(-5, 5, 300);
  const std::vector<TimeIndex> idx = {{0, 0}, {2, 1}, {5, 0}};
  auto a = particle_filter_run(bs.diffusion, bs.observation, bs.initial.q0, t, y, g, idx, o);
  auto b = particle_filter_run(bs.diffusion, bs.observation, bs.initial.q0, t, y, g, idx, o);
  CHECK(a.size() == 3u);
  for (const auto& i : idx) CHECK(a.at(i).values == b.at(i).values);
}
