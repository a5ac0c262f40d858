#include <doctest.h>

#include <cmath>
#include <limits>

#include "dsfilter/simulate.hpp"
#include "helpers.hpp"

using namespace dsf;
using testing::vec1;

TEST_CASE("time grid") {
  TimeGrid t(2.0, 20, 16);
  CHECK(t.tau() == doctest::Approx(2.0 / 320));
  CHECK(t.time(t.final_index()) == 2.0);
  CHECK(t.time(3, 5) == doctest::Approx(53 * t.tau()));
  CHECK(t.index_set().size() == 20u * 17u + 1u);
  CHECK(t.index_set().back() == TimeIndex{20, 0});
  CHECK_THROWS_AS(TimeGrid(0.0, 1, 1), ConfigError);
  CHECK_THROWS_AS(TimeGrid(1.0, 0, 1), ConfigError);
}

TEST_CASE("em_step deterministic cases") {
  const auto bm = builtin_drifted_bm();
  CHECK(em_step(bm.diffusion, vec1(0.0), 0.1, vec1(0.0))[0] == doctest::Approx(0.2).epsilon(1e-15));
  const auto heat = builtin_heat();
  CHECK(em_step(heat.diffusion, vec1(0.0), 0.25, vec1(0.5))[0] == 0.5);

  DiffusionModel blow = bm.diffusion;
  blow.drift = [](const Vec&) { return vec1(std::numeric_limits<double>::infinity()); };
  CHECK_THROWS_AS(em_step(blow, vec1(0.0), 0.1, vec1(0.0)), SimulationDiverged);
}

TEST_CASE("em_step increment variance") {
  const auto bm = builtin_drifted_bm();
  Rng rng(5);
  std::normal_distribution<double> normal;
  const int n = 100000;
  const double tau = 0.1;
  std::vector<double> z;
  for (int i = 0; i < n; ++i) z.push_back(em_step(bm.diffusion, vec1(0.0), tau, vec1(std::sqrt(tau) * normal(rng)))[0]);
  const double se = tau * std::sqrt(2.0 / (n - 1));
  CHECK(std::abs(testing::var_of(z) - tau) <= 3.0 * se);
}

TEST_CASE("em path batch shape and linear moments") {
  const auto bm = builtin_drifted_bm();
  auto small = sample_em_paths(bm.diffusion, bm.initial.training, TimeGrid(1.0, 1, 2), 3, 1);
  CHECK(small.states.size() == 9u);
  CHECK(small.paths == 3);
  CHECK(small.steps == 2);

  // Window length T/K = 0.5; Z_0 ~ N(0, 1).
  const TimeGrid t(1.0, 2, 10);
  const int M = 100000;
  auto batch = sample_em_paths(bm.diffusion, bm.initial.training, t, M, 2024);
  std::vector<double> zN;
  for (int m = 0; m < M; ++m) zN.push_back(batch.at(m, 10));
  const double w = t.window();
  const double var = 1.0 + w;
  CHECK(std::abs(testing::mean_of(zN) - 2.0 * w) <= 3.0 * std::sqrt(var / M));
  CHECK(std::abs(testing::var_of(zN) - var) <= 3.0 * var * std::sqrt(2.0 / (M - 1)));
}

TEST_CASE("observation sequences") {
  const auto bm = builtin_drifted_bm();
  auto two = sample_observation_sequences(bm.diffusion, bm.observation, bm.initial, TimeGrid(2.0, 20, 1), 2, 8, 3);
  REQUIRE(two.size() == 2u);
  CHECK(two[0].count() == 21);
  CHECK(two[0].values.allFinite());
  CHECK(two[0].generating_seed.has_value());
  CHECK(two[0].generating_seed != two[1].generating_seed);

  // Var(O_K) = Var(S_T) + R = 1 + T + 1.
  const int n = 100000;
  const TimeGrid t(1.0, 4, 1);
  auto seqs = sample_observation_sequences(bm.diffusion, bm.observation, bm.initial, t, n, 4, 99);
  std::vector<double> oK;
  for (const auto& s : seqs) oK.push_back(s.values(0, 4));
  const double var = 3.0;
  CHECK(std::abs(testing::var_of(oK) - var) <= 3.0 * var * std::sqrt(2.0 / (n - 1)));
  CHECK(std::abs(testing::mean_of(oK) - 2.0) <= 3.0 * std::sqrt(var / n));
}

TEST_CASE("frozen state observations average to h(x0)") {
  BuiltinModel frozen = builtin_heat();
  frozen.diffusion.diffusion = [](const Vec&) { return Mat::Zero(1, 1); };
  frozen.initial.q0.sampler = [](Rng&) { return vec1(0.75); };
  const int n = 100000;
  auto seqs = sample_observation_sequences(frozen.diffusion, frozen.observation, frozen.initial, TimeGrid(1.0, 3, 1),
                                           n, 2, 11);
  for (int k = 0; k <= 3; ++k) {
    std::vector<double> o;
    for (const auto& s : seqs) o.push_back(s.values(0, k));
    CHECK(std::abs(testing::mean_of(o) - 0.75) <= 3.0 / std::sqrt(n));
  }
}

TEST_CASE("training batch independence and determinism") {
  const auto bm = builtin_drifted_bm();
  const TimeGrid t(0.5, 5, 4);
  auto four = sample_training_batch(bm.diffusion, bm.observation, bm.initial, t, 4, 17);
  CHECK(four.paths.paths == 4);
  CHECK(four.observations.size() == 4u);
  CHECK(four.observations[0].values != four.observations[1].values);
  CHECK(four.paths.at(0, 0) != four.paths.at(1, 0));

  const int M = 100000;
  auto big = sample_training_batch(bm.diffusion, bm.observation, bm.initial, t, M, 17);
  std::vector<double> z, y;
  for (int m = 0; m < M; ++m) {
    z.push_back(big.paths.at(m, 4));
    y.push_back(big.observations[static_cast<std::size_t>(m)].values(0, 0));
  }
  const double mz = testing::mean_of(z), my = testing::mean_of(y);
  double c = 0;
  for (int m = 0; m < M; ++m) c += (z[m] - mz) * (y[m] - my);
  const double corr = c / (M - 1) / std::sqrt(testing::var_of(z) * testing::var_of(y));
  CHECK(std::abs(corr) <= 3.0 / std::sqrt(M));

  auto again = sample_training_batch(bm.diffusion, bm.observation, bm.initial, t, 4, 17);
  CHECK(again.paths.states == four.paths.states);
  for (int m = 0; m < 4; ++m) CHECK(again.observations[m].values == four.observations[m].values);
  auto other = sample_training_batch(bm.diffusion, bm.observation, bm.initial, t, 4, 18);
  CHECK(other.paths.states != four.paths.states);
}

TEST_CASE("sequence streams do not depend on the batch size") {
  const auto bm = builtin_bistable();
  const TimeGrid t(1.0, 3, 1);
  auto a = sample_observation_sequences(bm.diffusion, bm.observation, bm.initial, t, 5, 4, 42);
  auto b = sample_observation_sequences(bm.diffusion, bm.observation, bm.initial, t, 2, 4, 42, 3);
  CHECK(a[3].values == b[0].values);
  CHECK(a[4].values == b[1].values);
}

TEST_CASE("property: bistable one-step weak error is second order") {
  // Coarse step and a 64-substep fine solution share each Brownian path, so
  // the MC noise of the difference is far below its O(tau^2) mean.
  const auto bs = builtin_bistable();
  const double x0 = 0.5;
  const int n = 100000;
  std::vector<double> taus = {0.1, 0.05, 0.025}, errs;
  std::normal_distribution<double> normal;
  for (double tau : taus) {
    Rng rng(31);
    const double dt = tau / 64;
    double acc = 0;
    for (int i = 0; i < n; ++i) {
      Vec fine = vec1(x0);
      double w = 0;
      for (int j = 0; j < 64; ++j) {
        const double dw = std::sqrt(dt) * normal(rng);
        w += dw;
        fine = em_step(bs.diffusion, fine, dt, vec1(dw));
      }
      const double coarse = em_step(bs.diffusion, vec1(x0), tau, vec1(w))[0];
      acc += coarse * coarse - fine[0] * fine[0];
    }
    errs.push_back(std::abs(acc / n));
  }
  const double slope = testing::loglog_slope(taus, errs);
  CHECK(slope == doctest::Approx(2.0).epsilon(0.2));
}
