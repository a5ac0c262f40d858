#pragma once

#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "dsfilter/common.hpp"

namespace dsf {

enum class DerivativeMode { analytic, finite_difference };

// [l](i, j) = d a_ij / d x_l
using Tensor3 = std::vector<Mat>;

// Drift mu(x) = offset + slope * x with constant diffusion; the only family the
// Kalman reference accepts.
struct AffineForm {
  double drift_offset = 0.0;
  double drift_slope = 0.0;
  double sigma = 1.0;
};

// SDE dX = mu(X) dt + sigma(X) dW on R^d together with the derivative data
// that the splitting operator needs. Derivative callbacks may be left empty
// when derivative_mode is finite_difference.
struct DiffusionModel {
  std::string name;
  int dim = 1;
  std::function<Vec(const Vec&)> drift;
  std::function<Mat(const Vec&)> diffusion;
  std::function<Mat(const Vec&)> drift_jacobian;
  std::function<Tensor3(const Vec&)> a_first_derivs;
  std::function<double(const Vec&)> a_second_trace;
  DerivativeMode derivative_mode = DerivativeMode::analytic;
  std::optional<AffineForm> affine;

  Mat a(const Vec& x) const;
  Mat jacobian(const Vec& x) const;
  Tensor3 a_derivs(const Vec& x) const;
  double a_trace2(const Vec& x) const;

  // Throws ConfigError when analytic mode lacks a derivative callback.
  void validate() const;
};

// Step used by the finite-difference fallback for first derivatives.
double fd_step(double x);

struct LinearObservation {
  double gain = 1.0;
  double variance = 1.0;
};

struct ObservationModel {
  int d_prime = 1;
  std::function<double(const Vec& y, const Vec& x)> likelihood;
  std::function<Vec(const Vec& y, const Vec& x)> likelihood_grad_x;  // optional
  std::function<Vec(const Vec& x, Rng& rng)> sampler;
  double likelihood_bound = 0.0;  // C_L
  std::optional<LinearObservation> linear;

  Vec grad_x(const Vec& y, const Vec& x) const;
};

struct DensitySampler {
  std::function<double(const Vec&)> density;
  std::function<Vec(const Vec&)> gradient;  // optional
  std::function<Vec(Rng&)> sampler;
  std::optional<std::pair<double, double>> gaussian;  // (mean, variance) in 1D

  Vec grad(const Vec& x) const;
};

struct InitialDensity {
  DensitySampler q0;
  DensitySampler training;  // q~0
};

struct Coefficients {
  double f0 = 0.0;
  Vec f1;
};

// f0 = 1/2 sum_ij d2 a_ij / dx_i dx_j - div mu
// f1_j = sum_i d a_ij / dx_i - 2 mu_j
Coefficients f_coefficients(const DiffusionModel& model, const Vec& x);

struct BuiltinModel {
  DiffusionModel diffusion;
  ObservationModel observation;
  InitialDensity initial;
};

DensitySampler gaussian_density_1d(double mean, double variance);
ObservationModel linear_gaussian_observation_1d(double gain, double variance);

// mu = 2, sigma = 1, q0 = N(0,1), y ~ N(x, 1).
BuiltinModel builtin_drifted_bm();
// mu = 2x - 0.4x^3, sigma = 1, same observations and q0.
BuiltinModel builtin_bistable();
// mu = 0, sigma = 1: the heat equation, used by the standalone presets.
BuiltinModel builtin_heat();

// Resolves "drifted_bm", "bistable", "heat"; throws ConfigError otherwise.
BuiltinModel builtin_by_name(const std::string& name);
std::vector<std::string> builtin_names();

// Replaces the training density by N(mean, std^2) (1D).
void override_training_density(InitialDensity& init, double mean, double stddev);

// Copy with derivative callbacks removed and finite differences enabled.
DiffusionModel with_finite_differences(DiffusionModel model);

}  // namespace dsf
