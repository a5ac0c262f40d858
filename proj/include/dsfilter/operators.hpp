#pragma once

#include <functional>

#include "dsfilter/grid.hpp"
#include "dsfilter/model.hpp"

namespace dsf {

// Operand of the splitting operators: a density together with its gradient.
struct DifferentiableDensity {
  std::function<double(const Vec&)> value;
  std::function<Vec(const Vec&)> gradient;
};

// (F phi)(x) = f0(x) phi(x) + <f1(x), grad phi(x)>
double apply_F(const DiffusionModel& model, const DifferentiableDensity& phi, const Vec& x);

// Same, from precomputed phi(x) and grad phi(x).
double apply_F(const Coefficients& c, double value, const Vec& gradient);

// (G phi)(x) = phi(x) + tau (F phi)(x)
double apply_G(const DiffusionModel& model, const DifferentiableDensity& phi, double tau, const Vec& x);
double apply_G(const Coefficients& c, double value, const Vec& gradient, double tau);

// Scalar forms for the 1D hot loops.
inline double apply_F_1d(double f0, double f1, double value, double gradient) { return f0 * value + f1 * gradient; }
inline double apply_G_1d(double f0, double f1, double value, double gradient, double tau) {
  return value + tau * apply_F_1d(f0, f1, value, gradient);
}

using DensityFn = std::function<double(const Vec&)>;

// x -> prior(x) L(y_k, x), unnormalized.
DensityFn bayes_update(DensityFn prior, const ObservationModel& obs, Vec y_k);

inline constexpr double kMassEpsilon = 1e-300;

struct NormalizedDensity {
  GridDensity density;
  double mass = 0.0;
};

// Divides by the trapezoidal mass; throws DegenerateDensity when the mass is
// not above kMassEpsilon.
NormalizedDensity normalize_on_grid(const GridDensity& values);

}  // namespace dsf
