#include "dsfilter/operators.hpp"

#include <cmath>
#include <sstream>

namespace dsf {

double apply_F(const Coefficients& c, double value, const Vec& gradient) {
  return c.f0 * value + c.f1.dot(gradient);
}

double apply_F(const DiffusionModel& model, const DifferentiableDensity& phi, const Vec& x) {
  return apply_F(f_coefficients(model, x), phi.value(x), phi.gradient(x));
}

double apply_G(const Coefficients& c, double value, const Vec& gradient, double tau) {
  return value + tau * apply_F(c, value, gradient);
}

double apply_G(const DiffusionModel& model, const DifferentiableDensity& phi, double tau, const Vec& x) {
  return apply_G(f_coefficients(model, x), phi.value(x), phi.gradient(x), tau);
}

DensityFn bayes_update(DensityFn prior, const ObservationModel& obs, Vec y_k) {
  return [prior = std::move(prior), likelihood = obs.likelihood, y = std::move(y_k)](const Vec& x) {
    return prior(x) * likelihood(y, x);
  };
}

NormalizedDensity normalize_on_grid(const GridDensity& values) {
  const double mass = trapezoid(values.grid, values.values);
  if (!(mass > kMassEpsilon)) {
    std::ostringstream os;
    os << "degenerate density at (k=" << values.index.k << ", n=" << values.index.n << "): mass " << mass;
    throw DegenerateDensity(os.str());
  }
  NormalizedDensity out{values, mass};
  for (double& v : out.density.values) v /= mass;
  return out;
}

}  // namespace dsf
