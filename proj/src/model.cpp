#include "dsfilter/model.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace dsf {

namespace {

// Second differences lose accuracy faster to cancellation, so they use a
// larger step than first differences.
double fd_step2(double x) { return 1e-4 * std::max(1.0, std::abs(x)); }

void check_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) {
    std::ostringstream os;
    os << "non-finite coefficient input: " << what << " = " << v;
    throw CoefficientError(os.str());
  }
}

std::string idx(const char* name, int i) { return std::string(name) + "[" + std::to_string(i) + "]"; }

std::string idx(const char* name, int i, int j) {
  return std::string(name) + "(" + std::to_string(i) + "," + std::to_string(j) + ")";
}

double normal_pdf(double x, double mean, double variance) {
  const double z = x - mean;
  return std::exp(-0.5 * z * z / variance) / std::sqrt(2.0 * std::numbers::pi * variance);
}

}  // namespace

double fd_step(double x) { return 1e-5 * std::max(1.0, std::abs(x)); }

Mat DiffusionModel::a(const Vec& x) const {
  const Mat s = diffusion(x);
  return s * s.transpose();
}

Mat DiffusionModel::jacobian(const Vec& x) const {
  if (derivative_mode == DerivativeMode::analytic && drift_jacobian) return drift_jacobian(x);
  Mat jac(dim, dim);
  for (int j = 0; j < dim; ++j) {
    const double h = fd_step(x[j]);
    Vec xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    jac.col(j) = (drift(xp) - drift(xm)) / (2.0 * h);
  }
  return jac;
}

Tensor3 DiffusionModel::a_derivs(const Vec& x) const {
  if (derivative_mode == DerivativeMode::analytic && a_first_derivs) return a_first_derivs(x);
  Tensor3 out(static_cast<std::size_t>(dim));
  for (int l = 0; l < dim; ++l) {
    const double h = fd_step(x[l]);
    Vec xp = x, xm = x;
    xp[l] += h;
    xm[l] -= h;
    out[static_cast<std::size_t>(l)] = (a(xp) - a(xm)) / (2.0 * h);
  }
  return out;
}

double DiffusionModel::a_trace2(const Vec& x) const {
  if (derivative_mode == DerivativeMode::analytic && a_second_trace) return a_second_trace(x);
  double total = 0.0;
  const Mat a0 = a(x);
  for (int i = 0; i < dim; ++i) {
    const double hi = fd_step2(x[i]);
    for (int j = 0; j < dim; ++j) {
      if (i == j) {
        Vec xp = x, xm = x;
        xp[i] += hi;
        xm[i] -= hi;
        total += (a(xp)(i, i) - 2.0 * a0(i, i) + a(xm)(i, i)) / (hi * hi);
      } else {
        const double hj = fd_step2(x[j]);
        auto shifted = [&](double si, double sj) {
          Vec z = x;
          z[i] += si * hi;
          z[j] += sj * hj;
          return a(z)(i, j);
        };
        total += (shifted(1, 1) - shifted(1, -1) - shifted(-1, 1) + shifted(-1, -1)) / (4.0 * hi * hj);
      }
    }
  }
  return total;
}

void DiffusionModel::validate() const {
  if (dim < 1) throw ConfigError("model '" + name + "': dimension must be positive");
  if (!drift || !diffusion) throw ConfigError("model '" + name + "': drift and diffusion are required");
  if (derivative_mode == DerivativeMode::analytic && (!drift_jacobian || !a_first_derivs || !a_second_trace))
    throw ConfigError("model '" + name + "': analytic derivative mode requires all derivative callbacks");
}

Vec ObservationModel::grad_x(const Vec& y, const Vec& x) const {
  if (likelihood_grad_x) return likelihood_grad_x(y, x);
  Vec g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = fd_step(x[j]);
    Vec xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    g[j] = (likelihood(y, xp) - likelihood(y, xm)) / (2.0 * h);
  }
  return g;
}

Vec DensitySampler::grad(const Vec& x) const {
  if (gradient) return gradient(x);
  Vec g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = fd_step(x[j]);
    Vec xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    g[j] = (density(xp) - density(xm)) / (2.0 * h);
  }
  return g;
}

Coefficients f_coefficients(const DiffusionModel& model, const Vec& x) {
  const int d = model.dim;
  for (int i = 0; i < d; ++i) check_finite(x[i], idx("x", i));

  const Vec mu = model.drift(x);
  const Mat jac = model.jacobian(x);
  const Tensor3 da = model.a_derivs(x);
  const double trace2 = model.a_trace2(x);

  for (int i = 0; i < d; ++i) {
    check_finite(mu[i], idx("drift", i));
    for (int j = 0; j < d; ++j) check_finite(jac(i, j), idx("drift_jacobian", i, j));
  }
  check_finite(trace2, "a_second_trace");

  Coefficients c;
  c.f0 = 0.5 * trace2 - jac.trace();
  c.f1 = -2.0 * mu;
  for (int j = 0; j < d; ++j) {
    for (int i = 0; i < d; ++i) {
      const double v = da[static_cast<std::size_t>(i)](i, j);
      check_finite(v, "a_first_derivs[" + std::to_string(i) + "](" + std::to_string(i) + "," + std::to_string(j) + ")");
      c.f1[j] += v;
    }
  }
  return c;
}

DensitySampler gaussian_density_1d(double mean, double variance) {
  DensitySampler s;
  s.density = [=](const Vec& x) { return normal_pdf(x[0], mean, variance); };
  s.gradient = [=](const Vec& x) {
    Vec g(1);
    g[0] = -(x[0] - mean) / variance * normal_pdf(x[0], mean, variance);
    return g;
  };
  s.sampler = [=](Rng& rng) {
    std::normal_distribution<double> normal;
    Vec v(1);
    v[0] = mean + std::sqrt(variance) * normal(rng);
    return v;
  };
  s.gaussian = std::make_pair(mean, variance);
  return s;
}

ObservationModel linear_gaussian_observation_1d(double gain, double variance) {
  ObservationModel obs;
  obs.d_prime = 1;
  obs.likelihood = [=](const Vec& y, const Vec& x) { return normal_pdf(y[0], gain * x[0], variance); };
  obs.likelihood_grad_x = [=](const Vec& y, const Vec& x) {
    Vec g(1);
    g[0] = (y[0] - gain * x[0]) * gain / variance * normal_pdf(y[0], gain * x[0], variance);
    return g;
  };
  obs.sampler = [=](const Vec& x, Rng& rng) {
    std::normal_distribution<double> normal;
    Vec v(1);
    v[0] = gain * x[0] + std::sqrt(variance) * normal(rng);
    return v;
  };
  obs.likelihood_bound = 1.0 / std::sqrt(2.0 * std::numbers::pi * variance);
  obs.linear = LinearObservation{gain, variance};
  return obs;
}

namespace {

DiffusionModel constant_sigma_1d(std::string name, std::function<double(double)> mu,
                                 std::function<double(double)> dmu) {
  DiffusionModel m;
  m.name = std::move(name);
  m.dim = 1;
  m.drift = [mu](const Vec& x) { return Vec::Constant(1, mu(x[0])); };
  m.diffusion = [](const Vec&) { return Mat::Constant(1, 1, 1.0); };
  m.drift_jacobian = [dmu](const Vec& x) { return Mat::Constant(1, 1, dmu(x[0])); };
  m.a_first_derivs = [](const Vec&) { return Tensor3{Mat::Zero(1, 1)}; };
  m.a_second_trace = [](const Vec&) { return 0.0; };
  return m;
}

BuiltinModel with_standard_setup(DiffusionModel diffusion) {
  BuiltinModel b;
  b.diffusion = std::move(diffusion);
  b.observation = linear_gaussian_observation_1d(1.0, 1.0);
  b.initial.q0 = gaussian_density_1d(0.0, 1.0);
  b.initial.training = b.initial.q0;
  return b;
}

}  // namespace

BuiltinModel builtin_drifted_bm() {
  auto m = constant_sigma_1d("drifted_bm", [](double) { return 2.0; }, [](double) { return 0.0; });
  m.affine = AffineForm{2.0, 0.0, 1.0};
  return with_standard_setup(std::move(m));
}

BuiltinModel builtin_bistable() {
  auto m = constant_sigma_1d(
      "bistable", [](double x) { return 0.4 * (5.0 * x - x * x * x); },
      [](double x) { return 2.0 - 1.2 * x * x; });
  return with_standard_setup(std::move(m));
}

BuiltinModel builtin_heat() {
  auto m = constant_sigma_1d("heat", [](double) { return 0.0; }, [](double) { return 0.0; });
  m.affine = AffineForm{0.0, 0.0, 1.0};
  return with_standard_setup(std::move(m));
}

std::vector<std::string> builtin_names() { return {"drifted_bm", "bistable", "heat"}; }

BuiltinModel builtin_by_name(const std::string& name) {
  if (name == "drifted_bm") return builtin_drifted_bm();
  if (name == "bistable") return builtin_bistable();
  if (name == "heat") return builtin_heat();
  throw ConfigError("unknown model '" + name + "' (expected drifted_bm, bistable or heat)");
}

void override_training_density(InitialDensity& init, double mean, double stddev) {
  if (!(stddev > 0.0)) throw ConfigError("training density std must be positive");
  init.training = gaussian_density_1d(mean, stddev * stddev);
}

DiffusionModel with_finite_differences(DiffusionModel model) {
  model.drift_jacobian = nullptr;
  model.a_first_derivs = nullptr;
  model.a_second_trace = nullptr;
  model.derivative_mode = DerivativeMode::finite_difference;
  return model;
}

}  // namespace dsf
