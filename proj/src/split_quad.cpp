#include "dsfilter/split_quad.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "dsfilter/operators.hpp"

namespace dsf {

GaussHermiteRule gauss_hermite_rule(int order) {
  if (order < 1) throw ConfigError("Gauss-Hermite order must be positive");
  // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite recurrence
  // He_{n+1} = x He_n - n He_{n-1}.
  Mat jacobi = Mat::Zero(order, order);
  for (int i = 1; i < order; ++i) {
    jacobi(i, i - 1) = std::sqrt(static_cast<double>(i));
    jacobi(i - 1, i) = jacobi(i, i - 1);
  }
  Eigen::SelfAdjointEigenSolver<Mat> eig(jacobi);
  GaussHermiteRule rule;
  rule.nodes.resize(static_cast<std::size_t>(order));
  rule.weights.resize(static_cast<std::size_t>(order));
  for (int i = 0; i < order; ++i) {
    rule.nodes[static_cast<std::size_t>(i)] = eig.eigenvalues()[i];
    const double v = eig.eigenvectors()(0, i);
    rule.weights[static_cast<std::size_t>(i)] = v * v;
  }
  // Symmetrize: the rule is exact for odd moments only when nodes pair up.
  for (int i = 0; i < order / 2; ++i) {
    auto a = static_cast<std::size_t>(i), b = static_cast<std::size_t>(order - 1 - i);
    const double x = 0.5 * (rule.nodes[b] - rule.nodes[a]);
    const double w = 0.5 * (rule.weights[a] + rule.weights[b]);
    rule.nodes[a] = -x;
    rule.nodes[b] = x;
    rule.weights[a] = rule.weights[b] = w;
  }
  if (order % 2 == 1) rule.nodes[static_cast<std::size_t>(order / 2)] = 0.0;
  return rule;
}

QuadPredictor::QuadPredictor(const DiffusionModel& model, const Grid1D& grid, double tau, int gh_order)
    : grid_(grid), tau_(tau) {
  if (model.dim != 1) throw ConfigError("quadrature oracle supports 1D models only");
  if (gh_order < 5) throw ConfigError("Gauss-Hermite order must be >= 5");
  if (!(tau >= 0.0)) throw ConfigError("tau must be non-negative");
  const GaussHermiteRule rule = gauss_hermite_rule(gh_order);
  const auto points = static_cast<std::size_t>(grid.points());
  const double h = grid.spacing();
  const double sqrt_tau = std::sqrt(tau);

  f0_.resize(points);
  f1_.resize(points);
  rows_.resize(points);
  parallel_for(points, [&](std::size_t i) {
    Vec x(1);
    x[0] = grid.node(static_cast<int>(i));
    const Coefficients c = f_coefficients(model, x);
    f0_[i] = c.f0;
    f1_[i] = c.f1[0];

    const double center = x[0] + model.drift(x)[0] * tau;
    const double spread = std::abs(model.diffusion(x)(0, 0)) * sqrt_tau;
    const auto clamp_node = [&](double s) {
      return static_cast<int>(std::clamp(s, -1.0, static_cast<double>(grid.points())));
    };
    Row& row = rows_[i];
    if (spread >= kMinKernelCells * h) {
      // Trapezoid over the nodes; the weights of a resolved Gaussian sum to 1
      // up to rounding, and nodes beyond the grid carry zero density.
      const double reach = 9.0 * spread;
      const int lo = std::max(0, clamp_node(std::ceil((center - reach - grid.lower()) / h)));
      const int hi = std::min(grid.points() - 1, clamp_node(std::floor((center + reach - grid.lower()) / h)));
      row.first = lo;
      const double norm = h / (std::sqrt(2.0 * std::numbers::pi) * spread);
      for (int j = lo; j <= hi; ++j) {
        const double z = (grid.node(j) - center) / spread;
        row.weights.push_back(norm * std::exp(-0.5 * z * z));
      }
      return;
    }
    // Gauss-Hermite on the linear interpolant of the node values.
    std::vector<std::pair<int, double>> taps;
    for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
      const double z = center + spread * rule.nodes[q];
      if (!(z >= grid.lower() && z <= grid.upper())) continue;
      const double s = (z - grid.lower()) / h;
      const int cell = std::min(static_cast<int>(s), grid.points() - 2);
      const double frac = s - cell;
      taps.emplace_back(cell, rule.weights[q] * (1.0 - frac));
      taps.emplace_back(cell + 1, rule.weights[q] * frac);
    }
    if (taps.empty()) return;
    int lo = taps.front().first, hi = lo;
    for (const auto& [j, w] : taps) {
      lo = std::min(lo, j);
      hi = std::max(hi, j);
    }
    row.first = lo;
    row.weights.assign(static_cast<std::size_t>(hi - lo + 1), 0.0);
    for (const auto& [j, w] : taps) row.weights[static_cast<std::size_t>(j - lo)] += w;
  });
}

GridDensity QuadPredictor::apply(const GridDensity& density, std::size_t* clamp_events) const {
  if (!(density.grid == grid_)) throw ConfigError("density grid does not match predictor grid");
  const std::vector<double>& v = density.values;
  const std::vector<double> g = density.gradient();
  std::vector<double> integrand(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) integrand[j] = apply_G_1d(f0_[j], f1_[j], v[j], g[j], tau_);

  GridDensity out{grid_, std::vector<double>(v.size()), density.index};
  parallel_for(v.size(), [&](std::size_t i) {
    const Row& row = rows_[i];
    double acc = 0.0;
    for (std::size_t t = 0; t < row.weights.size(); ++t) acc += row.weights[t] * integrand[row.first + t];
    out.values[i] = acc;
  });

  double peak = 0.0, lowest = 0.0;
  for (double x : out.values) {
    peak = std::max(peak, x);
    lowest = std::min(lowest, x);
  }
  if (lowest < -1e-12 * peak && clamp_events) {
    ++*clamp_events;
  } else if (lowest < -1e-12 * peak) {
    std::ostringstream os;
    os << "scheme instability: negative density " << lowest << " (peak " << peak << "), clamped to 0";
    warn(os.str());
  }
  for (double& x : out.values) x = std::max(x, 0.0);
  return out;
}

GridDensity quad_predict_step(const DiffusionModel& model, const GridDensity& density, double tau, int gh_order) {
  return QuadPredictor(model, density.grid, tau, gh_order).apply(density);
}

namespace {

void check_boundary_mass(const GridDensity& d, bool& warned) {
  if (warned) return;
  const double mass = trapezoid(d.grid, d.values);
  if (!(mass > 0.0)) return;
  const double edge = 0.5 * d.grid.spacing() * (d.values.front() + d.values.back());
  if (edge > 1e-8 * mass) {
    std::ostringstream os;
    os << "density mass near the grid boundary (" << edge / mass << " of total) at (k=" << d.index.k
       << ", n=" << d.index.n << "); widen the grid";
    warn(os.str());
    warned = true;
  }
}

void report_clamps(std::size_t clamps, int steps) {
  if (clamps == 0) return;
  warn("scheme instability: negative densities clamped to 0 in " + std::to_string(clamps) + " of " +
       std::to_string(steps) + " prediction steps");
}

void apply_update(GridDensity& d, const ObservationModel& obs, const Vec& y, bool normalize) {
  Vec x(1);
  for (int i = 0; i < d.grid.points(); ++i) {
    x[0] = d.grid.node(i);
    d.values[static_cast<std::size_t>(i)] *= obs.likelihood(y, x);
  }
  const double mass = trapezoid(d.grid, d.values);
  if (!(mass > kMassEpsilon)) {
    std::ostringstream os;
    os << "Bayes update at k=" << d.index.k << " annihilated the density (mass " << mass << ")";
    throw DegenerateDensity(os.str());
  }
  if (normalize) d = normalize_on_grid(d).density;
}

}  // namespace

DensityMap quad_filter_run(const DiffusionModel& model, const ObservationModel& obs, const DensitySampler& q0,
                           const Grid1D& grid, const TimeGrid& time, const ObservationSequence& y, int gh_order,
                           bool normalized_updates) {
  if (y.count() < time.K + 1)
    throw ConfigError("observation sequence has " + std::to_string(y.count()) + " columns, need K+1 = " +
                      std::to_string(time.K + 1));
  const QuadPredictor predictor(model, grid, time.tau(), gh_order);
  bool warned = false;

  GridDensity current{grid, std::vector<double>(static_cast<std::size_t>(grid.points())), {0, 0}};
  Vec x(1);
  for (int i = 0; i < grid.points(); ++i) {
    x[0] = grid.node(i);
    current.values[static_cast<std::size_t>(i)] = q0.density(x);
  }
  apply_update(current, obs, y.column(0), normalized_updates);

  DensityMap out;
  out.emplace(current.index, current);
  std::size_t clamps = 0;
  for (int k = 0; k < time.K; ++k) {
    for (int n = 0; n < time.N; ++n) {
      check_boundary_mass(current, warned);
      current = predictor.apply(current, &clamps);
      current.index = {k, n + 1};
      out.emplace(current.index, current);
    }
    current.index = {k + 1, 0};
    apply_update(current, obs, y.column(k + 1), normalized_updates);
    out.emplace(current.index, current);
  }
  report_clamps(clamps, time.K * time.N);
  return out;
}

GridDensity standalone_fokker_planck(const DiffusionModel& model, const DensitySampler& q0, const Grid1D& grid, int N,
                                     double T, int gh_order) {
  const TimeGrid time(T, 1, N);
  const QuadPredictor predictor(model, grid, time.tau(), gh_order);
  GridDensity current{grid, std::vector<double>(static_cast<std::size_t>(grid.points())), {0, 0}};
  Vec x(1);
  for (int i = 0; i < grid.points(); ++i) {
    x[0] = grid.node(i);
    current.values[static_cast<std::size_t>(i)] = q0.density(x);
  }
  bool warned = false;
  std::size_t clamps = 0;
  for (int n = 0; n < N; ++n) {
    check_boundary_mass(current, warned);
    current = predictor.apply(current, &clamps);
    current.index = {0, n + 1};
  }
  report_clamps(clamps, N);
  current.index = {1, 0};
  return current;
}

}  // namespace dsf
