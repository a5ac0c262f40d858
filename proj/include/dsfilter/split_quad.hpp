#pragma once

#include <map>
#include <vector>

#include "dsfilter/grid.hpp"
#include "dsfilter/model.hpp"
#include "dsfilter/simulate.hpp"

namespace dsf {

// Probabilists' Gauss-Hermite rule: sum_q w_q f(xi_q) ~ E[f(xi)], xi ~ N(0, 1).
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

GaussHermiteRule gauss_hermite_rule(int order);

// One step of the splitting recursion on a uniform grid,
//   out(x_i) = E[(G in)(x_i + mu(x_i) tau + sigma(x_i) sqrt(tau) xi)],  xi ~ N(0, 1).
// G in is formed at the grid nodes (central-difference gradient) and the
// Gaussian expectation is integrated against the grid nodes with the
// trapezoidal rule. Nodes whose transition kernel is narrower than
// kMinKernelCells grid cells fall back to Gauss-Hermite quadrature of the
// linearly interpolated integrand. Everything that depends only on
// (model, grid, tau) is evaluated once at construction; the step itself is a
// fixed linear map followed by clamping of negative values.
class QuadPredictor {
 public:
  static constexpr double kMinKernelCells = 4.0;

  QuadPredictor(const DiffusionModel& model, const Grid1D& grid, double tau, int gh_order);

  // Negative outputs below -1e-12 max are reported through warn(), or counted
  // into *clamp_events when given.
  GridDensity apply(const GridDensity& density, std::size_t* clamp_events = nullptr) const;

  const Grid1D& grid() const { return grid_; }
  double tau() const { return tau_; }

 private:
  struct Row {
    int first = 0;                // first grid node with a non-zero weight
    std::vector<double> weights;  // over consecutive nodes
  };

  Grid1D grid_;
  double tau_;
  std::vector<double> f0_, f1_;  // coefficients at the grid nodes
  std::vector<Row> rows_;
};

GridDensity quad_predict_step(const DiffusionModel& model, const GridDensity& density, double tau, int gh_order);

using DensityMap = std::map<TimeIndex, GridDensity>;

// Full recursion over the index set: pi(0,0) = q0 L(y_0), N prediction steps per
// window, Bayes update with y_{k+1} at the window boundary.
DensityMap quad_filter_run(const DiffusionModel& model, const ObservationModel& obs, const DensitySampler& q0,
                           const Grid1D& grid, const TimeGrid& time, const ObservationSequence& y, int gh_order,
                           bool normalized_updates);

// Pure Fokker-Planck evolution of q0 over [0, T] in N steps (K = 1, L = 1).
GridDensity standalone_fokker_planck(const DiffusionModel& model, const DensitySampler& q0, const Grid1D& grid, int N,
                                     double T, int gh_order);

}  // namespace dsf
