#pragma once

#include <span>
#include <vector>

#include "dsfilter/common.hpp"

namespace dsf {

// Uniform 1D grid [lower, upper] with `points` nodes, endpoints included.
class Grid1D {
 public:
  Grid1D() = default;
  Grid1D(double lower, double upper, int points);

  double lower() const { return lower_; }
  double upper() const { return upper_; }
  int points() const { return points_; }
  double spacing() const { return spacing_; }
  double node(int i) const { return i + 1 == points_ ? upper_ : lower_ + i * spacing_; }
  std::vector<double> nodes() const;

  bool operator==(const Grid1D&) const = default;

 private:
  double lower_ = 0.0;
  double upper_ = 1.0;
  int points_ = 2;
  double spacing_ = 1.0;
};

struct GridDensity {
  Grid1D grid;
  std::vector<double> values;
  TimeIndex index;

  // Linear interpolation; zero outside the grid.
  double at(double x) const;
  // Central differences inside, one-sided at the two boundary nodes.
  std::vector<double> gradient() const;
};

double trapezoid(const Grid1D& grid, std::span<const double> values);

}  // namespace dsf
