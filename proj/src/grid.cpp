#include "dsfilter/grid.hpp"

#include <cmath>
#include <string>

namespace dsf {

Grid1D::Grid1D(double lower, double upper, int points) : lower_(lower), upper_(upper), points_(points) {
  if (!(lower < upper)) throw ConfigError("grid requires lower < upper");
  if (points < 2) throw ConfigError("grid requires at least 2 points, got " + std::to_string(points));
  spacing_ = (upper - lower) / (points - 1);
}

std::vector<double> Grid1D::nodes() const {
  std::vector<double> out(static_cast<std::size_t>(points_));
  for (int i = 0; i < points_; ++i) out[static_cast<std::size_t>(i)] = node(i);
  return out;
}

double GridDensity::at(double x) const {
  if (!(x >= grid.lower() && x <= grid.upper())) return 0.0;
  const double s = (x - grid.lower()) / grid.spacing();
  auto i = static_cast<std::size_t>(s);
  if (i + 1 >= values.size()) return values.back();
  const double w = s - static_cast<double>(i);
  return (1.0 - w) * values[i] + w * values[i + 1];
}

std::vector<double> GridDensity::gradient() const {
  const std::size_t n = values.size();
  const double h = grid.spacing();
  std::vector<double> g(n);
  g[0] = (values[1] - values[0]) / h;
  g[n - 1] = (values[n - 1] - values[n - 2]) / h;
  for (std::size_t i = 1; i + 1 < n; ++i) g[i] = (values[i + 1] - values[i - 1]) / (2.0 * h);
  return g;
}

double trapezoid(const Grid1D& grid, std::span<const double> values) {
  if (values.size() != static_cast<std::size_t>(grid.points()))
    throw ConfigError("trapezoid: value count does not match grid");
  double inner = 0.0;
  for (std::size_t i = 1; i + 1 < values.size(); ++i) inner += values[i];
  return grid.spacing() * (inner + 0.5 * (values.front() + values.back()));
}

}  // namespace dsf
