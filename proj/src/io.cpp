#include "dsfilter/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dsf {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<double> parse_row(const std::string& line, const std::filesystem::path& path, int row) {
  std::vector<double> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (cell.empty() || *end != '\0')
      throw IoError(path.string() + ":" + std::to_string(row) + ": malformed value '" + cell + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<std::vector<double>> read_table(const std::filesystem::path& path, const std::string& header_prefix,
                                            std::string* header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind(header_prefix, 0) != 0)
    throw IoError(path.string() + ": expected a header starting with '" + header_prefix + "'");
  if (header) *header = line;
  std::vector<std::vector<double>> rows;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(parse_row(line, path, row));
  }
  return rows;
}

Grid1D grid_from_nodes(const std::vector<double>& xs, const std::filesystem::path& path) {
  if (xs.size() < 2) throw IoError(path.string() + ": a density needs at least two grid points");
  const Grid1D g(xs.front(), xs.back(), static_cast<int>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (std::abs(xs[i] - g.node(static_cast<int>(i))) > 1e-9 * std::max(1.0, std::abs(xs[i])))
      throw IoError(path.string() + ": x column is not a uniform grid");
  return g;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.close();
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

void write_observation_csv(const ObservationSequence& y, const TimeGrid& time, const std::filesystem::path& path) {
  if (y.count() != time.K + 1) throw ConfigError("observation sequence does not have K + 1 columns");
  auto out = open_out(path);
  out << 't';
  for (Eigen::Index r = 0; r < y.values.rows(); ++r) out << ",y_" << r;
  out << '\n';
  for (int k = 0; k <= time.K; ++k) {
    out << fmt(time.time(k, 0));
    for (Eigen::Index r = 0; r < y.values.rows(); ++r) out << ',' << fmt(y.values(r, k));
    out << '\n';
  }
  finish(out, path);
}

ObservationSequence read_observation_csv(const std::filesystem::path& path, const TimeGrid* time) {
  std::string header;
  const auto rows = read_table(path, "t,y_0", &header);
  const auto cols = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',') + 1);
  if (rows.empty()) throw IoError(path.string() + ": no observations");
  if (time && static_cast<int>(rows.size()) != time->K + 1)
    throw IoError(path.string() + ": " + std::to_string(rows.size()) + " rows, expected K + 1 = " +
                  std::to_string(time->K + 1));
  ObservationSequence y;
  y.values.resize(static_cast<Eigen::Index>(cols - 1), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k].size() != cols) throw IoError(path.string() + ": ragged row " + std::to_string(k + 2));
    for (std::size_t r = 1; r < cols; ++r)
      y.values(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(k)) = rows[k][r];
  }
  return y;
}

void write_density_csv(const GridDensity& d, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "x,value\n";
  for (int i = 0; i < d.grid.points(); ++i)
    out << fmt(d.grid.node(i)) << ',' << fmt(d.values[static_cast<std::size_t>(i)]) << '\n';
  finish(out, path);
}

GridDensity read_density_csv(const std::filesystem::path& path) {
  const auto rows = read_table(path, "x,value", nullptr);
  std::vector<double> xs, vs;
  for (const auto& r : rows) {
    if (r.size() != 2) throw IoError(path.string() + ": expected two columns");
    xs.push_back(r[0]);
    vs.push_back(r[1]);
  }
  return GridDensity{grid_from_nodes(xs, path), vs, {}};
}

void write_density_long_csv(const DensityMap& densities, const TimeGrid& time, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "k,n,t,x,value\n";
  for (const auto& [i, d] : densities) {
    const std::string prefix = std::to_string(i.k) + ',' + std::to_string(i.n) + ',' + fmt(time.time(i)) + ',';
    for (int j = 0; j < d.grid.points(); ++j)
      out << prefix << fmt(d.grid.node(j)) << ',' << fmt(d.values[static_cast<std::size_t>(j)]) << '\n';
  }
  finish(out, path);
}

DensityMap read_density_long_csv(const std::filesystem::path& path) {
  const auto rows = read_table(path, "k,n,t,x,value", nullptr);
  std::map<TimeIndex, std::pair<std::vector<double>, std::vector<double>>> cols;
  for (const auto& r : rows) {
    if (r.size() != 5) throw IoError(path.string() + ": expected five columns");
    auto& c = cols[{static_cast<int>(r[0]), static_cast<int>(r[1])}];
    c.first.push_back(r[3]);
    c.second.push_back(r[4]);
  }
  DensityMap out;
  for (auto& [i, c] : cols) out.emplace(i, GridDensity{grid_from_nodes(c.first, path), std::move(c.second), i});
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  finish(out, path);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace dsf
