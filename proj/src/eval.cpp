#include "dsfilter/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dsfilter/operators.hpp"
#include "dsfilter/split_quad.hpp"

namespace dsf {

namespace {

std::vector<double> sample_on(const GridDensity& d, const Grid1D& grid) {
  if (d.grid == grid) return d.values;
  std::vector<double> out(static_cast<std::size_t>(grid.points()));
  for (int i = 0; i < grid.points(); ++i) out[static_cast<std::size_t>(i)] = d.at(grid.node(i));
  return out;
}

std::string index_str(TimeIndex i) { return "(" + std::to_string(i.k) + ", " + std::to_string(i.n) + ")"; }

const std::vector<double>& lookup(const DensityValues& v, TimeIndex i, const char* who) {
  const auto it = v.find(i);
  if (it == v.end()) throw ConfigError(std::string(who) + " evaluator returned no density at " + index_str(i));
  return it->second;
}

}  // namespace

Evaluator pointwise_evaluator(PointFn fn) {
  return [fn = std::move(fn)](const ObservationSequence& y, const std::vector<TimeIndex>& indices, const Grid1D& grid) {
    DensityValues out;
    Vec x(1);
    for (TimeIndex i : indices) {
      std::vector<double> v(static_cast<std::size_t>(grid.points()));
      for (int j = 0; j < grid.points(); ++j) {
        x[0] = grid.node(j);
        v[static_cast<std::size_t>(j)] = fn(i.k, i.n, x, y);
      }
      out.emplace(i, std::move(v));
    }
    return out;
  };
}

Evaluator quad_evaluator(const BuiltinModel& model, const Grid1D& quad_grid, const TimeGrid& time, int gh_order,
                         bool normalized_updates) {
  return [=](const ObservationSequence& y, const std::vector<TimeIndex>& indices, const Grid1D& grid) {
    const DensityMap run = quad_filter_run(model.diffusion, model.observation, model.initial.q0, quad_grid, time, y,
                                           gh_order, normalized_updates);
    DensityValues out;
    for (TimeIndex i : indices) {
      const auto it = run.find(i);
      if (it == run.end()) throw ConfigError("quadrature filter has no density at " + index_str(i));
      out.emplace(i, sample_on(it->second, grid));
    }
    return out;
  };
}

Evaluator kalman_evaluator(const BuiltinModel& model, const TimeGrid& time) {
  return [=](const ObservationSequence& y, const std::vector<TimeIndex>& indices, const Grid1D& grid) {
    const auto beliefs = kalman_filter_run(model.diffusion, model.observation, model.initial.q0, time, y);
    DensityValues out;
    for (TimeIndex i : indices) {
      const auto it = beliefs.find(i);
      if (it == beliefs.end()) throw ConfigError("Kalman filter has no belief at " + index_str(i));
      out.emplace(i, kalman_density(it->second, grid).values);
    }
    return out;
  };
}

Evaluator particle_evaluator(const BuiltinModel& model, const TimeGrid& time, const ParticleFilterOptions& options) {
  return [=](const ObservationSequence& y, const std::vector<TimeIndex>& indices, const Grid1D& grid) {
    ParticleFilterOptions o = options;
    o.seed = stream_seed(options.seed, stream_tag::particles, y.generating_seed.value_or(0));
    auto run = particle_filter_run(model.diffusion, model.observation, model.initial.q0, time, y, grid, indices, o);
    DensityValues out;
    for (TimeIndex i : indices) out.emplace(i, std::move(run.at(i).values));
    return out;
  };
}

Evaluator pipeline_evaluator(std::shared_ptr<const FilterPipeline> pipeline) {
  return [pipeline](const ObservationSequence& y, const std::vector<TimeIndex>& indices, const Grid1D& grid) {
    DensityValues out;
    for (TimeIndex i : indices) out.emplace(i, pipeline_eval_grid(*pipeline, i, y, grid).values);
    return out;
  };
}

ErrorReport l2linf_error(const Evaluator& approx, const Evaluator& reference,
                         const std::vector<ObservationSequence>& sequences, const Grid1D& grid, const TimeGrid& time,
                         bool normalize, const std::vector<TimeIndex>& indices) {
  if (sequences.empty()) throw ConfigError("l2linf_error needs at least one observation sequence");
  const std::vector<TimeIndex> idx = indices.empty() ? time.index_set() : indices;
  const std::size_t Me = sequences.size();
  std::vector<std::vector<double>> sq(Me, std::vector<double>(idx.size()));

  parallel_for(Me, [&](std::size_t m) {
    const ObservationSequence& y = sequences[m];
    const DensityValues a = approx(y, idx, grid);
    const DensityValues r = reference(y, idx, grid);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const auto& av = lookup(a, idx[j], "approximate");
      const auto& rv = lookup(r, idx[j], "reference");
      if (av.size() != rv.size() || av.size() != static_cast<std::size_t>(grid.points()))
        throw ConfigError("evaluator returned a density of the wrong size at " + index_str(idx[j]));
      double ca = 1.0, cr = 1.0;
      if (normalize) {
        ca = trapezoid(grid, av);
        cr = trapezoid(grid, rv);
        if (!(ca > kMassEpsilon) || !(cr > kMassEpsilon) || !std::isfinite(ca) || !std::isfinite(cr))
          throw DegenerateDensity("degenerate mass at " + index_str(idx[j]) + " for sequence " + std::to_string(m) +
                                  " (approximate " + std::to_string(ca) + ", reference " + std::to_string(cr) + ")");
      }
      double sup = 0.0;
      for (std::size_t i = 0; i < av.size(); ++i) sup = std::max(sup, std::abs(av[i] / ca - rv[i] / cr));
      sq[m][j] = sup * sup;
    }
  });

  ErrorReport rep;
  rep.Me = static_cast<int>(Me);
  rep.grid = grid;
  rep.time = time;
  rep.N = time.N;
  for (const auto& y : sequences) rep.sequence_seeds.push_back(y.generating_seed.value_or(0));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    double mean = 0.0;
    for (std::size_t m = 0; m < Me; ++m) mean += sq[m][j];
    mean /= static_cast<double>(Me);
    double var = 0.0;
    for (std::size_t m = 0; m < Me; ++m) var += (sq[m][j] - mean) * (sq[m][j] - mean);
    var = Me > 1 ? var / static_cast<double>(Me - 1) : 0.0;
    const double e = std::sqrt(mean);
    rep.per_time[idx[j]] = e;
    const double se_mean = std::sqrt(var / static_cast<double>(Me));
    rep.standard_error[idx[j]] = e > 0.0 ? se_mean / (2.0 * e) : 0.0;
  }
  return rep;
}

LogLogFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ConfigError("fit_loglog needs at least two aligned points");
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw ConfigError("fit_loglog needs positive values");
    sx += std::log(x[i]);
    sy += std::log(y[i]);
  }
  const double n = static_cast<double>(x.size());
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(y[i]) - my);
  }
  if (!(sxx > 0.0)) throw ConfigError("fit_loglog needs two distinct x values");
  LogLogFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  return f;
}

ConvergenceTable convergence_study(const StudyBuilder& builder, const std::vector<int>& N_values,
                                   const std::vector<ObservationSequence>& sequences, const Grid1D& grid,
                                   bool final_time_only, bool normalize) {
  if (N_values.empty()) throw ConfigError("convergence study needs at least one N");
  if (!std::is_sorted(N_values.begin(), N_values.end()) ||
      std::adjacent_find(N_values.begin(), N_values.end()) != N_values.end())
    throw ConfigError("convergence study N values must be strictly ascending");
  ConvergenceTable table;
  for (int N : N_values) {
    StudyCell cell = builder(N);
    if (cell.time.N != N) throw ConfigError("study builder returned a time grid with N != " + std::to_string(N));
    const std::vector<TimeIndex> idx =
        final_time_only ? std::vector<TimeIndex>{cell.time.final_index()} : std::vector<TimeIndex>{};
    ErrorReport rep = l2linf_error(cell.approx, cell.reference, sequences, grid, cell.time, normalize, idx);
    rep.seed = cell.seed;
    double e = 0.0;
    if (final_time_only) {
      e = rep.per_time.at(cell.time.final_index());
    } else {
      for (const auto& [i, v] : rep.per_time) e = std::max(e, v);
    }
    table.N_values.push_back(N);
    table.final_errors.push_back(e);
    table.reports.push_back(std::move(rep));
  }
  if (N_values.size() >= 2) {
    std::vector<double> xs(N_values.begin(), N_values.end());
    const LogLogFit f = fit_loglog(xs, table.final_errors);
    table.slope = f.slope;
    table.intercept = f.intercept;
  }
  return table;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

void close_out(std::ofstream& out, const std::filesystem::path& path) {
  out.close();
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

void emit_error_csv(const std::vector<ErrorReport>& reports, const std::filesystem::path& path) {
  if (reports.empty()) throw ConfigError("emit_error_csv: no reports");
  for (const auto& r : reports)
    if (r.Me < 1 || r.per_time.empty()) throw ConfigError("emit_error_csv: report built from no sequences");
  auto out = open_out(path);
  out << "k,n,t,error,N,seed\n";
  for (const auto& r : reports)
    for (const auto& [i, e] : r.per_time)
      out << i.k << ',' << i.n << ',' << fmt(r.time.time(i)) << ',' << fmt(e) << ',' << r.N << ',' << r.seed << '\n';
  close_out(out, path);
}

std::vector<ErrorReport> parse_error_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "k,n,t,error,N,seed") throw IoError(path.string() + ": bad error CSV header");
  std::vector<ErrorReport> out;
  std::vector<double> final_t;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto c = split(line);
    if (c.size() != 6) throw IoError(path.string() + ":" + std::to_string(row) + ": expected 6 columns");
    try {
      const TimeIndex i{std::stoi(c[0]), std::stoi(c[1])};
      const double e = std::stod(c[3]);
      const int N = std::stoi(c[4]);
      const std::uint64_t seed = std::stoull(c[5]);
      if (out.empty() || out.back().N != N || out.back().seed != seed) {
        out.emplace_back();
        out.back().N = N;
        out.back().seed = seed;
        final_t.push_back(0.0);
      }
      out.back().per_time[i] = e;
      if (i.n == 0 && i.k >= out.back().time.K) {
        out.back().time.K = i.k;
        final_t.back() = std::stod(c[2]);
      }
    } catch (const std::logic_error&) {
      throw IoError(path.string() + ":" + std::to_string(row) + ": malformed number");
    }
  }
  for (std::size_t r = 0; r < out.size(); ++r) {
    if (out[r].time.K < 1 || !(final_t[r] > 0.0)) continue;
    try {
      out[r].time = TimeGrid(final_t[r], out[r].time.K, out[r].N);
    } catch (const ConfigError& e) {
      throw IoError(path.string() + ": inconsistent time columns: " + e.what());
    }
  }
  return out;
}

void emit_convergence_csv(const std::vector<ConvergenceRow>& rows, const std::optional<LogLogFit>& fit,
                          const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "kind,N,seed,error,slope,intercept\n";
  for (const auto& r : rows) {
    out << r.kind << ',' << r.N << ',' << (r.seed ? std::to_string(*r.seed) : "") << ',' << fmt(r.error) << ',';
    if (r.kind == "mean" && fit) out << fmt(fit->slope) << ',' << fmt(fit->intercept);
    else out << ',';
    out << '\n';
  }
  close_out(out, path);
}

void emit_gnuplot(const std::vector<int>& N_values, const std::vector<double>& errors, const std::filesystem::path& path) {
  if (N_values.size() != errors.size()) throw ConfigError("emit_gnuplot: misaligned columns");
  auto out = open_out(path);
  out << "# N error\n";
  for (std::size_t i = 0; i < N_values.size(); ++i) out << N_values[i] << ' ' << fmt(errors[i]) << '\n';
  close_out(out, path);
}

}  // namespace dsf
