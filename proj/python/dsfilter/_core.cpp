#include <algorithm>
#include <cmath>

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dsfilter/cli.hpp"
#include "dsfilter/ebds.hpp"
#include "dsfilter/eval.hpp"
#include "dsfilter/reference.hpp"
#include "dsfilter/split_quad.hpp"

namespace py = pybind11;
using namespace dsf;

namespace {

using Array = py::array_t<double>;

Array to_array(const std::vector<double>& v) { return Array(static_cast<py::ssize_t>(v.size()), v.data()); }

ObservationSequence sequence_from(const Array& y, int K) {
  auto r = y.unchecked<1>();
  if (r.shape(0) != K + 1) throw ConfigError("observation array needs K + 1 = " + std::to_string(K + 1) + " entries");
  ObservationSequence s;
  s.values.resize(1, K + 1);
  for (int k = 0; k <= K; ++k) s.values(0, k) = r(k);
  return s;
}

Grid1D grid_from(const std::tuple<double, double, int>& g) {
  return Grid1D(std::get<0>(g), std::get<1>(g), std::get<2>(g));
}

py::dict density_dict(const std::map<TimeIndex, GridDensity>& m) {
  py::dict out;
  for (const auto& [i, d] : m) out[py::make_tuple(i.k, i.n)] = to_array(d.values);
  return out;
}

std::vector<TimeIndex> indices_from(const std::optional<std::vector<std::pair<int, int>>>& v, const TimeGrid& t) {
  if (!v) return t.index_set();
  std::vector<TimeIndex> out;
  for (const auto& [k, n] : *v) out.push_back({k, n});
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Splitting-scheme filters: quadrature oracle, energy-based networks and reference filters";
  m.attr("__version__") = kVersion;

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  auto numerical = py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  py::register_exception<DegenerateDensity>(m, "DegenerateDensity", numerical.ptr());
  py::register_exception<TrainingDiverged>(m, "TrainingDiverged", numerical.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  m.def("models", &builtin_names);

  m.def(
      "f_coefficients",
      [](const std::string& model, double x) {
        const Coefficients c = f_coefficients(builtin_by_name(model).diffusion, Vec::Constant(1, x));
        return std::make_pair(c.f0, c.f1[0]);
      },
      py::arg("model"), py::arg("x"), "(f0, f1) of the splitting operator at x");

  m.def(
      "gauss_hermite",
      [](int order) {
        const auto r = gauss_hermite_rule(order);
        return std::make_pair(to_array(r.nodes), to_array(r.weights));
      },
      py::arg("order"), "Probabilists' Gauss-Hermite nodes and weights (weights sum to 1)");

  m.def(
      "simulate_observations",
      [](const std::string& model, double T, int K, int count, std::uint64_t seed, int substeps) {
        const BuiltinModel bm = builtin_by_name(model);
        const auto seqs = sample_observation_sequences(bm.diffusion, bm.observation, bm.initial, TimeGrid(T, K, 1),
                                                       count, substeps, seed);
        Array out({count, K + 1});
        auto w = out.mutable_unchecked<2>();
        for (int i = 0; i < count; ++i)
          for (int k = 0; k <= K; ++k) w(i, k) = seqs[static_cast<std::size_t>(i)].values(0, k);
        return out;
      },
      py::arg("model"), py::arg("T"), py::arg("K"), py::arg("count"), py::arg("seed"), py::arg("substeps") = 64);

  m.def(
      "quad_filter",
      [](const std::string& model, const Array& y, double T, int K, int N, std::tuple<double, double, int> grid,
         int gh_order, bool normalized_updates) {
        const BuiltinModel bm = builtin_by_name(model);
        const TimeGrid t(T, K, N);
        py::gil_scoped_release release;
        auto run = quad_filter_run(bm.diffusion, bm.observation, bm.initial.q0, grid_from(grid), t, sequence_from(y, K),
                                   gh_order, normalized_updates);
        py::gil_scoped_acquire acquire;
        return density_dict(run);
      },
      py::arg("model"), py::arg("y"), py::arg("T"), py::arg("K"), py::arg("N"), py::arg("grid"),
      py::arg("gh_order") = 21, py::arg("normalized_updates") = false,
      "Quadrature filter densities keyed by (k, n)");

  m.def(
      "standalone_fokker_planck",
      [](const std::string& model, double T, int N, std::tuple<double, double, int> grid, int gh_order) {
        const BuiltinModel bm = builtin_by_name(model);
        return to_array(standalone_fokker_planck(bm.diffusion, bm.initial.q0, grid_from(grid), N, T, gh_order).values);
      },
      py::arg("model"), py::arg("T"), py::arg("N"), py::arg("grid"), py::arg("gh_order") = 21);

  m.def(
      "kalman_filter",
      [](const std::string& model, const Array& y, double T, int K, int N) {
        const BuiltinModel bm = builtin_by_name(model);
        const auto run = kalman_filter_run(bm.diffusion, bm.observation, bm.initial.q0, TimeGrid(T, K, N),
                                           sequence_from(y, K));
        py::dict out;
        for (const auto& [i, b] : run) out[py::make_tuple(i.k, i.n)] = py::make_tuple(b.mean, b.variance);
        return out;
      },
      py::arg("model"), py::arg("y"), py::arg("T"), py::arg("K"), py::arg("N"), "(mean, variance) keyed by (k, n)");

  m.def(
      "particle_filter",
      [](const std::string& model, const Array& y, double T, int K, int N, std::tuple<double, double, int> grid,
         int particles, std::uint64_t seed, double bandwidth,
         const std::optional<std::vector<std::pair<int, int>>>& readouts) {
        const BuiltinModel bm = builtin_by_name(model);
        const TimeGrid t(T, K, N);
        ParticleFilterOptions o;
        o.particles = particles;
        o.seed = seed;
        o.bandwidth = bandwidth;
        std::vector<TimeIndex> idx;
        if (readouts) {
          idx = indices_from(readouts, t);
        } else {
          for (int k = 0; k <= K; ++k) idx.push_back({k, 0});
        }
        py::gil_scoped_release release;
        auto run = particle_filter_run(bm.diffusion, bm.observation, bm.initial.q0, t, sequence_from(y, K),
                                       grid_from(grid), idx, o);
        py::gil_scoped_acquire acquire;
        return density_dict(run);
      },
      py::arg("model"), py::arg("y"), py::arg("T"), py::arg("K"), py::arg("N"), py::arg("grid"),
      py::arg("particles") = 10000, py::arg("seed") = 0, py::arg("bandwidth") = 0.0, py::arg("readouts") = py::none(),
      "Bootstrap particle filter KDE densities; readouts default to the observation times");

  py::class_<EnergyNetwork>(m, "EnergyNetwork")
      .def(py::init<int, int, int, int>(), py::arg("input_dim"), py::arg("state_dim"), py::arg("width"),
           py::arg("depth"))
      .def_static(
          "random",
          [](int input_dim, int state_dim, int width, int depth, std::uint64_t seed) {
            Rng rng = make_stream(seed, stream_tag::network_init, 0);
            return EnergyNetwork::he_uniform(input_dim, state_dim, width, depth, rng);
          },
          py::arg("input_dim"), py::arg("state_dim"), py::arg("width"), py::arg("depth"), py::arg("seed"))
      .def_property_readonly("input_dim", &EnergyNetwork::input_dim)
      .def_property_readonly("parameter_count", &EnergyNetwork::parameter_count)
      .def("density", [](const EnergyNetwork& n, const Mat& inputs) { return Vec(n.density(inputs).transpose()); },
           py::arg("inputs"), "exp(-f) at the columns of an (input_dim, B) array")
      .def(
          "density_with_grad",
          [](const EnergyNetwork& n, const Mat& inputs) {
            auto r = n.density_with_grad(inputs);
            return std::make_pair(Vec(r.value.transpose()), r.grad_x);
          },
          py::arg("inputs"))
      .def("serialize", &serialize_network)
      .def_static("deserialize", &deserialize_network, py::arg("text"), py::arg("source") = "<string>")
      .def("__eq__", [](const EnergyNetwork& a, const EnergyNetwork& b) { return a == b; });

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("M", &TrainConfig::M)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("lr_decay", &TrainConfig::lr_decay)
      .def_readwrite("width", &TrainConfig::width)
      .def_readwrite("depth", &TrainConfig::depth)
      .def_readwrite("warm_start", &TrainConfig::warm_start)
      .def_readwrite("validation_fraction", &TrainConfig::validation_fraction)
      .def_readwrite("normalization_points", &TrainConfig::normalization_points)
      .def_readwrite("training_density", &TrainConfig::training_density)
      .def_property(
          "optimizer", [](const TrainConfig& c) { return c.optimizer == OptimizerKind::adam ? "adam" : "sgd"; },
          [](TrainConfig& c, const std::string& s) {
            if (s != "adam" && s != "sgd") throw ConfigError("optimizer must be 'adam' or 'sgd'");
            c.optimizer = s == "adam" ? OptimizerKind::adam : OptimizerKind::sgd;
          });

  py::class_<FilterPipeline>(m, "FilterPipeline")
      .def_property_readonly("network_count", [](const FilterPipeline& p) { return p.networks().size(); })
      .def_property_readonly("K", [](const FilterPipeline& p) { return p.time().K; })
      .def_property_readonly("N", [](const FilterPipeline& p) { return p.time().N; })
      .def(
          "eval",
          [](const FilterPipeline& p, int k, int n, double x, const Array& y) {
            return pipeline_eval(p, k, n, Vec::Constant(1, x), sequence_from(y, p.time().K));
          },
          py::arg("k"), py::arg("n"), py::arg("x"), py::arg("y"))
      .def(
          "eval_grid",
          [](const FilterPipeline& p, int k, int n, const Array& y, std::optional<std::tuple<double, double, int>> g) {
            const Grid1D grid = g ? grid_from(*g) : p.eval_grid();
            return to_array(pipeline_eval_grid(p, {k, n}, sequence_from(y, p.time().K), grid).values);
          },
          py::arg("k"), py::arg("n"), py::arg("y"), py::arg("grid") = py::none())
      .def("save", [](const FilterPipeline& p, const std::filesystem::path& dir) { save_pipeline(p, dir); });

  m.def("load_pipeline", [](const std::filesystem::path& dir) { return load_pipeline(dir); }, py::arg("directory"));

  m.def(
      "train_pipeline",
      [](const std::string& model, double T, int K, int N, const TrainConfig& cfg,
         std::tuple<double, double, int> grid, std::uint64_t seed) {
        const BuiltinModel bm = builtin_by_name(model);
        py::gil_scoped_release release;
        return train_pipeline(bm.diffusion, bm.observation, bm.initial, TimeGrid(T, K, N), cfg, grid_from(grid), seed);
      },
      py::arg("model"), py::arg("T"), py::arg("K"), py::arg("N"), py::arg("config"), py::arg("grid"),
      py::arg("seed"));

  m.def(
      "sup_error",
      [](const Array& a, const Array& b, std::tuple<double, double, int> grid, bool normalize) {
        const Grid1D g = grid_from(grid);
        std::vector<double> av(a.data(), a.data() + a.size()), bv(b.data(), b.data() + b.size());
        if (av.size() != bv.size() || av.size() != static_cast<std::size_t>(g.points()))
          throw ConfigError("sup_error: arrays must match the grid");
        double ca = 1.0, cb = 1.0;
        if (normalize) {
          ca = trapezoid(g, av);
          cb = trapezoid(g, bv);
        }
        double sup = 0.0;
        for (std::size_t i = 0; i < av.size(); ++i) sup = std::max(sup, std::abs(av[i] / ca - bv[i] / cb));
        return sup;
      },
      py::arg("a"), py::arg("b"), py::arg("grid"), py::arg("normalize") = true);

  m.def(
      "fit_loglog",
      [](const std::vector<double>& x, const std::vector<double>& y) {
        const LogLogFit f = fit_loglog(x, y);
        return std::make_pair(f.slope, f.intercept);
      },
      py::arg("x"), py::arg("y"), "(slope, intercept) of log y against log x");

  m.def(
      "run",
      [](const std::string& command, const std::string& config_json, const std::vector<std::string>& overrides) {
        const RunConfig cfg = parse_run_config(config_json, overrides);
        py::gil_scoped_release release;
        if (command == "simulate") cmd_simulate(cfg);
        else if (command == "oracle") cmd_oracle(cfg);
        else if (command == "train") cmd_train(cfg);
        else if (command == "converge") cmd_converge(cfg);
        else throw ConfigError("unknown command '" + command + "'");
      },
      py::arg("command"), py::arg("config_json") = "{}", py::arg("overrides") = std::vector<std::string>{},
      "Runs a command-line subcommand in-process");

  m.def("default_config", &default_config_text);
}
