#include "dsfilter/ebds.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "dsfilter/operators.hpp"

namespace dsf {

using nlohmann::json;

void TrainConfig::validate() const {
  if (M < 2) throw ConfigError("train: M must be at least 2");
  if (batch_size < 1 || batch_size > M) throw ConfigError("train: batch_size must lie in [1, M]");
  if (epochs < 1) throw ConfigError("train: epochs must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("train: learning_rate must be > 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("train: lr_decay must lie in (0, 1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0))
    throw ConfigError("train: adam parameters need 0 <= beta < 1 and epsilon > 0");
  if (width < 1 || depth < 1) throw ConfigError("train: width and depth must be positive");
  if (!(validation_fraction >= 0.0 && validation_fraction < 0.5))
    throw ConfigError("train: validation_fraction must lie in [0, 0.5)");
  if (normalization_points != 0 && normalization_points < 2)
    throw ConfigError("train: normalization_points must be 0 or at least 2");
  if (observation_substeps < 1) throw ConfigError("train: observation_substeps must be positive");
  if (training_density && !(training_density->second > 0.0))
    throw ConfigError("train: training density std must be positive");
}

FilterPipeline::FilterPipeline(DiffusionModel model, ObservationModel obs, InitialDensity init, TimeGrid time,
                               TrainConfig cfg, Grid1D eval_grid, std::uint64_t seed)
    : model_(std::move(model)),
      obs_(std::move(obs)),
      init_(std::move(init)),
      time_(time),
      cfg_(std::move(cfg)),
      eval_grid_(eval_grid),
      norm_grid_(cfg_.normalization_points == 0
                     ? eval_grid
                     : Grid1D(eval_grid.lower(), eval_grid.upper(), cfg_.normalization_points)),
      seed_(seed) {
  cfg_.validate();
  if (model_.dim != 1) throw ConfigError("energy-based pipeline: grid normalization needs a 1D state");
  if (cfg_.training_density)
    override_training_density(init_, cfg_.training_density->first, cfg_.training_density->second);
}

const EnergyNetwork& FilterPipeline::network(TimeIndex i) const {
  const auto it = networks_.find(i);
  if (it == networks_.end())
    throw ConfigError("pipeline: no trained network at (" + std::to_string(i.k) + ", " + std::to_string(i.n) + ")");
  return it->second;
}

void FilterPipeline::set_network(TimeIndex i, EnergyNetwork net) {
  if (i.k < 0 || i.k >= time_.K || i.n < 1 || i.n > time_.N)
    throw ConfigError("pipeline: network index (" + std::to_string(i.k) + ", " + std::to_string(i.n) +
                      ") outside {0..K-1} x {1..N}");
  if (net.input_dim() != input_dim(i.k)) throw ConfigError("pipeline: network input dimension mismatch");
  networks_.insert_or_assign(i, std::move(net));
}

bool FilterPipeline::complete() const {
  return networks_.size() == static_cast<std::size_t>(time_.K) * static_cast<std::size_t>(time_.N);
}

namespace {

std::string index_str(int k, int n) { return "(" + std::to_string(k) + ", " + std::to_string(n) + ")"; }

// Closure pi(k, 0) at the columns of xs, sample b observed as column b of
// ys (stacked y_{0:k}, at least d' (k + 1) rows). Gradients only when asked.
EnergyNetwork::DensityGrad closure_batch(const FilterPipeline& p, int k, const Mat& xs, const Mat& ys,
                                         bool with_grad = true) {
  const int d = p.model().dim;
  const int dp = p.observation().d_prime;
  const auto B = xs.cols();
  EnergyNetwork::DensityGrad prior;
  if (k == 0) {
    prior.value.resize(B);
    if (with_grad) prior.grad_x.resize(d, B);
    const auto& q0 = p.initial().q0;
    for (Eigen::Index b = 0; b < B; ++b) {
      const Vec x = xs.col(b);
      prior.value[b] = q0.density(x);
      if (with_grad) prior.grad_x.col(b) = q0.grad(x);
    }
  } else {
    const EnergyNetwork& net = p.network({k - 1, p.time().N});
    Mat in(net.input_dim(), B);
    in.topRows(d) = xs;
    in.bottomRows(dp * k) = ys.topRows(dp * k);
    if (with_grad)
      prior = net.density_with_grad(in);
    else
      prior.value = net.density(in);
  }
  const auto& obs = p.observation();
  for (Eigen::Index b = 0; b < B; ++b) {
    const Vec x = xs.col(b);
    const Vec yk = ys.col(b).segment(dp * k, dp);
    const double l = obs.likelihood(yk, x);
    if (with_grad) prior.grad_x.col(b) = prior.grad_x.col(b) * l + prior.value[b] * obs.grad_x(yk, x);
    prior.value[b] *= l;
  }
  return prior;
}

Mat grid_states(const Grid1D& grid) {
  Mat xs(1, grid.points());
  for (int i = 0; i < grid.points(); ++i) xs(0, i) = grid.node(i);
  return xs;
}

Mat replicate(const Vec& v, Eigen::Index cols) { return v.replicate(1, cols); }

void check_index(const FilterPipeline& p, int k, int n) {
  const TimeGrid& t = p.time();
  const bool ok = (k >= 0 && k < t.K && n >= 0 && n <= t.N) || (k == t.K && n == 0);
  if (!ok) throw ConfigError("pipeline: index " + index_str(k, n) + " is outside the index set");
}

void check_sequence(const FilterPipeline& p, int k, const ObservationSequence& y) {
  if (y.values.rows() != p.observation().d_prime || y.count() < k + 1)
    throw ConfigError("pipeline: observation sequence needs " + std::to_string(k + 1) + " columns of dimension " +
                      std::to_string(p.observation().d_prime));
}

// y^m_{0:K} for every training sample, column m.
Mat stacked_observations(const TrainingBatch& batch, int dp, int K) {
  Mat ys(dp * (K + 1), static_cast<Eigen::Index>(batch.observations.size()));
  for (std::size_t m = 0; m < batch.observations.size(); ++m)
    ys.col(static_cast<Eigen::Index>(m)) = batch.observations[m].prefix(K);
  return ys;
}

Mat path_states(const PathBatch& paths, int j) {
  Mat z(paths.dim, paths.paths);
  for (int m = 0; m < paths.paths; ++m)
    for (int c = 0; c < paths.dim; ++c) z(c, m) = paths.at(m, j, c);
  return z;
}

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const EnergyNetwork& net) : cfg_(cfg), lr_(cfg.learning_rate) {
    if (cfg.optimizer == OptimizerKind::adam) {
      for (const auto& w : net.weights()) {
        mw_.push_back(Mat::Zero(w.rows(), w.cols()));
        vw_.push_back(Mat::Zero(w.rows(), w.cols()));
      }
      for (const auto& b : net.biases()) {
        mb_.push_back(Vec::Zero(b.size()));
        vb_.push_back(Vec::Zero(b.size()));
      }
    }
  }

  void step(EnergyNetwork& net, const EnergyNetwork::Gradients& g) {
    if (cfg_.optimizer == OptimizerKind::sgd) {
      for (std::size_t l = 0; l < g.weights.size(); ++l) {
        net.weights()[l] -= lr_ * g.weights[l];
        net.biases()[l] -= lr_ * g.biases[l];
      }
      return;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double step = lr_ * std::sqrt(c2) / c1;
    const double eps = cfg_.epsilon * std::sqrt(c2);
    auto update = [&](auto& param, auto& m, auto& v, const auto& grad) {
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * grad;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
      param.array() -= step * m.array() / (v.array().sqrt() + eps);
    };
    for (std::size_t l = 0; l < g.weights.size(); ++l) {
      update(net.weights()[l], mw_[l], vw_[l], g.weights[l]);
      update(net.biases()[l], mb_[l], vb_[l], g.biases[l]);
    }
  }

  void decay() { lr_ *= cfg_.lr_decay; }

 private:
  const TrainConfig& cfg_;
  double lr_;
  long t_ = 0;
  std::vector<Mat> mw_, vw_;
  std::vector<Vec> mb_, vb_;
};

bool finite_gradients(const EnergyNetwork::Gradients& g) {
  for (std::size_t l = 0; l < g.weights.size(); ++l)
    if (!g.weights[l].allFinite() || !g.biases[l].allFinite()) return false;
  return true;
}

std::uint64_t network_stream_index(const TimeGrid& t, int k, int n) {
  return static_cast<std::uint64_t>(k) * static_cast<std::uint64_t>(t.N + 1) + static_cast<std::uint64_t>(n);
}

// Per-window standardization over all path states and observation inputs.
void standardize(EnergyNetwork& net, const TrainingBatch& batch, int k, int dp) {
  const PathBatch& paths = batch.paths;
  const int d = paths.dim;
  Vec shift = Vec::Zero(net.input_dim());
  Vec scale = Vec::Ones(net.input_dim());
  for (int c = 0; c < d; ++c) {
    double s = 0.0, s2 = 0.0;
    std::size_t count = 0;
    for (int m = 0; m < paths.paths; ++m)
      for (int j = 0; j <= paths.steps; ++j) {
        const double v = paths.at(m, j, c);
        s += v;
        s2 += v * v;
        ++count;
      }
    const double mean = s / static_cast<double>(count);
    const double var = std::max(0.0, s2 / static_cast<double>(count) - mean * mean);
    shift[c] = mean;
    scale[c] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  for (int r = 0; r < dp * (k + 1); ++r) {
    double s = 0.0, s2 = 0.0;
    for (const auto& y : batch.observations) {
      const double v = y.values(r % dp, r / dp);
      s += v;
      s2 += v * v;
    }
    const double count = static_cast<double>(batch.observations.size());
    const double mean = s / count;
    const double var = std::max(0.0, s2 / count - mean * mean);
    shift[d + r] = mean;
    scale[d + r] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  net.input_shift() = shift;
  net.input_scale() = scale;
}

}  // namespace

EnergyNetwork::DensityGrad closure_raw(const FilterPipeline& p, int k, const Mat& xs, const ObservationSequence& y) {
  if (k < 0 || k > p.time().K) throw ConfigError("closure: window " + std::to_string(k) + " out of range");
  check_sequence(p, k, y);
  return closure_batch(p, k, xs, replicate(y.prefix(k), xs.cols()));
}

double closure_mass(const FilterPipeline& p, int k, const ObservationSequence& y) {
  if (k < 0 || k > p.time().K) throw ConfigError("closure: window " + std::to_string(k) + " out of range");
  check_sequence(p, k, y);
  const Mat xs = grid_states(p.normalization_grid());
  const auto c = closure_batch(p, k, xs, replicate(y.prefix(k), xs.cols()), false);
  return trapezoid(p.normalization_grid(), std::span<const double>(c.value.data(), static_cast<std::size_t>(c.value.size())));
}

WindowNormalizer compute_normalizer(const FilterPipeline& p, const TrainingBatch& batch, int k) {
  const int dp = p.observation().d_prime;
  const Grid1D& g = p.normalization_grid();
  const Mat nodes = grid_states(g);
  const Mat ys = stacked_observations(batch, dp, k);
  const auto M = ys.cols();
  const Eigen::Index G = nodes.cols();
  constexpr Eigen::Index kChunk = 16;
  WindowNormalizer out;
  out.masses.resize(static_cast<std::size_t>(M));
  std::vector<double> row(static_cast<std::size_t>(G));
  for (Eigen::Index m0 = 0; m0 < M; m0 += kChunk) {
    const Eigen::Index count = std::min(kChunk, M - m0);
    Mat xs(1, count * G), yb(ys.rows(), count * G);
    for (Eigen::Index c = 0; c < count; ++c) {
      xs.middleCols(c * G, G) = nodes;
      yb.middleCols(c * G, G) = ys.col(m0 + c).replicate(1, G);
    }
    const auto v = closure_batch(p, k, xs, yb, false);
    for (Eigen::Index c = 0; c < count; ++c) {
      for (Eigen::Index i = 0; i < G; ++i) row[static_cast<std::size_t>(i)] = v.value[c * G + i];
      const double mass = trapezoid(g, row);
      if (!(mass > kMassEpsilon) || !std::isfinite(mass))
        throw DegenerateDensity("training normalization: closure mass " + std::to_string(mass) + " for sample " +
                                std::to_string(m0 + c) + " at " + index_str(k, 0));
      out.masses[static_cast<std::size_t>(m0 + c)] = mass;
    }
  }
  return out;
}

double regression_target(const FilterPipeline& p, int k, int n, const Vec& z_next, const ObservationSequence& y) {
  if (k < 0 || k >= p.time().K || n < 0 || n >= p.time().N)
    throw ConfigError("regression target: index " + index_str(k, n) + " has no successor");
  check_sequence(p, k, y);
  const Mat xs = z_next;
  EnergyNetwork::DensityGrad v;
  if (n == 0) {
    v = closure_raw(p, k, xs, y);
    // The target uses the same normalization as training and evaluation.
    const double c = closure_mass(p, k, y);
    if (!(c > kMassEpsilon)) throw DegenerateDensity("regression target: degenerate closure mass at " + index_str(k, 0));
    v.value /= c;
    v.grad_x /= c;
  } else {
    const EnergyNetwork& net = p.network({k, n});
    Mat in(net.input_dim(), 1);
    in.col(0).head(z_next.size()) = z_next;
    in.col(0).tail(net.input_dim() - z_next.size()) = y.prefix(k);
    v = net.density_with_grad(in);
  }
  const Coefficients c = f_coefficients(p.model(), z_next);
  return apply_G(c, v.value[0], v.grad_x.col(0), p.time().tau());
}

EnergyNetwork train_step_network(const FilterPipeline& p, const TrainingBatch& batch, int k, int n,
                                 StepReport* report) {
  const TimeGrid& t = p.time();
  const TrainConfig& cfg = p.config();
  if (k < 0 || k >= t.K || n < 0 || n >= t.N) throw ConfigError("train step: index " + index_str(k, n) + " invalid");
  const PathBatch& paths = batch.paths;
  if (paths.steps != t.N || paths.paths != static_cast<int>(batch.observations.size()))
    throw ConfigError("train step: batch does not match the time grid");
  const int M = paths.paths;
  const int d = paths.dim;
  const int dp = p.observation().d_prime;
  const double tau = t.tau();
  const auto norm_it = p.normalizers().find(k);
  if (n == 0 && (norm_it == p.normalizers().end() || norm_it->second.masses.size() != static_cast<std::size_t>(M)))
    throw ConfigError("train step: window " + std::to_string(k) + " has no normalizer");

  const Mat ys = stacked_observations(batch, dp, k);
  const Mat z_in = path_states(paths, t.N - n - 1);
  const Mat z_next = path_states(paths, t.N - n);

  Mat inputs(p.input_dim(k), M);
  inputs.topRows(d) = z_in;
  inputs.bottomRows(dp * (k + 1)) = ys;

  // Frozen targets G pi(k, n)(Z_{N-n}, Y_{0:k}).
  EnergyNetwork::DensityGrad prev;
  if (n == 0) {
    prev = closure_batch(p, k, z_next, ys);
    for (int m = 0; m < M; ++m) {
      const double c = norm_it->second.masses[static_cast<std::size_t>(m)];
      prev.value[m] /= c;
      prev.grad_x.col(m) /= c;
    }
  } else {
    Mat prev_in(p.input_dim(k), M);
    prev_in.topRows(d) = z_next;
    prev_in.bottomRows(dp * (k + 1)) = ys;
    prev = p.network({k, n}).density_with_grad(prev_in);
  }
  Eigen::RowVectorXd targets(M);
  for (int m = 0; m < M; ++m) {
    const Coefficients c = f_coefficients(p.model(), z_next.col(m));
    targets[m] = apply_G(c, prev.value[m], prev.grad_x.col(m), tau);
  }
  if (!targets.allFinite())
    throw TrainingDiverged("training targets for network " + index_str(k, n + 1) + " are not finite");

  const int n_val = static_cast<int>(std::floor(cfg.validation_fraction * M));
  const int n_train = M - n_val;
  const Mat val_in = inputs.rightCols(n_val);
  const Eigen::RowVectorXd val_t = targets.tail(n_val);

  EnergyNetwork net;
  const bool warm = cfg.warm_start && n >= 1 && p.has({k, n});
  if (warm) {
    net = p.network({k, n});
  } else {
    Rng rng = make_stream(p.seed(), stream_tag::network_init, network_stream_index(t, k, n + 1));
    net = EnergyNetwork::he_uniform(p.input_dim(k), d, cfg.width, cfg.depth, rng);
    standardize(net, batch, k, dp);
    // Start at the mean target level: exp(-f) ~ mean(t).
    const double level = std::max(targets.head(n_train).cwiseAbs().mean(), 1e-300);
    const double bias = -std::log(level) - net.energy(inputs.leftCols(n_train)).mean();
    net.biases().back()[0] += bias;
  }

  auto validation_loss = [&](const EnergyNetwork& candidate) {
    return n_val > 0 ? candidate.loss(val_in, val_t) : candidate.loss(inputs, targets);
  };

  StepReport rep;
  rep.index = {k, n + 1};
  rep.initial_validation_loss = validation_loss(net);
  rep.best_validation_loss = rep.initial_validation_loss;
  EnergyNetwork best = net;

  Rng shuffle = make_stream(p.seed(), stream_tag::shuffle, network_stream_index(t, k, n + 1));
  std::vector<int> order(static_cast<std::size_t>(n_train));
  std::iota(order.begin(), order.end(), 0);
  Optimizer opt(cfg, net);
  EnergyNetwork::Gradients grads;
  const int B = cfg.batch_size;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle);
    double epoch_loss = 0.0;
    int batches = 0;
    for (int start = 0; start < n_train; start += B) {
      const int count = std::min(B, n_train - start);
      Mat xb(inputs.rows(), count);
      Eigen::RowVectorXd tb(count);
      for (int i = 0; i < count; ++i) {
        const int m = order[static_cast<std::size_t>(start + i)];
        xb.col(i) = inputs.col(m);
        tb[i] = targets[m];
      }
      const double loss = net.loss_and_gradient(xb, tb, grads);
      if (!std::isfinite(loss) || !finite_gradients(grads)) {
        std::ostringstream msg;
        msg << "training diverged for network " << index_str(k, n + 1) << " at epoch " << epoch << ", batch "
            << batches << ": loss " << loss;
        throw TrainingDiverged(msg.str());
      }
      epoch_loss += loss * count;
      ++batches;
      opt.step(net, grads);
    }
    opt.decay();
    rep.epochs_run = epoch;
    rep.final_training_loss = epoch_loss / n_train;
    const double v = validation_loss(net);
    if (!std::isfinite(v))
      throw TrainingDiverged("training diverged for network " + index_str(k, n + 1) + " at epoch " +
                             std::to_string(epoch) + ": validation loss is not finite");
    if (v < rep.best_validation_loss) {
      rep.best_validation_loss = v;
      rep.best_epoch = epoch;
      best = net;
    }
  }
  if (report) *report = rep;
  return best;
}

TrainingBatch pipeline_training_batch(const FilterPipeline& p) {
  return sample_training_batch(p.model(), p.observation(), p.initial(), p.time(), p.config().M, p.seed(),
                               p.config().observation_substeps);
}

FilterPipeline train_pipeline(const DiffusionModel& model, const ObservationModel& obs, const InitialDensity& init,
                              const TimeGrid& time, const TrainConfig& cfg, const Grid1D& eval_grid,
                              std::uint64_t seed, const ProgressFn& progress, const FilterPipeline* resume,
                              const std::function<void(const FilterPipeline&)>& checkpoint) {
  FilterPipeline p(model, obs, init, time, cfg, eval_grid, seed);
  if (resume) {
    const TimeGrid& r = resume->time();
    const TrainConfig& rc = resume->config();
    if (r.K != time.K || r.N != time.N || r.T != time.T || resume->seed() != seed || rc.M != cfg.M ||
        rc.width != cfg.width || rc.depth != cfg.depth || !(resume->eval_grid() == eval_grid))
      throw ConfigError("resume: persisted pipeline was trained with a different configuration");
    for (const auto& [i, net] : resume->networks()) p.set_network(i, net);
    p.normalizers() = resume->normalizers();
    p.reports() = resume->reports();
  }
  if (p.complete()) return p;

  const TrainingBatch batch = pipeline_training_batch(p);
  for (int k = 0; k < time.K; ++k) {
    bool window_done = true;
    for (int n = 1; n <= time.N; ++n) window_done = window_done && p.has({k, n});
    if (window_done) continue;
    if (!p.normalizers().contains(k)) p.normalizers()[k] = compute_normalizer(p, batch, k);
    for (int n = 0; n < time.N; ++n) {
      if (p.has({k, n + 1})) continue;
      StepReport rep;
      EnergyNetwork net = train_step_network(p, batch, k, n, &rep);
      p.set_network({k, n + 1}, std::move(net));
      p.reports().push_back(rep);
      if (progress) progress(rep);
      if (checkpoint) checkpoint(p);
    }
  }
  return p;
}

double pipeline_eval(const FilterPipeline& p, int k, int n, const Vec& x, const ObservationSequence& y) {
  check_index(p, k, n);
  check_sequence(p, k, y);
  if (x.size() != p.model().dim) throw ConfigError("pipeline_eval: state dimension mismatch");
  if (n >= 1) return net_eval(p.network({k, n}), x, y.prefix(k)).first;
  if (k == 0) return p.initial().q0.density(x) * p.observation().likelihood(y.column(0), x);
  const Mat xs = x;
  const double v = closure_raw(p, k, xs, y).value[0];
  return v / closure_mass(p, k, y);
}

GridDensity pipeline_eval_grid(const FilterPipeline& p, TimeIndex i, const ObservationSequence& y, const Grid1D& grid) {
  check_index(p, i.k, i.n);
  check_sequence(p, i.k, y);
  const Mat xs = grid_states(grid);
  GridDensity out{grid, std::vector<double>(static_cast<std::size_t>(grid.points())), i};
  Eigen::RowVectorXd v;
  if (i.n >= 1) {
    const EnergyNetwork& net = p.network(i);
    Mat in(net.input_dim(), xs.cols());
    in.topRows(1) = xs;
    in.bottomRows(net.input_dim() - 1) = replicate(y.prefix(i.k), xs.cols());
    v = net.density(in);
  } else if (i.k == 0) {
    v.resize(xs.cols());
    const Vec y0 = y.column(0);
    for (Eigen::Index b = 0; b < xs.cols(); ++b) {
      const Vec x = xs.col(b);
      v[b] = p.initial().q0.density(x) * p.observation().likelihood(y0, x);
    }
  } else {
    v = closure_batch(p, i.k, xs, replicate(y.prefix(i.k), xs.cols()), false).value / closure_mass(p, i.k, y);
  }
  for (Eigen::Index b = 0; b < v.size(); ++b) out.values[static_cast<std::size_t>(b)] = v[b];
  return out;
}

namespace {

constexpr const char* kManifestFormat = "dsfilter-pipeline";
constexpr int kManifestVersion = 1;
constexpr const char* kNormalizerMagic = "dsfilter-normalizer";

json grid_json(const Grid1D& g) { return {{"lower", g.lower()}, {"upper", g.upper()}, {"points", g.points()}}; }

Grid1D grid_from_json(const json& j) {
  return Grid1D(j.at("lower").get<double>(), j.at("upper").get<double>(), j.at("points").get<int>());
}

json config_json(const TrainConfig& c) {
  json j = {{"M", c.M},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"learning_rate", c.learning_rate},
            {"lr_decay", c.lr_decay},
            {"optimizer", c.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"epsilon", c.epsilon},
            {"width", c.width},
            {"depth", c.depth},
            {"warm_start", c.warm_start},
            {"validation_fraction", c.validation_fraction},
            {"normalization_points", c.normalization_points},
            {"observation_substeps", c.observation_substeps}};
  j["training_density"] = c.training_density ? json{{"mean", c.training_density->first}, {"std", c.training_density->second}}
                                             : json(nullptr);
  return j;
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.M = j.at("M").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.lr_decay = j.at("lr_decay").get<double>();
  const std::string opt = j.at("optimizer").get<std::string>();
  if (opt != "adam" && opt != "sgd") throw ConfigError("unknown optimizer '" + opt + "'");
  c.optimizer = opt == "adam" ? OptimizerKind::adam : OptimizerKind::sgd;
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.epsilon = j.at("epsilon").get<double>();
  c.width = j.at("width").get<int>();
  c.depth = j.at("depth").get<int>();
  c.warm_start = j.at("warm_start").get<bool>();
  c.validation_fraction = j.at("validation_fraction").get<double>();
  c.normalization_points = j.at("normalization_points").get<int>();
  c.observation_substeps = j.at("observation_substeps").get<int>();
  const json& td = j.at("training_density");
  if (!td.is_null()) c.training_density = std::make_pair(td.at("mean").get<double>(), td.at("std").get<double>());
  return c;
}

std::string net_file(TimeIndex i) { return "net_" + std::to_string(i.k) + "_" + std::to_string(i.n) + ".txt"; }
std::string normalizer_file(int k) { return "normalizer_" + std::to_string(k) + ".txt"; }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  out.close();
  if (!out) throw IoError("cannot write " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string serialize_normalizer(const WindowNormalizer& w) {
  std::ostringstream os;
  os << kNormalizerMagic << " 1\ncount " << w.masses.size() << '\n';
  char buf[64];
  for (double m : w.masses) {
    std::snprintf(buf, sizeof buf, "%a\n", m);
    os << buf;
  }
  return os.str();
}

WindowNormalizer parse_normalizer(const std::string& text, const std::string& source) {
  std::istringstream is(text);
  std::string magic, tag;
  int version = 0;
  std::size_t count = 0;
  if (!(is >> magic >> version >> tag >> count) || magic != kNormalizerMagic || version != 1 || tag != "count")
    throw IoError("corrupted normalizer file " + source + ": bad header");
  WindowNormalizer w;
  w.masses.reserve(count);
  std::string tok;
  while (is >> tok) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0' || !(v > 0.0))
      throw IoError("corrupted normalizer file " + source + ": bad mass '" + tok + "'");
    w.masses.push_back(v);
  }
  if (w.masses.size() != count) throw IoError("corrupted normalizer file " + source + ": count mismatch");
  return w;
}

}  // namespace

void save_pipeline(const FilterPipeline& p, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  json manifest = {{"format", kManifestFormat},
                   {"format_version", kManifestVersion},
                   {"library_version", kVersion},
                   {"model", p.model().name},
                   {"T", p.time().T},
                   {"K", p.time().K},
                   {"N", p.time().N},
                   {"seed", p.seed()},
                   {"eval_grid", grid_json(p.eval_grid())},
                   {"normalization_grid", grid_json(p.normalization_grid())},
                   {"train", config_json(p.config())}};
  json nets = json::array();
  for (const auto& [i, net] : p.networks()) {
    write_text(dir / net_file(i), serialize_network(net));
    nets.push_back({{"k", i.k}, {"n", i.n}, {"file", net_file(i)}});
  }
  manifest["networks"] = nets;
  json norms = json::array();
  for (const auto& [k, w] : p.normalizers()) {
    write_text(dir / normalizer_file(k), serialize_normalizer(w));
    const auto [lo, hi] = std::minmax_element(w.masses.begin(), w.masses.end());
    const double mean = w.masses.empty() ? 0.0
                                         : std::accumulate(w.masses.begin(), w.masses.end(), 0.0) /
                                               static_cast<double>(w.masses.size());
    norms.push_back({{"k", k},
                     {"file", normalizer_file(k)},
                     {"count", w.masses.size()},
                     {"min", w.masses.empty() ? 0.0 : *lo},
                     {"mean", mean},
                     {"max", w.masses.empty() ? 0.0 : *hi}});
  }
  manifest["normalizers"] = norms;
  json reps = json::array();
  for (const StepReport& r : p.reports())
    reps.push_back({{"k", r.index.k},
                    {"n", r.index.n},
                    {"epochs_run", r.epochs_run},
                    {"best_epoch", r.best_epoch},
                    {"initial_validation_loss", r.initial_validation_loss},
                    {"best_validation_loss", r.best_validation_loss},
                    {"final_training_loss", r.final_training_loss}});
  manifest["reports"] = reps;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

FilterPipeline load_pipeline(const std::filesystem::path& dir, const BuiltinModel* model) {
  const auto manifest_path = dir / "manifest.json";
  json m;
  try {
    m = json::parse(read_text(manifest_path));
  } catch (const json::exception& e) {
    throw IoError("corrupted manifest " + manifest_path.string() + ": " + e.what());
  }
  try {
    if (m.at("format").get<std::string>() != kManifestFormat || m.at("format_version").get<int>() != kManifestVersion)
      throw IoError("unsupported pipeline manifest " + manifest_path.string());
    const BuiltinModel bm = model ? *model : builtin_by_name(m.at("model").get<std::string>());
    const TimeGrid time(m.at("T").get<double>(), m.at("K").get<int>(), m.at("N").get<int>());
    FilterPipeline p(bm.diffusion, bm.observation, bm.initial, time, config_from_json(m.at("train")),
                     grid_from_json(m.at("eval_grid")), m.at("seed").get<std::uint64_t>());
    for (const auto& e : m.at("networks")) {
      const TimeIndex i{e.at("k").get<int>(), e.at("n").get<int>()};
      const auto path = dir / e.at("file").get<std::string>();
      EnergyNetwork net;
      try {
        net = deserialize_network(read_text(path), path.string());
      } catch (const IoError& err) {
        throw IoError(std::string(err.what()) + " (network " + index_str(i.k, i.n) + ")");
      }
      try {
        p.set_network(i, std::move(net));
      } catch (const ConfigError& err) {
        throw IoError("network file " + path.string() + " for " + index_str(i.k, i.n) + ": " + err.what());
      }
    }
    for (const auto& e : m.at("normalizers")) {
      const int k = e.at("k").get<int>();
      const auto path = dir / e.at("file").get<std::string>();
      p.normalizers()[k] = parse_normalizer(read_text(path), path.string());
    }
    for (const auto& e : m.at("reports")) {
      StepReport r;
      r.index = {e.at("k").get<int>(), e.at("n").get<int>()};
      r.epochs_run = e.at("epochs_run").get<int>();
      r.best_epoch = e.at("best_epoch").get<int>();
      r.initial_validation_loss = e.at("initial_validation_loss").get<double>();
      r.best_validation_loss = e.at("best_validation_loss").get<double>();
      r.final_training_loss = e.at("final_training_loss").get<double>();
      p.reports().push_back(r);
    }
    return p;
  } catch (const json::exception& e) {
    throw IoError("corrupted manifest " + manifest_path.string() + ": " + e.what());
  }
}

}  // namespace dsf
