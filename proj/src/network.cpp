#include "dsfilter/network.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

namespace dsf {

namespace {

constexpr const char* kMagic = "dsfilter-energy-network";
constexpr int kFormatVersion = 1;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void put_hex(std::ostringstream& os, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  os << buf;
}

}  // namespace

EnergyNetwork::EnergyNetwork(int input_dim, int state_dim, int width, int depth)
    : input_dim_(input_dim), state_dim_(state_dim), width_(width), depth_(depth) {
  if (input_dim < 1 || state_dim < 1 || state_dim > input_dim)
    throw ConfigError("energy network: invalid input/state dimensions");
  if (width < 1 || depth < 1) throw ConfigError("energy network: width and depth must be positive");
  shift_ = Vec::Zero(input_dim);
  scale_ = Vec::Ones(input_dim);
  int fan_in = input_dim;
  for (int l = 0; l < depth; ++l) {
    weights_.push_back(Mat::Zero(width, fan_in));
    biases_.push_back(Vec::Zero(width));
    fan_in = width;
  }
  weights_.push_back(Mat::Zero(1, width));
  biases_.push_back(Vec::Zero(1));
}

EnergyNetwork EnergyNetwork::he_uniform(int input_dim, int state_dim, int width, int depth, Rng& rng) {
  EnergyNetwork net(input_dim, state_dim, width, depth);
  for (auto& w : net.weights_) {
    const double bound = std::sqrt(6.0 / static_cast<double>(w.cols()));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = u(rng);
  }
  return net;
}

std::size_t EnergyNetwork::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l)
    n += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
  return n;
}

EnergyNetwork::Activations EnergyNetwork::forward(const Mat& inputs) const {
  if (inputs.rows() != input_dim_)
    throw ConfigError("energy network: input has " + std::to_string(inputs.rows()) + " rows, expected " +
                      std::to_string(input_dim_));
  Activations act;
  act.post.reserve(static_cast<std::size_t>(depth_) + 1);
  act.pre.reserve(static_cast<std::size_t>(depth_));
  act.post.push_back((inputs.colwise() - shift_).array().colwise() / scale_.array());
  for (int l = 0; l < depth_; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    Mat z = weights_[ul] * act.post.back();
    z.colwise() += biases_[ul];
    act.post.push_back(z.cwiseMax(0.0));
    act.pre.push_back(std::move(z));
  }
  act.energy = (weights_.back() * act.post.back()).array() + biases_.back()[0];
  return act;
}

Mat EnergyNetwork::backward(const Activations& act, const Eigen::RowVectorXd& d_energy, Gradients* grads) const {
  const auto L = static_cast<std::size_t>(depth_);
  if (grads) {
    grads->weights.resize(L + 1);
    grads->biases.resize(L + 1);
    grads->weights[L] = d_energy * act.post[L].transpose();
    grads->biases[L] = Vec::Constant(1, d_energy.sum());
  }
  // Rectifier subgradient at 0 is 0.
  Mat delta = (weights_[L].transpose() * d_energy).cwiseProduct((act.pre[L - 1].array() > 0.0).cast<double>().matrix());
  for (std::size_t l = L; l-- > 0;) {
    if (grads) {
      grads->weights[l] = delta * act.post[l].transpose();
      grads->biases[l] = delta.rowwise().sum();
    }
    Mat back = weights_[l].transpose() * delta;
    if (l == 0) return back;
    delta = back.cwiseProduct((act.pre[l - 1].array() > 0.0).cast<double>().matrix());
  }
  return {};
}

Eigen::RowVectorXd EnergyNetwork::energy(const Mat& inputs) const { return forward(inputs).energy; }

Eigen::RowVectorXd EnergyNetwork::density(const Mat& inputs) const {
  return (-energy(inputs).array().cwiseMax(-kEnergyLimit).cwiseMin(kEnergyLimit)).exp();
}

EnergyNetwork::DensityGrad EnergyNetwork::density_with_grad(const Mat& inputs) const {
  const Activations act = forward(inputs);
  DensityGrad out;
  const auto clamped = act.energy.array().cwiseMax(-kEnergyLimit).cwiseMin(kEnergyLimit);
  out.value = (-clamped).exp();
  const Eigen::RowVectorXd active = (act.energy.array().abs() < kEnergyLimit).cast<double>();
  const Mat d_input = backward(act, active, nullptr);
  // d exp(-f)/dx = -exp(-f) df/du / scale
  out.grad_x = d_input.topRows(state_dim_).array().colwise() / scale_.head(state_dim_).array();
  out.grad_x.array().rowwise() *= -out.value.array();
  return out;
}

double EnergyNetwork::loss_and_gradient(const Mat& inputs, const Eigen::RowVectorXd& targets, Gradients& grads) const {
  const Activations act = forward(inputs);
  const auto B = static_cast<double>(inputs.cols());
  const auto clamped = act.energy.array().cwiseMax(-kEnergyLimit).cwiseMin(kEnergyLimit);
  const Eigen::ArrayXXd value = (-clamped).exp();
  const Eigen::ArrayXXd residual = value - targets.array();
  const Eigen::ArrayXXd active = (act.energy.array().abs() < kEnergyLimit).cast<double>();
  const Eigen::RowVectorXd d_energy = (-(2.0 / B) * residual * value * active).matrix();
  backward(act, d_energy, &grads);
  return residual.square().sum() / B;
}

double EnergyNetwork::loss(const Mat& inputs, const Eigen::RowVectorXd& targets) const {
  return (density(inputs) - targets).squaredNorm() / static_cast<double>(inputs.cols());
}

bool EnergyNetwork::operator==(const EnergyNetwork& o) const {
  if (input_dim_ != o.input_dim_ || state_dim_ != o.state_dim_ || width_ != o.width_ || depth_ != o.depth_)
    return false;
  if (shift_ != o.shift_ || scale_ != o.scale_) return false;
  for (std::size_t l = 0; l < weights_.size(); ++l)
    if (weights_[l] != o.weights_[l] || biases_[l] != o.biases_[l]) return false;
  return true;
}

std::pair<double, Vec> net_eval(const EnergyNetwork& net, const Vec& x, const Vec& y_prefix) {
  if (x.size() != net.state_dim() || x.size() + y_prefix.size() != net.input_dim())
    throw ConfigError("net_eval: input dimension mismatch (x " + std::to_string(x.size()) + ", y " +
                      std::to_string(y_prefix.size()) + ", network " + std::to_string(net.input_dim()) + ")");
  Mat in(net.input_dim(), 1);
  in.col(0).head(x.size()) = x;
  in.col(0).tail(y_prefix.size()) = y_prefix;
  const auto r = net.density_with_grad(in);
  return {r.value[0], r.grad_x.col(0)};
}

std::string serialize_network(const EnergyNetwork& net) {
  std::ostringstream os;
  os << kMagic << ' ' << kFormatVersion << '\n';
  os << "input_dim " << net.input_dim() << '\n';
  os << "state_dim " << net.state_dim() << '\n';
  os << "width " << net.width() << '\n';
  os << "depth " << net.depth() << '\n';
  auto put_vec = [&](const char* tag, const Vec& v) {
    os << tag;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      os << ' ';
      put_hex(os, v[i]);
    }
    os << '\n';
  };
  put_vec("shift", net.input_shift());
  put_vec("scale", net.input_scale());
  for (std::size_t l = 0; l < net.weights().size(); ++l) {
    const Mat& w = net.weights()[l];
    os << "layer " << l << ' ' << w.rows() << ' ' << w.cols() << '\n';
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        if (j) os << ' ';
        put_hex(os, w(i, j));
      }
      os << '\n';
    }
    put_vec("bias", net.biases()[l]);
  }
  std::string body = os.str();
  char sum[32];
  std::snprintf(sum, sizeof sum, "%016" PRIx64, fnv1a(body));
  return body + "checksum " + sum + "\n";
}

EnergyNetwork deserialize_network(const std::string& text, const std::string& source) {
  auto fail = [&](const std::string& why) -> IoError { return IoError("corrupted network file " + source + ": " + why); };

  const auto pos = text.rfind("checksum ");
  if (pos == std::string::npos) throw fail("missing checksum");
  const std::string body = text.substr(0, pos);
  unsigned long long stored = 0;
  if (std::sscanf(text.c_str() + pos, "checksum %llx", &stored) != 1) throw fail("unreadable checksum");
  if (stored != fnv1a(body)) throw fail("checksum mismatch");

  std::istringstream is(body);
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != kMagic) throw fail("bad header");
  if (version != kFormatVersion) throw fail("unsupported format version " + std::to_string(version));

  auto expect_int = [&](const char* tag) {
    std::string t;
    long v = 0;
    if (!(is >> t >> v) || t != tag) throw fail(std::string("expected ") + tag);
    return static_cast<int>(v);
  };
  auto read_double = [&]() {
    std::string tok;
    if (!(is >> tok)) throw fail("truncated numeric data");
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw fail("bad number '" + tok + "'");
    return v;
  };
  auto read_vec = [&](const char* tag, Eigen::Index n) {
    std::string t;
    if (!(is >> t) || t != tag) throw fail(std::string("expected ") + tag);
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = read_double();
    return v;
  };

  const int input_dim = expect_int("input_dim");
  const int state_dim = expect_int("state_dim");
  const int width = expect_int("width");
  const int depth = expect_int("depth");
  EnergyNetwork net;
  try {
    net = EnergyNetwork(input_dim, state_dim, width, depth);
  } catch (const ConfigError& e) {
    throw fail(e.what());
  }
  net.input_shift() = read_vec("shift", input_dim);
  net.input_scale() = read_vec("scale", input_dim);
  for (std::size_t l = 0; l < net.weights().size(); ++l) {
    std::string t;
    std::size_t index = 0;
    Eigen::Index rows = 0, cols = 0;
    if (!(is >> t >> index >> rows >> cols) || t != "layer" || index != l) throw fail("expected layer header");
    Mat& w = net.weights()[l];
    if (rows != w.rows() || cols != w.cols()) throw fail("layer shape mismatch");
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) w(i, j) = read_double();
    net.biases()[l] = read_vec("bias", rows);
  }
  return net;
}

}  // namespace dsf
