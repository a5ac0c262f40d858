#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dsfilter/common.hpp"

namespace dsf {

// Fully connected scalar energy f(x, y_{0:k}) with `depth` rectifier hidden
// layers of `width` units and a linear output; the modelled density is
// exp(-f). Inputs are standardized by a fixed affine map stored with the
// network. The first `state_dim` inputs are the state x, the rest the
// observation prefix.
class EnergyNetwork {
 public:
  // Energies are clamped to this range before exponentiation so the density
  // stays finite and strictly positive; the gradient vanishes outside.
  static constexpr double kEnergyLimit = 700.0;

  EnergyNetwork() = default;
  // Zero weights and biases, identity standardization.
  EnergyNetwork(int input_dim, int state_dim, int width, int depth);

  // He-style uniform fan-in initialization, zero biases.
  static EnergyNetwork he_uniform(int input_dim, int state_dim, int width, int depth, Rng& rng);

  int input_dim() const { return input_dim_; }
  int state_dim() const { return state_dim_; }
  int width() const { return width_; }
  int depth() const { return depth_; }
  std::size_t parameter_count() const;

  // Layers 0..depth; layer `depth` maps width -> 1.
  std::vector<Mat>& weights() { return weights_; }
  const std::vector<Mat>& weights() const { return weights_; }
  std::vector<Vec>& biases() { return biases_; }
  const std::vector<Vec>& biases() const { return biases_; }
  Vec& input_shift() { return shift_; }
  const Vec& input_shift() const { return shift_; }
  Vec& input_scale() { return scale_; }
  const Vec& input_scale() const { return scale_; }

  // inputs: input_dim x B
  Eigen::RowVectorXd energy(const Mat& inputs) const;
  Eigen::RowVectorXd density(const Mat& inputs) const;

  struct DensityGrad {
    Eigen::RowVectorXd value;  // exp(-f), 1 x B
    Mat grad_x;                // d exp(-f) / dx, state_dim x B
  };
  DensityGrad density_with_grad(const Mat& inputs) const;

  // Parameter gradient of the loss mean_b (exp(-f_b) - target_b)^2; returns the loss.
  struct Gradients {
    std::vector<Mat> weights;
    std::vector<Vec> biases;
  };
  double loss_and_gradient(const Mat& inputs, const Eigen::RowVectorXd& targets, Gradients& grads) const;
  double loss(const Mat& inputs, const Eigen::RowVectorXd& targets) const;

  bool operator==(const EnergyNetwork& other) const;

 private:
  struct Activations {
    std::vector<Mat> pre;   // Z_l, l = 1..depth
    std::vector<Mat> post;  // A_l, l = 0..depth
    Eigen::RowVectorXd energy;
  };
  Activations forward(const Mat& inputs) const;
  // Backpropagates d loss / d f (1 x B) to the input layer; optionally
  // accumulates parameter gradients. Returns d loss / d (standardized input).
  Mat backward(const Activations& act, const Eigen::RowVectorXd& d_energy, Gradients* grads) const;

  int input_dim_ = 0;
  int state_dim_ = 0;
  int width_ = 0;
  int depth_ = 0;
  Vec shift_;
  Vec scale_;
  std::vector<Mat> weights_;
  std::vector<Vec> biases_;
};

// Evaluation at a single point: (density, d density / dx).
std::pair<double, Vec> net_eval(const EnergyNetwork& net, const Vec& x, const Vec& y_prefix);

// Versioned text format with hexadecimal floats (exact round trip) and a
// trailing FNV-1a checksum of the payload.
std::string serialize_network(const EnergyNetwork& net);
// Throws IoError mentioning `source` on any malformed or corrupted input.
EnergyNetwork deserialize_network(const std::string& text, const std::string& source);

}  // namespace dsf
