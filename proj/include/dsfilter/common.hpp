#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace dsf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr const char* kVersion = "0.1.0";

// Error hierarchy. The CLI maps each family onto an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class CoefficientError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class SimulationDiverged : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class DegenerateDensity : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class DegenerateLikelihood : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class TrainingDiverged : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Non-fatal diagnostics (scheme instability, boundary mass, large steps).
using WarningHandler = std::function<void(const std::string&)>;
void set_warning_handler(WarningHandler handler);
void warn(const std::string& message);

// Index (k, n) into the filtering recursion: window k, fine step n.
struct TimeIndex {
  int k = 0;
  int n = 0;
  auto operator<=>(const TimeIndex&) const = default;
};

// Deterministic stream derivation: the generator for (seed, tag, index) does
// not depend on how many other streams were drawn or in which order.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index);

using Rng = std::mt19937_64;

inline Rng make_stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  return Rng(stream_seed(seed, tag, index));
}

namespace stream_tag {
inline constexpr std::uint64_t em_paths = 1;
inline constexpr std::uint64_t observations = 2;
inline constexpr std::uint64_t network_init = 3;
inline constexpr std::uint64_t shuffle = 4;
inline constexpr std::uint64_t particles = 5;
inline constexpr std::uint64_t resampling = 6;
}  // namespace stream_tag

// Worker count from DSF_WORKERS (default 1).
int worker_count();

// Runs body(i) for i in [0, count). Each index must write only its own output
// slot so results are independent of scheduling.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace dsf
