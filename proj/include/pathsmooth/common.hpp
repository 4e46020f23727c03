#ifndef PATHSMOOTH_COMMON_HPP_
#define PATHSMOOTH_COMMON_HPP_

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pathsmooth {

inline constexpr std::string_view kVersion = "0.1.0";

// Read-only view of one state vector (length = state_dim).
using StateRef = std::span<const double>;
// Write target for samplers.
using StateOut = std::span<double>;

// Invalid parameters, malformed config files, unusable experiment specs.
// CLI maps this to exit code 1.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Failures while an algorithm is running. CLI maps this to exit code 2.
struct AlgorithmError : std::runtime_error {
  explicit AlgorithmError(const std::string& msg) : std::runtime_error(msg) {}
};

// All particle weights underflowed to zero at some time step.
struct FilterCollapseError : AlgorithmError {
  int time_index;
  explicit FilterCollapseError(int t)
      : AlgorithmError("particle filter collapsed: all weights are zero at t=" +
                       std::to_string(t)),
        time_index(t) {}
};

// A quadrature grid failed to cover the essential support of a density.
struct GridCoverageError : AlgorithmError {
  int time_index;  // -1 when not tied to a time step
  explicit GridCoverageError(const std::string& msg, int t = -1)
      : AlgorithmError(msg), time_index(t) {}
};

// A rejection-sampling envelope was exceeded (claimed bound is not a bound).
struct EnvelopeViolationError : AlgorithmError {
  explicit EnvelopeViolationError(const std::string& msg) : AlgorithmError(msg) {}
};

// A caller-supplied precondition was violated at runtime.
struct ContractError : AlgorithmError {
  explicit ContractError(const std::string& msg) : AlgorithmError(msg) {}
};

struct InsufficientSampleError : AlgorithmError {
  explicit InsufficientSampleError(const std::string& msg) : AlgorithmError(msg) {}
};

// log(sum_i exp(v_i)) with max subtraction; -inf for an all -inf input.
inline double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

}  // namespace pathsmooth

#endif  // PATHSMOOTH_COMMON_HPP_
