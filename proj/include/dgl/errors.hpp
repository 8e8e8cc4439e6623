#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dgl {

// Dimension mismatches and bad parameters are reported as std::invalid_argument.
// Everything below is a numerical or construction failure raised at runtime.

class SingularKernelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DivergedSamplerError : public std::runtime_error {
 public:
  DivergedSamplerError(std::size_t step, double t)
      : std::runtime_error("reverse sampler produced a non-finite score at step " +
                           std::to_string(step) + " (t=" + std::to_string(t) + ")"),
        step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class ConstructionViolatedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConstructionInfeasibleError : public std::runtime_error {
 public:
  ConstructionInfeasibleError(const std::string& what, std::vector<double> point, double t)
      : std::runtime_error(what), point_(std::move(point)), t_(t) {}
  const std::vector<double>& point() const noexcept { return point_; }
  double time() const noexcept { return t_; }

 private:
  std::vector<double> point_;
  double t_;
};

class UnsupportedArchitectureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DivergedLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InsufficientCoverageError : public std::runtime_error {
 public:
  InsufficientCoverageError(const std::string& what, double mass)
      : std::runtime_error(what), mass_(mass) {}
  double mass() const noexcept { return mass_; }

 private:
  double mass_;
};

// Raised by the driver for malformed configuration (maps to exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dgl
