#pragma once

#include <complex>
#include <stdexcept>
#include <string>

namespace adn {

using cplx = std::complex<double>;

/// Input file or config could not be parsed. Carries line context where available.
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Network graph violates the radial-feeder assumptions.
struct TopologyError : std::runtime_error {
  explicit TopologyError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Scenario or controller configuration is inconsistent.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A numerical routine left its domain of validity (singular linearization,
/// divergent power flow, rank-deficient estimator, ...).
struct NumericsError : std::runtime_error {
  explicit NumericsError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Optimization backend failure.
struct SolverError : std::runtime_error {
  explicit SolverError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace adn
