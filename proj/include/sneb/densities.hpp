#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "sneb/errors.hpp"
#include "sneb/grid.hpp"

namespace sneb {

inline double log_normal_density(double y, double mu, double sigma) {
  if (!(sigma > 0.0))
    throw Error(ErrorKind::InvalidArgument, "normal_density: sigma must be positive");
  const double z = (y - mu) / sigma;
  return -0.5 * std::log(2.0 * std::numbers::pi) - std::log(sigma) - 0.5 * z * z;
}

inline double normal_density(double y, double mu, double sigma) {
  return std::exp(log_normal_density(y, mu, sigma));
}

// Laplace spike psi(x | lambda0) = (lambda0 / 2) exp(-lambda0 |x|).
inline double laplace_spike_density(double x, double lambda0) {
  if (!(lambda0 > 0.0))
    throw Error(ErrorKind::InvalidArgument, "laplace_spike_density: lambda0 must be positive");
  return 0.5 * lambda0 * std::exp(-lambda0 * std::abs(x));
}

// Laplace spike discretized onto the grid and renormalized to a probability
// vector. The largest exponent is 0 (the grid contains 0), so the ratios never
// overflow; for very large lambda0 this degenerates to the zero-atom indicator.
inline std::vector<double> grid_spike_weights(const Grid& grid, double lambda0) {
  if (!(lambda0 > 0.0))
    throw Error(ErrorKind::InvalidArgument, "grid_spike_weights: lambda0 must be positive");
  std::vector<double> w(grid.size());
  double total = 0.0;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    w[j] = std::exp(-lambda0 * std::abs(grid[j]));
    total += w[j];
  }
  for (double& v : w) v /= total;
  return w;
}

// Mean |tau| under the renormalized spike; shows up in its lambda0 derivative.
inline double spike_abs_moment(const Grid& grid, std::span<const double> spike) {
  double acc = 0.0;
  for (std::size_t j = 0; j < grid.size(); ++j) acc += spike[j] * std::abs(grid[j]);
  return acc;
}

}  // namespace sneb
