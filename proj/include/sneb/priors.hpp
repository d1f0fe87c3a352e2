#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sneb/densities.hpp"
#include "sneb/errors.hpp"
#include "sneb/grid.hpp"

namespace sneb {

inline void check_probability_vector(std::span<const double> v, std::size_t expected_size,
                                     const char* what, double tol = 1e-10) {
  if (v.size() != expected_size)
    throw Error(ErrorKind::InvalidArgument, std::string(what) + ": wrong length");
  double total = 0.0;
  for (std::size_t j = 0; j < v.size(); ++j) {
    if (!(v[j] >= 0.0) || !std::isfinite(v[j]))
      throw Error(ErrorKind::InvalidArgument, std::string(what) + ": negative or non-finite entry",
                  std::ptrdiff_t(j));
    total += v[j];
  }
  if (std::abs(total - 1.0) > tol)
    throw Error(ErrorKind::InvalidArgument, std::string(what) + ": does not sum to 1");
}

// Dirac-mass + nonparametric mixture: weights pi over the grid atoms, the
// zero atom carrying the sparsity.
struct DnpPrior {
  Grid grid;
  std::vector<double> pi;

  double sparsity() const { return pi[grid.zero_index]; }

  void validate() const { check_probability_vector(pi, grid.size(), "DnpPrior.pi"); }
};

// Laplace spike + nonparametric mixture; gamma_pi is the discretized slab.
struct SnpPrior {
  Grid grid;
  double omega = 0.0;
  double lambda0 = 1.0;
  std::vector<double> gamma_pi;

  std::vector<double> spike_weights() const { return grid_spike_weights(grid, lambda0); }

  // theta_j = omega psi~(tau_j | lambda0) + (1 - omega) gamma_j
  std::vector<double> mixture_weights() const {
    std::vector<double> theta = spike_weights();
    for (std::size_t j = 0; j < theta.size(); ++j)
      theta[j] = omega * theta[j] + (1.0 - omega) * gamma_pi[j];
    return theta;
  }

  void validate() const {
    check_probability_vector(gamma_pi, grid.size(), "SnpPrior.gamma_pi");
    if (!(omega >= 0.0 && omega <= 1.0))
      throw Error(ErrorKind::InvalidArgument, "SnpPrior: omega must lie in [0, 1]");
    if (!(lambda0 > 0.0) || !std::isfinite(lambda0))
      throw Error(ErrorKind::InvalidArgument, "SnpPrior: lambda0 must be positive");
  }
};

}  // namespace sneb
