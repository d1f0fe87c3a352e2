#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "sneb/priors.hpp"

namespace sneb {

// Spike-dominated interval around 0, delimited by the intersections of the
// two mixture components nearest to 0 on each side.
struct NullRegion {
  double delta_l = -std::numeric_limits<double>::infinity();
  double delta_r = std::numeric_limits<double>::infinity();
};

// Compares the discretized components (weighted, omega psi~_j vs
// (1 - omega) gamma_j, by default) and walks outward from 0 to the first sign
// change; the crossing is located by linear interpolation and snapped to the
// nearest grid point.
inline NullRegion null_region(const SnpPrior& prior, bool weighted = true) {
  prior.validate();
  const auto spike = prior.spike_weights();
  const Grid& grid = prior.grid;
  const std::size_t m = grid.size();
  std::vector<double> diff(m);
  for (std::size_t j = 0; j < m; ++j) {
    diff[j] = weighted ? prior.omega * spike[j] - (1.0 - prior.omega) * prior.gamma_pi[j]
                       : spike[j] - prior.gamma_pi[j];
  }

  const std::size_t z = grid.zero_index;
  NullRegion region;
  if (diff[z] <= 0.0) {
    // the slab already dominates at 0; only the zero atom is spike territory
    region.delta_l = 0.0;
    region.delta_r = 0.0;
    return region;
  }
  const auto snap_crossing = [&](std::size_t before, std::size_t after) {
    const double x = grid[before] +
                     (grid[after] - grid[before]) * diff[before] / (diff[before] - diff[after]);
    return (std::abs(x - grid[before]) <= std::abs(x - grid[after])) ? grid[before] : grid[after];
  };
  for (std::size_t j = z + 1; j < m; ++j) {
    if (diff[j] <= 0.0) {
      region.delta_r = snap_crossing(j - 1, j);
      break;
    }
  }
  for (std::size_t j = z; j-- > 0;) {
    if (diff[j] <= 0.0) {
      region.delta_l = snap_crossing(j + 1, j);
      break;
    }
  }
  return region;
}

}  // namespace sneb
