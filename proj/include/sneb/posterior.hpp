#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "sneb/dataset.hpp"
#include "sneb/densities.hpp"
#include "sneb/errors.hpp"
#include "sneb/grid.hpp"
#include "sneb/null_region.hpp"
#include "sneb/priors.hpp"

namespace sneb {

// Discrete posterior of mu over the grid for one observation, plus the
// plug-in marginal density m^(y | sigma).
struct PosteriorTable {
  Grid grid;
  std::vector<double> mass;
  double marginal = 0.0;
};

namespace detail {

inline PosteriorTable posterior_from_weights(const Grid& grid, std::span<const double> weights,
                                             double y, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw Error(ErrorKind::InvalidArgument, "posterior_table: sigma must be positive");
  if (!std::isfinite(y))
    throw Error(ErrorKind::InvalidArgument, "posterior_table: y must be finite");
  PosteriorTable t;
  t.grid = grid;
  t.mass.resize(grid.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < grid.size(); ++j) {
    t.mass[j] = log_normal_density(y, grid[j], sigma);
    mx = std::max(mx, t.mass[j]);
  }
  double s = 0.0;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    t.mass[j] = std::exp(t.mass[j] - mx) * weights[j];
    s += t.mass[j];
  }
  if (!(s > 0.0))
    throw Error(ErrorKind::NumericalUnderflow, "posterior_table: all posterior terms underflow");
  t.marginal = s * std::exp(mx);
  for (double& v : t.mass) v /= s;
  return t;
}

}  // namespace detail

inline PosteriorTable posterior_table(const DnpPrior& prior, double y, double sigma) {
  prior.validate();
  return detail::posterior_from_weights(prior.grid, prior.pi, y, sigma);
}

inline PosteriorTable posterior_table(const SnpPrior& prior, double y, double sigma) {
  prior.validate();
  return detail::posterior_from_weights(prior.grid, prior.mixture_weights(), y, sigma);
}

inline double posterior_mean(const PosteriorTable& table) {
  double acc = 0.0;
  for (std::size_t j = 0; j < table.grid.size(); ++j) acc += table.grid[j] * table.mass[j];
  return acc;
}

// Grid point with maximal mass; ties prefer the smaller |tau|, then the
// smaller tau.
inline double posterior_mode(const PosteriorTable& table) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < table.grid.size(); ++j) {
    const double tb = table.grid[best];
    const double tj = table.grid[j];
    if (table.mass[j] > table.mass[best] ||
        (table.mass[j] == table.mass[best] &&
         (std::abs(tj) < std::abs(tb) || (std::abs(tj) == std::abs(tb) && tj < tb))))
      best = j;
  }
  return table.grid[best];
}

inline double null_probability(const DnpPrior& prior, const PosteriorTable& table) {
  (void)prior;
  return table.mass[table.grid.zero_index];
}

inline double null_probability(const PosteriorTable& table, const NullRegion& region) {
  double acc = 0.0;
  for (std::size_t j = 0; j < table.grid.size(); ++j)
    if (table.grid[j] >= region.delta_l && table.grid[j] <= region.delta_r) acc += table.mass[j];
  return acc;
}

inline double sparsity_estimate(const DnpPrior& prior, const Dataset& data) {
  data.validate();
  if (data.size() == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    acc += null_probability(prior, posterior_table(prior, data.y[i], data.sigma[i]));
  return acc / double(data.size());
}

inline double sparsity_estimate(const SnpPrior& prior, const Dataset& data, bool weighted = true) {
  data.validate();
  if (data.size() == 0) return 0.0;
  const NullRegion region = null_region(prior, weighted);
  double acc = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    acc += null_probability(posterior_table(prior, data.y[i], data.sigma[i]), region);
  return acc / double(data.size());
}

struct CredibleInterval {
  double lower = 0.0;
  double upper = 0.0;
  double nominal_level = 0.0;
};

// Equal-tailed interval from conservative discrete quantiles: each endpoint is
// the smallest grid point whose cumulative mass reaches its tail target.
inline CredibleInterval credible_interval(const PosteriorTable& table, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw Error(ErrorKind::InvalidArgument, "credible_interval: alpha must lie in (0, 1)");
  const std::size_t m = table.grid.size();
  CredibleInterval ci;
  ci.nominal_level = 1.0 - alpha;
  ci.lower = table.grid[m - 1];
  ci.upper = table.grid[m - 1];
  double cum = 0.0;
  bool lower_set = false, upper_set = false;
  for (std::size_t j = 0; j < m; ++j) {
    cum += table.mass[j];
    if (!lower_set && cum >= 0.5 * alpha) {
      ci.lower = table.grid[j];
      lower_set = true;
    }
    if (!upper_set && cum >= 1.0 - 0.5 * alpha) {
      ci.upper = table.grid[j];
      upper_set = true;
      break;
    }
  }
  return ci;
}

}  // namespace sneb
