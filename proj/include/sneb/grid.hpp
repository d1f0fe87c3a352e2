#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "sneb/errors.hpp"

namespace sneb {

// Equally spaced support points tau_1 < ... < tau_M with 0 imposed as one of
// them. Shared by every prior and posterior in the library.
struct Grid {
  std::vector<double> points;
  double spacing = 0.0;
  std::size_t zero_index = 0;

  std::size_t size() const noexcept { return points.size(); }
  double operator[](std::size_t j) const { return points[j]; }
  double min() const { return points.front(); }
  double max() const { return points.back(); }

  // Validating constructor for hand-built grids.
  static Grid from_points(std::vector<double> pts) {
    if (pts.size() < 2)
      throw Error(ErrorKind::InvalidArgument, "grid needs at least 2 points");
    const double h = pts[1] - pts[0];
    if (!(h > 0.0) || !std::isfinite(h))
      throw Error(ErrorKind::InvalidArgument, "grid points must be strictly increasing");
    std::size_t zero = pts.size();
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (!std::isfinite(pts[j]))
        throw Error(ErrorKind::InvalidArgument, "grid points must be finite");
      if (j > 0) {
        const double d = pts[j] - pts[j - 1];
        const double tol = 1e-12 * std::max({1.0, std::abs(h), std::abs(pts[j])});
        if (std::abs(d - h) > tol)
          throw Error(ErrorKind::InvalidArgument, "grid spacing is not constant");
      }
      if (pts[j] == 0.0) zero = j;
    }
    if (zero == pts.size())
      throw Error(ErrorKind::InvalidArgument, "grid must contain the value 0 exactly");
    Grid g;
    g.points = std::move(pts);
    g.spacing = h;
    g.zero_index = zero;
    return g;
  }
};

inline double sample_sd(std::span<const double> y) {
  if (y.size() < 2) return 0.0;
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / double(y.size());
  double ss = 0.0;
  for (double v : y) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / double(y.size() - 1));
}

// Equal-length mesh of m points covering [min(y) - 2 sd(y), max(y) + 2 sd(y)],
// shifted minimally so the point nearest 0 is exactly 0. The span is padded by
// one pre-shift spacing so the shift cannot lose coverage, and widened to
// touch 0 when the data range excludes it.
inline Grid build_grid(std::span<const double> y, std::size_t m) {
  if (y.empty())
    throw Error(ErrorKind::InvalidArgument, "build_grid: empty data");
  if (m < 3)
    throw Error(ErrorKind::InvalidArgument, "build_grid: need at least 3 grid points");
  for (std::size_t i = 0; i < y.size(); ++i)
    if (!std::isfinite(y[i]))
      throw Error(ErrorKind::InvalidArgument, "build_grid: non-finite observation",
                  std::ptrdiff_t(i));

  const auto [lo_it, hi_it] = std::minmax_element(y.begin(), y.end());
  double lo = *lo_it;
  double hi = *hi_it;
  const double sd = sample_sd(y);
  if (sd > 0.0) {
    lo -= 2.0 * sd;
    hi += 2.0 * sd;
  } else {
    // degenerate spread fallback
    lo -= 1.0;
    hi += 1.0;
  }
  const double pad = (hi - lo) / double(m - 1);
  lo -= pad;
  hi += pad;
  if (lo > 0.0) lo = 0.0;
  if (hi < 0.0) hi = 0.0;

  const double h = (hi - lo) / double(m - 1);
  auto k = std::size_t(std::llround(-lo / h));
  k = std::min(k, m - 1);

  Grid g;
  g.points.resize(m);
  for (std::size_t j = 0; j < m; ++j)
    g.points[j] = (double(j) - double(k)) * h;
  g.spacing = h;
  g.zero_index = k;
  return g;
}

}  // namespace sneb
