#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sneb/errors.hpp"

namespace sneb {

struct TestDecision {
  std::vector<bool> reject;
  std::size_t k_rejected = 0;
  std::vector<double> ordered_null_probs;  // populated by neb_opt only
  double alpha = 0.0;
};

namespace detail {

inline void check_unit_interval(std::span<const double> v, const char* what) {
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!(v[i] >= 0.0 && v[i] <= 1.0))
      throw Error(ErrorKind::InvalidArgument, std::string(what) + ": value outside [0, 1]",
                  std::ptrdiff_t(i));
}

inline void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw Error(ErrorKind::InvalidArgument, "alpha must lie in (0, 1)");
}

inline std::vector<std::size_t> ascending_order(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  return order;
}

// Shared BH step-up with threshold i * alpha / (m * scale).
inline TestDecision step_up(std::span<const double> pvals, double alpha, double scale) {
  check_unit_interval(pvals, "pvals");
  check_alpha(alpha);
  const std::size_t m = pvals.size();
  const auto order = ascending_order(pvals);
  std::size_t k = 0;
  for (std::size_t i = 1; i <= m; ++i)
    if (pvals[order[i - 1]] <= double(i) * alpha / (double(m) * scale)) k = i;
  TestDecision d;
  d.reject.assign(m, false);
  for (std::size_t i = 0; i < k; ++i) d.reject[order[i]] = true;
  d.k_rejected = k;
  d.alpha = alpha;
  return d;
}

// Storey threshold search over the observed p-values with a given m0 estimate.
inline TestDecision storey_search(std::span<const double> pvals, double alpha, double m0_hat) {
  check_unit_interval(pvals, "pvals");
  check_alpha(alpha);
  const std::size_t m = pvals.size();
  std::vector<double> sorted(pvals.begin(), pvals.end());
  std::sort(sorted.begin(), sorted.end());
  double threshold = -1.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double t = sorted[i];
    const auto r = std::size_t(std::upper_bound(sorted.begin(), sorted.end(), t) -
                               sorted.begin());
    const double fdr_hat = m0_hat * t / double(std::max<std::size_t>(r, 1));
    if (fdr_hat <= alpha) threshold = t;
  }
  TestDecision d;
  d.reject.assign(m, false);
  d.alpha = alpha;
  if (threshold >= 0.0) {
    for (std::size_t i = 0; i < m; ++i)
      if (pvals[i] <= threshold) {
        d.reject[i] = true;
        ++d.k_rejected;
      }
  }
  return d;
}

}  // namespace detail

// Reject the K hypotheses with the smallest posterior null probabilities,
// where K is the largest prefix whose running mean stays within alpha.
inline TestDecision neb_opt(std::span<const double> null_probs, double alpha) {
  detail::check_unit_interval(null_probs, "null_probs");
  detail::check_alpha(alpha);
  const std::size_t m = null_probs.size();
  const auto order = detail::ascending_order(null_probs);
  TestDecision d;
  d.reject.assign(m, false);
  d.alpha = alpha;
  d.ordered_null_probs.resize(m);
  for (std::size_t i = 0; i < m; ++i) d.ordered_null_probs[i] = null_probs[order[i]];
  double prefix = 0.0;
  std::size_t k_best = 0;
  for (std::size_t k = 1; k <= m; ++k) {
    prefix += d.ordered_null_probs[k - 1];
    if (prefix / double(k) <= alpha) k_best = k;
  }
  for (std::size_t i = 0; i < k_best; ++i) d.reject[order[i]] = true;
  d.k_rejected = k_best;
  return d;
}

// Conditional FDR of rejecting the k smallest: the prefix mean of the sorted
// posterior null probabilities (0/0 = 0).
inline double conditional_fdr(std::span<const double> sorted_probs, std::size_t k) {
  if (k == 0) return 0.0;
  if (k > sorted_probs.size())
    throw Error(ErrorKind::InvalidArgument, "conditional_fdr: k exceeds the number of hypotheses");
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (i > 0 && sorted_probs[i] < sorted_probs[i - 1])
      throw Error(ErrorKind::InvalidArgument, "conditional_fdr: probabilities are not sorted");
    acc += sorted_probs[i];
  }
  return acc / double(k);
}

// Exhaustive minimizer of the expected false non-discoveries subject to k
// rejections. Oracle-scale only.
inline std::vector<std::size_t> brute_force_optimal(std::span<const double> null_probs,
                                                    std::size_t k) {
  detail::check_unit_interval(null_probs, "null_probs");
  const std::size_t m = null_probs.size();
  if (m > 20)
    throw Error(ErrorKind::OracleScale, "brute_force_optimal: m must not exceed 20");
  if (k > m)
    throw Error(ErrorKind::InvalidArgument, "brute_force_optimal: k exceeds m");
  double best_loss = std::numeric_limits<double>::infinity();
  std::uint32_t best_mask = 0;
  for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
    if (std::size_t(__builtin_popcount(mask)) != k) continue;
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      if (!(mask & (1u << i))) loss += 1.0 - null_probs[i];
    if (loss < best_loss) {
      best_loss = loss;
      best_mask = mask;
    }
  }
  std::vector<std::size_t> selected;
  for (std::size_t i = 0; i < m; ++i)
    if (best_mask & (1u << i)) selected.push_back(i);
  return selected;
}

// Two-sided p-value of a z-value under a N(0, null_sd^2) null.
inline double z_to_pvalue(double z, double null_sd = 1.0) {
  if (!(null_sd > 0.0))
    throw Error(ErrorKind::InvalidArgument, "z_to_pvalue: null_sd must be positive");
  const double p = std::erfc(std::abs(z) / (null_sd * std::sqrt(2.0)));
  return std::min(p, 1.0);
}

inline TestDecision bh(std::span<const double> pvals, double alpha) {
  return detail::step_up(pvals, alpha, 1.0);
}

// BH with the rejection level inflated by the estimated null proportion.
inline TestDecision adaptive_bh(std::span<const double> pvals, double alpha, double w_hat) {
  if (!(w_hat > 0.0 && w_hat <= 1.0))
    throw Error(ErrorKind::InvalidArgument, "adaptive_bh: w_hat must lie in (0, 1]");
  return detail::step_up(pvals, alpha, w_hat);
}

inline TestDecision storey(std::span<const double> pvals, double alpha, double lambda = 0.5) {
  if (!(lambda > 0.0 && lambda < 1.0))
    throw Error(ErrorKind::InvalidArgument, "storey: lambda must lie in (0, 1)");
  const std::size_t m = pvals.size();
  if (m == 0) return detail::storey_search(pvals, alpha, 0.0);
  std::size_t r = 0;
  for (double p : pvals)
    if (p <= lambda) ++r;
  double m0_hat = double(m - r) / (1.0 - lambda);
  m0_hat = std::clamp(m0_hat, 1.0, double(m));
  return detail::storey_search(pvals, alpha, m0_hat);
}

// Storey's search with m0 replaced by w_hat * m.
inline TestDecision adaptive_storey(std::span<const double> pvals, double alpha, double w_hat) {
  if (!(w_hat > 0.0 && w_hat <= 1.0))
    throw Error(ErrorKind::InvalidArgument, "adaptive_storey: w_hat must lie in (0, 1]");
  return detail::storey_search(pvals, alpha, w_hat * double(pvals.size()));
}

}  // namespace sneb
