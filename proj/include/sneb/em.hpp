#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "sneb/dataset.hpp"
#include "sneb/densities.hpp"
#include "sneb/errors.hpp"
#include "sneb/grid.hpp"
#include "sneb/null_region.hpp"
#include "sneb/priors.hpp"

namespace sneb {

struct EmConfig {
  std::size_t max_iter = 1000;
  double rel_tol = 1e-8;       // relative change of the marginal log-likelihood
  double lambda0_init = 5.0;
  double omega_init = 0.5;
  double root_tol = 1e-10;     // residual tolerance for the score equations
  std::size_t root_max_iter = 200;
  std::optional<double> fixed_omega;    // skip the omega update when set
  std::optional<double> fixed_lambda0;  // skip the lambda0 update when set

  void validate() const {
    if (max_iter < 1)
      throw Error(ErrorKind::InvalidArgument, "EmConfig: max_iter must be at least 1");
    if (!(rel_tol > 0.0))
      throw Error(ErrorKind::InvalidArgument, "EmConfig: rel_tol must be positive");
    if (!(omega_init > 0.0 && omega_init < 1.0))
      throw Error(ErrorKind::InvalidArgument, "EmConfig: omega_init must lie strictly in (0, 1)");
    if (!(lambda0_init > 0.0))
      throw Error(ErrorKind::InvalidArgument, "EmConfig: lambda0_init must be positive");
    if (!(root_tol > 0.0))
      throw Error(ErrorKind::InvalidArgument, "EmConfig: root_tol must be positive");
  }
};

// Clamps for the SNP hyper-parameters; the score equations lose their sign
// change at the boundaries.
inline constexpr double kOmegaMin = 1e-6;
inline constexpr double kOmegaMax = 1.0 - 1e-6;
inline constexpr double kLambda0Min = 1e-3;
inline constexpr double kLambda0Max = 1e4;

struct EmTrace {
  std::vector<double> loglik_per_iter;
  std::size_t iterations_run = 0;
  bool converged = false;
};

// Row i = posterior probability over grid atoms for observation i.
struct Responsibilities {
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<double> data;  // row-major

  double at(std::size_t i, std::size_t j) const { return data[i * m + j]; }
  double& at(std::size_t i, std::size_t j) { return data[i * m + j]; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * m, m}; }
};

// Scaled likelihood table: entry (i, j) = exp(log phi(y_i | tau_j, sigma_i) -
// row_log_max_i). Every row has maximum 1, so a weighted row sum can only
// vanish when the weights themselves vanish on the row's support. This is the
// log-sum-exp guard used by every row normalization and by the marginal
// log-likelihood.
struct LikelihoodTable {
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<double> scaled;       // row-major
  std::vector<double> row_log_max;

  static LikelihoodTable build(const Dataset& data, const Grid& grid) {
    data.validate();
    LikelihoodTable t;
    t.n = data.size();
    t.m = grid.size();
    t.scaled.resize(t.n * t.m);
    t.row_log_max.resize(t.n);
    const double c = -0.5 * std::log(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < t.n; ++i) {
      double* row = t.scaled.data() + i * t.m;
      const double inv_sigma = 1.0 / data.sigma[i];
      const double log_sigma = std::log(data.sigma[i]);
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < t.m; ++j) {
        const double z = (data.y[i] - grid[j]) * inv_sigma;
        row[j] = c - log_sigma - 0.5 * z * z;
        mx = std::max(mx, row[j]);
      }
      t.row_log_max[i] = mx;
      for (std::size_t j = 0; j < t.m; ++j) row[j] = std::exp(row[j] - mx);
    }
    return t;
  }
};

namespace detail {

struct EStepSums {
  std::vector<double> col_sums;  // sum_i resp_ij
  double loglik = 0.0;
};

// One fused E-step pass: responsibilities are formed row by row and reduced
// into column sums in index order, so repeated runs agree bitwise.
inline EStepSums e_step_sums(const LikelihoodTable& t, std::span<const double> w) {
  EStepSums out;
  out.col_sums.assign(t.m, 0.0);
  for (std::size_t i = 0; i < t.n; ++i) {
    const double* row = t.scaled.data() + i * t.m;
    double s = 0.0;
    for (std::size_t j = 0; j < t.m; ++j) s += row[j] * w[j];
    if (!(s > 0.0))
      throw Error(ErrorKind::NumericalUnderflow,
                  "marginal mass underflows to zero for an observation", std::ptrdiff_t(i));
    out.loglik += std::log(s) + t.row_log_max[i];
    const double inv = 1.0 / s;
    for (std::size_t j = 0; j < t.m; ++j) out.col_sums[j] += row[j] * w[j] * inv;
  }
  return out;
}

inline double weighted_loglik(const LikelihoodTable& t, std::span<const double> w) {
  double ll = 0.0;
  for (std::size_t i = 0; i < t.n; ++i) {
    const double* row = t.scaled.data() + i * t.m;
    double s = 0.0;
    for (std::size_t j = 0; j < t.m; ++j) s += row[j] * w[j];
    if (!(s > 0.0))
      throw Error(ErrorKind::NumericalUnderflow,
                  "marginal mass underflows to zero for an observation", std::ptrdiff_t(i));
    ll += std::log(s) + t.row_log_max[i];
  }
  return ll;
}

inline Responsibilities normalized_rows(const LikelihoodTable& t, std::span<const double> w) {
  Responsibilities r;
  r.n = t.n;
  r.m = t.m;
  r.data.resize(t.n * t.m);
  for (std::size_t i = 0; i < t.n; ++i) {
    const double* row = t.scaled.data() + i * t.m;
    double s = 0.0;
    for (std::size_t j = 0; j < t.m; ++j) s += row[j] * w[j];
    if (!(s > 0.0))
      throw Error(ErrorKind::NumericalUnderflow,
                  "responsibility row underflows to zero", std::ptrdiff_t(i));
    const double inv = 1.0 / s;
    for (std::size_t j = 0; j < t.m; ++j) r.at(i, j) = row[j] * w[j] * inv;
  }
  return r;
}

}  // namespace detail

inline double marginal_loglik(const DnpPrior& prior, const Dataset& data) {
  prior.validate();
  if (data.size() == 0) return 0.0;
  const auto table = LikelihoodTable::build(data, prior.grid);
  return detail::weighted_loglik(table, prior.pi);
}

inline double marginal_loglik(const SnpPrior& prior, const Dataset& data) {
  prior.validate();
  if (data.size() == 0) return 0.0;
  const auto table = LikelihoodTable::build(data, prior.grid);
  return detail::weighted_loglik(table, prior.mixture_weights());
}

inline Responsibilities dnp_e_step(std::span<const double> pi, const Grid& grid,
                                   const Dataset& data) {
  check_probability_vector(pi, grid.size(), "dnp_e_step.pi");
  const auto table = LikelihoodTable::build(data, grid);
  return detail::normalized_rows(table, pi);
}

inline std::vector<double> dnp_m_step(const Responsibilities& resp) {
  if (resp.n == 0)
    throw Error(ErrorKind::InvalidArgument, "dnp_m_step: empty responsibilities");
  std::vector<double> pi(resp.m, 0.0);
  for (std::size_t i = 0; i < resp.n; ++i)
    for (std::size_t j = 0; j < resp.m; ++j) pi[j] += resp.at(i, j);
  for (double& v : pi) v /= double(resp.n);
  return pi;
}

inline std::pair<DnpPrior, EmTrace> fit_dnp(const Dataset& data, const Grid& grid,
                                            const EmConfig& cfg) {
  cfg.validate();
  data.validate();
  const std::size_t m = grid.size();
  std::vector<double> pi(m, 1.0 / double(m));
  EmTrace trace;
  if (data.size() == 0) {
    trace.loglik_per_iter = {0.0};
    trace.converged = true;
    return {DnpPrior{grid, std::move(pi)}, trace};
  }

  const auto table = LikelihoodTable::build(data, grid);
  auto pass = detail::e_step_sums(table, pi);
  trace.loglik_per_iter.push_back(pass.loglik);

  const double inv_n = 1.0 / double(data.size());
  for (std::size_t t = 1; t <= cfg.max_iter; ++t) {
    for (std::size_t j = 0; j < m; ++j) pi[j] = pass.col_sums[j] * inv_n;
    const double prev = pass.loglik;
    pass = detail::e_step_sums(table, pi);
    trace.loglik_per_iter.push_back(pass.loglik);
    trace.iterations_run = t;
    if (std::abs(pass.loglik - prev) <= cfg.rel_tol * std::max(1.0, std::abs(prev))) {
      trace.converged = true;
      break;
    }
  }
  return {DnpPrior{grid, std::move(pi)}, trace};
}

inline Responsibilities snp_e_step(const SnpPrior& prior, const Dataset& data) {
  prior.validate();
  const auto table = LikelihoodTable::build(data, prior.grid);
  return detail::normalized_rows(table, prior.mixture_weights());
}

// Analytic pi update: clamp the spike-subtracted ratio at zero, renormalize.
// Throws DegenerateUpdate when the spike term clamps every atom.
inline std::vector<double> snp_m_step_pi(std::span<const double> col_resp, double omega,
                                         double lambda0, const Grid& grid) {
  if (col_resp.size() != grid.size())
    throw Error(ErrorKind::InvalidArgument, "snp_m_step_pi: col_resp has wrong length");
  if (!(omega >= 0.0 && omega < 1.0))
    throw Error(ErrorKind::InvalidArgument, "snp_m_step_pi: omega must lie in [0, 1)");
  double total = 0.0;
  for (std::size_t j = 0; j < col_resp.size(); ++j) {
    if (!(col_resp[j] >= 0.0) || !std::isfinite(col_resp[j]))
      throw Error(ErrorKind::InvalidArgument, "snp_m_step_pi: negative responsibility mass",
                  std::ptrdiff_t(j));
    total += col_resp[j];
  }
  if (!(total > 0.0))
    throw Error(ErrorKind::InvalidArgument, "snp_m_step_pi: col_resp carries no mass");

  const auto spike = grid_spike_weights(grid, lambda0);
  const double ratio_scale = 1.0 / ((1.0 - omega) * total);
  const double spike_scale = omega / (1.0 - omega);
  std::vector<double> pi(col_resp.size());
  double s = 0.0;
  for (std::size_t j = 0; j < pi.size(); ++j) {
    pi[j] = std::max(0.0, col_resp[j] * ratio_scale - spike_scale * spike[j]);
    s += pi[j];
  }
  if (!(s > 0.0))
    throw Error(ErrorKind::DegenerateUpdate, "snp_m_step_pi: spike term clamps every atom to zero");
  for (double& v : pi) v /= s;
  return pi;
}

// Score in omega of the expected complete-data objective,
//   sum_j c_j (psi~_j - gamma_j) / (omega psi~_j + (1 - omega) gamma_j);
// strictly nonincreasing in omega.
inline double snp_score_omega(std::span<const double> col_resp, std::span<const double> gamma_pi,
                              const Grid& grid, double omega, double lambda0) {
  const auto spike = grid_spike_weights(grid, lambda0);
  double acc = 0.0;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    if (col_resp[j] == 0.0) continue;
    if (gamma_pi[j] == 0.0) {
      // continuous limit (psi~_j - 0) / (omega psi~_j) even when the spike
      // weight underflows
      if (omega > 0.0) acc += col_resp[j] / omega;
      continue;
    }
    const double theta = omega * spike[j] + (1.0 - omega) * gamma_pi[j];
    if (theta == 0.0) continue;
    acc += col_resp[j] * (spike[j] - gamma_pi[j]) / theta;
  }
  return acc;
}

// Score in lambda0. The spike is renormalized over the grid, so its lambda0
// derivative is psi~_j (E_psi~|tau| - |tau_j|):
//   sum_j c_j omega psi~_j (abar - |tau_j|) / (omega psi~_j + (1 - omega) gamma_j).
inline double snp_score_lambda0(std::span<const double> col_resp, std::span<const double> gamma_pi,
                                const Grid& grid, double omega, double lambda0) {
  const auto spike = grid_spike_weights(grid, lambda0);
  const double abar = spike_abs_moment(grid, spike);
  double acc = 0.0;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    if (col_resp[j] == 0.0) continue;
    if (gamma_pi[j] == 0.0) {
      // the spike weight cancels: omega psi~_j (...) / (omega psi~_j)
      if (omega > 0.0) acc += col_resp[j] * (abar - std::abs(grid[j]));
      continue;
    }
    if (spike[j] == 0.0) continue;
    const double theta = omega * spike[j] + (1.0 - omega) * gamma_pi[j];
    acc += col_resp[j] * omega * spike[j] * (abar - std::abs(grid[j])) / theta;
  }
  return acc;
}

namespace detail {

// Expected complete-data objective in the prior weights (the likelihood term
// does not depend on the parameters and is dropped).
inline double snp_m_objective(std::span<const double> col_resp, std::span<const double> gamma_pi,
                              const Grid& grid, double omega, double lambda0) {
  const auto spike = grid_spike_weights(grid, lambda0);
  double acc = 0.0;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    if (col_resp[j] == 0.0) continue;
    const double theta = omega * spike[j] + (1.0 - omega) * gamma_pi[j];
    if (!(theta > 0.0)) return -std::numeric_limits<double>::infinity();
    acc += col_resp[j] * std::log(theta);
  }
  return acc;
}

template <class F>
inline double bisect_root(F&& f, double a, double b, double fa, double fb, double tol,
                          std::size_t max_iter) {
  if (fa == 0.0) return a;
  if (fb == 0.0) return b;
  double best = 0.5 * (a + b);
  double best_abs = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < max_iter; ++it) {
    const double mid = 0.5 * (a + b);
    if (mid <= a || mid >= b) break;  // interval exhausted in doubles
    const double fm = f(mid);
    if (std::abs(fm) < best_abs) {
      best_abs = std::abs(fm);
      best = mid;
    }
    if (std::abs(fm) <= tol) break;
    if ((fa < 0.0) == (fm < 0.0)) {
      a = mid;
      fa = fm;
    } else {
      b = mid;
      fb = fm;
    }
  }
  return best;
}

struct Lambda0Step {
  double lambda0 = 0.0;
  bool at_boundary = false;
};

// Coordinate update for lambda0 given omega: scan a log mesh for sign changes
// of the score, bisect each bracket, and keep the candidate with the best
// objective. `extra_candidate` (the current value, when supplied) guarantees
// the objective never decreases inside the EM loop.
inline Lambda0Step lambda0_step(std::span<const double> col_resp,
                                std::span<const double> gamma_pi, const Grid& grid,
                                const EmConfig& cfg, double omega,
                                std::optional<double> extra_candidate) {
  const auto score = [&](double l) {
    return snp_score_lambda0(col_resp, gamma_pi, grid, omega, l);
  };
  std::vector<double> roots;
  constexpr int kScan = 33;
  const double log_lo = std::log(kLambda0Min);
  const double log_hi = std::log(kLambda0Max);
  double prev_x = kLambda0Min;
  double prev_g = score(prev_x);
  for (int i = 1; i < kScan; ++i) {
    const double x = std::exp(log_lo + (log_hi - log_lo) * double(i) / double(kScan - 1));
    const double g = score(x);
    if (prev_g == 0.0) {
      roots.push_back(prev_x);
    } else if ((prev_g < 0.0) != (g < 0.0)) {
      roots.push_back(bisect_root(score, prev_x, x, prev_g, g, cfg.root_tol, cfg.root_max_iter));
    }
    prev_x = x;
    prev_g = g;
  }
  if (prev_g == 0.0) roots.push_back(prev_x);

  std::vector<double> candidates;
  if (extra_candidate) candidates.push_back(*extra_candidate);
  const std::size_t first_root = candidates.size();
  candidates.insert(candidates.end(), roots.begin(), roots.end());
  const std::size_t first_bound = candidates.size();
  candidates.push_back(kLambda0Min);
  candidates.push_back(kLambda0Max);

  std::size_t best = 0;
  double best_q = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const double q = snp_m_objective(col_resp, gamma_pi, grid, omega, candidates[c]);
    if (q > best_q) {
      best_q = q;
      best = c;
    }
  }
  Lambda0Step out;
  out.lambda0 = candidates[best];
  out.at_boundary = best >= first_bound || best < first_root;
  return out;
}

struct OmegaStep {
  double omega = 0.0;
  bool at_boundary = false;
};

// Coordinate update for omega given lambda0; the score is nonincreasing in
// omega, so the boundary signs decide before bisection.
inline OmegaStep omega_step(std::span<const double> col_resp, std::span<const double> gamma_pi,
                            const Grid& grid, const EmConfig& cfg, double lambda0) {
  const auto score = [&](double w) {
    return snp_score_omega(col_resp, gamma_pi, grid, w, lambda0);
  };
  const double g_lo = score(kOmegaMin);
  const double g_hi = score(kOmegaMax);
  OmegaStep out;
  if (g_lo <= 0.0) {
    out.omega = kOmegaMin;
    out.at_boundary = true;
  } else if (g_hi >= 0.0) {
    out.omega = kOmegaMax;
    out.at_boundary = true;
  } else {
    out.omega = bisect_root(score, kOmegaMin, kOmegaMax, g_lo, g_hi, cfg.root_tol,
                            cfg.root_max_iter);
  }
  return out;
}

inline std::vector<double> snp_mixture(const Grid& grid, double omega, double lambda0,
                                       std::span<const double> gamma_pi) {
  auto theta = grid_spike_weights(grid, lambda0);
  for (std::size_t j = 0; j < theta.size(); ++j)
    theta[j] = omega * theta[j] + (1.0 - omega) * gamma_pi[j];
  return theta;
}

}  // namespace detail

struct RootSolve {
  double omega = 0.0;
  double lambda0 = 0.0;
  bool omega_at_boundary = false;
  bool lambda0_at_boundary = false;
};

// Alternating safeguarded bracketing on the two score equations, each solved
// holding the other parameter fixed, until both residuals fall within
// root_tol or a clamp boundary absorbs one of them. Never fails hard; a
// missing sign change reports the boundary via the flags.
inline RootSolve solve_omega_lambda0(std::span<const double> col_resp,
                                     std::span<const double> gamma_pi, const Grid& grid,
                                     const EmConfig& cfg, double omega_start,
                                     double lambda0_start) {
  check_probability_vector(gamma_pi, grid.size(), "solve_omega_lambda0.gamma_pi");
  RootSolve out;
  out.omega = std::clamp(omega_start, kOmegaMin, kOmegaMax);
  out.lambda0 = std::clamp(lambda0_start, kLambda0Min, kLambda0Max);
  for (std::size_t pass = 0; pass < 64; ++pass) {
    const double omega_prev = out.omega;
    const double lambda0_prev = out.lambda0;
    const auto ls = detail::lambda0_step(col_resp, gamma_pi, grid, cfg, out.omega, std::nullopt);
    out.lambda0 = ls.lambda0;
    out.lambda0_at_boundary = ls.at_boundary;
    const auto ws = detail::omega_step(col_resp, gamma_pi, grid, cfg, out.lambda0);
    out.omega = ws.omega;
    out.omega_at_boundary = ws.at_boundary;
    if (std::abs(out.omega - omega_prev) <= 1e-10 &&
        std::abs(out.lambda0 - lambda0_prev) <= 1e-10 * std::max(1.0, lambda0_prev))
      break;
  }

  // the coordinate passes converge only linearly when the two equations
  // couple strongly; polish interior solutions with a damped 2-D Newton
  if (!out.omega_at_boundary && !out.lambda0_at_boundary) {
    const auto fl = [&](double w, double l) {
      return snp_score_lambda0(col_resp, gamma_pi, grid, w, l);
    };
    const auto fw = [&](double w, double l) {
      return snp_score_omega(col_resp, gamma_pi, grid, w, l);
    };
    double w = out.omega, l = out.lambda0;
    double rl = fl(w, l), rw = fw(w, l);
    for (std::size_t it = 0; it < cfg.root_max_iter; ++it) {
      if (std::abs(rl) <= cfg.root_tol && std::abs(rw) <= cfg.root_tol) break;
      const double hw = 1e-7;
      const double hl = 1e-7 * std::max(1.0, l);
      const double dlw = (fl(w + hw, l) - fl(w - hw, l)) / (2.0 * hw);
      const double dll = (fl(w, l + hl) - fl(w, l - hl)) / (2.0 * hl);
      const double dww = (fw(w + hw, l) - fw(w - hw, l)) / (2.0 * hw);
      const double dwl = (fw(w, l + hl) - fw(w, l - hl)) / (2.0 * hl);
      const double det = dlw * dwl - dll * dww;
      if (det == 0.0 || !std::isfinite(det)) break;
      const double step_w = (rl * dwl - rw * dll) / det;
      const double step_l = (rw * dlw - rl * dww) / det;
      bool improved = false;
      for (double damp = 1.0; damp >= 1.0 / 64.0; damp *= 0.5) {
        const double w2 = std::clamp(w - damp * step_w, kOmegaMin, kOmegaMax);
        const double l2 = std::clamp(l - damp * step_l, kLambda0Min, kLambda0Max);
        const double rl2 = fl(w2, l2), rw2 = fw(w2, l2);
        if (std::abs(rl2) + std::abs(rw2) < std::abs(rl) + std::abs(rw)) {
          w = w2;
          l = l2;
          rl = rl2;
          rw = rw2;
          improved = true;
          break;
        }
      }
      if (!improved) break;
    }
    if (std::abs(rl) <= std::abs(snp_score_lambda0(col_resp, gamma_pi, grid, out.omega,
                                                   out.lambda0)) &&
        std::abs(rw) <=
            std::abs(snp_score_omega(col_resp, gamma_pi, grid, out.omega, out.lambda0))) {
      out.omega = w;
      out.lambda0 = l;
    }
  }
  return out;
}

inline RootSolve solve_omega_lambda0(std::span<const double> col_resp,
                                     std::span<const double> gamma_pi, const Grid& grid,
                                     const EmConfig& cfg) {
  return solve_omega_lambda0(col_resp, gamma_pi, grid, cfg, cfg.omega_init, cfg.lambda0_init);
}

// Full SNP EM loop: E-step, analytic pi update, then one alternating root
// pass for (lambda0, omega). Every update is a guarded coordinate move on the
// expected complete-data objective, so the marginal log-likelihood is
// nondecreasing (generalized EM).
//
// Whenever the spike is active, gamma's support excludes the spike-dominated
// band computed at initialization (zero atom included): gamma is the density
// of the non-zero means, and letting it carry atoms inside the band leaves
// the spike/slab split unidentified — gamma absorbs the null mass, omega
// drifts low, and the null region collapses to the single zero atom.
inline std::pair<SnpPrior, EmTrace> fit_snp(const Dataset& data, const Grid& grid,
                                            const EmConfig& cfg) {
  cfg.validate();
  data.validate();
  const std::size_t m = grid.size();

  double omega = cfg.fixed_omega ? *cfg.fixed_omega
                                 : std::clamp(cfg.omega_init, kOmegaMin, kOmegaMax);
  double lambda0 = cfg.fixed_lambda0 ? *cfg.fixed_lambda0
                                     : std::clamp(cfg.lambda0_init, kLambda0Min, kLambda0Max);
  if (cfg.fixed_omega && !(omega >= 0.0 && omega <= 1.0))
    throw Error(ErrorKind::InvalidArgument, "fit_snp: fixed omega must lie in [0, 1]");
  if (cfg.fixed_lambda0 && !(lambda0 > 0.0))
    throw Error(ErrorKind::InvalidArgument, "fit_snp: fixed lambda0 must be positive");

  const bool spike_active = !(cfg.fixed_omega && *cfg.fixed_omega == 0.0);

  std::vector<double> gamma(m, 1.0 / double(m));
  std::vector<bool> excluded(m, false);
  std::size_t n_free = m;
  if (spike_active) {
    gamma[grid.zero_index] = 0.0;
    double s = 0.0;
    for (double v : gamma) s += v;
    for (double& v : gamma) v /= s;
    const NullRegion band = null_region(SnpPrior{grid, omega, lambda0, gamma});
    n_free = 0;
    for (std::size_t j = 0; j < m; ++j) {
      excluded[j] = (grid[j] >= band.delta_l && grid[j] <= band.delta_r) ||
                    j == grid.zero_index;
      if (!excluded[j]) ++n_free;
    }
  }
  const auto project_gamma = [&](std::vector<double>& v) {
    if (!spike_active) return;
    if (n_free == 0) {
      // the band swallowed the whole grid; park gamma off the zero atom and
      // let omega absorb everything
      for (std::size_t j = 0; j < m; ++j)
        v[j] = j == grid.zero_index ? 0.0 : 1.0 / double(m - 1);
      return;
    }
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (excluded[j]) v[j] = 0.0;
      s += v[j];
    }
    if (s > 0.0) {
      for (double& x : v) x /= s;
    } else {
      for (std::size_t j = 0; j < m; ++j) v[j] = excluded[j] ? 0.0 : 1.0 / double(n_free);
    }
  };
  project_gamma(gamma);

  EmTrace trace;
  if (data.size() == 0) {
    trace.loglik_per_iter = {0.0};
    trace.converged = true;
    return {SnpPrior{grid, omega, lambda0, std::move(gamma)}, trace};
  }

  const auto table = LikelihoodTable::build(data, grid);
  auto pass = detail::e_step_sums(table, detail::snp_mixture(grid, omega, lambda0, gamma));
  trace.loglik_per_iter.push_back(pass.loglik);

  for (std::size_t t = 1; t <= cfg.max_iter; ++t) {
    const auto& col = pass.col_sums;

    bool force_omega_max = false;
    std::vector<double> gamma_new;
    if (omega < 1.0) {
      try {
        gamma_new = snp_m_step_pi(col, omega, lambda0, grid);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::DegenerateUpdate) throw;
        // spike explains everything: keep gamma a valid density, push omega up
        gamma_new.assign(col.begin(), col.end());
        const double s = std::accumulate(gamma_new.begin(), gamma_new.end(), 0.0);
        for (double& v : gamma_new) v /= s;
        force_omega_max = true;
      }
      project_gamma(gamma_new);
      if (detail::snp_m_objective(col, gamma_new, grid, omega, lambda0) <
          detail::snp_m_objective(col, gamma, grid, omega, lambda0)) {
        gamma_new = gamma;
      }
    } else {
      gamma_new = gamma;
    }

    double lambda0_new = lambda0;
    if (!cfg.fixed_lambda0) {
      const auto ls = detail::lambda0_step(col, gamma_new, grid, cfg, omega, lambda0);
      lambda0_new = ls.lambda0;
    }
    double omega_new = omega;
    if (!cfg.fixed_omega) {
      if (force_omega_max) {
        omega_new = kOmegaMax;
      } else {
        const auto ws = detail::omega_step(col, gamma_new, grid, cfg, lambda0_new);
        omega_new = ws.omega;
      }
    }

    const auto next =
        detail::e_step_sums(table, detail::snp_mixture(grid, omega_new, lambda0_new, gamma_new));
    if (next.loglik < pass.loglik - 1e-9 * std::max(1.0, std::abs(pass.loglik))) {
      // monotonicity backstop: keep the previous iterate and stop
      trace.converged = true;
      break;
    }
    gamma = std::move(gamma_new);
    lambda0 = lambda0_new;
    omega = omega_new;
    const double prev = pass.loglik;
    pass = next;
    trace.loglik_per_iter.push_back(pass.loglik);
    trace.iterations_run = t;
    if (std::abs(pass.loglik - prev) <= cfg.rel_tol * std::max(1.0, std::abs(prev))) {
      trace.converged = true;
      break;
    }
  }
  return {SnpPrior{grid, omega, lambda0, std::move(gamma)}, trace};
}

}  // namespace sneb
