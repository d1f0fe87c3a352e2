#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "sneb/dataset.hpp"
#include "sneb/em.hpp"
#include "sneb/errors.hpp"
#include "sneb/grid.hpp"
#include "sneb/multiple_testing.hpp"
#include "sneb/posterior.hpp"
#include "sneb/rng.hpp"

namespace sneb {

// One point of the simulation sweep: mu_i ~ w delta_0 + (1 - w) N(V, 1),
// sigma_i^2 ~ U(0.5, u), y_i ~ N(mu_i, sigma_i^2).
struct SimDesign {
  std::size_t n = 1000;
  double w = 0.95;
  double V = 2.0;
  double u = 1.5;
  std::uint64_t seed = 0;
  std::size_t reps = 100;

  void validate() const {
    if (!(w >= 0.0 && w <= 1.0))
      throw Error(ErrorKind::InvalidArgument, "SimDesign: w must lie in [0, 1]");
    if (!(u > 0.5))
      throw Error(ErrorKind::InvalidArgument, "SimDesign: u must exceed 0.5");
    if (n == 0) throw Error(ErrorKind::InvalidArgument, "SimDesign: n must be positive");
    if (reps == 0) throw Error(ErrorKind::InvalidArgument, "SimDesign: reps must be positive");
  }
};

struct GeneratedData {
  Dataset data;
  std::vector<double> true_mu;
};

// Deterministic given (seed, rep); each observation owns a fixed block of
// counter slots so parallel evaluation cannot change the draws.
inline GeneratedData generate_dataset(const SimDesign& design, std::size_t rep) {
  design.validate();
  CounterRng rng(design.seed, rep);
  GeneratedData out;
  out.data.y.resize(design.n);
  out.data.sigma.resize(design.n);
  out.true_mu.resize(design.n);
  for (std::size_t i = 0; i < design.n; ++i) {
    const std::uint64_t base = std::uint64_t(i) * 6;
    const bool is_null = rng.uniform01(base) < design.w;
    const double mu =
        is_null ? 0.0
                : design.V + standard_normal(rng.uniform01(base + 1), rng.uniform01(base + 2));
    const double var = 0.5 + (design.u - 0.5) * rng.uniform01(base + 3);
    const double sigma = std::sqrt(var);
    out.true_mu[i] = mu;
    out.data.sigma[i] = sigma;
    out.data.y[i] =
        mu + sigma * standard_normal(rng.uniform01(base + 4), rng.uniform01(base + 5));
  }
  return out;
}

// Table-1 classification counts; nulls are exact zeros of true_mu.
struct TestCounts {
  std::size_t u = 0;  // true null, not rejected
  std::size_t v = 0;  // true null, rejected
  std::size_t t = 0;  // false null, not rejected
  std::size_t s = 0;  // false null, rejected

  std::size_t total() const { return u + v + t + s; }
  std::size_t rejected() const { return v + s; }
  std::size_t m1() const { return t + s; }
};

inline TestCounts classify_decisions(std::span<const double> true_mu,
                                     const std::vector<bool>& reject) {
  if (true_mu.size() != reject.size())
    throw Error(ErrorKind::InvalidArgument, "classify_decisions: length mismatch");
  TestCounts c;
  for (std::size_t i = 0; i < true_mu.size(); ++i) {
    const bool is_null = true_mu[i] == 0.0;
    if (is_null)
      reject[i] ? ++c.v : ++c.u;
    else
      reject[i] ? ++c.s : ++c.t;
  }
  return c;
}

inline double false_discovery_proportion(const TestCounts& c) {
  return c.rejected() == 0 ? 0.0 : double(c.v) / double(c.rejected());
}

inline double empirical_power(const TestCounts& c) {
  return c.m1() == 0 ? 0.0 : double(c.s) / double(c.m1());
}

struct RepEstimates {
  std::vector<double> post_mean;
  std::vector<double> post_mode;
  std::vector<CredibleInterval> intervals;
  double omega_hat = 0.0;
};

struct RepMetrics {
  double mse_mean = 0.0;
  double mse_mode = 0.0;
  double sparsity_bias = 0.0;
  double ci_coverage = 0.0;
  double fdp = 0.0;
  double power = 0.0;
};

inline RepMetrics compute_metrics(std::span<const double> true_mu, double w_true,
                                  const RepEstimates& est, const TestDecision& decision) {
  const std::size_t n = true_mu.size();
  if (est.post_mean.size() != n || est.post_mode.size() != n || est.intervals.size() != n ||
      decision.reject.size() != n)
    throw Error(ErrorKind::InvalidArgument, "compute_metrics: length mismatch");
  RepMetrics out;
  std::size_t covered = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dm = est.post_mean[i] - true_mu[i];
    const double dd = est.post_mode[i] - true_mu[i];
    out.mse_mean += dm * dm;
    out.mse_mode += dd * dd;
    if (true_mu[i] >= est.intervals[i].lower && true_mu[i] <= est.intervals[i].upper) ++covered;
  }
  out.mse_mean /= double(n);
  out.mse_mode /= double(n);
  out.ci_coverage = double(covered) / double(n);
  out.sparsity_bias = est.omega_hat - w_true;
  const TestCounts c = classify_decisions(true_mu, decision.reject);
  out.fdp = false_discovery_proportion(c);
  out.power = empirical_power(c);
  return out;
}

// Methods reported by the harness; the adaptive variants plug in the SNP
// sparsity estimate.
enum class SimMethod { SnpOpt, DnpOpt, Bh, AdaptiveBh, Storey, AdaptiveStorey };

inline const char* sim_method_name(SimMethod m) {
  switch (m) {
    case SimMethod::SnpOpt:         return "snp-opt";
    case SimMethod::DnpOpt:         return "dnp-opt";
    case SimMethod::Bh:             return "bh";
    case SimMethod::AdaptiveBh:     return "adaptive-bh";
    case SimMethod::Storey:         return "storey";
    case SimMethod::AdaptiveStorey: return "adaptive-storey";
  }
  return "unknown";
}

inline std::vector<SimMethod> all_sim_methods() {
  return {SimMethod::SnpOpt,     SimMethod::DnpOpt, SimMethod::Bh,
          SimMethod::AdaptiveBh, SimMethod::Storey, SimMethod::AdaptiveStorey};
}

// One (method, alpha, metric) series across reps; failed reps hold NaN and are
// excluded from mean and mc_se.
struct MetricSeries {
  std::string method;
  std::optional<double> alpha;
  std::string metric;
  std::vector<double> values;
  double mean = 0.0;
  double mc_se = 0.0;
};

struct MonteCarloResult {
  SimDesign design;
  std::vector<double> alpha_grid;
  std::vector<MetricSeries> series;
  std::vector<std::size_t> failed_reps;
  std::vector<std::string> failure_messages;

  const MetricSeries* find(const std::string& method, const std::string& metric,
                           std::optional<double> alpha = std::nullopt) const {
    for (const auto& s : series)
      if (s.method == method && s.metric == metric &&
          (!alpha || (s.alpha && *s.alpha == *alpha)))
        return &s;
    return nullptr;
  }
};

namespace detail {

struct RepOutcome {
  bool failed = false;
  std::string error;
  RepMetrics snp_est;   // fdp/power fields unused here
  RepMetrics dnp_est;
  double mse_identity = 0.0;
  std::vector<double> fdp;    // methods x alphas, row-major
  std::vector<double> power;
};

inline std::size_t worker_count(std::size_t reps, std::size_t requested) {
  std::size_t threads = requested > 0 ? requested
                                      : std::max<std::size_t>(1, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SNPEB_THREADS")) {
    const long cap = std::atol(env);
    if (cap > 0) threads = std::min<std::size_t>(threads, std::size_t(cap));
  }
  return std::min(threads, reps);
}

inline RepOutcome run_one_rep(const SimDesign& design, std::size_t rep,
                              std::span<const SimMethod> methods,
                              std::span<const double> alpha_grid, const EmConfig& em_cfg,
                              std::size_t grid_size, double ci_alpha) {
  RepOutcome out;
  const GeneratedData gen = generate_dataset(design, rep);
  const Grid grid = build_grid(gen.data.y, grid_size);
  const SnpPrior snp = fit_snp(gen.data, grid, em_cfg).first;
  const DnpPrior dnp = fit_dnp(gen.data, grid, em_cfg).first;
  const std::size_t n = gen.data.size();

  const NullRegion region = null_region(snp);
  RepEstimates snp_est, dnp_est;
  std::vector<double> snp_null(n), dnp_null(n);
  snp_est.post_mean.resize(n);
  snp_est.post_mode.resize(n);
  snp_est.intervals.resize(n);
  dnp_est.post_mean.resize(n);
  dnp_est.post_mode.resize(n);
  dnp_est.intervals.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto st = posterior_table(snp, gen.data.y[i], gen.data.sigma[i]);
    snp_est.post_mean[i] = posterior_mean(st);
    snp_est.post_mode[i] = posterior_mode(st);
    snp_est.intervals[i] = credible_interval(st, ci_alpha);
    snp_null[i] = null_probability(st, region);
    const auto dt = posterior_table(dnp, gen.data.y[i], gen.data.sigma[i]);
    dnp_est.post_mean[i] = posterior_mean(dt);
    dnp_est.post_mode[i] = posterior_mode(dt);
    dnp_est.intervals[i] = credible_interval(dt, ci_alpha);
    dnp_null[i] = null_probability(dnp, dt);
    const double e = gen.data.y[i] - gen.true_mu[i];
    out.mse_identity += e * e;
  }
  out.mse_identity /= double(n);
  snp_est.omega_hat = std::accumulate(snp_null.begin(), snp_null.end(), 0.0) / double(n);
  dnp_est.omega_hat = std::accumulate(dnp_null.begin(), dnp_null.end(), 0.0) / double(n);

  std::vector<double> pvals(n);
  for (std::size_t i = 0; i < n; ++i)
    pvals[i] = z_to_pvalue(gen.data.y[i] / gen.data.sigma[i]);

  out.fdp.resize(methods.size() * alpha_grid.size());
  out.power.resize(methods.size() * alpha_grid.size());
  TestDecision last_decision;
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    for (std::size_t ai = 0; ai < alpha_grid.size(); ++ai) {
      const double alpha = alpha_grid[ai];
      TestDecision d;
      switch (methods[mi]) {
        case SimMethod::SnpOpt:         d = neb_opt(snp_null, alpha); break;
        case SimMethod::DnpOpt:         d = neb_opt(dnp_null, alpha); break;
        case SimMethod::Bh:             d = bh(pvals, alpha); break;
        case SimMethod::AdaptiveBh:     d = adaptive_bh(pvals, alpha,
                                              std::clamp(snp_est.omega_hat, 1e-12, 1.0)); break;
        case SimMethod::Storey:         d = storey(pvals, alpha); break;
        case SimMethod::AdaptiveStorey: d = adaptive_storey(pvals, alpha,
                                              std::clamp(snp_est.omega_hat, 1e-12, 1.0)); break;
      }
      const TestCounts c = classify_decisions(gen.true_mu, d.reject);
      out.fdp[mi * alpha_grid.size() + ai] = false_discovery_proportion(c);
      out.power[mi * alpha_grid.size() + ai] = empirical_power(c);
      last_decision = std::move(d);
    }
  }

  // estimation metrics do not depend on the decision; reuse the last one
  if (methods.empty() || alpha_grid.empty())
    last_decision.reject.assign(n, false);
  out.snp_est = compute_metrics(gen.true_mu, design.w, snp_est, last_decision);
  out.dnp_est = compute_metrics(gen.true_mu, design.w, dnp_est, last_decision);
  return out;
}

inline void finalize_series(MetricSeries& s) {
  double sum = 0.0;
  std::size_t k = 0;
  for (double v : s.values)
    if (!std::isnan(v)) {
      sum += v;
      ++k;
    }
  s.mean = k > 0 ? sum / double(k) : std::numeric_limits<double>::quiet_NaN();
  if (k >= 2) {
    double ss = 0.0;
    for (double v : s.values)
      if (!std::isnan(v)) ss += (v - s.mean) * (v - s.mean);
    s.mc_se = std::sqrt(ss / double(k - 1)) / std::sqrt(double(k));
  } else {
    s.mc_se = 0.0;
  }
}

}  // namespace detail

// Full per-rep pipeline (generate, fit both priors, infer, test) aggregated
// across reps. Reps run in parallel; SNPEB_THREADS caps the workers; results
// are folded in rep order, so output is reproducible from the seed alone.
inline MonteCarloResult run_monte_carlo(const SimDesign& design,
                                        std::vector<SimMethod> methods,
                                        std::vector<double> alpha_grid,
                                        const EmConfig& em_cfg = {}, std::size_t grid_size = 400,
                                        std::size_t threads = 0, double ci_alpha = 0.05) {
  design.validate();
  em_cfg.validate();
  for (double a : alpha_grid) detail::check_alpha(a);

  std::vector<detail::RepOutcome> outcomes(design.reps);
  const std::size_t workers = detail::worker_count(design.reps, threads);
  std::atomic<std::size_t> next{0};
  const auto work = [&]() {
    while (true) {
      const std::size_t rep = next.fetch_add(1);
      if (rep >= design.reps) break;
      try {
        outcomes[rep] = detail::run_one_rep(design, rep, methods, alpha_grid, em_cfg,
                                            grid_size, ci_alpha);
      } catch (const std::exception& e) {
        outcomes[rep].failed = true;
        outcomes[rep].error = e.what();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }

  MonteCarloResult result;
  result.design = design;
  result.alpha_grid = alpha_grid;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  const auto add_series = [&](const std::string& method, std::optional<double> alpha,
                              const std::string& metric, auto&& getter) {
    MetricSeries s;
    s.method = method;
    s.alpha = alpha;
    s.metric = metric;
    s.values.resize(design.reps, nan);
    for (std::size_t r = 0; r < design.reps; ++r)
      if (!outcomes[r].failed) s.values[r] = getter(outcomes[r]);
    detail::finalize_series(s);
    result.series.push_back(std::move(s));
  };

  for (const char* prior : {"snp", "dnp"}) {
    const bool is_snp = std::string(prior) == "snp";
    const auto est = [is_snp](const detail::RepOutcome& o) -> const RepMetrics& {
      return is_snp ? o.snp_est : o.dnp_est;
    };
    add_series(prior, std::nullopt, "mse_mean",
               [est](const detail::RepOutcome& o) { return est(o).mse_mean; });
    add_series(prior, std::nullopt, "mse_mode",
               [est](const detail::RepOutcome& o) { return est(o).mse_mode; });
    add_series(prior, std::nullopt, "sparsity_bias",
               [est](const detail::RepOutcome& o) { return est(o).sparsity_bias; });
    add_series(prior, ci_alpha, "ci_coverage",
               [est](const detail::RepOutcome& o) { return est(o).ci_coverage; });
  }
  add_series("identity", std::nullopt, "mse_mean",
             [](const detail::RepOutcome& o) { return o.mse_identity; });

  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    for (std::size_t ai = 0; ai < alpha_grid.size(); ++ai) {
      const std::size_t slot = mi * alpha_grid.size() + ai;
      add_series(sim_method_name(methods[mi]), alpha_grid[ai], "fdp",
                 [slot](const detail::RepOutcome& o) { return o.fdp[slot]; });
      add_series(sim_method_name(methods[mi]), alpha_grid[ai], "power",
                 [slot](const detail::RepOutcome& o) { return o.power[slot]; });
    }
  }

  for (std::size_t r = 0; r < design.reps; ++r) {
    if (outcomes[r].failed) {
      result.failed_reps.push_back(r);
      result.failure_messages.push_back(outcomes[r].error);
    }
  }
  return result;
}

}  // namespace sneb
