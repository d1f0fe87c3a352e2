#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "sneb/em.hpp"

using namespace sneb;

namespace {

// Brute-force companions: raw density products, no stabilization, no library
// code paths beyond the types.
double phi_raw(double y, double mu, double sigma) {
  return std::exp(-0.5 * (y - mu) * (y - mu) / (sigma * sigma)) /
         (sigma * std::sqrt(2.0 * std::numbers::pi));
}

std::vector<double> spike_raw(const Grid& grid, double lambda0) {
  std::vector<double> w(grid.size());
  double s = 0.0;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    w[j] = 0.5 * lambda0 * std::exp(-lambda0 * std::abs(grid[j]));
    s += w[j];
  }
  for (double& v : w) v /= s;
  return w;
}

double loglik_raw(const Dataset& d, const Grid& g, const std::vector<double>& w) {
  double ll = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) s += phi_raw(d.y[i], g[j], d.sigma[i]) * w[j];
    ll += std::log(s);
  }
  return ll;
}

Dataset random_dataset(std::mt19937_64& rng, std::size_t n, double spread = 2.0) {
  std::normal_distribution<double> yd(0.0, spread);
  std::uniform_real_distribution<double> sd(0.5, 1.5);
  Dataset d;
  d.y.resize(n);
  d.sigma.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.y[i] = yd(rng);
    d.sigma[i] = sd(rng);
  }
  return d;
}

std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t m) {
  std::uniform_real_distribution<double> ud(0.01, 1.0);
  std::vector<double> v(m);
  double s = 0.0;
  for (auto& x : v) {
    x = ud(rng);
    s += x;
  }
  for (auto& x : v) x /= s;
  return v;
}

void require_nondecreasing(const std::vector<double>& ll, double slack = 1e-9) {
  for (std::size_t t = 1; t < ll.size(); ++t) REQUIRE(ll[t] >= ll[t - 1] - slack);
}

}  // namespace

TEST_CASE("marginal_loglik matches hand values") {
  const Grid g = Grid::from_points({-1.0, 0.0, 1.0});

  DnpPrior spike_only{g, {0.0, 1.0, 0.0}};
  Dataset one{{0.0}, {1.0}};
  REQUIRE_THAT(marginal_loglik(spike_only, one),
               Catch::Matchers::WithinAbs(-0.5 * std::log(2.0 * std::numbers::pi), 1e-12));
  REQUIRE_THAT(marginal_loglik(spike_only, one),
               Catch::Matchers::WithinAbs(-0.9189385332046727, 1e-9));

  DnpPrior uniform{g, {1.0 / 3, 1.0 / 3, 1.0 / 3}};
  REQUIRE(marginal_loglik(uniform, Dataset{}) == 0.0);

  Dataset half{{0.5}, {1.0}};
  const double want = std::log((phi_raw(0.5, -1.0, 1.0) + phi_raw(0.5, 0.0, 1.0) +
                                phi_raw(0.5, 1.0, 1.0)) / 3.0);
  REQUIRE_THAT(marginal_loglik(uniform, half), Catch::Matchers::WithinAbs(want, 1e-12));
}

TEST_CASE("marginal_loglik reports the underflowing observation") {
  // all prior mass on an atom whose scaled likelihood underflows to exact zero
  const Grid g = Grid::from_points({0.0, 60.0});
  DnpPrior p{g, {0.0, 1.0}};
  Dataset d{{0.0}, {0.5}};
  try {
    marginal_loglik(p, d);
    FAIL("expected numerical-underflow error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrorKind::NumericalUnderflow);
    REQUIRE(e.index() == 0);
  }
  REQUIRE_THROWS_AS(dnp_e_step(std::vector<double>{0.0, 1.0}, g, d), Error);
}

TEST_CASE("dnp_e_step hand examples") {
  {
    const Grid g = Grid::from_points({-1.0, 0.0, 1.0});
    Dataset d{{0.0}, {1.0}};
    const auto r = dnp_e_step(std::vector<double>{0.5, 0.0, 0.5}, g, d);
    REQUIRE_THAT(r.at(0, 0), Catch::Matchers::WithinAbs(0.5, 1e-14));
    REQUIRE(r.at(0, 1) == 0.0);
    REQUIRE_THAT(r.at(0, 2), Catch::Matchers::WithinAbs(0.5, 1e-14));
  }
  {
    const Grid g = Grid::from_points({-1.0, 0.0, 1.0});
    Dataset d{{0.7, -0.2}, {1.0, 0.8}};
    const auto r = dnp_e_step(std::vector<double>{1.0, 0.0, 0.0}, g, d);
    for (std::size_t i = 0; i < 2; ++i) {
      REQUIRE(r.at(i, 0) == 1.0);
      REQUIRE(r.at(i, 1) == 0.0);
      REQUIRE(r.at(i, 2) == 0.0);
    }
  }
  {
    const Grid g = Grid::from_points({0.0, 2.0});
    Dataset d{{1.0}, {1.0}};
    const auto r = dnp_e_step(std::vector<double>{0.3, 0.7}, g, d);
    // equal densities at both atoms, so the prior weights survive normalization
    REQUIRE_THAT(r.at(0, 0), Catch::Matchers::WithinAbs(0.3, 1e-12));
    REQUIRE_THAT(r.at(0, 1), Catch::Matchers::WithinAbs(0.7, 1e-12));
  }
}

TEST_CASE("dnp_m_step averages responsibilities") {
  {
    Responsibilities r{1, 3, {0.2, 0.5, 0.3}};
    const auto pi = dnp_m_step(r);
    REQUIRE(pi == std::vector<double>{0.2, 0.5, 0.3});
  }
  {
    Responsibilities r{2, 2, {1.0, 0.0, 0.0, 1.0}};
    const auto pi = dnp_m_step(r);
    REQUIRE_THAT(pi[0], Catch::Matchers::WithinAbs(0.5, 1e-15));
    REQUIRE_THAT(pi[1], Catch::Matchers::WithinAbs(0.5, 1e-15));
  }
  {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 1 + rng() % 30, m = 2 + rng() % 6;
      Responsibilities r{n, m, {}};
      r.data.resize(n * m);
      for (std::size_t i = 0; i < n; ++i) {
        auto row = random_simplex(rng, m);
        for (std::size_t j = 0; j < m; ++j) r.at(i, j) = row[j];
      }
      const auto pi = dnp_m_step(r);
      double s = 0.0;
      for (double v : pi) s += v;
      REQUIRE_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-12));
    }
  }
}

TEST_CASE("one EM iteration matches brute-force recomputation to 1e-12") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng() % 19;  // n <= 20
    const Dataset d = random_dataset(rng, n);
    const Grid g = build_grid(d.y, 3 + 2 * (rng() % 2));  // M in {3, 5}
    const std::size_t m = g.size();

    // DNP route
    const auto pi0 = random_simplex(rng, m);
    const auto resp = dnp_e_step(pi0, g, d);
    const auto pi1 = dnp_m_step(resp);
    std::vector<double> brute(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      std::vector<double> row(m);
      for (std::size_t j = 0; j < m; ++j) {
        row[j] = phi_raw(d.y[i], g[j], d.sigma[i]) * pi0[j];
        s += row[j];
      }
      for (std::size_t j = 0; j < m; ++j) {
        REQUIRE_THAT(resp.at(i, j), Catch::Matchers::WithinAbs(row[j] / s, 1e-12));
        brute[j] += row[j] / s;
      }
    }
    for (std::size_t j = 0; j < m; ++j)
      REQUIRE_THAT(pi1[j], Catch::Matchers::WithinAbs(brute[j] / double(n), 1e-12));

    // SNP route, one E-step and the analytic pi update
    const double omega = 0.3 + 0.4 * (double(rng() % 100) / 100.0);
    const double lambda0 = 1.0 + double(rng() % 5);
    SnpPrior prior{g, omega, lambda0, random_simplex(rng, m)};
    const auto sresp = snp_e_step(prior, d);
    const auto spike = spike_raw(g, lambda0);
    std::vector<double> theta(m), col(m, 0.0);
    for (std::size_t j = 0; j < m; ++j)
      theta[j] = omega * spike[j] + (1.0 - omega) * prior.gamma_pi[j];
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      std::vector<double> row(m);
      for (std::size_t j = 0; j < m; ++j) {
        row[j] = phi_raw(d.y[i], g[j], d.sigma[i]) * theta[j];
        s += row[j];
      }
      for (std::size_t j = 0; j < m; ++j) {
        REQUIRE_THAT(sresp.at(i, j), Catch::Matchers::WithinAbs(row[j] / s, 1e-12));
        col[j] += row[j] / s;
      }
    }
    const auto gamma1 = snp_m_step_pi(col, omega, lambda0, g);
    double total = 0.0;
    for (double c : col) total += c;
    std::vector<double> want(m);
    double ws = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      want[j] = std::max(0.0, col[j] / ((1.0 - omega) * total) -
                                  omega / (1.0 - omega) * spike[j]);
      ws += want[j];
    }
    for (std::size_t j = 0; j < m; ++j)
      REQUIRE_THAT(gamma1[j], Catch::Matchers::WithinAbs(want[j] / ws, 1e-12));
  }
}

TEST_CASE("fit_dnp recovers a pure-null signal") {
  std::mt19937_64 rng(2024);
  const std::size_t n = 2000;
  Dataset d;
  d.y.resize(n);
  d.sigma.resize(n);
  std::uniform_real_distribution<double> sd(0.5, 1.5);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    d.sigma[i] = sd(rng);
    d.y[i] = d.sigma[i] * noise(rng);  // all true means are zero
  }
  // spacing coarse enough that the zero atom is not shadowed by neighbors
  const Grid g = build_grid(d.y, 41);
  EmConfig cfg;
  const auto [prior, trace] = fit_dnp(d, g, cfg);
  REQUIRE(prior.sparsity() > 0.8);
  require_nondecreasing(trace.loglik_per_iter);
}

TEST_CASE("fit_dnp concentrates on the atom nearest a single observation") {
  const std::vector<double> y = {0.3};
  const Grid g = build_grid(y, 3);
  EmConfig cfg;
  cfg.max_iter = 500;
  Dataset d{{0.3}, {1.0}};
  const auto [prior, trace] = fit_dnp(d, g, cfg);
  // zero atom is nearest to 0.3 on this grid
  REQUIRE(prior.pi[g.zero_index] > 0.9);
  require_nondecreasing(trace.loglik_per_iter);
}

TEST_CASE("snp_e_step collapses to the pure components") {
  std::mt19937_64 rng(17);
  const Dataset d = random_dataset(rng, 12);
  const Grid g = build_grid(d.y, 5);
  const auto gamma = random_simplex(rng, g.size());

  SnpPrior no_spike{g, 0.0, 3.0, gamma};
  const auto a = snp_e_step(no_spike, d);
  const auto b = dnp_e_step(gamma, g, d);
  for (std::size_t i = 0; i < a.n; ++i)
    for (std::size_t j = 0; j < a.m; ++j)
      REQUIRE_THAT(a.at(i, j), Catch::Matchers::WithinAbs(b.at(i, j), 1e-15));

  SnpPrior all_spike{g, 1.0, 3.0, gamma};
  const auto c = snp_e_step(all_spike, d);
  const auto spike = spike_raw(g, 3.0);
  for (std::size_t i = 0; i < c.n; ++i) {
    double s = 0.0;
    std::vector<double> row(g.size());
    for (std::size_t j = 0; j < g.size(); ++j) {
      row[j] = phi_raw(d.y[i], g[j], d.sigma[i]) * spike[j];
      s += row[j];
    }
    for (std::size_t j = 0; j < g.size(); ++j)
      REQUIRE_THAT(c.at(i, j), Catch::Matchers::WithinAbs(row[j] / s, 1e-12));
  }
}

TEST_CASE("snp_e_step two-atom hand computation") {
  const Grid g = Grid::from_points({0.0, 2.0});
  const double lambda0 = 1.5, omega = 0.5;
  const std::vector<double> gamma = {0.25, 0.75};
  SnpPrior prior{g, omega, lambda0, gamma};
  Dataset d{{1.0}, {1.0}};
  const auto r = snp_e_step(prior, d);

  const double psi0 = 1.0, psi2 = std::exp(-lambda0 * 2.0);
  const double s = psi0 + psi2;
  const double theta0 = omega * psi0 / s + (1 - omega) * 0.25;
  const double theta2 = omega * psi2 / s + (1 - omega) * 0.75;
  // equal densities at the two atoms for y = 1
  REQUIRE_THAT(r.at(0, 0), Catch::Matchers::WithinAbs(theta0 / (theta0 + theta2), 1e-12));
  REQUIRE_THAT(r.at(0, 1), Catch::Matchers::WithinAbs(theta2 / (theta0 + theta2), 1e-12));
}

TEST_CASE("snp_m_step_pi analytic update") {
  const Grid g = Grid::from_points({-1.0, 0.0, 1.0});

  // omega = 0 reduces to plain normalization
  const std::vector<double> col = {1.0, 2.0, 1.0};
  const auto no_spike = snp_m_step_pi(col, 0.0, 10.0, g);
  REQUIRE_THAT(no_spike[0], Catch::Matchers::WithinAbs(0.25, 1e-14));
  REQUIRE_THAT(no_spike[1], Catch::Matchers::WithinAbs(0.5, 1e-14));
  REQUIRE_THAT(no_spike[2], Catch::Matchers::WithinAbs(0.25, 1e-14));

  // 3-atom case against independent arithmetic
  const double omega = 0.5, lambda0 = 10.0;
  const auto spike = spike_raw(g, lambda0);
  const auto got = snp_m_step_pi(col, omega, lambda0, g);
  std::vector<double> want(3);
  double s = 0.0;
  for (std::size_t j = 0; j < 3; ++j) {
    want[j] = std::max(0.0, col[j] / (0.5 * 4.0) - 1.0 * spike[j]);
    s += want[j];
  }
  for (std::size_t j = 0; j < 3; ++j)
    REQUIRE_THAT(got[j], Catch::Matchers::WithinAbs(want[j] / s, 1e-13));
}

TEST_CASE("snp_m_step_pi cannot saturate the clamp with a renormalized spike") {
  // the unclamped update sums to exactly 1, so at least one atom survives
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> wd(0.0, 0.999999);
  std::uniform_real_distribution<double> ld(0.01, 500.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Grid g = build_grid(random_dataset(rng, 6).y, 3 + 2 * (rng() % 3));
    std::vector<double> col(g.size());
    std::uniform_real_distribution<double> cd(0.0, 5.0);
    for (auto& c : col) c = cd(rng);
    col[rng() % col.size()] += 1e-3;  // keep the total positive
    const auto out = snp_m_step_pi(col, wd(rng), ld(rng), g);
    double s = 0.0;
    for (double v : out) {
      REQUIRE(v >= 0.0);
      s += v;
    }
    REQUIRE_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-10));
  }
}

TEST_CASE("solve_omega_lambda0 boundary behaviour") {
  EmConfig cfg;
  {
    // all responsibility mass on the zero atom: spike wins, omega to the top
    const Grid g = Grid::from_points({-1.0, 0.0, 1.0});
    const std::vector<double> col = {0.0, 5.0, 0.0};
    const std::vector<double> gamma = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    const auto rs = solve_omega_lambda0(col, gamma, g, cfg);
    REQUIRE(rs.omega == kOmegaMax);
    REQUIRE(rs.omega_at_boundary);
  }
  {
    // responsibilities proportional to gamma with no mass near zero
    const Grid g = Grid::from_points({-2.0, 0.0, 2.0});
    const std::vector<double> gamma = {0.5, 0.0, 0.5};
    const std::vector<double> col = {2.0, 0.0, 2.0};
    const auto rs = solve_omega_lambda0(col, gamma, g, cfg);
    REQUIRE(rs.omega == kOmegaMin);
    REQUIRE(rs.omega_at_boundary);
  }
}

TEST_CASE("solve_omega_lambda0 interior roots satisfy the score equations") {
  EmConfig cfg;
  std::mt19937_64 rng(31);
  int interior_omega = 0, interior_lambda0 = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const Dataset d = random_dataset(rng, 15);
    const Grid g = build_grid(d.y, 5);
    const auto gamma = random_simplex(rng, g.size());
    std::vector<double> col(g.size());
    std::uniform_real_distribution<double> cd(0.1, 4.0);
    for (auto& c : col) c = cd(rng);
    col[g.zero_index] += 6.0;  // give the spike something to explain

    const auto rs = solve_omega_lambda0(col, gamma, g, cfg);
    REQUIRE(rs.omega >= kOmegaMin);
    REQUIRE(rs.omega <= kOmegaMax);
    REQUIRE(rs.lambda0 >= kLambda0Min);
    REQUIRE(rs.lambda0 <= kLambda0Max);
    if (!rs.omega_at_boundary) {
      ++interior_omega;
      REQUIRE(std::abs(snp_score_omega(col, gamma, g, rs.omega, rs.lambda0)) < cfg.root_tol);
    }
    if (!rs.lambda0_at_boundary) {
      ++interior_lambda0;
      REQUIRE(std::abs(snp_score_lambda0(col, gamma, g, rs.omega, rs.lambda0)) <
              cfg.root_tol);
    }
  }
  REQUIRE(interior_omega > 0);
  REQUIRE(interior_lambda0 > 0);
}

TEST_CASE("fit_snp pure-null data pushes omega toward the upper clamp") {
  std::mt19937_64 rng(57);
  const std::size_t n = 2000;
  Dataset d;
  d.y.resize(n);
  d.sigma.resize(n);
  std::uniform_real_distribution<double> sd(0.5, 1.5);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    d.sigma[i] = sd(rng);
    d.y[i] = d.sigma[i] * noise(rng);
  }
  const Grid g = build_grid(d.y, 101);
  EmConfig cfg;
  const auto [prior, trace] = fit_snp(d, g, cfg);
  REQUIRE(prior.omega > 0.9);
  require_nondecreasing(trace.loglik_per_iter);
}

TEST_CASE("fit_snp ascent and final log-likelihood beats initialization") {
  std::mt19937_64 rng(73);
  for (int trial = 0; trial < 5; ++trial) {
    const Dataset d = random_dataset(rng, 120, 2.5);
    const Grid g = build_grid(d.y, 41);
    EmConfig cfg;
    cfg.max_iter = 150;
    const auto [prior, trace] = fit_snp(d, g, cfg);
    require_nondecreasing(trace.loglik_per_iter);
    REQUIRE(marginal_loglik(prior, d) >= trace.loglik_per_iter.front() - 1e-9);
    REQUIRE_THAT(marginal_loglik(prior, d),
                 Catch::Matchers::WithinAbs(trace.loglik_per_iter.back(), 1e-9));
  }
}

TEST_CASE("fit_snp with omega frozen at zero walks the DNP trajectory") {
  std::mt19937_64 rng(81);
  const Dataset d = random_dataset(rng, 30);
  const Grid g = build_grid(d.y, 7);
  const std::size_t m = g.size();

  // per-iteration comparison through the public operations
  std::vector<double> pi(m, 1.0 / double(m));
  std::vector<double> gamma = pi;
  for (int it = 0; it < 40; ++it) {
    pi = dnp_m_step(dnp_e_step(pi, g, d));

    SnpPrior prior{g, 0.0, 5.0, gamma};
    const auto resp = snp_e_step(prior, d);
    std::vector<double> col(m, 0.0);
    for (std::size_t i = 0; i < resp.n; ++i)
      for (std::size_t j = 0; j < m; ++j) col[j] += resp.at(i, j);
    gamma = snp_m_step_pi(col, 0.0, 5.0, g);

    for (std::size_t j = 0; j < m; ++j)
      REQUIRE_THAT(gamma[j], Catch::Matchers::WithinAbs(pi[j], 1e-12));
  }

  // full fits agree as well
  EmConfig cfg;
  cfg.max_iter = 60;
  cfg.rel_tol = 1e-13;
  EmConfig frozen = cfg;
  frozen.fixed_omega = 0.0;
  frozen.fixed_lambda0 = 5.0;
  const auto [dnp, dnp_trace] = fit_dnp(d, g, cfg);
  const auto [snp, snp_trace] = fit_snp(d, g, frozen);
  REQUIRE(dnp_trace.loglik_per_iter.size() == snp_trace.loglik_per_iter.size());
  for (std::size_t t = 0; t < dnp_trace.loglik_per_iter.size(); ++t)
    REQUIRE_THAT(snp_trace.loglik_per_iter[t],
                 Catch::Matchers::WithinAbs(dnp_trace.loglik_per_iter[t], 1e-9));
  for (std::size_t j = 0; j < m; ++j)
    REQUIRE_THAT(snp.gamma_pi[j], Catch::Matchers::WithinAbs(dnp.pi[j], 1e-9));
}

TEST_CASE("dnp fixed point is stable under one more EM round") {
  std::mt19937_64 rng(91);
  const Dataset d = random_dataset(rng, 10);
  const Grid g = build_grid(d.y, 5);
  EmConfig cfg;
  cfg.max_iter = 20000;
  cfg.rel_tol = 1e-16;
  const auto [prior, trace] = fit_dnp(d, g, cfg);
  const auto pi_next = dnp_m_step(dnp_e_step(prior.pi, g, d));
  for (std::size_t j = 0; j < g.size(); ++j)
    REQUIRE_THAT(pi_next[j], Catch::Matchers::WithinAbs(prior.pi[j], 1e-8));
}

TEST_CASE("simplex preservation across EM updates") {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 10; ++trial) {
    const Dataset d = random_dataset(rng, 40);
    const Grid g = build_grid(d.y, 11);
    EmConfig cfg;
    cfg.max_iter = 30;
    const auto [dnp, t1] = fit_dnp(d, g, cfg);
    REQUIRE_NOTHROW(dnp.validate());
    const auto [snp, t2] = fit_snp(d, g, cfg);
    REQUIRE_NOTHROW(snp.validate());
    double s = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) s += snp.mixture_weights()[j];
    REQUIRE_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-10));
  }
}

TEST_CASE("EmConfig validation") {
  EmConfig cfg;
  cfg.max_iter = 0;
  const Grid g = Grid::from_points({-1.0, 0.0, 1.0});
  Dataset d{{0.1}, {1.0}};
  REQUIRE_THROWS_AS(fit_dnp(d, g, cfg), Error);
  cfg = {};
  cfg.omega_init = 1.0;
  REQUIRE_THROWS_AS(fit_snp(d, g, cfg), Error);
  cfg = {};
  cfg.rel_tol = 0.0;
  REQUIRE_THROWS_AS(fit_dnp(d, g, cfg), Error);
}
