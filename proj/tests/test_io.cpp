#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "sneb/io.hpp"

using namespace sneb;

TEST_CASE("load_observations_csv parses well-formed input") {
  std::istringstream in("y,sigma\n1.2,0.8\n");
  const auto d = load_observations_csv(in);
  REQUIRE(d.size() == 1);
  REQUIRE(d.y[0] == 1.2);
  REQUIRE(d.sigma[0] == 0.8);
}

TEST_CASE("load_observations_csv error kinds") {
  {
    std::istringstream in("");
    try {
      load_observations_csv(in);
      FAIL("expected empty-file");
    } catch (const Error& e) {
      REQUIRE(e.kind() == ErrorKind::EmptyFile);
    }
  }
  {
    std::istringstream in("y,sigma\n");
    REQUIRE_THROWS_AS(load_observations_csv(in), Error);
  }
  {
    std::istringstream in("a,b\n1,2\n");
    try {
      load_observations_csv(in);
      FAIL("expected missing-columns");
    } catch (const Error& e) {
      REQUIRE(e.kind() == ErrorKind::MissingColumns);
    }
  }
  {
    std::istringstream in("y,sigma\n1.0,oops\n");
    try {
      load_observations_csv(in);
      FAIL("expected parse-error");
    } catch (const Error& e) {
      REQUIRE(e.kind() == ErrorKind::ParseError);
      REQUIRE(e.index() == 2);
    }
  }
  {
    std::istringstream in("y,sigma\n1.0,1.0\n2.0,0\n");
    try {
      load_observations_csv(in);
      FAIL("expected invalid-value");
    } catch (const Error& e) {
      REQUIRE(e.kind() == ErrorKind::InvalidValue);
      REQUIRE(e.index() == 3);
    }
  }
}

TEST_CASE("observations round-trip bit-exactly") {
  Dataset d;
  d.y = {1.2345678901234567, -0.000012345, 3e8, -7.5};
  d.sigma = {0.5, 1.0000000000000002, 2.25, 0.875};
  std::ostringstream out;
  write_observations(out, d);
  std::istringstream in(out.str());
  const auto back = load_observations_csv(in);
  REQUIRE(back.y == d.y);
  REQUIRE(back.sigma == d.sigma);
}

TEST_CASE("two-group CSV loading") {
  std::istringstream in(
      "gene,g1_a,g1_b,g2_a,g2_b\n"
      "G1,1.0,2.0,3.0,5.0\n"
      "G2,0.0,1.0,0.5,1.5\n");
  const auto data = load_two_group_csv(in);
  REQUIRE(data.labels == std::vector<std::string>{"G1", "G2"});
  REQUIRE(data.group1[0] == std::vector<double>{1.0, 2.0});
  REQUIRE(data.group2[1] == std::vector<double>{0.5, 1.5});

  std::istringstream bad("gene,g1_a,other\nG1,1.0,2.0\n");
  try {
    load_two_group_csv(bad);
    FAIL("expected missing-columns");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrorKind::MissingColumns);
  }
}

TEST_CASE("pooled_two_sample follows the printed formula") {
  // 2 genes, n1 = n2 = 2; verified against spreadsheet-style arithmetic
  const std::vector<std::vector<double>> g1 = {{1.0, 2.0}, {0.0, 4.0}};
  const std::vector<std::vector<double>> g2 = {{3.0, 5.0}, {1.0, 1.5}};

  const auto printed = pooled_two_sample(g1, g2, PoolingRule::AsPrinted);
  // gene 0: means 1.5 / 4.0, s1^2 = 0.5, s2^2 = 2.0
  // printed: [(n2-1) s1^2 + (n1-1) s2^2] / (n-2) * (1/2 + 1/2) = (0.5 + 2.0)/2
  REQUIRE_THAT(printed.y[0], Catch::Matchers::WithinAbs(2.5, 1e-12));
  REQUIRE_THAT(printed.sigma[0], Catch::Matchers::WithinAbs(std::sqrt(1.25), 1e-12));
  // gene 1: means 2.0 / 1.25, s1^2 = 8.0, s2^2 = 0.125
  REQUIRE_THAT(printed.y[1], Catch::Matchers::WithinAbs(-0.75, 1e-12));
  REQUIRE_THAT(printed.sigma[1], Catch::Matchers::WithinAbs(std::sqrt((8.0 + 0.125) / 2.0), 1e-12));

  // equal group sizes make the two pairings agree
  const auto standard = pooled_two_sample(g1, g2, PoolingRule::Standard);
  REQUIRE_THAT(standard.sigma[0], Catch::Matchers::WithinAbs(printed.sigma[0], 1e-15));

  // unequal group sizes distinguish them
  const std::vector<std::vector<double>> h1 = {{1.0, 2.0, 3.0}};  // n1 = 3, s^2 = 1
  const std::vector<std::vector<double>> h2 = {{0.0, 4.0}};       // n2 = 2, s^2 = 8
  const auto p1 = pooled_two_sample(h1, h2, PoolingRule::AsPrinted);
  const auto p2 = pooled_two_sample(h1, h2, PoolingRule::Standard);
  const double scale = (1.0 / 3.0 + 1.0 / 2.0) / 3.0;  // (1/n1 + 1/n2) / (n - 2)
  REQUIRE_THAT(p1.sigma[0] * p1.sigma[0],
               Catch::Matchers::WithinAbs((1.0 * 1.0 + 2.0 * 8.0) * scale, 1e-12));
  REQUIRE_THAT(p2.sigma[0] * p2.sigma[0],
               Catch::Matchers::WithinAbs((2.0 * 1.0 + 1.0 * 8.0) * scale, 1e-12));
  REQUIRE(p1.sigma[0] != p2.sigma[0]);
}

TEST_CASE("pooled_two_sample error paths") {
  // identical values across groups but with spread: all y = 0
  const std::vector<std::vector<double>> same = {{1.0, 3.0}};
  const auto d = pooled_two_sample(same, same);
  REQUIRE(d.y[0] == 0.0);
  REQUIRE(d.sigma[0] > 0.0);

  // zero within-group variance: sigma = 0 is rejected
  const std::vector<std::vector<double>> flat1 = {{0.0, 0.0}};
  const std::vector<std::vector<double>> flat2 = {{2.0, 2.0}};
  try {
    pooled_two_sample(flat1, flat2);
    FAIL("expected invalid-value");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrorKind::InvalidValue);
    REQUIRE(e.index() == 0);
  }

  // group too small
  const std::vector<std::vector<double>> tiny = {{1.0}};
  REQUIRE_THROWS_AS(pooled_two_sample(tiny, flat2), Error);
  // gene count mismatch
  const std::vector<std::vector<double>> two = {{1.0, 2.0}, {1.0, 2.0}};
  REQUIRE_THROWS_AS(pooled_two_sample(two, flat2), Error);
}

TEST_CASE("prior JSON round-trips") {
  const Grid g = Grid::from_points({-1.0, 0.0, 1.0});
  DnpPrior dnp{g, {0.25, 0.5, 0.25}};
  const auto j1 = prior_to_json(dnp);
  const auto dnp2 = dnp_prior_from_json(j1);
  REQUIRE(dnp2.pi == dnp.pi);
  REQUIRE(dnp2.grid.points == g.points);

  SnpPrior snp{g, 0.7, 3.5, {0.1, 0.2, 0.7}};
  const auto j2 = prior_to_json(snp);
  const auto snp2 = snp_prior_from_json(j2);
  REQUIRE(snp2.omega == snp.omega);
  REQUIRE(snp2.lambda0 == snp.lambda0);
  REQUIRE(snp2.gamma_pi == snp.gamma_pi);

  REQUIRE_THROWS_AS(dnp_prior_from_json(j2), Error);
}

TEST_CASE("metrics CSV has the documented long format") {
  SimDesign design;
  design.n = 40;
  design.w = 0.8;
  design.seed = 3;
  design.reps = 2;
  EmConfig cfg;
  cfg.max_iter = 25;
  const auto result = run_monte_carlo(design, {SimMethod::Bh}, {0.05}, cfg, 31);
  const auto csv = metrics_to_csv(result);
  REQUIRE(csv.rfind("n,w,V,u,seed,reps,method,alpha,metric,value,rep\n", 0) == 0);
  REQUIRE(csv.find(",bh,") != std::string::npos);
  REQUIRE(csv.find(",fdp,") != std::string::npos);
  REQUIRE(csv.find(",identity,") != std::string::npos);

  const auto j = metrics_to_json(result);
  REQUIRE(j.at("design").at("n") == 40);
  REQUIRE(j.at("series").is_array());
}
