// Command-line surface: fit priors, test hypotheses, run simulation sweeps.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "sneb/em.hpp"
#include "sneb/io.hpp"
#include "sneb/multiple_testing.hpp"
#include "sneb/posterior.hpp"
#include "sneb/simulate.hpp"

namespace {

struct CommonOpts {
  std::string input;
  std::string format = "yz-csv";
  std::string prior = "snp";
  std::string pooling = "printed";
  std::string out_dir = ".";
  std::size_t grid_size = 400;
  sneb::EmConfig em;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool needs_input) {
  auto* in = cmd->add_option("--input", opts.input, "input CSV file");
  if (needs_input) in->required();
  cmd->add_option("--format", opts.format, "input format")
      ->check(CLI::IsMember({"yz-csv", "two-group-csv"}));
  cmd->add_option("--prior", opts.prior, "prior family")
      ->check(CLI::IsMember({"snp", "dnp"}));
  cmd->add_option("--pooling", opts.pooling, "two-group pooled-variance pairing")
      ->check(CLI::IsMember({"printed", "standard"}));
  cmd->add_option("--grid-size", opts.grid_size, "number of grid points")
      ->check(CLI::Range(std::size_t(3), std::size_t(100000)));
  cmd->add_option("--out-dir", opts.out_dir, "output directory");
  cmd->add_option("--max-iter", opts.em.max_iter, "EM iteration cap");
  cmd->add_option("--rel-tol", opts.em.rel_tol, "EM relative log-likelihood tolerance");
  cmd->add_option("--lambda0-init", opts.em.lambda0_init, "initial spike scale");
  cmd->add_option("--omega-init", opts.em.omega_init, "initial spike weight");
}

sneb::Dataset load_input(const CommonOpts& opts) {
  const auto format = opts.format == "two-group-csv" ? sneb::InputFormat::TwoGroupCsv
                                                     : sneb::InputFormat::YzCsv;
  const auto rule = opts.pooling == "standard" ? sneb::PoolingRule::Standard
                                               : sneb::PoolingRule::AsPrinted;
  return sneb::load_dataset(opts.input, format, rule);
}

std::string out_path(const CommonOpts& opts, const std::string& name) {
  std::filesystem::create_directories(opts.out_dir);
  return (std::filesystem::path(opts.out_dir) / name).string();
}

struct FittedPrior {
  std::optional<sneb::SnpPrior> snp;
  std::optional<sneb::DnpPrior> dnp;
  sneb::EmTrace trace;

  nlohmann::json to_json() const {
    nlohmann::json j = snp ? sneb::prior_to_json(*snp) : sneb::prior_to_json(*dnp);
    j["em"] = {{"iterations", trace.iterations_run},
               {"converged", trace.converged},
               {"loglik", trace.loglik_per_iter.back()}};
    return j;
  }
};

FittedPrior fit_prior(const CommonOpts& opts, const sneb::Dataset& data, const sneb::Grid& grid) {
  FittedPrior out;
  if (opts.prior == "snp") {
    auto [prior, trace] = sneb::fit_snp(data, grid, opts.em);
    out.snp = std::move(prior);
    out.trace = std::move(trace);
  } else {
    auto [prior, trace] = sneb::fit_dnp(data, grid, opts.em);
    out.dnp = std::move(prior);
    out.trace = std::move(trace);
  }
  return out;
}

int run_fit(const CommonOpts& opts) {
  const auto data = load_input(opts);
  const auto grid = sneb::build_grid(data.y, opts.grid_size);
  const auto fitted = fit_prior(opts, data, grid);
  const auto path = out_path(opts, "prior.json");
  sneb::write_text_file(path, fitted.to_json().dump(2) + "\n");
  std::cout << "wrote " << path << " (" << fitted.trace.iterations_run << " iterations, "
            << (fitted.trace.converged ? "converged" : "iteration cap") << ")\n";
  return 0;
}

struct TestOpts {
  CommonOpts common;
  std::string method = "neb-opt";
  double alpha = 0.05;
  double null_sd = 1.0;
  double storey_lambda = 0.5;
};

int run_test(const TestOpts& opts) {
  const auto data = load_input(opts.common);
  const auto grid = sneb::build_grid(data.y, opts.common.grid_size);
  const auto fitted = fit_prior(opts.common, data, grid);
  const std::size_t n = data.size();

  std::vector<double> z(n), pvals(n), null_probs(n), estimate(n);
  std::vector<sneb::CredibleInterval> intervals(n);
  const std::optional<sneb::NullRegion> region =
      fitted.snp ? std::optional(sneb::null_region(*fitted.snp)) : std::nullopt;
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = data.y[i] / data.sigma[i];
    pvals[i] = sneb::z_to_pvalue(z[i], opts.null_sd);
    const auto table = fitted.snp ? sneb::posterior_table(*fitted.snp, data.y[i], data.sigma[i])
                                  : sneb::posterior_table(*fitted.dnp, data.y[i], data.sigma[i]);
    estimate[i] = sneb::posterior_mean(table);
    intervals[i] = sneb::credible_interval(table, opts.alpha);
    null_probs[i] = fitted.snp ? sneb::null_probability(table, *region)
                               : sneb::null_probability(*fitted.dnp, table);
  }
  double omega_hat = 0.0;
  for (double p : null_probs) omega_hat += p;
  omega_hat /= double(std::max<std::size_t>(n, 1));

  sneb::TestDecision decision;
  if (opts.method == "neb-opt") {
    decision = sneb::neb_opt(null_probs, opts.alpha);
  } else if (opts.method == "bh") {
    decision = sneb::bh(pvals, opts.alpha);
  } else if (opts.method == "adaptive-bh") {
    decision = sneb::adaptive_bh(pvals, opts.alpha, std::clamp(omega_hat, 1e-12, 1.0));
  } else if (opts.method == "storey") {
    decision = sneb::storey(pvals, opts.alpha, opts.storey_lambda);
  } else {
    decision = sneb::adaptive_storey(pvals, opts.alpha, std::clamp(omega_hat, 1e-12, 1.0));
  }

  std::string table = "y,sigma,z,p,estimate,ci_lower,ci_upper,reject\n";
  for (std::size_t i = 0; i < n; ++i) {
    const double p_col = opts.method == "neb-opt" ? null_probs[i] : pvals[i];
    table += sneb::detail::fmt_double(data.y[i]) + "," +
             sneb::detail::fmt_double(data.sigma[i]) + "," + sneb::detail::fmt_double(z[i]) +
             "," + sneb::detail::fmt_double(p_col) + "," +
             sneb::detail::fmt_double(estimate[i]) + "," +
             sneb::detail::fmt_double(intervals[i].lower) + "," +
             sneb::detail::fmt_double(intervals[i].upper) + "," +
             (decision.reject[i] ? "1" : "0") + "\n";
  }
  const auto table_path = out_path(opts.common, "test_table.csv");
  sneb::write_text_file(table_path, table);

  nlohmann::json summary = {{"method", opts.method},
                            {"prior", opts.common.prior},
                            {"alpha", opts.alpha},
                            {"null_sd", opts.null_sd},
                            {"n", n},
                            {"k_rejected", decision.k_rejected},
                            {"omega_hat", omega_hat}};
  if (opts.method == "storey" || opts.method == "adaptive-storey")
    summary["storey_lambda"] = opts.storey_lambda;
  const auto summary_path = out_path(opts.common, "test_summary.json");
  sneb::write_text_file(summary_path, summary.dump(2) + "\n");
  std::cout << "rejected " << decision.k_rejected << " of " << n << " hypotheses; wrote "
            << table_path << " and " << summary_path << "\n";
  return 0;
}

struct SimulateOpts {
  CommonOpts common;
  sneb::SimDesign design;
  double alpha = 0.05;
  std::size_t threads = 0;
};

int run_simulate(const SimulateOpts& opts) {
  const auto result = sneb::run_monte_carlo(opts.design, sneb::all_sim_methods(), {opts.alpha},
                                            opts.common.em, opts.common.grid_size, opts.threads);
  const auto csv_path = out_path(opts.common, "metrics.csv");
  const auto json_path = out_path(opts.common, "metrics.json");
  sneb::write_text_file(csv_path, sneb::metrics_to_csv(result));
  sneb::write_text_file(json_path, sneb::metrics_to_json(result).dump(2) + "\n");
  std::cout << "ran " << opts.design.reps << " reps (" << result.failed_reps.size()
            << " failed); wrote " << csv_path << " and " << json_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spike-and-nonparametric empirical Bayes estimation and testing"};
  app.require_subcommand(1);

  CommonOpts fit_opts;
  auto* fit_cmd = app.add_subcommand("fit", "fit a prior and write it as JSON");
  add_common(fit_cmd, fit_opts, true);

  TestOpts test_opts;
  auto* test_cmd = app.add_subcommand("test", "fit, estimate, and run a testing procedure");
  add_common(test_cmd, test_opts.common, true);
  test_cmd->add_option("--method", test_opts.method, "testing procedure")
      ->check(CLI::IsMember({"neb-opt", "bh", "adaptive-bh", "storey", "adaptive-storey"}));
  test_cmd->add_option("--alpha", test_opts.alpha, "nominal FDR level");
  test_cmd->add_option("--null-sd", test_opts.null_sd, "null standard deviation for p-values");
  test_cmd->add_option("--storey-lambda", test_opts.storey_lambda, "Storey tuning parameter");

  SimulateOpts sim_opts;
  auto* sim_cmd = app.add_subcommand("simulate", "run the Monte Carlo harness");
  add_common(sim_cmd, sim_opts.common, false);
  sim_cmd->add_option("--w", sim_opts.design.w, "sparsity level");
  sim_cmd->add_option("--V", sim_opts.design.V, "signal location");
  sim_cmd->add_option("--u", sim_opts.design.u, "variance upper bound");
  sim_cmd->add_option("--n", sim_opts.design.n, "observations per rep");
  sim_cmd->add_option("--reps", sim_opts.design.reps, "Monte Carlo repetitions");
  sim_cmd->add_option("--seed", sim_opts.design.seed, "RNG seed");
  sim_cmd->add_option("--alpha", sim_opts.alpha, "nominal FDR level");
  sim_cmd->add_option("--threads", sim_opts.threads, "worker threads (0 = auto)");

  try {
    app.parse(argc, argv);
    if (fit_cmd->parsed()) return run_fit(fit_opts);
    if (test_cmd->parsed()) return run_test(test_opts);
    return run_simulate(sim_opts);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const sneb::Error& e) {
    nlohmann::json j = {{"error", e.kind_name()}, {"message", e.what()}};
    if (e.index() >= 0) j["index"] = e.index();
    std::cerr << j.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
}
