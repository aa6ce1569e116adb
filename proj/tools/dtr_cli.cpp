// Command-line front end: simulate | fit | coverage | oracle.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dtr/dtr.hpp"

namespace {

constexpr int kUsageError = 2;
constexpr int kRuntimeError = 1;

struct SimulateArgs {
  long n = 1000;
  double alpha1 = 0.0, alpha2 = 0.0;
  std::uint64_t seed = 0, stream = 0;
  std::string out;
};

struct FitArgs {
  std::string data;
  double beta_exp = 0.26, beta_scale = 1.0;
  bool beta_inf = false;
  std::string learner = "forest";
  std::string mode = "in_sample";
  std::vector<double> levels{0.95, 0.90};
  double solver_ridge = 0.0;
  std::uint64_t seed = 0;
  std::string out, csv;
};

struct CoverageArgs {
  int reps = 100;
  std::vector<long> n{1000};
  std::vector<double> alpha1{0.0}, alpha2{0.0};
  std::vector<double> beta_exp{0.26};
  double beta_scale = 1.0;
  std::vector<double> level{0.95};
  std::string learner = "forest";
  std::string mode = "in_sample";
  std::uint64_t seed = 0;
  int jobs = 1;
  long oracle_reps = 1'000'000;
  std::string out, table, reps_out;
};

struct OracleArgs {
  double alpha1 = 0.0, alpha2 = 0.0;
  long reps = 1'000'000;
  std::uint64_t seed = 0;
  std::string out, g_curve;
};

void warn_exponent(double exponent) {
  if (!dtr::exponent_in_valid_window(exponent))
    std::cerr << "warning: exponent outside theoretical window (1/4, 1/2) for δ=1 (got "
              << dtr::detail::format_double(exponent) << ")\n";
}

void run_simulate(const SimulateArgs& a) {
  const auto table = dtr::simulate({a.alpha1, a.alpha2, a.n, a.seed, a.stream});
  dtr::save_trajectories(table, a.out);
  std::cout << "wrote " << table.rows() << " rows to " << a.out << "\n";
}

void run_fit(const FitArgs& a) {
  dtr::FitConfig cfg;
  cfg.beta_schedule = a.beta_inf ? dtr::BetaSchedule::hard_max() : dtr::BetaSchedule{a.beta_exp, a.beta_scale, false};
  cfg.nuisances = dtr::nuisance_source(a.learner);
  cfg.mode = dtr::parse_fit_mode(a.mode);
  cfg.solver_ridge = a.solver_ridge;
  cfg.seed = a.seed;
  if (!a.beta_inf) warn_exponent(a.beta_exp);

  const auto data = dtr::load_trajectories(a.data);
  const auto f = dtr::evaluate_features(data, dtr::experiment_feature_maps());
  const auto fit = dtr::fit_regime(data, f, cfg);
  const auto report = dtr::build_report(data, f, fit, a.levels);
  const auto json = dtr::report_to_json(fit, report, cfg);
  if (!a.out.empty()) dtr::write_text_file(a.out, json.dump(2) + "\n");
  if (!a.csv.empty()) dtr::write_text_file(a.csv, dtr::report_to_csv(report));

  std::cout << "n=" << report.n << " beta=" << json["beta"].dump() << " mode=" << dtr::to_string(cfg.mode)
            << " learner=" << cfg.nuisances.describe() << "\n";
  auto line = [&](const std::string& name, const dtr::ScalarInference& s) {
    std::cout << "  " << name << " = " << s.estimate << "  (sd " << s.sigma << ")";
    for (const auto& iv : s.intervals) std::cout << "  " << iv.level << ": [" << iv.lo << ", " << iv.hi << "]";
    std::cout << "\n";
  };
  line("V", report.value);
  for (std::size_t j = 0; j < report.psi.size(); ++j) line("psi" + std::to_string(j + 1), report.psi[j]);
  for (std::size_t j = 0; j < report.theta.size(); ++j) line("theta" + std::to_string(j + 1), report.theta[j]);
}

std::string coverage_echo(const CoverageArgs& a) {
  std::ostringstream s;
  s << "# learner=" << a.learner << " mode=" << a.mode << " reps=" << a.reps << " seed=" << a.seed
    << " beta_scale=" << dtr::detail::format_double(a.beta_scale) << " oracle_reps=" << a.oracle_reps << "\n";
  return s.str();
}

void run_coverage(const CoverageArgs& a) {
  dtr::CoverageSettings s;
  s.beta_exponents = a.beta_exp;
  s.beta_scale = a.beta_scale;
  s.alpha1 = a.alpha1;
  s.alpha2 = a.alpha2;
  s.ns.assign(a.n.begin(), a.n.end());
  s.levels = a.level;
  s.reps = a.reps;
  s.learner = a.learner;
  s.mode = dtr::parse_fit_mode(a.mode);
  s.seed = a.seed;
  s.jobs = a.jobs;
  s.oracle_reps = a.oracle_reps;
  for (double e : a.beta_exp) warn_exponent(e);
  const auto result = dtr::run_coverage(s);
  const std::string table = coverage_echo(a) + dtr::coverage_table(result.cells);
  if (!a.out.empty()) dtr::write_text_file(a.out, dtr::coverage_csv(result.cells));
  if (!a.table.empty()) dtr::write_text_file(a.table, table);
  if (!a.reps_out.empty()) dtr::write_text_file(a.reps_out, dtr::replications_csv(result.replications));
  std::cout << table;
}

void run_oracle(const OracleArgs& a) {
  const auto v = dtr::oracle_value(a.alpha1, a.alpha2, a.reps, a.seed);
  nlohmann::json out{{"alpha1", a.alpha1},         {"alpha2", a.alpha2},  {"value", v.value},
                     {"se", v.standard_error},     {"method", v.method},  {"mc_value", v.mc_value},
                     {"mc_se", v.mc_standard_error}, {"mc_reps", v.mc_reps}, {"seed", a.seed}};
  out["closed_form"] = v.closed_form ? nlohmann::json(*v.closed_form) : nlohmann::json(nullptr);
  if (!a.out.empty()) dtr::write_text_file(a.out, out.dump(2) + "\n");
  std::cout << "V* = " << v.value << " (" << v.method << ", se " << v.standard_error << "); Monte Carlo "
            << v.mc_value << " ± " << v.mc_standard_error << "\n";
  if (!a.g_curve.empty()) {
    const auto quad = dtr::quadratic_g_fit();
    std::ostringstream csv;
    csv << "x,g,quadratic\n";
    for (int i = 0; i < 500; ++i) {
      const double x = -1.0 + 5.0 * i / 499.0;
      csv << dtr::detail::format_double(x) << ',' << dtr::detail::format_double(dtr::truncated_mean_g(x)) << ','
          << dtr::detail::format_double(quad(x)) << '\n';
    }
    dtr::write_text_file(a.g_curve, csv.str());
    std::cout << "quadratic fit kappa = (" << quad.kappa0 << ", " << quad.kappa1 << ", " << quad.kappa2
              << "), max abs error " << quad.max_abs_error << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Softmax G-estimation and inference for two-period treatment regimes"};
  app.set_config("--config", "", "TOML/INI file of option values (flags take precedence)");
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* cmd_sim = app.add_subcommand("simulate", "Draw a data set from the simulation model");
  cmd_sim->add_option("--n", sim.n, "Rows")->check(CLI::PositiveNumber)->capture_default_str();
  cmd_sim->add_option("--alpha1", sim.alpha1, "First-period effect")->capture_default_str();
  cmd_sim->add_option("--alpha2", sim.alpha2, "Second-period effect")->capture_default_str();
  cmd_sim->add_option("--seed", sim.seed, "RNG seed")->capture_default_str();
  cmd_sim->add_option("--stream", sim.stream, "RNG stream (replication index)")->capture_default_str();
  cmd_sim->add_option("--out", sim.out, "Output CSV")->required();

  FitArgs fit;
  auto* cmd_fit = app.add_subcommand("fit", "Estimate psi, theta and V* with confidence intervals");
  cmd_fit->add_option("--data", fit.data, "Input CSV (s_*, t1, x_*, t2, y)")->required();
  cmd_fit->add_option("--beta-exp", fit.beta_exp, "beta = scale * n^exp")->capture_default_str();
  cmd_fit->add_option("--beta-scale", fit.beta_scale, "beta scale")->check(CLI::PositiveNumber)->capture_default_str();
  cmd_fit->add_flag("--beta-inf", fit.beta_inf, "Use the hard maximum");
  cmd_fit->add_option("--learner", fit.learner, "ridge|knn|forest[:k=v,..] or oracle:dgp:alpha1=..,alpha2=..")
      ->capture_default_str();
  cmd_fit->add_option("--mode", fit.mode, "in_sample or nested_crossfit")->capture_default_str();
  cmd_fit->add_option("--levels", fit.levels, "Confidence levels")->delimiter(',')->check(CLI::Range(0.0, 1.0));
  cmd_fit->add_option("--solver-ridge", fit.solver_ridge, "Gram rescue ridge")->capture_default_str();
  cmd_fit->add_option("--seed", fit.seed, "Learner seed")->capture_default_str();
  cmd_fit->add_option("--out", fit.out, "JSON report");
  cmd_fit->add_option("--csv", fit.csv, "One-row CSV summary");

  CoverageArgs cov;
  auto* cmd_cov = app.add_subcommand("coverage", "Monte Carlo coverage of the V* interval");
  cmd_cov->add_option("--reps", cov.reps, "Replications per cell")->check(CLI::PositiveNumber)->capture_default_str();
  cmd_cov->add_option("--n", cov.n, "Sample sizes")->delimiter(',')->check(CLI::PositiveNumber);
  cmd_cov->add_option("--alpha1", cov.alpha1, "alpha1 values")->delimiter(',');
  cmd_cov->add_option("--alpha2", cov.alpha2, "alpha2 values")->delimiter(',');
  cmd_cov->add_option("--beta-exp", cov.beta_exp, "beta exponents")->delimiter(',');
  cmd_cov->add_option("--beta-scale", cov.beta_scale, "beta scale")->check(CLI::PositiveNumber)->capture_default_str();
  cmd_cov->add_option("--level", cov.level, "Confidence levels")->delimiter(',')->check(CLI::Range(0.0, 1.0));
  cmd_cov->add_option("--learner", cov.learner, "Nuisance learner spec")->capture_default_str();
  cmd_cov->add_option("--mode", cov.mode, "in_sample or nested_crossfit")->capture_default_str();
  cmd_cov->add_option("--seed", cov.seed, "Base seed")->capture_default_str();
  cmd_cov->add_option("--jobs", cov.jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  cmd_cov->add_option("--oracle-reps", cov.oracle_reps, "Monte Carlo draws for V* without closed form")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd_cov->add_option("--out", cov.out, "Coverage CSV");
  cmd_cov->add_option("--table", cov.table, "Aligned text table");
  cmd_cov->add_option("--reps-out", cov.reps_out, "Per-replication CSV");

  OracleArgs orc;
  auto* cmd_orc = app.add_subcommand("oracle", "True optimal value V* of a scenario");
  cmd_orc->add_option("--alpha1", orc.alpha1, "First-period effect")->capture_default_str();
  cmd_orc->add_option("--alpha2", orc.alpha2, "Second-period effect")->capture_default_str();
  cmd_orc->add_option("--reps", orc.reps, "Monte Carlo draws")->check(CLI::Range(2L, 1'000'000'000L))->capture_default_str();
  cmd_orc->add_option("--seed", orc.seed, "RNG seed")->capture_default_str();
  cmd_orc->add_option("--out", orc.out, "JSON output");
  cmd_orc->add_option("--g-curve", orc.g_curve, "CSV of g and its quadratic approximation on [-1, 4]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    if (*cmd_sim) run_simulate(sim);
    if (*cmd_fit) run_fit(fit);
    if (*cmd_cov) run_coverage(cov);
    if (*cmd_orc) run_oracle(orc);
  } catch (const dtr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return 0;
}
