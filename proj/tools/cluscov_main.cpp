// Command-line front end: CSV ingestion, estimator and Monte Carlo runs,
// machine-readable JSON reports. Exit status: 0 success, 1 estimation error,
// 2 configuration error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cluscov/cluscov.hpp"
#include "cluscov/report_json.hpp"

namespace {

using cluscov::json;

struct CommonArgs {
  std::string data_path;
  std::string cluster_column;
  std::string out_path;
  std::uint64_t seed = 12345;
  int threads = 1;
};

void add_output_option(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--out", args.out_path, "write the JSON report here (default: stdout)");
}

void add_data_options(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--data", args.data_path, "input CSV (header row, comma separated)")
      ->required();
  cmd->add_option("--cluster", args.cluster_column, "cluster id column")->required();
  add_output_option(cmd, args);
}

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(csv);
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

Eigen::VectorXd parse_init(const std::string& csv, Eigen::Index k) {
  if (csv.empty()) return Eigen::VectorXd::Zero(k);
  const auto items = split_list(csv);
  if (static_cast<Eigen::Index>(items.size()) != k) {
    throw cluscov::Error(cluscov::errc::wrong_config,
                         "--init needs " + std::to_string(k) + " comma-separated values");
  }
  Eigen::VectorXd init(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    init(j) = cluscov::parse_cell(items[static_cast<std::size_t>(j)], 0, j + 1);
  }
  return init;
}

// Column indices into the ingested sample (whose columns exclude the cluster
// id). An initial intercept column is prepended by value where needed.
Eigen::Index column_index(const cluscov::ClusteredSample& sample, const std::string& name) {
  const auto& names = sample.column_names();
  for (std::size_t j = 0; j < names.size(); ++j) {
    if (names[j] == name) return static_cast<Eigen::Index>(j);
  }
  throw cluscov::Error(cluscov::errc::missing_column, "no column named '" + name + "'");
}

Eigen::MatrixXd with_intercept(const cluscov::ClusteredSample& sample,
                               const std::vector<std::string>& columns) {
  Eigen::MatrixXd out(sample.n(), 1 + static_cast<Eigen::Index>(columns.size()));
  out.col(0).setOnes();
  for (std::size_t j = 0; j < columns.size(); ++j) {
    out.col(1 + static_cast<Eigen::Index>(j)) = sample.data().col(column_index(sample, columns[j]));
  }
  return out;
}

cluscov::DofMode parse_dof(const std::string& mode) {
  if (mode == "none") return cluscov::DofMode::none;
  if (mode == "hansen") return cluscov::DofMode::hansen;
  if (mode == "stata") return cluscov::DofMode::stata;
  throw cluscov::Error(cluscov::errc::wrong_config, "unknown dof mode '" + mode + "'");
}

cluscov::WeightMode parse_weight(const std::string& mode) {
  if (mode == "identity") return cluscov::WeightMode::identity;
  if (mode == "conventional") return cluscov::WeightMode::conventional;
  if (mode == "clustered") return cluscov::WeightMode::clustered;
  throw cluscov::Error(cluscov::errc::wrong_config, "unknown weight mode '" + mode + "'");
}

void emit(const json& report, const std::string& out_path) {
  const std::string text = report.dump(2) + "\n";
  if (out_path.empty()) {
    std::cout << text;
  } else {
    std::ofstream out(out_path);
    if (!out) {
      throw cluscov::Error(cluscov::errc::wrong_config, "cannot write '" + out_path + "'");
    }
    out << text;
  }
}

std::string per_rep_path(const std::string& out_path) {
  const auto dot = out_path.rfind('.');
  const std::string stem = dot == std::string::npos ? out_path : out_path.substr(0, dot);
  return stem + ".reps.csv";
}

json base_report(const std::string& command) {
  json report;
  report["tool"] = "cluscov";
  report["version"] = cluscov::kVersion;
  report["command"] = command;
  return report;
}

void emit_mc(const std::string& command, const json& config, const cluscov::McResult& result,
             const std::string& out_path) {
  json report = base_report(command);
  report["config"] = config;
  report["results"] = cluscov::mc_result_to_json(result);
  emit(report, out_path);
  if (!out_path.empty()) {
    cluscov::write_per_rep_csv(result, per_rep_path(out_path));
  }
}

// Single n taken from a one-element --n-grid (mc-coverage, mc-jsize, mc-clt2).
Eigen::Index single_n(const std::vector<Eigen::Index>& grid, Eigen::Index fallback) {
  if (grid.empty()) return fallback;
  if (grid.size() != 1) {
    throw cluscov::Error(cluscov::errc::wrong_config,
                         "this command takes a single n via --n-grid");
  }
  return grid.front();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cluster-robust estimation and Monte Carlo laboratory"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string y_col, dof_mode = "stata", weight_mode = "clustered", model_name, init_csv;
  std::string family_name = "independent";
  std::vector<std::string> x_cols, z_cols;
  bool centered = true, clt2_centered = false;
  double alpha = 0.0, level = 0.95, jsize_level = 0.05, moment_order = 2.0;
  Eigen::Index reps = 2000, cluster_size = 0, instruments = 2;
  std::vector<Eigen::Index> n_grid;

  auto* fit_ols_cmd = app.add_subcommand("fit-ols", "least squares with clustered variance");
  add_data_options(fit_ols_cmd, args);
  fit_ols_cmd->add_option("--y", y_col, "dependent variable column")->required();
  fit_ols_cmd->add_option("--x", x_cols, "regressor columns (intercept always included)")
      ->delimiter(',');
  fit_ols_cmd->add_option("--dof", dof_mode, "dof adjustment: none|hansen|stata");

  auto* fit_tsls_cmd = app.add_subcommand("fit-tsls", "two-stage least squares");
  add_data_options(fit_tsls_cmd, args);
  fit_tsls_cmd->add_option("--y", y_col, "dependent variable column")->required();
  fit_tsls_cmd->add_option("--x", x_cols, "regressor columns (intercept always included)")
      ->delimiter(',');
  fit_tsls_cmd->add_option("--z", z_cols, "instrument columns (intercept always included)")
      ->delimiter(',');
  fit_tsls_cmd->add_option("--dof", dof_mode, "dof adjustment: none|hansen|stata");

  auto* fit_mle_cmd = app.add_subcommand("fit-mle", "pseudo maximum likelihood");
  add_data_options(fit_mle_cmd, args);
  fit_mle_cmd->add_option("--model", model_name, "gaussian_location|poisson_log_rate|logit")
      ->required();
  fit_mle_cmd->add_option("--y", y_col, "outcome column (logit)");
  fit_mle_cmd->add_option("--x", x_cols, "data columns (default: all)")->delimiter(',');
  fit_mle_cmd->add_option("--init", init_csv, "comma-separated initial parameter values");

  auto* fit_gmm_cmd = app.add_subcommand("fit-gmm", "generalized method of moments");
  add_data_options(fit_gmm_cmd, args);
  fit_gmm_cmd->add_option("--model", model_name, "moment model (linear_iv)")
      ->default_val("linear_iv");
  fit_gmm_cmd->add_option("--y", y_col, "dependent variable column")->required();
  fit_gmm_cmd->add_option("--x", x_cols, "regressor columns (intercept always included)")
      ->delimiter(',');
  fit_gmm_cmd->add_option("--z", z_cols, "instrument columns (intercept always included)")
      ->delimiter(',');
  fit_gmm_cmd->add_option("--weight", weight_mode, "final weight: identity|conventional|clustered");
  fit_gmm_cmd->add_option("--centered", centered, "center the weight matrix");
  fit_gmm_cmd->add_option("--init", init_csv, "comma-separated initial parameter values");

  auto* diagnose_cmd = app.add_subcommand("diagnose", "cluster-size heterogeneity diagnostics");
  add_data_options(diagnose_cmd, args);
  diagnose_cmd->add_option("--r", moment_order, "moment order r >= 2");

  auto* mc_rate_cmd = app.add_subcommand("mc-rate", "convergence-rate experiment");
  mc_rate_cmd->add_option("--family", family_name, "DGP family")->required();
  mc_rate_cmd->add_option("--alpha", alpha, "cluster growth exponent in [0,1)");
  mc_rate_cmd->add_option("--n-grid", n_grid, "increasing sample sizes (>= 4)")
      ->required()
      ->delimiter(',');
  mc_rate_cmd->add_option("--cluster-size", cluster_size, "explicit cluster size override");
  mc_rate_cmd->add_option("--reps", reps, "replications per grid point");
  mc_rate_cmd->add_option("--seed", args.seed, "master seed");
  mc_rate_cmd->add_option("--threads", args.threads, "worker cap (results thread-invariant)");
  add_output_option(mc_rate_cmd, args);

  auto* mc_coverage_cmd = app.add_subcommand("mc-coverage", "CI coverage experiment");
  mc_coverage_cmd->add_option("--family", family_name, "DGP family")->required();
  mc_coverage_cmd->add_option("--alpha", alpha, "cluster growth exponent in [0,1)");
  mc_coverage_cmd->add_option("--n-grid", n_grid, "single sample size")
      ->required()
      ->delimiter(',');
  mc_coverage_cmd->add_option("--cluster-size", cluster_size, "explicit cluster size override");
  mc_coverage_cmd->add_option("--dof", dof_mode, "dof adjustment: none|hansen|stata");
  mc_coverage_cmd->add_option("--level", level, "confidence level");
  mc_coverage_cmd->add_option("--reps", reps, "replications");
  mc_coverage_cmd->add_option("--seed", args.seed, "master seed");
  mc_coverage_cmd->add_option("--threads", args.threads, "worker cap (results thread-invariant)");
  add_output_option(mc_coverage_cmd, args);

  auto* mc_jsize_cmd = app.add_subcommand("mc-jsize", "J-test size experiment");
  mc_jsize_cmd->add_option("--n-grid", n_grid, "single total sample size (clusters * size)")
      ->delimiter(',');
  mc_jsize_cmd->add_option("--cluster-size", cluster_size, "observations per cluster");
  mc_jsize_cmd->add_option("--instruments", instruments, "instrument count (k = 1)");
  mc_jsize_cmd->add_option("--weight", weight_mode, "second-step weight: conventional|clustered");
  mc_jsize_cmd->add_option("--centered", centered, "center the weight matrix");
  mc_jsize_cmd->add_option("--level", jsize_level, "nominal test level");
  mc_jsize_cmd->add_option("--reps", reps, "replications");
  mc_jsize_cmd->add_option("--seed", args.seed, "master seed");
  mc_jsize_cmd->add_option("--threads", args.threads, "worker cap (results thread-invariant)");
  add_output_option(mc_jsize_cmd, args);

  auto* mc_clt2_cmd = app.add_subcommand("mc-clt2", "second-moment CLT check");
  mc_clt2_cmd->add_option("--family", family_name, "DGP family")->required();
  mc_clt2_cmd->add_option("--alpha", alpha, "cluster growth exponent in [0,1)");
  mc_clt2_cmd->add_option("--n-grid", n_grid, "single sample size")
      ->required()
      ->delimiter(',');
  mc_clt2_cmd->add_option("--cluster-size", cluster_size, "explicit cluster size override");
  mc_clt2_cmd->add_option("--centered", clt2_centered, "center the second-moment statistic");
  mc_clt2_cmd->add_option("--reps", reps, "replications");
  mc_clt2_cmd->add_option("--seed", args.seed, "master seed");
  mc_clt2_cmd->add_option("--threads", args.threads, "worker cap (results thread-invariant)");
  add_output_option(mc_clt2_cmd, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "fit-ols" || command == "fit-tsls") {
      const auto sample = cluscov::ingest_csv(args.data_path, args.cluster_column);
      const Eigen::VectorXd y = sample.data().col(column_index(sample, y_col));
      const Eigen::MatrixXd x = with_intercept(sample, x_cols);
      const cluscov::DofAdjustment dof{parse_dof(dof_mode)};
      cluscov::RegressionReport fit;
      if (command == "fit-ols") {
        fit = cluscov::fit_ols(y, x, sample.index(), dof);
      } else {
        const Eigen::MatrixXd z = with_intercept(sample, z_cols);
        fit = cluscov::fit_tsls(cluscov::LinearDesign{y, x, z, sample.index()}, dof);
      }
      json report = base_report(command);
      report["config"] = {{"data", args.data_path}, {"cluster", args.cluster_column},
                          {"y", y_col},             {"x", x_cols},
                          {"z", z_cols},            {"dof", dof_mode}};
      report["results"] = cluscov::regression_report_to_json(fit);
      const auto wald = cluscov::wald_test(
          fit, Eigen::MatrixXd::Identity(fit.k, fit.k), Eigen::VectorXd::Zero(fit.k));
      report["results"]["wald_all_zero"] = {
          {"statistic", wald.statistic}, {"df", wald.df}, {"p_value", wald.p_value}};
      emit(report, args.out_path);
    } else if (command == "fit-mle") {
      const auto sample = cluscov::ingest_csv(args.data_path, args.cluster_column);
      std::vector<std::string> data_cols = x_cols.empty() ? sample.column_names() : x_cols;
      Eigen::MatrixXd data;
      if (model_name == "logit") {
        if (y_col.empty()) {
          throw cluscov::Error(cluscov::errc::wrong_config, "logit needs --y");
        }
        // layout [y, 1, x...] so the intercept is part of the regressors
        data.resize(sample.n(), 2 + static_cast<Eigen::Index>(x_cols.size()));
        data.col(0) = sample.data().col(column_index(sample, y_col));
        data.col(1).setOnes();
        for (std::size_t j = 0; j < x_cols.size(); ++j) {
          data.col(2 + static_cast<Eigen::Index>(j)) =
              sample.data().col(column_index(sample, x_cols[j]));
        }
      } else {
        data.resize(sample.n(), static_cast<Eigen::Index>(data_cols.size()));
        for (std::size_t j = 0; j < data_cols.size(); ++j) {
          data.col(static_cast<Eigen::Index>(j)) =
              sample.data().col(column_index(sample, data_cols[j]));
        }
      }
      const cluscov::ClusteredSample model_sample(data, sample.index());
      const auto model = cluscov::make_likelihood_model(model_name, data.cols());
      const Eigen::VectorXd init = parse_init(init_csv, model->parameter_dim());
      const auto fit = cluscov::fit_pseudo_mle(model_sample, *model, init);
      json report = base_report(command);
      report["config"] = {{"data", args.data_path}, {"cluster", args.cluster_column},
                          {"model", model_name},    {"y", y_col},
                          {"x", x_cols},            {"init", init_csv}};
      report["results"] = cluscov::mle_report_to_json(fit);
      if (!fit.converged) {
        report["error"] = {{"code", "NonConvergence"},
                           {"message", "iteration budget exhausted before the gradient tolerance"}};
        emit(report, args.out_path);
        return 1;
      }
      emit(report, args.out_path);
    } else if (command == "fit-gmm") {
      if (model_name != "linear_iv") {
        throw cluscov::Error(cluscov::errc::wrong_config,
                             "unknown moment model '" + model_name + "'");
      }
      const auto ingested = cluscov::ingest_csv(args.data_path, args.cluster_column);
      // assemble [y, 1, x..., 1, z...] so intercepts join both column sets
      const Eigen::Index kx = static_cast<Eigen::Index>(x_cols.size());
      const Eigen::Index kz = static_cast<Eigen::Index>(z_cols.size());
      Eigen::MatrixXd data(ingested.n(), 1 + (1 + kx) + (1 + kz));
      data.col(0) = ingested.data().col(column_index(ingested, y_col));
      data.col(1).setOnes();
      for (Eigen::Index j = 0; j < kx; ++j) {
        data.col(2 + j) = ingested.data().col(column_index(ingested, x_cols[static_cast<std::size_t>(j)]));
      }
      data.col(2 + kx).setOnes();
      for (Eigen::Index j = 0; j < kz; ++j) {
        data.col(3 + kx + j) =
            ingested.data().col(column_index(ingested, z_cols[static_cast<std::size_t>(j)]));
      }
      std::vector<Eigen::Index> x_idx, z_idx;
      for (Eigen::Index j = 0; j <= kx; ++j) x_idx.push_back(1 + j);
      for (Eigen::Index j = 0; j <= kz; ++j) z_idx.push_back(2 + kx + j);
      const cluscov::ClusteredSample sample(data, ingested.index());
      const cluscov::LinearIvMoments model(0, x_idx, z_idx);
      const Eigen::VectorXd init = parse_init(init_csv, model.parameter_dim());

      const cluscov::WeightSpec final_weight{parse_weight(weight_mode), centered};
      cluscov::GmmOptions options;
      options.two_step = final_weight.mode != cluscov::WeightMode::identity;
      options.stage2 = final_weight;
      if (!options.two_step) options.stage1 = final_weight;
      const auto fit = cluscov::gmm_fit(sample, model, init, options);

      json report = base_report(command);
      report["config"] = {{"data", args.data_path}, {"cluster", args.cluster_column},
                          {"model", model_name},    {"y", y_col},
                          {"x", x_cols},            {"z", z_cols},
                          {"weight", weight_mode},  {"centered", centered},
                          {"init", init_csv}};
      report["results"] = cluscov::gmm_report_to_json(fit);
      if (final_weight.mode == cluscov::WeightMode::clustered) {
        const auto jt = cluscov::j_test(fit);
        report["results"]["j_test"] = {
            {"statistic", jt.statistic}, {"df", jt.df}, {"p_value", jt.p_value}};
      }
      if (!fit.converged) {
        report["error"] = {{"code", "NonConvergence"},
                           {"message", "iteration budget exhausted before the gradient tolerance"}};
        emit(report, args.out_path);
        return 1;
      }
      emit(report, args.out_path);
    } else if (command == "diagnose") {
      const auto sample = cluscov::ingest_csv(args.data_path, args.cluster_column);
      const auto diag = cluscov::heterogeneity_diagnostics(sample.index(), moment_order);
      json report = base_report(command);
      report["config"] = {{"data", args.data_path},
                          {"cluster", args.cluster_column},
                          {"r", moment_order}};
      report["results"] = cluscov::diagnostics_to_json(diag);
      report["results"]["n"] = sample.n();
      report["results"]["G"] = sample.G();
      emit(report, args.out_path);
    } else if (command == "mc-rate") {
      cluscov::RateConfig config;
      config.family = cluscov::dgp_family_from_name(family_name);
      config.alpha = alpha;
      config.n_grid = n_grid;
      config.reps = reps;
      config.seed = args.seed;
      config.threads = args.threads;
      if (cluster_size > 0) config.cluster_size = cluster_size;
      const auto result = cluscov::rate_experiment(config);
      json config_json = {{"family", family_name}, {"alpha", alpha},
                          {"n_grid", n_grid},      {"cluster_size", cluster_size},
                          {"reps", reps},          {"seed", args.seed},
                          {"threads", args.threads}};
      emit_mc(command, config_json, result, args.out_path);
    } else if (command == "mc-coverage") {
      cluscov::CoverageConfig config;
      config.dgp.family = cluscov::dgp_family_from_name(family_name);
      config.dgp.alpha = alpha;
      config.dgp.n = single_n(n_grid, 2000);
      if (cluster_size > 0) config.dgp.cluster_size = cluster_size;
      config.dof = cluscov::DofAdjustment{parse_dof(dof_mode)};
      config.level = level;
      config.reps = reps;
      config.seed = args.seed;
      config.threads = args.threads;
      const auto result = cluscov::coverage_experiment(config);
      json config_json = {{"family", family_name}, {"alpha", alpha},
                          {"n", config.dgp.n},     {"cluster_size", cluster_size},
                          {"dof", dof_mode},       {"level", level},
                          {"reps", reps},          {"seed", args.seed},
                          {"threads", args.threads}};
      emit_mc(command, config_json, result, args.out_path);
    } else if (command == "mc-jsize") {
      cluscov::JsizeConfig config;
      config.cluster_size = cluster_size > 0 ? cluster_size : 5;
      const Eigen::Index total = single_n(n_grid, 300 * config.cluster_size);
      config.clusters = total / config.cluster_size;
      config.instruments = instruments;
      config.weight = cluscov::WeightSpec{parse_weight(weight_mode), centered};
      if (config.weight.mode == cluscov::WeightMode::identity) {
        throw cluscov::Error(cluscov::errc::wrong_config,
                             "mc-jsize needs a conventional or clustered weight");
      }
      config.level = jsize_level;
      config.reps = reps;
      config.seed = args.seed;
      config.threads = args.threads;
      const auto result = cluscov::jsize_experiment(config);
      json config_json = {{"clusters", config.clusters},
                          {"cluster_size", config.cluster_size},
                          {"instruments", instruments},
                          {"weight", weight_mode},
                          {"centered", centered},
                          {"level", jsize_level},
                          {"reps", reps},
                          {"seed", args.seed},
                          {"threads", args.threads}};
      emit_mc(command, config_json, result, args.out_path);
    } else if (command == "mc-clt2") {
      cluscov::Clt2Config config;
      config.dgp.family = cluscov::dgp_family_from_name(family_name);
      config.dgp.alpha = alpha;
      config.dgp.n = single_n(n_grid, 2500);
      if (cluster_size > 0) config.dgp.cluster_size = cluster_size;
      config.centered = clt2_centered;
      config.reps = reps;
      config.seed = args.seed;
      config.threads = args.threads;
      const auto result = cluscov::second_moment_clt_check(config);
      json config_json = {{"family", family_name}, {"alpha", alpha},
                          {"n", config.dgp.n},     {"cluster_size", cluster_size},
                          {"centered", clt2_centered}, {"reps", reps},
                          {"seed", args.seed},     {"threads", args.threads}};
      emit_mc(command, config_json, result, args.out_path);
    }
  } catch (const cluscov::Error& e) {
    json report = base_report(command);
    report["error"] = {{"code", cluscov::errc_name(e.code())}, {"message", e.what()}};
    try {
      emit(report, args.out_path);
    } catch (const cluscov::Error&) {
      std::cout << report.dump(2) << "\n";
    }
    std::cerr << e.what() << "\n";
    return cluscov::errc_is_config(e.code()) ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 0;
}
