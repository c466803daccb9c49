#pragma once

#include <Eigen/Dense>
#include <fstream>
#include <string>

#include "json.hpp"

#include "cluscov/crve.hpp"
#include "cluscov/errors.hpp"
#include "cluscov/gmm.hpp"
#include "cluscov/linear.hpp"
#include "cluscov/mc.hpp"
#include "cluscov/mle.hpp"

namespace cluscov {

// ordered_json keeps insertion order, so serialized reports are byte-stable
// given identical inputs (acceptance requires thread-count invariance).
using json = nlohmann::ordered_json;

inline json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline json covariance_to_json(const CovarianceEstimate& est) {
  json out;
  out["kind"] = covariance_kind_name(est.kind);
  out["matrix"] = matrix_to_json(est.matrix);
  out["min_eigenvalue"] = est.min_eigenvalue;
  out["condition_number"] = est.condition_number;
  out["dof_adjustment"] = est.dof_adjustment;
  return out;
}

inline json moment_summary_to_json(const MomentSummary& s) {
  json out;
  out["mean"] = s.mean;
  out["variance"] = s.variance;
  out["skewness"] = s.skewness;
  out["excess_kurtosis"] = s.excess_kurtosis;
  out["count"] = s.count;
  return out;
}

inline json regression_report_to_json(const RegressionReport& report) {
  json out;
  out["beta"] = vector_to_json(report.beta_hat);
  out["se"] = vector_to_json(report.se);
  out["t"] = vector_to_json(report.t_ratios);
  out["n"] = report.n;
  out["G"] = report.G;
  out["k"] = report.k;
  out["l"] = report.l;
  out["dof"] = {{"mode", dof_mode_name(report.dof_mode)}, {"value", report.dof_value}};
  out["V_hat"] = covariance_to_json(report.V_hat);
  out["Omega_hat"] = matrix_to_json(report.Omega_hat);
  out["Q_hat"] = matrix_to_json(report.Q_hat);
  out["W_hat"] = matrix_to_json(report.W_hat);
  out["warnings"] = report.warnings;
  return out;
}

inline json mle_report_to_json(const MleReport& report) {
  json out;
  out["theta"] = vector_to_json(report.theta_hat);
  out["se"] = vector_to_json(report.se);
  out["t"] = vector_to_json(report.t_ratios);
  out["log_likelihood"] = report.log_likelihood;
  out["converged"] = report.converged;
  out["iterations"] = report.iterations;
  out["final_gradient_norm"] = report.final_gradient_norm;
  out["n"] = report.n;
  out["G"] = report.G;
  out["H_hat"] = matrix_to_json(report.H_hat);
  out["Omega_hat"] = covariance_to_json(report.Omega_hat);
  out["V_hat"] = matrix_to_json(report.V_hat);
  return out;
}

inline json gmm_report_to_json(const GmmReport& report) {
  json out;
  out["theta"] = vector_to_json(report.theta_hat);
  out["se"] = vector_to_json(report.se);
  out["t"] = vector_to_json(report.t_ratios);
  out["J_statistic"] = report.J_statistic;
  out["J_df"] = report.J_df;
  out["J_p_value"] = report.J_p_value;
  out["weight"] = {{"mode", weight_mode_name(report.final_weight.mode)},
                   {"centered", report.final_weight.centered}};
  out["steps"] = report.steps;
  out["iterations"] = report.iterations;
  out["converged"] = report.converged;
  out["n"] = report.n;
  out["G"] = report.G;
  out["l"] = report.l;
  out["k"] = report.k;
  out["Q_hat"] = matrix_to_json(report.Q_hat);
  out["W_hat"] = matrix_to_json(report.W_hat);
  out["Omega_hat"] = covariance_to_json(report.Omega_hat);
  out["V_hat"] = matrix_to_json(report.V_hat);
  return out;
}

inline json diagnostics_to_json(const HeterogeneityDiagnostics& d) {
  json out;
  out["max_share"] = d.max_share;
  out["sum_sq_share"] = d.sum_sq_share;
  out["a2_bound"] = d.a2_bound;
  out["a2_max"] = d.a2_max;
  out["a3_bound"] = d.a3_bound;
  out["a3_max"] = d.a3_max;
  out["r"] = d.r;
  out["thresholds"] = {{"max_share", d.thresholds.max_share}, {"a2_max", d.thresholds.a2_max}};
  out["max_share_warning"] = d.max_share_warning;
  out["a2_max_warning"] = d.a2_max_warning;
  out["warnings"] = d.warnings;
  return out;
}

// Aggregate view of a Monte Carlo run; per-replication records go to CSV.
inline json mc_result_to_json(const McResult& result) {
  json out;
  out["experiment"] = result.experiment;
  out["seed"] = result.seed;
  out["replications"] = result.replications;
  out["failures"] = result.failures;
  if (result.experiment == "rate") {
    json points = json::array();
    for (const auto& point : result.rate_points) {
      points.push_back({{"n", point.n},
                        {"empirical_sd", point.empirical_sd},
                        {"theoretical_sd", point.theoretical_sd}});
    }
    out["points"] = std::move(points);
    out["slope"] = result.slope;
    out["slope_se"] = result.slope_se;
    out["size_adjusted"] = result.size_adjusted;
  } else if (result.experiment == "coverage") {
    out["level"] = result.level;
    out["coverage"] = result.coverage;
    out["naive_coverage"] = result.naive_coverage;
    out["studentized"] = moment_summary_to_json(result.studentized);
  } else if (result.experiment == "jsize") {
    out["level"] = result.level;
    out["rejection_rate"] = result.rejection_rate;
    out["J_df"] = result.j_df;
    json qq = json::array();
    for (const auto& point : result.qq) {
      qq.push_back({{"level", point.level},
                    {"empirical", point.empirical},
                    {"reference", point.reference}});
    }
    out["qq"] = std::move(qq);
  } else if (result.experiment == "clt2") {
    out["studentized"] = moment_summary_to_json(result.second_moment);
  }
  return out;
}

inline void write_per_rep_csv(const McResult& result, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(errc::wrong_config, "cannot write '" + path + "'");
  out << "rep";
  for (const auto& name : result.per_rep_columns) out << "," << name;
  out << "\n";
  out.precision(17);
  for (Eigen::Index rep = 0; rep < result.per_rep.rows(); ++rep) {
    out << rep;
    for (Eigen::Index j = 0; j < result.per_rep.cols(); ++j) {
      out << "," << result.per_rep(rep, j);
    }
    out << "\n";
  }
}

}  // namespace cluscov
