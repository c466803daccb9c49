#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cluscov/cluster_data.hpp"
#include "cluscov/crve.hpp"
#include "cluscov/errors.hpp"
#include "cluscov/numeric.hpp"

namespace cluscov {

// Marginal log density with derivatives. Analytic score/hessian are optional:
// the defaults fall back to central differences with step 1e-6 * max(1,|theta_j|).
class LikelihoodModel {
 public:
  virtual ~LikelihoodModel() = default;

  virtual Eigen::Index parameter_dim() const = 0;
  virtual double log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& theta) const = 0;

  virtual Eigen::VectorXd score(const Eigen::VectorXd& x, const Eigen::VectorXd& theta) const {
    const Eigen::Index k = parameter_dim();
    Eigen::VectorXd s(k);
    Eigen::VectorXd lo = theta, hi = theta;
    for (Eigen::Index j = 0; j < k; ++j) {
      const double h = fd_step(theta(j));
      hi(j) = theta(j) + h;
      lo(j) = theta(j) - h;
      s(j) = (log_density(x, hi) - log_density(x, lo)) / (2.0 * h);
      hi(j) = theta(j);
      lo(j) = theta(j);
    }
    return s;
  }

  virtual Eigen::MatrixXd hessian(const Eigen::VectorXd& x, const Eigen::VectorXd& theta) const {
    const Eigen::Index k = parameter_dim();
    Eigen::MatrixXd h_mat(k, k);
    Eigen::VectorXd lo = theta, hi = theta;
    for (Eigen::Index j = 0; j < k; ++j) {
      const double h = fd_step(theta(j));
      hi(j) = theta(j) + h;
      lo(j) = theta(j) - h;
      h_mat.col(j) = (score(x, hi) - score(x, lo)) / (2.0 * h);
      hi(j) = theta(j);
      lo(j) = theta(j);
    }
    return symmetrized(h_mat);
  }

  // Optional box constraints on the parameter space.
  virtual std::optional<std::pair<Eigen::VectorXd, Eigen::VectorXd>> bounds() const {
    return std::nullopt;
  }

  static double fd_step(double theta_j) { return 1e-6 * std::max(1.0, std::abs(theta_j)); }
};

// N(theta, I_p) location family.
class GaussianLocationModel final : public LikelihoodModel {
 public:
  explicit GaussianLocationModel(Eigen::Index p) : p_(p) {}
  Eigen::Index parameter_dim() const override { return p_; }

  double log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& theta) const override {
    return -0.5 * (x - theta).squaredNorm() -
           0.5 * static_cast<double>(p_) * std::log(2.0 * std::numbers::pi);
  }
  Eigen::VectorXd score(const Eigen::VectorXd& x, const Eigen::VectorXd& theta) const override {
    return x - theta;
  }
  Eigen::MatrixXd hessian(const Eigen::VectorXd&, const Eigen::VectorXd&) const override {
    return -Eigen::MatrixXd::Identity(p_, p_);
  }

 private:
  Eigen::Index p_;
};

// Poisson with rate exp(theta); the log link keeps the parameter unconstrained.
class PoissonLogRateModel final : public LikelihoodModel {
 public:
  Eigen::Index parameter_dim() const override { return 1; }

  double log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& theta) const override {
    const double count = x(0);
    return count * theta(0) - std::exp(theta(0)) - std::lgamma(count + 1.0);
  }
  Eigen::VectorXd score(const Eigen::VectorXd& x, const Eigen::VectorXd& theta) const override {
    Eigen::VectorXd s(1);
    s(0) = x(0) - std::exp(theta(0));
    return s;
  }
  Eigen::MatrixXd hessian(const Eigen::VectorXd&, const Eigen::VectorXd& theta) const override {
    Eigen::MatrixXd h(1, 1);
    h(0, 0) = -std::exp(theta(0));
    return h;
  }
};

// Bernoulli logit. Observation layout: x = [y, w_1, ..., w_d]; the caller
// packs any intercept into the regressors.
class LogitModel final : public LikelihoodModel {
 public:
  explicit LogitModel(Eigen::Index data_dim) : d_(data_dim - 1) {
    if (data_dim < 2) throw Error(errc::wrong_config, "logit needs [y, regressors...] columns");
  }
  Eigen::Index parameter_dim() const override { return d_; }

  double log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& theta) const override {
    const double y = x(0);
    const double eta = x.tail(d_).dot(theta);
    // y*eta - log(1 + exp(eta)), written to avoid overflow
    const double log1pexp = eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
    return y * eta - log1pexp;
  }
  Eigen::VectorXd score(const Eigen::VectorXd& x, const Eigen::VectorXd& theta) const override {
    const double y = x(0);
    const double eta = x.tail(d_).dot(theta);
    const double p = 1.0 / (1.0 + std::exp(-eta));
    return (y - p) * x.tail(d_);
  }
  Eigen::MatrixXd hessian(const Eigen::VectorXd& x, const Eigen::VectorXd& theta) const override {
    const double eta = x.tail(d_).dot(theta);
    const double p = 1.0 / (1.0 + std::exp(-eta));
    return (-p * (1.0 - p)) * (x.tail(d_) * x.tail(d_).transpose());
  }

 private:
  Eigen::Index d_;
};

// Registry used by the CLI. data_dim is the number of data columns handed to
// the model (for logit that is 1 + number of regressors).
inline std::unique_ptr<LikelihoodModel> make_likelihood_model(const std::string& name,
                                                              Eigen::Index data_dim) {
  if (name == "gaussian_location") return std::make_unique<GaussianLocationModel>(data_dim);
  if (name == "poisson_log_rate") {
    if (data_dim != 1) throw Error(errc::wrong_config, "poisson_log_rate expects one data column");
    return std::make_unique<PoissonLogRateModel>();
  }
  if (name == "logit") return std::make_unique<LogitModel>(data_dim);
  throw Error(errc::wrong_config, "unknown likelihood model '" + name + "'");
}

struct MleSandwich {
  Eigen::MatrixXd H_hat;          // average hessian
  CovarianceEstimate Omega_hat;   // clustered score covariance (uncentered)
  Eigen::MatrixXd V_hat;          // H^-1 Omega H^-1
};

// Sandwich pieces at an arbitrary theta. Omega uses the uncentered cluster
// score outer products; at the optimizer the first-order condition makes
// centering immaterial.
inline MleSandwich mle_sandwich(const ClusteredSample& sample, const LikelihoodModel& model,
                                const Eigen::VectorXd& theta) {
  const Eigen::Index k = model.parameter_dim();
  if (theta.size() != k || !theta.allFinite()) {
    throw Error(errc::length_mismatch, "theta must be finite with the model dimension");
  }
  const double n = static_cast<double>(sample.n());
  Eigen::MatrixXd h_sum = Eigen::MatrixXd::Zero(k, k);
  Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index g = 0; g < sample.G(); ++g) {
    const auto block = sample.cluster_rows(g);
    Eigen::VectorXd score_sum = Eigen::VectorXd::Zero(k);
    for (Eigen::Index i = 0; i < block.rows(); ++i) {
      const Eigen::VectorXd x = block.row(i).transpose();
      score_sum += model.score(x, theta);
      h_sum += model.hessian(x, theta);
    }
    omega.selfadjointView<Eigen::Lower>().rankUpdate(score_sum);
  }
  omega = omega.selfadjointView<Eigen::Lower>();

  MleSandwich out;
  out.H_hat = symmetrized(h_sum / n);
  out.Omega_hat = make_covariance_estimate(omega / n, CovarianceKind::score);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_h(out.H_hat);
  if (qr_h.rank() < k) {
    throw Error(errc::singular_hessian, "average hessian is singular");
  }
  const Eigen::MatrixXd hinv_omega = qr_h.solve(out.Omega_hat.matrix);
  out.V_hat = symmetrized(qr_h.solve(hinv_omega.transpose()).transpose());
  return out;
}

struct MleOptions {
  Eigen::Index max_iterations = 200;
  double gradient_tolerance = 1e-8;
};

struct MleReport {
  Eigen::VectorXd theta_hat;
  Eigen::MatrixXd H_hat;
  CovarianceEstimate Omega_hat;
  Eigen::MatrixXd V_hat;
  Eigen::VectorXd se;
  Eigen::VectorXd t_ratios;
  double log_likelihood = 0.0;
  Eigen::Index iterations = 0;
  double final_gradient_norm = 0.0;
  bool converged = false;
  Eigen::Index n = 0;
  Eigen::Index G = 0;
};

namespace detail {

inline double total_log_likelihood(const ClusteredSample& sample, const LikelihoodModel& model,
                                   const Eigen::VectorXd& theta) {
  NeumaierSum acc;
  for (Eigen::Index i = 0; i < sample.n(); ++i) {
    acc.add(model.log_density(sample.data().row(i).transpose(), theta));
  }
  return acc.value();
}

}  // namespace detail

// Pseudo (pooled) MLE by Newton ascent with Armijo backtracking. When the
// average hessian is not negative definite the step falls back to a
// ridge-regularized direction with the shift doubling until it is an ascent
// direction. Non-convergence is reported through the converged flag.
inline MleReport fit_pseudo_mle(const ClusteredSample& sample, const LikelihoodModel& model,
                                const Eigen::VectorXd& init, MleOptions options = {}) {
  const Eigen::Index k = model.parameter_dim();
  if (init.size() != k) {
    throw Error(errc::length_mismatch, "init size does not match the model dimension");
  }
  if (!init.allFinite()) {
    throw Error(errc::non_finite_entry, "init must be finite");
  }
  const double n = static_cast<double>(sample.n());
  const auto box = model.bounds();
  const auto clamp_to_box = [&](Eigen::VectorXd theta) {
    if (box) {
      theta = theta.cwiseMax(box->first).cwiseMin(box->second);
    }
    return theta;
  };

  Eigen::VectorXd theta = clamp_to_box(init);
  double L = detail::total_log_likelihood(sample, model, theta);
  if (!std::isfinite(L)) {
    std::string msg = "log likelihood is not finite at theta = [";
    for (Eigen::Index j = 0; j < k; ++j) msg += (j ? ", " : "") + std::to_string(theta(j));
    throw Error(errc::non_finite_objective, msg + "]");
  }

  MleReport report;
  report.n = sample.n();
  report.G = sample.G();

  double grad_norm = 0.0;
  bool converged = false;
  Eigen::Index it = 0;
  for (; it < options.max_iterations; ++it) {
    Eigen::VectorXd mean_score = Eigen::VectorXd::Zero(k);
    Eigen::MatrixXd mean_hess = Eigen::MatrixXd::Zero(k, k);
    for (Eigen::Index i = 0; i < sample.n(); ++i) {
      const Eigen::VectorXd x = sample.data().row(i).transpose();
      mean_score += model.score(x, theta);
      mean_hess += model.hessian(x, theta);
    }
    mean_score /= n;
    mean_hess = symmetrized(mean_hess / n);
    grad_norm = mean_score.norm();
    if (grad_norm <= options.gradient_tolerance) {
      converged = true;
      break;
    }

    // Direction from -H d = g, ridge-shifted until it is an ascent direction.
    Eigen::MatrixXd h_min = -mean_hess;
    Eigen::VectorXd direction;
    double lambda = 0.0;
    for (;;) {
      Eigen::LLT<Eigen::MatrixXd> llt(h_min + lambda * Eigen::MatrixXd::Identity(k, k));
      if (llt.info() == Eigen::Success) {
        direction = llt.solve(mean_score);
        if (direction.allFinite() && mean_score.dot(direction) > 0.0) break;
      }
      lambda = lambda == 0.0 ? std::max(1e-8 * h_min.norm(), 1e-12) : 2.0 * lambda;
    }

    const double slope = n * mean_score.dot(direction);  // directional derivative of L
    double alpha = 1.0;
    bool stepped = false;
    while (alpha >= 1e-14) {
      const Eigen::VectorXd trial = clamp_to_box(theta + alpha * direction);
      const double L_trial = detail::total_log_likelihood(sample, model, trial);
      if (std::isfinite(L_trial) && L_trial >= L + 1e-4 * alpha * slope) {
        theta = trial;
        L = L_trial;
        stepped = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!stepped) break;  // line search stalled
  }

  if (!converged) {
    Eigen::VectorXd mean_score = Eigen::VectorXd::Zero(k);
    for (Eigen::Index i = 0; i < sample.n(); ++i) {
      mean_score += model.score(sample.data().row(i).transpose(), theta);
    }
    grad_norm = mean_score.norm() / n;
    converged = grad_norm <= options.gradient_tolerance;
  }

  report.theta_hat = theta;
  report.log_likelihood = L;
  report.iterations = it;
  report.final_gradient_norm = grad_norm;
  report.converged = converged;

  const MleSandwich sandwich = mle_sandwich(sample, model, theta);
  report.H_hat = sandwich.H_hat;
  report.Omega_hat = sandwich.Omega_hat;
  report.V_hat = sandwich.V_hat;
  report.se.resize(k);
  report.t_ratios.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    report.se(j) = std::sqrt(std::max(0.0, report.V_hat(j, j)) / n);
    report.t_ratios(j) = report.theta_hat(j) / report.se(j);
  }
  return report;
}

}  // namespace cluscov
