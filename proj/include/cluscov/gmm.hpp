#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cluscov/cluster_data.hpp"
#include "cluscov/crve.hpp"
#include "cluscov/errors.hpp"
#include "cluscov/stats.hpp"

namespace cluscov {

// l-dimensional moment function m(x, theta) with l >= k. The jacobian
// defaults to central differences of the moments.
class MomentModel {
 public:
  virtual ~MomentModel() = default;

  virtual Eigen::Index moment_dim() const = 0;     // l
  virtual Eigen::Index parameter_dim() const = 0;  // k
  virtual Eigen::VectorXd moments(const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& theta) const = 0;

  virtual Eigen::MatrixXd jacobian(const Eigen::VectorXd& x, const Eigen::VectorXd& theta) const {
    const Eigen::Index l = moment_dim();
    const Eigen::Index k = parameter_dim();
    Eigen::MatrixXd jac(l, k);
    Eigen::VectorXd lo = theta, hi = theta;
    for (Eigen::Index j = 0; j < k; ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(theta(j)));
      hi(j) = theta(j) + h;
      lo(j) = theta(j) - h;
      jac.col(j) = (moments(x, hi) - moments(x, lo)) / (2.0 * h);
      hi(j) = theta(j);
      lo(j) = theta(j);
    }
    return jac;
  }
};

// Linear instrumental-variable moments m = z (y - x'theta) over column
// selections of the observation row.
class LinearIvMoments final : public MomentModel {
 public:
  LinearIvMoments(Eigen::Index y_col, std::vector<Eigen::Index> x_cols,
                  std::vector<Eigen::Index> z_cols)
      : y_col_(y_col), x_cols_(std::move(x_cols)), z_cols_(std::move(z_cols)) {
    if (x_cols_.empty() || z_cols_.empty()) {
      throw Error(errc::wrong_config, "linear_iv needs regressor and instrument columns");
    }
    if (z_cols_.size() < x_cols_.size()) {
      throw Error(errc::wrong_config, "linear_iv needs at least as many instruments as regressors");
    }
  }

  Eigen::Index moment_dim() const override { return static_cast<Eigen::Index>(z_cols_.size()); }
  Eigen::Index parameter_dim() const override { return static_cast<Eigen::Index>(x_cols_.size()); }

  Eigen::VectorXd moments(const Eigen::VectorXd& x, const Eigen::VectorXd& theta) const override {
    const double resid = x(y_col_) - select(x, x_cols_).dot(theta);
    return resid * select(x, z_cols_);
  }

  Eigen::MatrixXd jacobian(const Eigen::VectorXd& x, const Eigen::VectorXd&) const override {
    return -select(x, z_cols_) * select(x, x_cols_).transpose();
  }

 private:
  static Eigen::VectorXd select(const Eigen::VectorXd& x, const std::vector<Eigen::Index>& cols) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) {
      out(static_cast<Eigen::Index>(j)) = x(cols[j]);
    }
    return out;
  }

  Eigen::Index y_col_;
  std::vector<Eigen::Index> x_cols_;
  std::vector<Eigen::Index> z_cols_;
};

enum class WeightMode { identity, conventional, clustered };

inline const char* weight_mode_name(WeightMode m) {
  switch (m) {
    case WeightMode::identity: return "identity";
    case WeightMode::conventional: return "conventional";
    case WeightMode::clustered: return "clustered";
  }
  return "unknown";
}

struct WeightSpec {
  WeightMode mode = WeightMode::clustered;
  bool centered = true;  // n_g^2-centered clustered form; mean-centered conventional form
};

// Clustered efficient weight: (1/n) sum_g m~_g m~_g' minus, when centered,
// (1/n) sum_g n_g^2 mbar mbar'.
inline Eigen::MatrixXd clustered_weight(const ClusteredSample& sample, const MomentModel& model,
                                        const Eigen::VectorXd& theta, bool centered) {
  const Eigen::Index l = model.moment_dim();
  const double n = static_cast<double>(sample.n());
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(l, l);
  Eigen::VectorXd total = Eigen::VectorXd::Zero(l);
  for (Eigen::Index g = 0; g < sample.G(); ++g) {
    const auto block = sample.cluster_rows(g);
    Eigen::VectorXd m_sum = Eigen::VectorXd::Zero(l);
    for (Eigen::Index i = 0; i < block.rows(); ++i) {
      m_sum += model.moments(block.row(i).transpose(), theta);
    }
    w.selfadjointView<Eigen::Lower>().rankUpdate(m_sum);
    total += m_sum;
  }
  w = w.selfadjointView<Eigen::Lower>();
  if (centered) {
    const Eigen::VectorXd mbar = total / n;
    NeumaierSum sq;
    for (Eigen::Index size : sample.index().sizes) {
      const double m = static_cast<double>(size);
      sq.add(m * m);
    }
    w -= sq.value() * (mbar * mbar.transpose());
  }
  return symmetrized(w / n);
}

// Conventional (non-clustered) weight (1/n) sum_i v_i v_i' with v = m(x, theta),
// optionally mean-centered. Not consistent for var(sqrt(n) m_bar) under
// clustering.
inline Eigen::MatrixXd conventional_weight(const ClusteredSample& sample, const MomentModel& model,
                                           const Eigen::VectorXd& theta, bool centered) {
  const Eigen::Index l = model.moment_dim();
  const double n = static_cast<double>(sample.n());
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(l, l);
  Eigen::VectorXd total = Eigen::VectorXd::Zero(l);
  for (Eigen::Index i = 0; i < sample.n(); ++i) {
    const Eigen::VectorXd v = model.moments(sample.data().row(i).transpose(), theta);
    w.selfadjointView<Eigen::Lower>().rankUpdate(v);
    total += v;
  }
  w = w.selfadjointView<Eigen::Lower>();
  if (centered) {
    const Eigen::VectorXd vbar = total / n;
    w -= n * (vbar * vbar.transpose());
  }
  return symmetrized(w / n);
}

inline Eigen::MatrixXd build_weight(const WeightSpec& spec, const ClusteredSample& sample,
                                    const MomentModel& model, const Eigen::VectorXd& theta) {
  switch (spec.mode) {
    case WeightMode::identity:
      return Eigen::MatrixXd::Identity(model.moment_dim(), model.moment_dim());
    case WeightMode::conventional:
      return conventional_weight(sample, model, theta, spec.centered);
    case WeightMode::clustered:
      return clustered_weight(sample, model, theta, spec.centered);
  }
  throw Error(errc::wrong_config, "unknown weight mode");
}

struct GmmOptions {
  WeightSpec stage1{WeightMode::identity, false};
  bool two_step = true;
  WeightSpec stage2{WeightMode::clustered, true};
  Eigen::Index max_iterations = 200;
  double gradient_tolerance = 1e-8;
};

struct GmmReport {
  Eigen::VectorXd theta_hat;
  Eigen::MatrixXd Q_hat;          // l x k average jacobian at theta_hat
  Eigen::MatrixXd W_hat;          // weight used in the final criterion
  CovarianceEstimate Omega_hat;   // clustered centered moment covariance at theta_hat
  Eigen::MatrixXd V_hat;          // k x k
  Eigen::VectorXd se;
  Eigen::VectorXd t_ratios;
  double J_statistic = 0.0;
  Eigen::Index J_df = 0;
  // chi-square tail probability; NaN unless the final weight is clustered
  // (the conventional criterion has no chi-square reference)
  double J_p_value = std::numeric_limits<double>::quiet_NaN();
  WeightSpec final_weight;
  int steps = 1;
  Eigen::Index iterations = 0;
  bool converged = false;
  Eigen::Index n = 0;
  Eigen::Index G = 0;
  Eigen::Index l = 0;
  Eigen::Index k = 0;
};

namespace detail {

struct GmmEval {
  Eigen::VectorXd m_bar;
  Eigen::MatrixXd q_bar;
};

inline Eigen::VectorXd mean_moments(const ClusteredSample& sample, const MomentModel& model,
                                    const Eigen::VectorXd& theta) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(model.moment_dim());
  for (Eigen::Index i = 0; i < sample.n(); ++i) {
    m += model.moments(sample.data().row(i).transpose(), theta);
  }
  return m / static_cast<double>(sample.n());
}

inline GmmEval evaluate(const ClusteredSample& sample, const MomentModel& model,
                        const Eigen::VectorXd& theta) {
  GmmEval out;
  out.m_bar = Eigen::VectorXd::Zero(model.moment_dim());
  out.q_bar = Eigen::MatrixXd::Zero(model.moment_dim(), model.parameter_dim());
  for (Eigen::Index i = 0; i < sample.n(); ++i) {
    const Eigen::VectorXd x = sample.data().row(i).transpose();
    out.m_bar += model.moments(x, theta);
    out.q_bar += model.jacobian(x, theta);
  }
  const double n = static_cast<double>(sample.n());
  out.m_bar /= n;
  out.q_bar /= n;
  return out;
}

struct StageResult {
  Eigen::VectorXd theta;
  Eigen::Index iterations = 0;
  bool converged = false;
};

// Gauss-Newton with Armijo backtracking on q(theta) = m_bar' W^-1 m_bar.
// Ridge-shifts the Gauss-Newton matrix until the step is a descent direction.
inline StageResult minimize_criterion(const ClusteredSample& sample, const MomentModel& model,
                                      const Eigen::MatrixXd& weight, const Eigen::VectorXd& init,
                                      const GmmOptions& options) {
  const Eigen::Index k = model.parameter_dim();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_w(weight);
  if (qr_w.rank() < model.moment_dim()) {
    throw Error(errc::singular_weight, "weight matrix is singular");
  }

  const auto criterion = [&](const Eigen::VectorXd& m_bar) { return m_bar.dot(qr_w.solve(m_bar)); };

  StageResult result;
  result.theta = init;
  GmmEval eval = evaluate(sample, model, result.theta);
  if (!eval.m_bar.allFinite()) {
    throw Error(errc::non_finite_objective, "moments are not finite at the initial point");
  }
  double q = criterion(eval.m_bar);

  for (; result.iterations < options.max_iterations; ++result.iterations) {
    const Eigen::VectorXd grad = eval.q_bar.transpose() * qr_w.solve(eval.m_bar);
    if (grad.norm() <= options.gradient_tolerance) {
      result.converged = true;
      break;
    }

    const Eigen::MatrixXd a = symmetrized(eval.q_bar.transpose() * qr_w.solve(eval.q_bar));
    Eigen::VectorXd direction;
    double lambda = 0.0;
    for (;;) {
      Eigen::LLT<Eigen::MatrixXd> llt(a + lambda * Eigen::MatrixXd::Identity(k, k));
      if (llt.info() == Eigen::Success) {
        direction = -llt.solve(grad);
        if (direction.allFinite() && grad.dot(direction) < 0.0) break;
      }
      lambda = lambda == 0.0 ? std::max(1e-8 * a.norm(), 1e-12) : 2.0 * lambda;
    }

    const double slope = 2.0 * grad.dot(direction);
    double alpha = 1.0;
    bool stepped = false;
    while (alpha >= 1e-14) {
      const Eigen::VectorXd trial = result.theta + alpha * direction;
      const Eigen::VectorXd m_trial = mean_moments(sample, model, trial);
      if (m_trial.allFinite()) {
        const double q_trial = criterion(m_trial);
        if (q_trial <= q + 1e-4 * alpha * slope) {
          result.theta = trial;
          q = q_trial;
          stepped = true;
          break;
        }
      }
      alpha *= 0.5;
    }
    if (!stepped) break;
    eval = evaluate(sample, model, result.theta);
  }
  if (!result.converged) {
    const Eigen::VectorXd grad = eval.q_bar.transpose() * qr_w.solve(eval.m_bar);
    result.converged = grad.norm() <= options.gradient_tolerance;
  }
  return result;
}

// Shared report assembly: jacobian and clustered covariance at the estimate,
// J statistic under the final weight, and the variance (simplified form when
// the final weight is the clustered centered estimator).
inline GmmReport finalize_report(const ClusteredSample& sample, const MomentModel& model,
                                 StageResult stage, Eigen::MatrixXd w_final,
                                 WeightSpec final_spec, int steps, Eigen::Index iterations) {
  const Eigen::Index l = model.moment_dim();
  const Eigen::Index k = model.parameter_dim();
  GmmReport report;
  report.n = sample.n();
  report.G = sample.G();
  report.l = l;
  report.k = k;
  report.theta_hat = std::move(stage.theta);
  report.converged = stage.converged;
  report.steps = steps;
  report.iterations = iterations;
  report.final_weight = final_spec;
  report.W_hat = std::move(w_final);

  const GmmEval eval = evaluate(sample, model, report.theta_hat);
  report.Q_hat = eval.q_bar;
  if (Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(report.Q_hat).rank() < k) {
    throw Error(errc::rank_deficient_jacobian, "average moment jacobian is rank deficient");
  }

  report.Omega_hat = make_covariance_estimate(
      clustered_weight(sample, model, report.theta_hat, true), CovarianceKind::weight);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_w(report.W_hat);
  if (qr_w.rank() < l) throw Error(errc::singular_weight, "final weight matrix is singular");
  report.J_statistic = static_cast<double>(report.n) * eval.m_bar.dot(qr_w.solve(eval.m_bar));
  report.J_df = l - k;
  if (final_spec.mode == WeightMode::clustered) {
    report.J_p_value = report.J_df == 0
                           ? 1.0
                           : chi_squared_tail(report.J_statistic,
                                              static_cast<double>(report.J_df));
  }

  if (final_spec.mode == WeightMode::clustered && final_spec.centered) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_omega(report.Omega_hat.matrix);
    if (qr_omega.rank() < l) {
      throw Error(errc::singular_weight, "clustered moment covariance is singular");
    }
    const Eigen::MatrixXd b = symmetrized(report.Q_hat.transpose() * qr_omega.solve(report.Q_hat));
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_b(b);
    if (qr_b.rank() < k) {
      throw Error(errc::rank_deficient_jacobian, "Q'Omega^-1Q is rank deficient");
    }
    report.V_hat = symmetrized(qr_b.solve(Eigen::MatrixXd::Identity(k, k)));
  } else {
    const Eigen::MatrixXd winv_q = qr_w.solve(report.Q_hat);
    const Eigen::MatrixXd a = symmetrized(report.Q_hat.transpose() * winv_q);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_a(a);
    if (qr_a.rank() < k) {
      throw Error(errc::rank_deficient_jacobian, "Q'W^-1Q is rank deficient");
    }
    const Eigen::MatrixXd kmat = qr_a.solve(winv_q.transpose());  // k x l
    report.V_hat = symmetrized(kmat * report.Omega_hat.matrix * kmat.transpose());
  }

  report.se.resize(k);
  report.t_ratios.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    report.se(j) = std::sqrt(std::max(0.0, report.V_hat(j, j)) / static_cast<double>(report.n));
    report.t_ratios(j) = report.theta_hat(j) / report.se(j);
  }
  return report;
}

}  // namespace detail

// One- or two-step GMM. Stage 1 minimizes with options.stage1 (evaluated at
// init when the mode needs a parameter); with two_step the weight is rebuilt
// at the stage-1 estimate using options.stage2 and the criterion re-minimized.
// J is the criterion value n * m_bar' W^-1 m_bar at the estimate.
inline GmmReport gmm_fit(const ClusteredSample& sample, const MomentModel& model,
                         const Eigen::VectorXd& init, GmmOptions options = {}) {
  const Eigen::Index l = model.moment_dim();
  const Eigen::Index k = model.parameter_dim();
  if (l < k) throw Error(errc::wrong_config, "need moment_dim >= parameter_dim");
  if (init.size() != k) {
    throw Error(errc::length_mismatch, "init size does not match the parameter count");
  }
  if (!init.allFinite()) throw Error(errc::non_finite_entry, "init must be finite");

  const Eigen::MatrixXd w1 = build_weight(options.stage1, sample, model, init);
  detail::StageResult stage = detail::minimize_criterion(sample, model, w1, init, options);
  Eigen::Index iterations = stage.iterations;

  if (!options.two_step) {
    return detail::finalize_report(sample, model, std::move(stage), w1, options.stage1, 1,
                                   iterations);
  }
  Eigen::MatrixXd w2 = build_weight(options.stage2, sample, model, stage.theta);
  stage = detail::minimize_criterion(sample, model, w2, stage.theta, options);
  iterations += stage.iterations;
  return detail::finalize_report(sample, model, std::move(stage), std::move(w2), options.stage2, 2,
                                 iterations);
}

// Spec-shaped convenience: `weight` is the stage-1 weight; a two-step run
// rebuilds the clustered centered weight at the stage-1 estimate.
inline GmmReport gmm_fit(const ClusteredSample& sample, const MomentModel& model,
                         const WeightSpec& weight, const Eigen::VectorXd& init, bool two_step) {
  GmmOptions options;
  options.stage1 = weight;
  options.two_step = two_step;
  return gmm_fit(sample, model, init, options);
}

// One-step fit with a caller-supplied fixed weight matrix (e.g. (1/n) sum z z'
// for the 2SLS nesting). Tagged non-clustered, so j_test rejects its report.
inline GmmReport gmm_fit_fixed_weight(const ClusteredSample& sample, const MomentModel& model,
                                      const Eigen::MatrixXd& weight, const Eigen::VectorXd& init,
                                      GmmOptions options = {}) {
  if (weight.rows() != model.moment_dim() || weight.cols() != model.moment_dim()) {
    throw Error(errc::length_mismatch, "weight matrix must be l x l");
  }
  if (init.size() != model.parameter_dim()) {
    throw Error(errc::length_mismatch, "init size does not match the parameter count");
  }
  detail::StageResult stage = detail::minimize_criterion(sample, model, weight, init, options);
  const Eigen::Index iterations = stage.iterations;
  return detail::finalize_report(sample, model, std::move(stage), weight,
                                 WeightSpec{WeightMode::identity, false}, 1, iterations);
}

struct JTestResult {
  double statistic = 0.0;
  Eigen::Index df = 0;
  double p_value = 1.0;
};

// Overidentification test: the criterion at the estimate is chi-square(l-k)
// only under the clustered efficient weight.
inline JTestResult j_test(const GmmReport& report) {
  if (report.final_weight.mode != WeightMode::clustered) {
    throw Error(errc::wrong_weight_mode,
                "the J test requires the clustered efficient weight; the conventional "
                "criterion is not asymptotically chi-square under clustering");
  }
  JTestResult out;
  out.statistic = report.J_statistic;
  out.df = report.J_df;
  out.p_value = report.J_df == 0
                    ? 1.0
                    : chi_squared_tail(report.J_statistic, static_cast<double>(report.J_df));
  return out;
}

}  // namespace cluscov
