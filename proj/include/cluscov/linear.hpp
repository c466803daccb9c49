#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "cluscov/cluster_data.hpp"
#include "cluscov/crve.hpp"
#include "cluscov/errors.hpp"
#include "cluscov/stats.hpp"

namespace cluscov {

enum class DofMode { none, hansen, stata };

inline const char* dof_mode_name(DofMode m) {
  switch (m) {
    case DofMode::none: return "none";
    case DofMode::hansen: return "hansen";
    case DofMode::stata: return "stata";
  }
  return "unknown";
}

// Finite-sample multiplier d_n applied to the sandwich variance.
struct DofAdjustment {
  DofMode mode = DofMode::stata;

  double value(Eigen::Index n, Eigen::Index k, Eigen::Index G) const {
    switch (mode) {
      case DofMode::none:
        return 1.0;
      case DofMode::hansen:
        if (G < 2) throw Error(errc::degenerate_sample, "G/(G-1) adjustment needs G >= 2");
        return static_cast<double>(G) / static_cast<double>(G - 1);
      case DofMode::stata:
        if (G < 2) throw Error(errc::degenerate_sample, "stata adjustment needs G >= 2");
        if (n <= k) throw Error(errc::degenerate_sample, "stata adjustment needs n > k");
        return (static_cast<double>(n - 1) / static_cast<double>(n - k)) *
               (static_cast<double>(G) / static_cast<double>(G - 1));
    }
    return 1.0;
  }
};

struct LinearDesign {
  Eigen::VectorXd y;  // n
  Eigen::MatrixXd X;  // n x k regressors
  Eigen::MatrixXd Z;  // n x l instruments (Z = X for least squares)
  ClusterIndex index;
};

struct RegressionReport {
  Eigen::VectorXd beta_hat;
  CovarianceEstimate V_hat;   // k x k, variance of sqrt(n)(beta_hat - beta)
  Eigen::MatrixXd Q_hat;      // l x k
  Eigen::MatrixXd W_hat;      // l x l
  Eigen::MatrixXd Omega_hat;  // l x l clustered score covariance
  Eigen::VectorXd se;         // sqrt(diag(V_hat)/n)
  Eigen::VectorXd t_ratios;
  Eigen::Index n = 0;
  Eigen::Index G = 0;
  Eigen::Index k = 0;
  Eigen::Index l = 0;
  DofMode dof_mode = DofMode::none;
  double dof_value = 1.0;
  std::vector<std::string> warnings;
};

namespace detail {

inline double qr_condition_estimate(const Eigen::ColPivHouseholderQR<Eigen::MatrixXd>& qr) {
  const auto& r = qr.matrixR();
  const Eigen::Index d = std::min(r.rows(), r.cols());
  double dmax = 0.0, dmin = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < d; ++i) {
    const double v = std::abs(r(i, i));
    dmax = std::max(dmax, v);
    dmin = std::min(dmin, v);
  }
  return dmin > 0.0 ? dmax / dmin : std::numeric_limits<double>::infinity();
}

}  // namespace detail

// Two-stage least squares with the clustered sandwich variance
// V_hat = d_n (Q'W^-1 Q)^-1 Q'W^-1 Omega W^-1 Q (Q'W^-1 Q)^-1,
// where Omega_hat sums Z_g' e_g e_g' Z_g over clusters. Solves use
// rank-revealing pivoted QR rather than explicit inverses.
inline RegressionReport fit_tsls(const LinearDesign& design, DofAdjustment dof = {}) {
  const Eigen::Index n = design.index.n;
  const Eigen::Index k = design.X.cols();
  const Eigen::Index l = design.Z.cols();
  if (design.y.size() != n || design.X.rows() != n || design.Z.rows() != n) {
    throw Error(errc::length_mismatch, "design dimensions do not match the cluster index");
  }
  if (l < k) {
    throw Error(errc::rank_deficient_design,
                "under-identified: " + std::to_string(l) + " instruments for " +
                    std::to_string(k) + " regressors");
  }
  if (!design.y.allFinite() || !design.X.allFinite() || !design.Z.allFinite()) {
    throw Error(errc::non_finite_entry, "design contains non-finite values");
  }

  RegressionReport report;
  report.n = n;
  report.G = design.index.G;
  report.k = k;
  report.l = l;
  report.dof_mode = dof.mode;
  report.dof_value = dof.value(n, k, design.index.G);

  const double dn = static_cast<double>(n);
  report.W_hat = (design.Z.transpose() * design.Z) / dn;
  report.Q_hat = (design.Z.transpose() * design.X) / dn;
  const Eigen::VectorXd zy = (design.Z.transpose() * design.y) / dn;

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_w(report.W_hat);
  if (qr_w.rank() < l) {
    throw Error(errc::singular_instrument_moment, "instrument moment matrix Z'Z/n is singular");
  }
  if (detail::qr_condition_estimate(qr_w) > 1e12) {
    report.warnings.push_back("instrument moment matrix condition estimate exceeds 1e12");
  }

  const Eigen::MatrixXd winv_q = qr_w.solve(report.Q_hat);          // l x k
  const Eigen::MatrixXd m = symmetrized(report.Q_hat.transpose() * winv_q);  // k x k
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_m(m);
  if (qr_m.rank() < k) {
    throw Error(errc::rank_deficient_design, "Q'W^-1Q is rank deficient");
  }
  if (detail::qr_condition_estimate(qr_m) > 1e12) {
    report.warnings.push_back("design moment matrix condition estimate exceeds 1e12");
  }

  report.beta_hat = qr_m.solve(report.Q_hat.transpose() * qr_w.solve(zy));

  // Clustered meat from residual blocks.
  Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(l, l);
  for (Eigen::Index g = 0; g < design.index.G; ++g) {
    const Eigen::Index off = design.index.offsets[static_cast<std::size_t>(g)];
    const Eigen::Index sz = design.index.sizes[static_cast<std::size_t>(g)];
    const Eigen::VectorXd e_g =
        design.y.segment(off, sz) - design.X.middleRows(off, sz) * report.beta_hat;
    const Eigen::VectorXd score = design.Z.middleRows(off, sz).transpose() * e_g;
    omega.selfadjointView<Eigen::Lower>().rankUpdate(score);
  }
  omega = omega.selfadjointView<Eigen::Lower>();
  report.Omega_hat = omega / dn;

  const Eigen::MatrixXd kmat = qr_m.solve(winv_q.transpose());  // k x l
  Eigen::MatrixXd v = report.dof_value * (kmat * report.Omega_hat * kmat.transpose());
  report.V_hat = make_covariance_estimate(symmetrized(v), CovarianceKind::score,
                                          report.dof_value);

  report.se.resize(k);
  report.t_ratios.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    report.se(j) = std::sqrt(std::max(0.0, report.V_hat.matrix(j, j)) / dn);
    report.t_ratios(j) = report.beta_hat(j) / report.se(j);
  }
  return report;
}

// Least squares as the Z = X special case.
inline RegressionReport fit_ols(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                                const ClusterIndex& index, DofAdjustment dof = {}) {
  return fit_tsls(LinearDesign{y, X, X, index}, dof);
}

struct WaldResult {
  double statistic = 0.0;
  Eigen::Index df = 0;
  double p_value = 1.0;
};

// n (R'b - r0)' (R'VR)^-1 (R'b - r0), chi-square with q degrees of freedom.
inline WaldResult wald_test(const RegressionReport& report, const Eigen::MatrixXd& R,
                            const Eigen::VectorXd& r0) {
  const Eigen::Index q = R.cols();
  if (R.rows() != report.k || r0.size() != q) {
    throw Error(errc::length_mismatch, "restriction dimensions do not match the report");
  }
  if (q > report.k || Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(R).rank() < q) {
    throw Error(errc::rank_deficient_restriction, "R must have full column rank q <= k");
  }
  const Eigen::MatrixXd s = symmetrized(R.transpose() * report.V_hat.matrix * R);
  const InverseSqrt root = symmetric_inverse_sqrt(s);
  if (root.rank < q) {
    throw Error(errc::rank_deficient_restriction, "R'VR is singular after clipping");
  }
  const Eigen::VectorXd u = R.transpose() * report.beta_hat - r0;
  WaldResult out;
  out.statistic = static_cast<double>(report.n) * (root.matrix * u).squaredNorm();
  out.df = q;
  out.p_value = chi_squared_tail(out.statistic, static_cast<double>(q));
  return out;
}

// sqrt of the diagonal of n^-1 R'VR. Caller keeps R full rank.
inline Eigen::VectorXd standard_errors(const RegressionReport& report, const Eigen::MatrixXd& R) {
  if (R.rows() != report.k) {
    throw Error(errc::length_mismatch, "restriction rows must equal the parameter count");
  }
  const Eigen::MatrixXd s = R.transpose() * report.V_hat.matrix * R;
  Eigen::VectorXd out(R.cols());
  for (Eigen::Index j = 0; j < R.cols(); ++j) {
    out(j) = std::sqrt(std::max(0.0, s(j, j)) / static_cast<double>(report.n));
  }
  return out;
}

}  // namespace cluscov
