#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>

#include "cluscov/cluster_data.hpp"
#include "cluscov/errors.hpp"
#include "cluscov/numeric.hpp"

namespace cluscov {

enum class CovarianceKind { known_mean, common_mean, score, weight };

inline const char* covariance_kind_name(CovarianceKind k) {
  switch (k) {
    case CovarianceKind::known_mean: return "known_mean";
    case CovarianceKind::common_mean: return "common_mean";
    case CovarianceKind::score: return "score";
    case CovarianceKind::weight: return "weight";
  }
  return "unknown";
}

// Symmetric d x d estimate with provenance and an eigenvalue summary.
// Estimators built from subtraction forms can be indefinite in finite
// samples; min_eigenvalue reports that instead of asserting positivity.
struct CovarianceEstimate {
  Eigen::MatrixXd matrix;
  CovarianceKind kind = CovarianceKind::known_mean;
  double min_eigenvalue = 0.0;
  double condition_number = 0.0;
  double dof_adjustment = 1.0;
};

inline CovarianceEstimate make_covariance_estimate(Eigen::MatrixXd matrix, CovarianceKind kind,
                                                   double dof_adjustment = 1.0) {
  if (matrix.rows() != matrix.cols()) {
    throw Error(errc::not_symmetric, "covariance estimate must be square");
  }
  if (relative_asymmetry(matrix) > 1e-10) {
    throw Error(errc::not_symmetric, "matrix asymmetry exceeds 1e-10 relative");
  }
  CovarianceEstimate est;
  est.matrix = symmetrized(matrix);
  est.kind = kind;
  est.dof_adjustment = dof_adjustment;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(est.matrix,
                                                        Eigen::EigenvaluesOnly);
  const Eigen::VectorXd evals = solver.eigenvalues();
  est.min_eigenvalue = evals.minCoeff();
  const double abs_max = evals.cwiseAbs().maxCoeff();
  const double abs_min = evals.cwiseAbs().minCoeff();
  est.condition_number =
      abs_min > 0.0 ? abs_max / abs_min : std::numeric_limits<double>::infinity();
  return est;
}

// (1/n) sum_g X~_g X~_g' -- consistent when observations are mean zero (or
// the mean is known and subtracted by the caller; not checked here).
// Positive semidefinite by construction.
inline CovarianceEstimate crve_known_mean(const ClusteredSample& sample) {
  const Eigen::MatrixXd sums = cluster_sums(sample);
  Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(sample.dim(), sample.dim());
  for (Eigen::Index g = 0; g < sums.rows(); ++g) {
    omega.selfadjointView<Eigen::Lower>().rankUpdate(sums.row(g).transpose());
  }
  omega = omega.selfadjointView<Eigen::Lower>();
  omega /= static_cast<double>(sample.n());
  return make_covariance_estimate(std::move(omega), CovarianceKind::known_mean);
}

// (1/n) sum_g X~_g X~_g' - (1/n) sum_g n_g^2 Xbar Xbar' -- the estimator for
// a common unknown mean. Kept in exact subtraction form; may be indefinite
// for heterogeneous cluster sizes (see min_eigenvalue).
inline CovarianceEstimate crve_common_mean(const ClusteredSample& sample) {
  if (sample.G() < 2) {
    throw Error(errc::degenerate_sample, "common-mean CRVE needs at least 2 clusters");
  }
  const Eigen::MatrixXd sums = cluster_sums(sample);
  const Eigen::VectorXd mean = sample_mean(sample);
  const double n = static_cast<double>(sample.n());
  Eigen::MatrixXd outer = Eigen::MatrixXd::Zero(sample.dim(), sample.dim());
  for (Eigen::Index g = 0; g < sums.rows(); ++g) {
    outer.selfadjointView<Eigen::Lower>().rankUpdate(sums.row(g).transpose());
  }
  outer = outer.selfadjointView<Eigen::Lower>();
  NeumaierSum sq_sizes;
  for (Eigen::Index size : sample.index().sizes) {
    const double m = static_cast<double>(size);
    sq_sizes.add(m * m);
  }
  Eigen::MatrixXd omega = (outer - sq_sizes.value() * (mean * mean.transpose())) / n;
  return make_covariance_estimate(std::move(omega), CovarianceKind::common_mean);
}

struct InverseSqrt {
  Eigen::MatrixXd matrix;      // S with S M S = projector onto the kept eigenspace
  bool clipped = false;        // whether any eigenvalue was treated as zero
  Eigen::Index rank = 0;       // eigenvalues kept
};

// Symmetric inverse square root by eigendecomposition with clipping.
// Eigenvalues below 1e-12 * lambda_max count as zero and are pseudo-inverted;
// eigenvalues below -1e-10 * ||M|| mean the input is genuinely indefinite.
inline InverseSqrt symmetric_inverse_sqrt(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) {
    throw Error(errc::not_symmetric, "matrix must be square");
  }
  if (relative_asymmetry(m) > 1e-10) {
    throw Error(errc::not_symmetric, "matrix asymmetry exceeds 1e-10 relative");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(symmetrized(m));
  const Eigen::VectorXd evals = solver.eigenvalues();
  const Eigen::MatrixXd& vecs = solver.eigenvectors();
  const double spectral_norm = evals.cwiseAbs().maxCoeff();
  if (evals.minCoeff() < -1e-10 * spectral_norm) {
    throw Error(errc::indefinite_matrix,
                "eigenvalue " + std::to_string(evals.minCoeff()) + " below -1e-10 * ||M||");
  }
  const double lambda_max = evals.maxCoeff();
  const double clip = lambda_max > 0.0 ? 1e-12 * lambda_max : 0.0;
  InverseSqrt out;
  Eigen::VectorXd inv_sqrt(evals.size());
  for (Eigen::Index i = 0; i < evals.size(); ++i) {
    if (evals(i) > clip && lambda_max > 0.0) {
      inv_sqrt(i) = 1.0 / std::sqrt(evals(i));
      ++out.rank;
    } else {
      inv_sqrt(i) = 0.0;
      out.clipped = true;
    }
  }
  out.matrix = vecs * inv_sqrt.asDiagonal() * vecs.transpose();
  out.matrix = symmetrized(out.matrix);
  return out;
}

// Omega_hat^{-1/2} sqrt(n) (Xbar - mu0): asymptotically N(0, I_p) under the
// null. Deterministic given inputs; the distributional claim is exercised in
// the Monte Carlo lab.
inline Eigen::VectorXd studentize_mean(const ClusteredSample& sample,
                                       const Eigen::VectorXd& mu0) {
  if (mu0.size() != sample.dim()) {
    throw Error(errc::length_mismatch, "mu0 dimension does not match sample");
  }
  const CovarianceEstimate omega = crve_common_mean(sample);
  const InverseSqrt root = symmetric_inverse_sqrt(omega.matrix);
  if (root.rank == 0) {
    throw Error(errc::singular_covariance, "all eigenvalues of the CRVE were clipped");
  }
  const Eigen::VectorXd centered = sample_mean(sample) - mu0;
  return root.matrix * (std::sqrt(static_cast<double>(sample.n())) * centered);
}

struct SecondMomentStats {
  Eigen::VectorXd f_bar;            // q = p^2 vector
  CovarianceEstimate covariance;    // cluster-level covariance of f_bar
};

// Vectorized clustered second moments f_bar = (1/n) sum_g f~_g with
// f~_g = X~_g (x) X~_g, or the (X~_g - n_g Xbar) version when centered.
// Uncentered f_bar equals vec of the known-mean CRVE. The covariance of
// f_bar treats f~_g as the cluster-level statistic: the cluster outer-product
// average minus G times the outer product of the f~ mean.
inline SecondMomentStats vectorized_second_moments(const ClusteredSample& sample,
                                                   bool centered) {
  const Eigen::Index p = sample.dim();
  const Eigen::Index q = p * p;
  const Eigen::MatrixXd sums = cluster_sums(sample);
  const Eigen::VectorXd mean = sample_mean(sample);
  const double n = static_cast<double>(sample.n());
  const Eigen::Index G = sample.G();

  Eigen::MatrixXd f(G, q);
  for (Eigen::Index g = 0; g < G; ++g) {
    Eigen::VectorXd v = sums.row(g).transpose();
    if (centered) v -= static_cast<double>(sample.index().sizes[static_cast<std::size_t>(g)]) * mean;
    for (Eigen::Index a = 0; a < p; ++a) {
      for (Eigen::Index b = 0; b < p; ++b) {
        f(g, a * p + b) = v(a) * v(b);
      }
    }
  }

  SecondMomentStats out;
  out.f_bar.resize(q);
  Eigen::VectorXd f_mean(q);
  for (Eigen::Index j = 0; j < q; ++j) {
    NeumaierSum acc;
    for (Eigen::Index g = 0; g < G; ++g) acc.add(f(g, j));
    out.f_bar(j) = acc.value() / n;
    f_mean(j) = acc.value() / static_cast<double>(G);
  }

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(q, q);
  for (Eigen::Index g = 0; g < G; ++g) {
    cov.selfadjointView<Eigen::Lower>().rankUpdate(f.row(g).transpose());
  }
  cov = cov.selfadjointView<Eigen::Lower>();
  cov -= static_cast<double>(G) * (f_mean * f_mean.transpose());
  cov /= n;
  out.covariance = make_covariance_estimate(std::move(cov), CovarianceKind::common_mean);
  return out;
}

}  // namespace cluscov
