#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdlib>

namespace cluscov {

// Kahan-Babuska-Neumaier compensated accumulator. Cluster sums and grand
// totals go through this so the partition identity holds at 1e-12 relative
// even for large Monte Carlo samples.
struct NeumaierSum {
  double sum = 0.0;
  double comp = 0.0;

  void add(double v) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) {
      comp += (sum - t) + v;
    } else {
      comp += (v - t) + sum;
    }
    sum = t;
  }

  double value() const { return sum + comp; }
};

inline bool is_finite(double x) { return std::isfinite(x); }

template <class Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

// Exact symmetrization (M + M')/2.
inline Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& m) {
  return 0.5 * (m + m.transpose());
}

// Relative asymmetry ||M - M'|| / max(1, ||M||), Frobenius norms.
inline double relative_asymmetry(const Eigen::MatrixXd& m) {
  const double denom = std::max(1.0, m.norm());
  return (m - m.transpose()).norm() / denom;
}

}  // namespace cluscov
