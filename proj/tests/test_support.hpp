#pragma once

#include <Eigen/Dense>
#include <vector>

#include "cluscov/cluscov.hpp"

namespace test_support {

using cluscov::ClusteredSample;
using cluscov::ClusterIndex;
using cluscov::PhiloxRng;

inline Eigen::MatrixXd random_matrix(PhiloxRng& rng, Eigen::Index rows, Eigen::Index cols,
                                     double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.gaussian();
  }
  return m;
}

inline std::vector<Eigen::Index> random_sizes(PhiloxRng& rng, Eigen::Index groups,
                                              Eigen::Index max_size) {
  std::vector<Eigen::Index> sizes(static_cast<std::size_t>(groups));
  for (auto& s : sizes) {
    s = 1 + static_cast<Eigen::Index>(rng.next_u64() % static_cast<std::uint64_t>(max_size));
  }
  return sizes;
}

inline ClusteredSample random_sample(PhiloxRng& rng, std::vector<Eigen::Index> sizes,
                                     Eigen::Index p, double scale = 1.0) {
  ClusterIndex index = ClusterIndex::from_sizes(std::move(sizes));
  return ClusteredSample(random_matrix(rng, index.n, p, scale), std::move(index));
}

inline ClusteredSample random_heterogeneous_sample(PhiloxRng& rng, Eigen::Index groups,
                                                   Eigen::Index max_size, Eigen::Index p) {
  return random_sample(rng, random_sizes(rng, groups, max_size), p);
}

inline ClusteredSample random_homogeneous_sample(PhiloxRng& rng, Eigen::Index groups,
                                                 Eigen::Index size, Eigen::Index p) {
  return random_sample(rng, std::vector<Eigen::Index>(static_cast<std::size_t>(groups), size), p);
}

inline double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double denom = std::max(1e-300, std::max(a.norm(), b.norm()));
  return (a - b).norm() / denom;
}

// Centered cluster outer-product form, accumulated the plain way; independent
// of the library's subtraction-form implementation.
inline Eigen::MatrixXd brute_force_centered_crve(const ClusteredSample& sample) {
  const Eigen::Index p = sample.dim();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(p);
  for (Eigen::Index i = 0; i < sample.n(); ++i) mean += sample.data().row(i).transpose();
  mean /= static_cast<double>(sample.n());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index g = 0; g < sample.G(); ++g) {
    const auto block = sample.cluster_rows(g);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(p);
    for (Eigen::Index i = 0; i < block.rows(); ++i) sum += block.row(i).transpose();
    const Eigen::VectorXd centered = sum - static_cast<double>(block.rows()) * mean;
    out += centered * centered.transpose();
  }
  return out / static_cast<double>(sample.n());
}

}  // namespace test_support
