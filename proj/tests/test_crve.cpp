#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "test_support.hpp"

using namespace cluscov;
using test_support::brute_force_centered_crve;
using test_support::random_heterogeneous_sample;
using test_support::random_homogeneous_sample;
using test_support::relative_error;

namespace {

ClusteredSample four_point_sample() {
  Eigen::MatrixXd rows(4, 1);
  rows << 1, 2, 3, 4;
  return build_sample(rows, std::vector<int>{0, 0, 1, 1});
}

}  // namespace

TEST_CASE("known-mean CRVE hand examples") {
  Eigen::MatrixXd rows(4, 1);
  rows << 1, 2, -1, -2;
  const auto sample = build_sample(rows, std::vector<int>{0, 0, 1, 1});
  const auto est = crve_known_mean(sample);
  CHECK(est.matrix(0, 0) == doctest::Approx(4.5).epsilon(1e-15));
  CHECK(est.kind == CovarianceKind::known_mean);

  const auto zeros = ClusteredSample(Eigen::MatrixXd::Zero(4, 2),
                                     ClusterIndex::from_sizes({2, 2}));
  CHECK(crve_known_mean(zeros).matrix.norm() == 0.0);
}

TEST_CASE("known-mean CRVE singleton reduction and PSD property") {
  PhiloxRng rng(11, 0);
  for (int rep = 0; rep < 100; ++rep) {
    const Eigen::Index n = 5 + rep % 40;
    const Eigen::Index p = 1 + rep % 3;
    const auto sample = random_homogeneous_sample(rng, n, 1, p);
    const auto est = crve_known_mean(sample);
    const Eigen::MatrixXd plain =
        sample.data().transpose() * sample.data() / static_cast<double>(n);
    CHECK(relative_error(est.matrix, plain) <= 1e-12);
    CHECK(est.min_eigenvalue >= -1e-10 * est.matrix.trace());
  }
  for (int rep = 0; rep < 100; ++rep) {
    const auto sample = random_heterogeneous_sample(rng, 4 + rep % 12, 6, 2);
    const auto est = crve_known_mean(sample);
    CHECK(est.min_eigenvalue >= -1e-10 * std::max(1.0, est.matrix.trace()));
  }
}

TEST_CASE("common-mean CRVE hand examples") {
  const auto sample = four_point_sample();
  const auto est = crve_common_mean(sample);
  CHECK(est.matrix(0, 0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(est.kind == CovarianceKind::common_mean);

  // constant data gives the zero matrix
  const auto constant = ClusteredSample(Eigen::MatrixXd::Constant(6, 1, 7.5),
                                        ClusterIndex::from_sizes({1, 2, 3}));
  CHECK(crve_common_mean(constant).matrix.norm() <= 1e-12);

  // G < 2 is degenerate
  const auto single = ClusteredSample(Eigen::MatrixXd::Ones(3, 1), ClusterIndex::from_sizes({3}));
  CHECK_THROWS_AS(crve_common_mean(single), Error);
}

TEST_CASE("equal-size identity: subtraction form equals the centered form") {
  PhiloxRng rng(12, 0);
  for (int rep = 0; rep < 100; ++rep) {
    const Eigen::Index G = 3 + rep % 15;
    const Eigen::Index m = 1 + rep % 5;
    const Eigen::Index p = 1 + rep % 3;
    const auto sample = random_homogeneous_sample(rng, G, m, p);
    const auto est = crve_common_mean(sample);
    CHECK(relative_error(est.matrix, brute_force_centered_crve(sample)) <= 1e-10);
  }
}

TEST_CASE("location invariance on homogeneous-size samples") {
  PhiloxRng rng(13, 0);
  for (int rep = 0; rep < 100; ++rep) {
    const auto sample = random_homogeneous_sample(rng, 4 + rep % 12, 1 + rep % 4, 2);
    const Eigen::VectorXd shift = test_support::random_matrix(rng, 2, 1, 5.0);
    Eigen::MatrixXd shifted = sample.data();
    shifted.rowwise() += shift.transpose();
    const ClusteredSample moved(shifted, sample.index());
    CHECK(relative_error(crve_common_mean(moved).matrix, crve_common_mean(sample).matrix) <=
          1e-10);
  }
}

TEST_CASE("scale equivariance of both CRVEs") {
  PhiloxRng rng(14, 0);
  for (int rep = 0; rep < 100; ++rep) {
    const auto sample = random_heterogeneous_sample(rng, 5 + rep % 10, 4, 2);
    const double c = 0.3 + 4.0 * rng.uniform01();
    const ClusteredSample scaled(c * sample.data(), sample.index());
    CHECK(relative_error(crve_known_mean(scaled).matrix, c * c * crve_known_mean(sample).matrix) <=
          1e-12);
    CHECK(relative_error(crve_common_mean(scaled).matrix,
                         c * c * crve_common_mean(sample).matrix) <= 1e-12);
  }
}

TEST_CASE("symmetric inverse square root basics") {
  CHECK(relative_error(symmetric_inverse_sqrt(Eigen::MatrixXd::Identity(3, 3)).matrix,
                       Eigen::MatrixXd::Identity(3, 3)) <= 1e-14);

  Eigen::MatrixXd diag = Eigen::Vector2d(4.0, 9.0).asDiagonal();
  const auto root = symmetric_inverse_sqrt(diag);
  CHECK(root.matrix(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(root.matrix(1, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK_FALSE(root.clipped);
  CHECK(root.rank == 2);
}

TEST_CASE("symmetric inverse square root reconstruction on random PSD matrices") {
  PhiloxRng rng(15, 0);
  for (int rep = 0; rep < 100; ++rep) {
    const Eigen::Index d = 2 + rep % 4;
    const Eigen::MatrixXd b = test_support::random_matrix(rng, d + 2, d);
    const Eigen::MatrixXd a = b.transpose() * b / static_cast<double>(d + 2);
    const auto root = symmetric_inverse_sqrt(a);
    CHECK(root.rank == d);
    // S A S = I on the full rank case, equivalent to ||S^-1 S^-1 - A|| small
    CHECK(relative_error(root.matrix * a * root.matrix, Eigen::MatrixXd::Identity(d, d)) <= 1e-8);
  }
}

TEST_CASE("symmetric inverse square root error and clipping paths") {
  Eigen::MatrixXd asym(2, 2);
  asym << 1, 2, 0, 1;
  CHECK_THROWS_AS(symmetric_inverse_sqrt(asym), Error);

  Eigen::MatrixXd indefinite = Eigen::Vector2d(1.0, -0.5).asDiagonal();
  try {
    symmetric_inverse_sqrt(indefinite);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == errc::indefinite_matrix);
  }

  // rank-1 PSD matrix: one eigenvalue clipped, pseudo-inverse on the range
  Eigen::VectorXd v(2);
  v << 1, 2;
  const Eigen::MatrixXd rank1 = v * v.transpose();
  const auto root = symmetric_inverse_sqrt(rank1);
  CHECK(root.clipped);
  CHECK(root.rank == 1);
  const Eigen::MatrixXd projector = root.matrix * rank1 * root.matrix;
  CHECK(relative_error(projector * rank1, rank1) <= 1e-10);
}

TEST_CASE("studentize_mean hand examples") {
  const auto sample = four_point_sample();
  CHECK(studentize_mean(sample, sample_mean(sample)).norm() <= 1e-12);

  const Eigen::VectorXd stat = studentize_mean(sample, Eigen::VectorXd::Zero(1));
  CHECK(stat(0) == doctest::Approx(std::sqrt(4.0) * 2.5 / std::sqrt(2.0)).epsilon(1e-12));

  const auto constant = ClusteredSample(Eigen::MatrixXd::Constant(4, 1, 1.0),
                                        ClusterIndex::from_sizes({2, 2}));
  try {
    studentize_mean(constant, Eigen::VectorXd::Zero(1));
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == errc::singular_covariance);
  }
}

TEST_CASE("studentize_mean equals the intercept-only t ratio on homogeneous samples") {
  PhiloxRng rng(16, 0);
  for (int rep = 0; rep < 50; ++rep) {
    const auto sample = random_homogeneous_sample(rng, 5 + rep % 10, 1 + rep % 4, 1);
    const Eigen::VectorXd stat = studentize_mean(sample, Eigen::VectorXd::Zero(1));
    const auto report = fit_ols(sample.data().col(0), Eigen::MatrixXd::Ones(sample.n(), 1),
                                sample.index(), DofAdjustment{DofMode::none});
    CHECK(stat(0) == doctest::Approx(report.t_ratios(0)).epsilon(1e-10));
  }
}

TEST_CASE("studentize_mean is scale invariant for c > 0") {
  PhiloxRng rng(17, 0);
  for (int rep = 0; rep < 50; ++rep) {
    const auto sample = random_heterogeneous_sample(rng, 6 + rep % 8, 4, 1);
    const double c = 0.2 + 3.0 * rng.uniform01();
    const ClusteredSample scaled(c * sample.data(), sample.index());
    const double base = studentize_mean(sample, Eigen::VectorXd::Zero(1))(0);
    const double after = studentize_mean(scaled, Eigen::VectorXd::Zero(1))(0);
    CHECK(after == doctest::Approx(base).epsilon(1e-9));
  }
}

TEST_CASE("vectorized second moments: hand examples") {
  const auto sample = four_point_sample();
  const auto uncentered = vectorized_second_moments(sample, false);
  CHECK(uncentered.f_bar(0) == doctest::Approx(14.5).epsilon(1e-14));
  const auto centered = vectorized_second_moments(sample, true);
  CHECK(centered.f_bar(0) == doctest::Approx(2.0).epsilon(1e-14));

  const auto zeros = ClusteredSample(Eigen::MatrixXd::Zero(4, 1), ClusterIndex::from_sizes({2, 2}));
  CHECK(vectorized_second_moments(zeros, false).f_bar.norm() == 0.0);
}

TEST_CASE("vectorized second moments agree with the CRVE matrices") {
  PhiloxRng rng(18, 0);
  for (int rep = 0; rep < 50; ++rep) {
    const Eigen::Index p = 1 + rep % 3;
    const auto sample = random_heterogeneous_sample(rng, 5 + rep % 10, 4, p);
    const auto stats = vectorized_second_moments(sample, false);
    const Eigen::MatrixXd omega = crve_known_mean(sample).matrix;
    Eigen::MatrixXd reshaped(p, p);
    for (Eigen::Index a = 0; a < p; ++a) {
      for (Eigen::Index b = 0; b < p; ++b) reshaped(a, b) = stats.f_bar(a * p + b);
    }
    CHECK(relative_error(reshaped, omega) <= 1e-12);
  }
  // centered f_bar equals the common-mean CRVE for homogeneous sizes
  for (int rep = 0; rep < 50; ++rep) {
    const auto sample = random_homogeneous_sample(rng, 4 + rep % 10, 1 + rep % 4, 1);
    const auto stats = vectorized_second_moments(sample, true);
    CHECK(stats.f_bar(0) ==
          doctest::Approx(crve_common_mean(sample).matrix(0, 0)).epsilon(1e-10));
  }
}
