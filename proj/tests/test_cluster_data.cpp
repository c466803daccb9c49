#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "test_support.hpp"

using namespace cluscov;
using test_support::random_heterogeneous_sample;
using test_support::random_sizes;

TEST_CASE("build_sample groups by first appearance") {
  Eigen::MatrixXd rows(4, 1);
  rows << 1, 2, 3, 4;
  const auto sample = build_sample(rows, std::vector<std::string>{"a", "a", "b", "b"});
  CHECK(sample.G() == 2);
  CHECK(sample.index().sizes == std::vector<Eigen::Index>{2, 2});
  CHECK(sample.data()(0, 0) == 1);
  CHECK(sample.data()(3, 0) == 4);
}

TEST_CASE("build_sample keeps within-cluster order for interleaved labels") {
  Eigen::MatrixXd rows(3, 1);
  rows << 1, 2, 3;
  const auto sample = build_sample(rows, std::vector<std::string>{"a", "b", "a"});
  CHECK(sample.G() == 2);
  CHECK(sample.index().sizes == std::vector<Eigen::Index>{2, 1});
  // cluster a holds rows 1 and 3 in that order
  CHECK(sample.data()(0, 0) == 1);
  CHECK(sample.data()(1, 0) == 3);
  CHECK(sample.data()(2, 0) == 2);
}

TEST_CASE("build_sample rejects bad input") {
  Eigen::MatrixXd rows(2, 1);
  rows << 1, std::nan("");
  CHECK_THROWS_WITH_AS(build_sample(rows, std::vector<int>{0, 1}), doctest::Contains("row 1"),
                       Error);
  try {
    build_sample(rows, std::vector<int>{0, 1});
  } catch (const Error& e) {
    CHECK(e.code() == errc::non_finite_entry);
  }

  Eigen::MatrixXd ok(2, 1);
  ok << 1, 2;
  CHECK_THROWS_AS(build_sample(ok, std::vector<int>{0}), Error);
  CHECK_THROWS_AS(build_sample(Eigen::MatrixXd(0, 1), std::vector<int>{}), Error);
}

TEST_CASE("cluster_sums matches hand examples") {
  Eigen::MatrixXd rows(4, 1);
  rows << 1, 2, 3, 4;
  const auto sample = build_sample(rows, std::vector<int>{0, 0, 1, 1});
  const Eigen::MatrixXd sums = cluster_sums(sample);
  CHECK(sums(0, 0) == doctest::Approx(3).epsilon(1e-15));
  CHECK(sums(1, 0) == doctest::Approx(7).epsilon(1e-15));

  // singleton clusters reproduce the data matrix
  const auto singles = build_sample(rows, std::vector<int>{0, 1, 2, 3});
  CHECK((cluster_sums(singles) - rows).norm() == 0.0);

  Eigen::MatrixXd pair(2, 2);
  pair << 1, 0, 0, 1;
  const auto sample2 = build_sample(pair, std::vector<int>{0, 0});
  const Eigen::MatrixXd sums2 = cluster_sums(sample2);
  CHECK(sums2(0, 0) == 1);
  CHECK(sums2(0, 1) == 1);
}

TEST_CASE("sample_mean matches hand examples") {
  Eigen::MatrixXd rows(4, 1);
  rows << 1, 2, 3, 4;
  const auto sample = build_sample(rows, std::vector<int>{0, 0, 1, 1});
  CHECK(sample_mean(sample)(0) == doctest::Approx(2.5).epsilon(1e-15));

  Eigen::MatrixXd constant = Eigen::MatrixXd::Constant(6, 2, 3.25);
  const auto csample = build_sample(constant, std::vector<int>{0, 0, 1, 1, 2, 2});
  CHECK(sample_mean(csample)(0) == doctest::Approx(3.25).epsilon(1e-15));
  CHECK(sample_mean(csample)(1) == doctest::Approx(3.25).epsilon(1e-15));

  Eigen::MatrixXd two(2, 2);
  two << 1, 0, 0, 1;
  const auto tsample = build_sample(two, std::vector<int>{0, 1});
  CHECK(sample_mean(tsample)(0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sample_mean(tsample)(1) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("partition identity: sum of cluster sums equals n times the mean") {
  PhiloxRng rng(101, 0);
  for (int rep = 0; rep < 100; ++rep) {
    const auto sample = random_heterogeneous_sample(rng, 3 + rep % 20, 7, 1 + rep % 3);
    const Eigen::MatrixXd sums = cluster_sums(sample);
    const Eigen::VectorXd total = sums.colwise().sum().transpose();
    const Eigen::VectorXd scaled = static_cast<double>(sample.n()) * sample_mean(sample);
    CHECK(test_support::relative_error(total, scaled) <= 1e-12);

    // and the mean equals the plain row average
    const Eigen::VectorXd plain = sample.data().colwise().mean().transpose();
    CHECK(test_support::relative_error(plain, sample_mean(sample)) <= 1e-12);
  }
}

TEST_CASE("permutation invariance of sums, mean, and diagnostics") {
  PhiloxRng rng(202, 0);
  for (int rep = 0; rep < 100; ++rep) {
    const auto sample = random_heterogeneous_sample(rng, 4 + rep % 10, 5, 2);
    const Eigen::MatrixXd sums = cluster_sums(sample);
    const Eigen::VectorXd mean = sample_mean(sample);
    const auto diag = heterogeneity_diagnostics(sample.index(), 2.0);

    // rotate cluster blocks and reverse rows within each cluster
    const Eigen::Index G = sample.G();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(G));
    std::iota(order.begin(), order.end(), 0);
    std::rotate(order.begin(), order.begin() + 1 + rep % (G - 1), order.end());

    std::vector<Eigen::Index> new_sizes;
    Eigen::MatrixXd permuted(sample.n(), sample.dim());
    Eigen::Index row = 0;
    for (Eigen::Index g : order) {
      const auto block = sample.cluster_rows(g);
      for (Eigen::Index i = block.rows() - 1; i >= 0; --i) permuted.row(row++) = block.row(i);
      new_sizes.push_back(block.rows());
    }
    const ClusteredSample shuffled(permuted, ClusterIndex::from_sizes(new_sizes));

    const Eigen::MatrixXd sums2 = cluster_sums(shuffled);
    for (Eigen::Index g = 0; g < G; ++g) {
      const Eigen::Index orig = order[static_cast<std::size_t>(g)];
      CHECK(test_support::relative_error(sums2.row(g), sums.row(orig)) <= 1e-12);
    }
    CHECK(test_support::relative_error(sample_mean(shuffled), mean) <= 1e-12);

    const auto diag2 = heterogeneity_diagnostics(shuffled.index(), 2.0);
    CHECK(diag2.max_share == diag.max_share);
    CHECK(diag2.sum_sq_share == doctest::Approx(diag.sum_sq_share).epsilon(1e-14));
    CHECK(diag2.a2_bound == doctest::Approx(diag.a2_bound).epsilon(1e-14));
  }
}

TEST_CASE("heterogeneity diagnostics hand example, sizes (1,2,3), r = 2") {
  const auto index = ClusterIndex::from_sizes({1, 2, 3});
  const auto diag = heterogeneity_diagnostics(index, 2.0);
  CHECK(diag.max_share == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(diag.sum_sq_share == doctest::Approx(14.0 / 36.0).epsilon(1e-15));
  CHECK(diag.a2_bound == doctest::Approx(14.0 / 6.0).epsilon(1e-15));
  CHECK(diag.a2_max == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(diag.a3_bound == doctest::Approx(98.0 / 6.0).epsilon(1e-15));
  CHECK(diag.a3_max == doctest::Approx(13.5).epsilon(1e-15));
  CHECK(diag.max_share_warning);  // 0.5 > 0.05
  CHECK(diag.a2_max_warning);     // 1.5 > 1
}

TEST_CASE("heterogeneity diagnostics singleton reduction") {
  const auto index = ClusterIndex::from_sizes(std::vector<Eigen::Index>(100, 1));
  const auto diag = heterogeneity_diagnostics(index, 2.0);
  CHECK(diag.max_share == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(diag.sum_sq_share == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(diag.a2_bound == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_FALSE(diag.max_share_warning);
  CHECK_FALSE(diag.a2_max_warning);
}

TEST_CASE("equal sizes: a2_bound has the closed form G^(2/r) m^2 / n") {
  PhiloxRng rng(303, 0);
  for (int rep = 0; rep < 50; ++rep) {
    const Eigen::Index G = 2 + static_cast<Eigen::Index>(rng.next_u64() % 30);
    const Eigen::Index m = 1 + static_cast<Eigen::Index>(rng.next_u64() % 10);
    const double r = 2.0 + 6.0 * rng.uniform01();
    const auto index = ClusterIndex::from_sizes(std::vector<Eigen::Index>(G, m));
    const auto diag = heterogeneity_diagnostics(index, r);
    const double closed = std::pow(static_cast<double>(G), 2.0 / r) *
                          static_cast<double>(m * m) / static_cast<double>(index.n);
    CHECK(diag.a2_bound == doctest::Approx(closed).epsilon(1e-12));
  }
}

TEST_CASE("a2_bound is non-increasing in r and sum_sq_share <= max_share") {
  PhiloxRng rng(404, 0);
  for (int rep = 0; rep < 100; ++rep) {
    const auto sizes = random_sizes(rng, 2 + rep % 25, 9);
    const auto index = ClusterIndex::from_sizes(sizes);
    const double r1 = 2.0 + 5.0 * rng.uniform01();
    const double r2 = r1 + 5.0 * rng.uniform01();
    const auto diag1 = heterogeneity_diagnostics(index, r1);
    const auto diag2 = heterogeneity_diagnostics(index, r2);
    CHECK(diag1.a2_bound >= diag2.a2_bound - 1e-12 * diag1.a2_bound);
    CHECK(diag1.sum_sq_share <= diag1.max_share + 1e-15);
  }
}

TEST_CASE("invalid moment order is rejected") {
  const auto index = ClusterIndex::from_sizes({1, 2});
  CHECK_THROWS_AS(heterogeneity_diagnostics(index, 1.5), Error);
  try {
    heterogeneity_diagnostics(index, 1.5);
  } catch (const Error& e) {
    CHECK(e.code() == errc::invalid_moment_order);
  }
}
