#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cluscov/errors.hpp"
#include "cluscov/numeric.hpp"

namespace cluscov {

// Partition of n observations into G contiguous clusters of sizes n_g.
struct ClusterIndex {
  std::vector<Eigen::Index> sizes;
  std::vector<Eigen::Index> offsets;
  Eigen::Index n = 0;
  Eigen::Index G = 0;

  static ClusterIndex from_sizes(std::vector<Eigen::Index> sizes) {
    if (sizes.empty()) throw Error(errc::empty_input, "cluster index needs at least one cluster");
    ClusterIndex idx;
    idx.sizes = std::move(sizes);
    idx.G = static_cast<Eigen::Index>(idx.sizes.size());
    idx.offsets.resize(idx.sizes.size());
    Eigen::Index total = 0;
    for (std::size_t g = 0; g < idx.sizes.size(); ++g) {
      if (idx.sizes[g] < 1) {
        throw Error(errc::empty_input, "cluster " + std::to_string(g) + " has size < 1");
      }
      idx.offsets[g] = total;
      total += idx.sizes[g];
    }
    idx.n = total;
    return idx;
  }
};

// Immutable n x p observation matrix partitioned into mutually independent
// clusters. Rows of cluster g live in data.middleRows(offsets[g], sizes[g]).
class ClusteredSample {
 public:
  ClusteredSample(Eigen::MatrixXd data, ClusterIndex index,
                  std::vector<std::string> column_names = {})
      : data_(std::move(data)), index_(std::move(index)), column_names_(std::move(column_names)) {
    if (data_.rows() == 0 || data_.cols() == 0) {
      throw Error(errc::empty_input, "sample has no observations or no columns");
    }
    if (data_.rows() != index_.n) {
      throw Error(errc::length_mismatch,
                  "data has " + std::to_string(data_.rows()) + " rows but index expects " +
                      std::to_string(index_.n));
    }
    for (Eigen::Index i = 0; i < data_.rows(); ++i) {
      for (Eigen::Index j = 0; j < data_.cols(); ++j) {
        if (!std::isfinite(data_(i, j))) {
          throw Error(errc::non_finite_entry, "non-finite value at row " + std::to_string(i) +
                                                  ", column " + std::to_string(j));
        }
      }
    }
  }

  const Eigen::MatrixXd& data() const { return data_; }
  const ClusterIndex& index() const { return index_; }
  Eigen::Index n() const { return index_.n; }
  Eigen::Index G() const { return index_.G; }
  Eigen::Index dim() const { return data_.cols(); }
  const std::vector<std::string>& column_names() const { return column_names_; }

  auto cluster_rows(Eigen::Index g) const {
    return data_.middleRows(index_.offsets[static_cast<std::size_t>(g)],
                            index_.sizes[static_cast<std::size_t>(g)]);
  }

 private:
  Eigen::MatrixXd data_;
  ClusterIndex index_;
  std::vector<std::string> column_names_;
};

// Groups rows by cluster label. Cluster order is first appearance of each
// label; row order within a cluster follows the input.
template <class Label>
ClusteredSample build_sample(const Eigen::MatrixXd& rows, const std::vector<Label>& cluster_ids,
                             std::vector<std::string> column_names = {}) {
  if (rows.rows() == 0 || rows.cols() == 0) {
    throw Error(errc::empty_input, "no rows to group");
  }
  if (static_cast<Eigen::Index>(cluster_ids.size()) != rows.rows()) {
    throw Error(errc::length_mismatch,
                "cluster_ids has " + std::to_string(cluster_ids.size()) + " labels for " +
                    std::to_string(rows.rows()) + " rows");
  }
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
      if (!std::isfinite(rows(i, j))) {
        throw Error(errc::non_finite_entry, "non-finite value at row " + std::to_string(i) +
                                                ", column " + std::to_string(j));
      }
    }
  }

  std::unordered_map<Label, Eigen::Index> group_of;
  std::vector<Eigen::Index> row_group(static_cast<std::size_t>(rows.rows()));
  std::vector<Eigen::Index> sizes;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const auto [it, inserted] =
        group_of.try_emplace(cluster_ids[static_cast<std::size_t>(i)],
                             static_cast<Eigen::Index>(sizes.size()));
    if (inserted) sizes.push_back(0);
    row_group[static_cast<std::size_t>(i)] = it->second;
    ++sizes[static_cast<std::size_t>(it->second)];
  }

  ClusterIndex index = ClusterIndex::from_sizes(sizes);
  Eigen::MatrixXd grouped(rows.rows(), rows.cols());
  std::vector<Eigen::Index> cursor(index.offsets);
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const auto g = static_cast<std::size_t>(row_group[static_cast<std::size_t>(i)]);
    grouped.row(cursor[g]++) = rows.row(i);
  }
  return ClusteredSample(std::move(grouped), std::move(index), std::move(column_names));
}

// G x p matrix of within-cluster sums, compensated per column.
inline Eigen::MatrixXd cluster_sums(const ClusteredSample& sample) {
  const auto& idx = sample.index();
  Eigen::MatrixXd sums(idx.G, sample.dim());
  for (Eigen::Index g = 0; g < idx.G; ++g) {
    const auto block = sample.cluster_rows(g);
    for (Eigen::Index j = 0; j < sample.dim(); ++j) {
      NeumaierSum acc;
      for (Eigen::Index i = 0; i < block.rows(); ++i) acc.add(block(i, j));
      sums(g, j) = acc.value();
    }
  }
  return sums;
}

// (1/n) sum of cluster sums; agrees with the plain row average.
inline Eigen::VectorXd sample_mean(const ClusteredSample& sample) {
  const Eigen::MatrixXd sums = cluster_sums(sample);
  Eigen::VectorXd mean(sample.dim());
  for (Eigen::Index j = 0; j < sample.dim(); ++j) {
    NeumaierSum acc;
    for (Eigen::Index g = 0; g < sums.rows(); ++g) acc.add(sums(g, j));
    mean(j) = acc.value() / static_cast<double>(sample.n());
  }
  return mean;
}

struct DiagnosticThresholds {
  double max_share = 0.05;
  double a2_max = 1.0;
};

// Cluster-size functionals behind the WLLN/CLT/second-moment conditions.
// All advisory: clustered asymptotics are conditions on sequences, not on a
// single finite sample, so violations surface as warnings only.
struct HeterogeneityDiagnostics {
  double max_share = 0.0;     // max_g n_g / n
  double sum_sq_share = 0.0;  // sum_g n_g^2 / n^2
  double a2_bound = 0.0;      // (sum_g n_g^r)^(2/r) / n
  double a2_max = 0.0;        // max_g n_g^2 / n
  double a3_bound = 0.0;      // (sum_g n_g^(2r))^(2/r) / n
  double a3_max = 0.0;        // max_g n_g^4 / n
  double r = 2.0;
  DiagnosticThresholds thresholds;
  bool max_share_warning = false;
  bool a2_max_warning = false;
  std::vector<std::string> warnings;
};

inline HeterogeneityDiagnostics heterogeneity_diagnostics(
    const ClusterIndex& index, double r = 2.0, DiagnosticThresholds thresholds = {}) {
  if (!(r >= 2.0)) {
    throw Error(errc::invalid_moment_order, "moment order r must be >= 2, got " + std::to_string(r));
  }
  HeterogeneityDiagnostics d;
  d.r = r;
  d.thresholds = thresholds;
  const double n = static_cast<double>(index.n);
  double max_size = 0.0;
  NeumaierSum sq, pow_r, pow_2r;
  for (Eigen::Index size : index.sizes) {
    const double m = static_cast<double>(size);
    max_size = std::max(max_size, m);
    sq.add(m * m);
    pow_r.add(std::pow(m, r));
    pow_2r.add(std::pow(m, 2.0 * r));
  }
  d.max_share = max_size / n;
  d.sum_sq_share = sq.value() / (n * n);
  d.a2_bound = std::pow(pow_r.value(), 2.0 / r) / n;
  d.a2_max = max_size * max_size / n;
  d.a3_bound = std::pow(pow_2r.value(), 2.0 / r) / n;
  d.a3_max = max_size * max_size * max_size * max_size / n;
  if (d.max_share > thresholds.max_share) {
    d.max_share_warning = true;
    d.warnings.push_back("max cluster share " + std::to_string(d.max_share) +
                         " exceeds advisory threshold " + std::to_string(thresholds.max_share));
  }
  if (d.a2_max > thresholds.a2_max) {
    d.a2_max_warning = true;
    d.warnings.push_back("max_g n_g^2/n = " + std::to_string(d.a2_max) +
                         " exceeds advisory threshold " + std::to_string(thresholds.a2_max));
  }
  return d;
}

}  // namespace cluscov
