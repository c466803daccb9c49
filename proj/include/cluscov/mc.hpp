#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "cluscov/cluster_data.hpp"
#include "cluscov/crve.hpp"
#include "cluscov/errors.hpp"
#include "cluscov/gmm.hpp"
#include "cluscov/linear.hpp"
#include "cluscov/rng.hpp"
#include "cluscov/stats.hpp"

namespace cluscov {

enum class DgpFamily {
  independent,            // i.i.d. within cluster, var 1
  equicorrelated_perfect, // one draw replicated across the cluster
  inverse_distance,       // cov(X_gj, X_gl) = 1/|j-l|
  random_walk,            // partial sums of i.i.d. N(0,1)
  two_size_mixture,       // singletons plus perfectly correlated big clusters
};

inline const char* dgp_family_name(DgpFamily f) {
  switch (f) {
    case DgpFamily::independent: return "independent";
    case DgpFamily::equicorrelated_perfect: return "equicorrelated_perfect";
    case DgpFamily::inverse_distance: return "inverse_distance";
    case DgpFamily::random_walk: return "random_walk";
    case DgpFamily::two_size_mixture: return "two_size_mixture";
  }
  return "unknown";
}

inline DgpFamily dgp_family_from_name(const std::string& name) {
  if (name == "independent") return DgpFamily::independent;
  if (name == "equicorrelated_perfect") return DgpFamily::equicorrelated_perfect;
  if (name == "inverse_distance") return DgpFamily::inverse_distance;
  if (name == "random_walk") return DgpFamily::random_walk;
  if (name == "two_size_mixture") return DgpFamily::two_size_mixture;
  throw Error(errc::wrong_config, "unknown DGP family '" + name + "'");
}

// Target sample size n with cluster sizes n_g = ceil(n^alpha) (tolerant
// ceiling), or an explicit cluster_size override. The mixture family keeps
// floor(n/2) singletons plus ceil(n^(1-alpha)/2) big clusters and adjusts n
// to the realized total.
struct DgpSpec {
  DgpFamily family = DgpFamily::independent;
  double alpha = 0.0;
  Eigen::Index n = 0;
  Eigen::Index p = 1;
  std::optional<Eigen::Index> cluster_size;
};

namespace detail {

inline Eigen::Index tolerant_ceil_pow(Eigen::Index n, double alpha) {
  return static_cast<Eigen::Index>(
      std::ceil(std::pow(static_cast<double>(n), alpha) - 1e-9));
}

}  // namespace detail

struct ResolvedDgp {
  ClusterIndex index;
  bool size_adjusted = false;  // last cluster truncated, or mixture total != target
};

inline ResolvedDgp resolve_dgp_index(const DgpSpec& spec) {
  if (spec.n < 1) throw Error(errc::wrong_config, "DGP needs n >= 1");
  if (spec.p < 1) throw Error(errc::wrong_config, "DGP needs p >= 1");
  if (!(spec.alpha >= 0.0 && spec.alpha < 1.0)) {
    throw Error(errc::wrong_config, "alpha must lie in [0, 1)");
  }
  Eigen::Index m = spec.cluster_size ? *spec.cluster_size
                                     : detail::tolerant_ceil_pow(spec.n, spec.alpha);
  m = std::max<Eigen::Index>(1, m);

  ResolvedDgp out;
  if (spec.family == DgpFamily::two_size_mixture) {
    const Eigen::Index singles = spec.n / 2;
    const Eigen::Index big = static_cast<Eigen::Index>(std::ceil(
        std::pow(static_cast<double>(spec.n), 1.0 - spec.alpha) / 2.0 - 1e-9));
    if (singles < 1 || big < 1) {
      throw Error(errc::wrong_config, "mixture family needs n large enough for both size types");
    }
    std::vector<Eigen::Index> sizes(static_cast<std::size_t>(singles), 1);
    sizes.insert(sizes.end(), static_cast<std::size_t>(big), m);
    out.index = ClusterIndex::from_sizes(std::move(sizes));
    out.size_adjusted = out.index.n != spec.n;
    return out;
  }

  if (spec.family == DgpFamily::inverse_distance && m < 3) {
    throw Error(errc::wrong_config,
                "inverse_distance is restricted to cluster sizes >= 3 (size 2 degenerates to a "
                "perfectly correlated pair)");
  }
  if (m > spec.n) m = spec.n;
  const Eigen::Index full = (spec.n + m - 1) / m;
  std::vector<Eigen::Index> sizes(static_cast<std::size_t>(full), m);
  const Eigen::Index last = spec.n - m * (full - 1);
  sizes.back() = last;
  out.index = ClusterIndex::from_sizes(std::move(sizes));
  out.size_adjusted = last != m;
  return out;
}

// Exact var(X~_g) for a cluster of size m under each family (finite-m value,
// not the asymptotic order).
inline double theoretical_cluster_variance(DgpFamily family, Eigen::Index m) {
  if (m < 1) throw Error(errc::wrong_config, "cluster size must be >= 1");
  const double md = static_cast<double>(m);
  switch (family) {
    case DgpFamily::independent:
      return md;
    case DgpFamily::equicorrelated_perfect:
    case DgpFamily::two_size_mixture:
      return md * md;
    case DgpFamily::inverse_distance: {
      NeumaierSum acc;
      acc.add(md);
      for (Eigen::Index d = 1; d < m; ++d) {
        acc.add(2.0 * static_cast<double>(m - d) / static_cast<double>(d));
      }
      return acc.value();
    }
    case DgpFamily::random_walk:
      return md * (md + 1.0) * (2.0 * md + 1.0) / 6.0;
  }
  throw Error(errc::wrong_config, "unknown DGP family");
}

// sd(Xbar) = (1/n) sqrt(sum_g var(X~_g)) over the resolved cluster index.
inline double theoretical_sd(DgpFamily family, const ClusterIndex& index) {
  NeumaierSum acc;
  for (Eigen::Index size : index.sizes) {
    // Mixture singletons have variance 1 = 1^2, covered by the same formula.
    acc.add(theoretical_cluster_variance(family, size));
  }
  return std::sqrt(acc.value()) / static_cast<double>(index.n);
}

// Draws one sample. Columns are independent copies of the family process.
// The (seed, stream) pair fully determines the output.
inline ClusteredSample generate(const DgpSpec& spec, std::uint64_t seed,
                                std::uint64_t stream = 0) {
  const ResolvedDgp resolved = resolve_dgp_index(spec);
  const ClusterIndex& index = resolved.index;
  PhiloxRng rng(seed, stream);
  Eigen::MatrixXd data(index.n, spec.p);

  std::map<Eigen::Index, Eigen::MatrixXd> cholesky_cache;
  const auto cholesky_for = [&](Eigen::Index m) -> const Eigen::MatrixXd& {
    auto it = cholesky_cache.find(m);
    if (it != cholesky_cache.end()) return it->second;
    Eigen::MatrixXd cov(m, m);
    for (Eigen::Index j = 0; j < m; ++j) {
      for (Eigen::Index l = 0; l < m; ++l) {
        cov(j, l) = j == l ? 1.0 : 1.0 / static_cast<double>(std::abs(j - l));
      }
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) {
      throw Error(errc::non_psd_covariance,
                  "the 1/|j-l| covariance is not positive semidefinite for cluster size " +
                      std::to_string(m) + "; this family cannot be sampled as specified");
    }
    return cholesky_cache.emplace(m, Eigen::MatrixXd(llt.matrixL())).first->second;
  };

  for (Eigen::Index g = 0; g < index.G; ++g) {
    const Eigen::Index off = index.offsets[static_cast<std::size_t>(g)];
    const Eigen::Index m = index.sizes[static_cast<std::size_t>(g)];
    for (Eigen::Index col = 0; col < spec.p; ++col) {
      switch (spec.family) {
        case DgpFamily::independent:
          for (Eigen::Index i = 0; i < m; ++i) data(off + i, col) = rng.gaussian();
          break;
        case DgpFamily::equicorrelated_perfect:
        case DgpFamily::two_size_mixture: {
          const double z = rng.gaussian();
          for (Eigen::Index i = 0; i < m; ++i) data(off + i, col) = z;
          break;
        }
        case DgpFamily::inverse_distance: {
          if (m >= 3) {
            const Eigen::MatrixXd& chol = cholesky_for(m);
            Eigen::VectorXd eps(m);
            for (Eigen::Index i = 0; i < m; ++i) eps(i) = rng.gaussian();
            data.block(off, col, m, 1) = chol * eps;
          } else if (m == 2) {
            const double z = rng.gaussian();
            data(off, col) = z;
            data(off + 1, col) = z;
          } else {
            data(off, col) = rng.gaussian();
          }
          break;
        }
        case DgpFamily::random_walk: {
          double level = 0.0;
          for (Eigen::Index i = 0; i < m; ++i) {
            level += rng.gaussian();
            data(off + i, col) = level;
          }
          break;
        }
      }
    }
  }
  return ClusteredSample(std::move(data), index);
}

namespace detail {

// Runs body(rep) for rep in [0, reps); each body writes only its own slot, so
// results are identical for any worker count. Exceptions propagate after join.
template <class F>
void parallel_reps(Eigen::Index reps, int threads, F&& body) {
  if (threads <= 1 || reps <= 1) {
    for (Eigen::Index r = 0; r < reps; ++r) body(r);
    return;
  }
  std::atomic<Eigen::Index> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  const int workers = static_cast<int>(std::min<Eigen::Index>(threads, reps));
  pool.reserve(static_cast<std::size_t>(workers));
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const Eigen::Index r = next.fetch_add(1);
        if (r >= reps) return;
        try {
          body(r);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct SlopeFit {
  double slope = 0.0;
  double se = 0.0;
};

inline SlopeFit fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const Eigen::Index t = static_cast<Eigen::Index>(x.size());
  double xbar = 0.0, ybar = 0.0;
  for (Eigen::Index i = 0; i < t; ++i) {
    xbar += x[static_cast<std::size_t>(i)];
    ybar += y[static_cast<std::size_t>(i)];
  }
  xbar /= static_cast<double>(t);
  ybar /= static_cast<double>(t);
  double sxx = 0.0, sxy = 0.0;
  for (Eigen::Index i = 0; i < t; ++i) {
    const double dx = x[static_cast<std::size_t>(i)] - xbar;
    sxx += dx * dx;
    sxy += dx * (y[static_cast<std::size_t>(i)] - ybar);
  }
  SlopeFit fit;
  fit.slope = sxy / sxx;
  double rss = 0.0;
  for (Eigen::Index i = 0; i < t; ++i) {
    const double resid = y[static_cast<std::size_t>(i)] - ybar -
                         fit.slope * (x[static_cast<std::size_t>(i)] - xbar);
    rss += resid * resid;
  }
  fit.se = std::sqrt(rss / static_cast<double>(t - 2) / sxx);
  return fit;
}

}  // namespace detail

struct RatePoint {
  Eigen::Index n = 0;  // realized sample size
  double empirical_sd = 0.0;
  double theoretical_sd = 0.0;
};

struct QuantilePoint {
  double level = 0.0;
  double empirical = 0.0;
  double reference = 0.0;
};

// Per-replication records plus experiment aggregates. Aggregates are always
// recomputable from per_rep, and identical (seed, config) pairs produce
// bit-identical results for any thread count.
struct McResult {
  std::string experiment;
  std::uint64_t seed = 0;
  Eigen::Index replications = 0;
  Eigen::Index failures = 0;
  double runtime_seconds = 0.0;
  std::vector<std::string> per_rep_columns;
  Eigen::MatrixXd per_rep;

  // rate
  std::vector<RatePoint> rate_points;
  double slope = std::numeric_limits<double>::quiet_NaN();
  double slope_se = std::numeric_limits<double>::quiet_NaN();
  bool size_adjusted = false;

  // coverage
  double coverage = std::numeric_limits<double>::quiet_NaN();
  double naive_coverage = std::numeric_limits<double>::quiet_NaN();
  double level = std::numeric_limits<double>::quiet_NaN();
  MomentSummary studentized{};

  // jsize
  double rejection_rate = std::numeric_limits<double>::quiet_NaN();
  Eigen::Index j_df = 0;
  std::vector<QuantilePoint> qq;

  // second-moment CLT
  MomentSummary second_moment{};
};

struct RateConfig {
  DgpFamily family = DgpFamily::independent;
  double alpha = 0.0;
  std::vector<Eigen::Index> n_grid;
  Eigen::Index reps = 1000;
  std::uint64_t seed = 0;
  int threads = 1;
  std::optional<Eigen::Index> cluster_size;
};

// Empirical sd(Xbar) across the n grid against the exact theoretical value,
// with the fitted log-log slope and its OLS standard error.
inline McResult rate_experiment(const RateConfig& config) {
  if (config.n_grid.size() < 4) throw Error(errc::wrong_config, "n_grid needs at least 4 points");
  for (std::size_t i = 1; i < config.n_grid.size(); ++i) {
    if (config.n_grid[i] <= config.n_grid[i - 1]) {
      throw Error(errc::wrong_config, "n_grid must be strictly increasing");
    }
  }
  if (config.reps < 500) throw Error(errc::wrong_config, "rate experiments need reps >= 500");

  const auto t0 = std::chrono::steady_clock::now();
  McResult result;
  result.experiment = "rate";
  result.seed = config.seed;
  result.replications = config.reps;

  const Eigen::Index points = static_cast<Eigen::Index>(config.n_grid.size());
  result.per_rep.resize(config.reps, points);
  result.rate_points.resize(static_cast<std::size_t>(points));

  for (Eigen::Index pt = 0; pt < points; ++pt) {
    DgpSpec spec;
    spec.family = config.family;
    spec.alpha = config.alpha;
    spec.n = config.n_grid[static_cast<std::size_t>(pt)];
    spec.p = 1;
    spec.cluster_size = config.cluster_size;
    const ResolvedDgp resolved = resolve_dgp_index(spec);
    result.size_adjusted = result.size_adjusted || resolved.size_adjusted;

    detail::parallel_reps(config.reps, config.threads, [&](Eigen::Index rep) {
      const std::uint64_t stream = PhiloxRng::substream(static_cast<std::uint32_t>(pt),
                                                        static_cast<std::uint32_t>(rep));
      const ClusteredSample sample = generate(spec, config.seed, stream);
      result.per_rep(rep, pt) = sample_mean(sample)(0);
    });

    std::vector<double> draws(static_cast<std::size_t>(config.reps));
    for (Eigen::Index rep = 0; rep < config.reps; ++rep) {
      draws[static_cast<std::size_t>(rep)] = result.per_rep(rep, pt);
    }
    const MomentSummary moments = summarize_moments(draws);
    auto& point = result.rate_points[static_cast<std::size_t>(pt)];
    point.n = resolved.index.n;
    point.empirical_sd = std::sqrt(moments.variance);
    point.theoretical_sd = theoretical_sd(config.family, resolved.index);
    result.per_rep_columns.push_back("xbar_n" + std::to_string(resolved.index.n));
  }

  std::vector<double> log_n, log_sd;
  for (const auto& point : result.rate_points) {
    log_n.push_back(std::log(static_cast<double>(point.n)));
    log_sd.push_back(std::log(point.empirical_sd));
  }
  const detail::SlopeFit fit = detail::fit_loglog_slope(log_n, log_sd);
  result.slope = fit.slope;
  result.slope_se = fit.se;
  result.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

struct CoverageConfig {
  DgpSpec dgp;
  DofAdjustment dof{DofMode::stata};
  double level = 0.95;
  Eigen::Index reps = 2000;
  std::uint64_t seed = 0;
  int threads = 1;
};

// Intercept-only least squares on mean-zero DGP draws: CI coverage with the
// clustered se, the naive i.i.d. se as a negative control, and the moments of
// the studentized draws.
inline McResult coverage_experiment(const CoverageConfig& config) {
  if (config.dgp.p != 1) throw Error(errc::wrong_config, "coverage experiments use p = 1");
  if (config.reps < 1000) throw Error(errc::wrong_config, "coverage needs reps >= 1000");
  if (!(config.level > 0.0 && config.level < 1.0)) {
    throw Error(errc::wrong_config, "level must lie in (0, 1)");
  }
  resolve_dgp_index(config.dgp);  // validate before spawning replications

  const auto t0 = std::chrono::steady_clock::now();
  McResult result;
  result.experiment = "coverage";
  result.seed = config.seed;
  result.replications = config.reps;
  result.level = config.level;
  result.per_rep_columns = {"t", "covered", "naive_covered"};
  result.per_rep.resize(config.reps, 3);

  const double z = normal_quantile(0.5 + config.level / 2.0);

  detail::parallel_reps(config.reps, config.threads, [&](Eigen::Index rep) {
    const std::uint64_t stream = PhiloxRng::substream(0, static_cast<std::uint32_t>(rep));
    try {
      const ClusteredSample sample = generate(config.dgp, config.seed, stream);
      const Eigen::VectorXd y = sample.data().col(0);
      const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(sample.n(), 1);
      const RegressionReport report = fit_ols(y, ones, sample.index(), config.dof);
      const double t = report.t_ratios(0);
      const Eigen::VectorXd resid = y.array() - report.beta_hat(0);
      const double sigma2 = resid.squaredNorm() / static_cast<double>(sample.n() - 1);
      const double naive_se = std::sqrt(sigma2 / static_cast<double>(sample.n()));
      const double naive_t = report.beta_hat(0) / naive_se;
      result.per_rep(rep, 0) = t;
      result.per_rep(rep, 1) = std::abs(t) <= z ? 1.0 : 0.0;
      result.per_rep(rep, 2) = std::abs(naive_t) <= z ? 1.0 : 0.0;
    } catch (const Error&) {
      result.per_rep.row(rep).setConstant(std::numeric_limits<double>::quiet_NaN());
    }
  });

  std::vector<double> ts;
  double covered = 0.0, naive_covered = 0.0;
  Eigen::Index ok = 0;
  for (Eigen::Index rep = 0; rep < config.reps; ++rep) {
    if (!std::isfinite(result.per_rep(rep, 0))) {
      ++result.failures;
      continue;
    }
    ++ok;
    ts.push_back(result.per_rep(rep, 0));
    covered += result.per_rep(rep, 1);
    naive_covered += result.per_rep(rep, 2);
  }
  if (ok > 0) {
    result.coverage = covered / static_cast<double>(ok);
    result.naive_coverage = naive_covered / static_cast<double>(ok);
  }
  result.studentized = summarize_moments(ts);
  result.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

// Overidentified linear IV design with cluster-level instruments and
// equicorrelated structural errors (ICC 1/2): z_g ~ N(0, I_l) shared within
// the cluster, e = (c_g + eps)/sqrt(2), u = e/2 + nu, x = sum(z) + u,
// y = x * beta0 + e. E[z e] = 0, so the moment model is correctly specified.
struct JsizeConfig {
  Eigen::Index clusters = 300;
  Eigen::Index cluster_size = 5;
  Eigen::Index instruments = 2;  // k = 1 regressor, so J_df = instruments - 1
  double beta0 = 1.0;
  WeightSpec weight{WeightMode::clustered, true};
  double level = 0.05;
  Eigen::Index reps = 2000;
  std::uint64_t seed = 0;
  int threads = 1;
};

namespace detail {

inline ClusteredSample generate_iv_sample(const JsizeConfig& config, std::uint64_t seed,
                                          std::uint64_t stream) {
  const Eigen::Index g_count = config.clusters;
  const Eigen::Index m = config.cluster_size;
  const Eigen::Index l = config.instruments;
  PhiloxRng rng(seed, stream);
  Eigen::MatrixXd data(g_count * m, 2 + l);  // [y, x, z_1..z_l]
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  Eigen::Index row = 0;
  for (Eigen::Index g = 0; g < g_count; ++g) {
    Eigen::VectorXd z(l);
    for (Eigen::Index j = 0; j < l; ++j) z(j) = rng.gaussian();
    const double common = rng.gaussian();
    for (Eigen::Index i = 0; i < m; ++i) {
      const double eps = rng.gaussian();
      const double nu = rng.gaussian();
      const double e = (common + eps) * inv_sqrt2;
      const double u = 0.5 * e + nu;
      const double x = z.sum() + u;
      data(row, 0) = x * config.beta0 + e;
      data(row, 1) = x;
      for (Eigen::Index j = 0; j < l; ++j) data(row, 2 + j) = z(j);
      ++row;
    }
  }
  return ClusteredSample(std::move(data),
                         ClusterIndex::from_sizes(std::vector<Eigen::Index>(
                             static_cast<std::size_t>(g_count), m)));
}

}  // namespace detail

// Size of the nominal-level J test: two-step GMM (identity stage 1, the
// configured weight at stage 2), rejection against the chi-square critical
// value, and a quantile summary of the J draws.
inline McResult jsize_experiment(const JsizeConfig& config) {
  if (config.instruments < 2) {
    throw Error(errc::wrong_config, "J size experiments need an overidentified model (l > k = 1)");
  }
  if (config.clusters < 2 || config.cluster_size < 1) {
    throw Error(errc::wrong_config, "need at least 2 clusters of size >= 1");
  }
  if (config.reps < 1) throw Error(errc::wrong_config, "reps must be positive");

  const auto t0 = std::chrono::steady_clock::now();
  McResult result;
  result.experiment = "jsize";
  result.seed = config.seed;
  result.replications = config.reps;
  result.j_df = config.instruments - 1;
  result.per_rep_columns = {"J", "reject"};
  result.per_rep.resize(config.reps, 2);

  const double critical =
      chi_squared_quantile(1.0 - config.level, static_cast<double>(result.j_df));
  std::vector<Eigen::Index> x_cols{1};
  std::vector<Eigen::Index> z_cols;
  for (Eigen::Index j = 0; j < config.instruments; ++j) z_cols.push_back(2 + j);

  detail::parallel_reps(config.reps, config.threads, [&](Eigen::Index rep) {
    const std::uint64_t stream = PhiloxRng::substream(0, static_cast<std::uint32_t>(rep));
    try {
      const ClusteredSample sample = detail::generate_iv_sample(config, config.seed, stream);
      const LinearIvMoments model(0, x_cols, z_cols);
      GmmOptions options;
      options.stage1 = WeightSpec{WeightMode::identity, false};
      options.two_step = true;
      options.stage2 = config.weight;
      const GmmReport report = gmm_fit(sample, model, Eigen::VectorXd::Zero(1), options);
      result.per_rep(rep, 0) = report.J_statistic;
      result.per_rep(rep, 1) = report.J_statistic > critical ? 1.0 : 0.0;
    } catch (const Error&) {
      result.per_rep.row(rep).setConstant(std::numeric_limits<double>::quiet_NaN());
    }
  });

  std::vector<double> js;
  double rejections = 0.0;
  for (Eigen::Index rep = 0; rep < config.reps; ++rep) {
    if (!std::isfinite(result.per_rep(rep, 0))) {
      ++result.failures;
      continue;
    }
    js.push_back(result.per_rep(rep, 0));
    rejections += result.per_rep(rep, 1);
  }
  if (!js.empty()) rejections /= static_cast<double>(js.size());
  result.rejection_rate = rejections;
  result.level = config.level;
  for (double q : {0.5, 0.9, 0.95, 0.99}) {
    QuantilePoint point;
    point.level = q;
    point.empirical = empirical_quantile(js, q);
    point.reference = chi_squared_quantile(q, static_cast<double>(result.j_df));
    result.qq.push_back(point);
  }
  result.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

// Exact E[f_bar] for the scalar second-moment statistic under a mean-zero DGP
// with independent clusters. The centered variant accounts for estimating the
// mean: E(X~_g - n_g Xbar)^2 = v_g (1 - 2 n_g/n) + (n_g/n)^2 sum_h v_h.
inline double theoretical_second_moment_mean(DgpFamily family, const ClusterIndex& index,
                                             bool centered) {
  const double n = static_cast<double>(index.n);
  std::vector<double> variances;
  variances.reserve(index.sizes.size());
  NeumaierSum total_var;
  for (Eigen::Index size : index.sizes) {
    const double v = theoretical_cluster_variance(family, size);
    variances.push_back(v);
    total_var.add(v);
  }
  if (!centered) return total_var.value() / n;
  NeumaierSum acc;
  for (std::size_t g = 0; g < variances.size(); ++g) {
    const double share = static_cast<double>(index.sizes[g]) / n;
    acc.add(variances[g] * (1.0 - 2.0 * share) + share * share * total_var.value());
  }
  return acc.value() / n;
}

// Studentized scalar second-moment statistic sqrt(n)(f_bar - truth)/sd_hat.
// Throws SingularCovariance when the estimated variance is not positive.
inline double studentized_second_moment(const ClusteredSample& sample, bool centered,
                                        double truth) {
  const SecondMomentStats stats = vectorized_second_moments(sample, centered);
  const double variance = stats.covariance.matrix(0, 0);
  if (!(variance > 0.0)) {
    throw Error(errc::singular_covariance, "second-moment variance estimate is not positive");
  }
  return std::sqrt(static_cast<double>(sample.n())) * (stats.f_bar(0) - truth) /
         std::sqrt(variance);
}

struct Clt2Config {
  DgpSpec dgp;
  bool centered = false;
  Eigen::Index reps = 2000;
  std::uint64_t seed = 0;
  int threads = 1;
};

// Normality check for the studentized clustered second moment.
inline McResult second_moment_clt_check(const Clt2Config& config) {
  if (config.dgp.p != 1) throw Error(errc::wrong_config, "second-moment checks use p = 1");
  if (config.reps < 2) throw Error(errc::wrong_config, "reps must be at least 2");
  const ResolvedDgp resolved = resolve_dgp_index(config.dgp);
  const double truth =
      theoretical_second_moment_mean(config.dgp.family, resolved.index, config.centered);

  const auto t0 = std::chrono::steady_clock::now();
  McResult result;
  result.experiment = "clt2";
  result.seed = config.seed;
  result.replications = config.reps;
  result.per_rep_columns = {"studentized"};
  result.per_rep.resize(config.reps, 1);

  detail::parallel_reps(config.reps, config.threads, [&](Eigen::Index rep) {
    const std::uint64_t stream = PhiloxRng::substream(0, static_cast<std::uint32_t>(rep));
    try {
      const ClusteredSample sample = generate(config.dgp, config.seed, stream);
      result.per_rep(rep, 0) = studentized_second_moment(sample, config.centered, truth);
    } catch (const Error&) {
      result.per_rep(rep, 0) = std::numeric_limits<double>::quiet_NaN();
    }
  });

  std::vector<double> draws;
  for (Eigen::Index rep = 0; rep < config.reps; ++rep) {
    if (!std::isfinite(result.per_rep(rep, 0))) {
      ++result.failures;
      continue;
    }
    draws.push_back(result.per_rep(rep, 0));
  }
  result.second_moment = summarize_moments(draws);
  result.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace cluscov
