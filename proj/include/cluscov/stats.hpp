#pragma once

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <cstddef>
#include <vector>

#include "cluscov/numeric.hpp"

namespace cluscov {

// Upper tail P(X >= x) for X ~ chi-square(df).
inline double chi_squared_tail(double x, double df) {
  if (x <= 0.0) return 1.0;
  boost::math::chi_squared_distribution<double> dist(df);
  return boost::math::cdf(boost::math::complement(dist, x));
}

inline double chi_squared_quantile(double p, double df) {
  boost::math::chi_squared_distribution<double> dist(df);
  return boost::math::quantile(dist, p);
}

inline double normal_cdf(double x) {
  boost::math::normal_distribution<double> dist;
  return boost::math::cdf(dist, x);
}

inline double normal_quantile(double p) {
  boost::math::normal_distribution<double> dist;
  return boost::math::quantile(dist, p);
}

struct MomentSummary {
  double mean = 0.0;
  double variance = 0.0;        // sample variance (n-1 denominator)
  double skewness = 0.0;        // m3 / m2^(3/2)
  double excess_kurtosis = 0.0; // m4 / m2^2 - 3
  std::size_t count = 0;
};

// First four moments in a fixed accumulation order, so results are
// reproducible independent of caller parallelism.
inline MomentSummary summarize_moments(const std::vector<double>& xs) {
  MomentSummary s;
  s.count = xs.size();
  if (xs.empty()) return s;
  NeumaierSum total;
  for (double x : xs) total.add(x);
  const double n = static_cast<double>(xs.size());
  s.mean = total.value() / n;
  NeumaierSum m2, m3, m4;
  for (double x : xs) {
    const double d = x - s.mean;
    m2.add(d * d);
    m3.add(d * d * d);
    m4.add(d * d * d * d);
  }
  const double v = m2.value() / n;
  s.variance = xs.size() > 1 ? m2.value() / (n - 1.0) : 0.0;
  if (v > 0.0) {
    s.skewness = (m3.value() / n) / std::pow(v, 1.5);
    s.excess_kurtosis = (m4.value() / n) / (v * v) - 3.0;
  }
  return s;
}

// Empirical quantile with linear interpolation on sorted copies.
inline double empirical_quantile(std::vector<double> xs, double p) {
  if (xs.empty()) return std::nan("");
  std::sort(xs.begin(), xs.end());
  if (p <= 0.0) return xs.front();
  if (p >= 1.0) return xs.back();
  const double h = p * (static_cast<double>(xs.size()) - 1.0);
  const std::size_t lo = static_cast<std::size_t>(h);
  const double frac = h - static_cast<double>(lo);
  if (lo + 1 >= xs.size()) return xs.back();
  return xs[lo] * (1.0 - frac) + xs[lo + 1] * frac;
}

}  // namespace cluscov
