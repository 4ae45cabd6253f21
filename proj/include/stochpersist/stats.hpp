#pragma once

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace stochpersist {

/// Monte Carlo mean with a standard error. For autocorrelated series the
/// error comes from batch means; for i.i.d. samples `batches == n`.
struct RateEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  long batches = 1;
  long n = 0;

  /// |mean| / std_error, +inf for an exact nonzero value.
  double z() const {
    if (std_error > 0.0) return std::fabs(mean) / std_error;
    return mean == 0.0 ? 0.0 : HUGE_VAL;
  }
  bool significantly_positive(double k = 3.0) const { return mean > k * std_error && mean > 0.0; }
  bool significantly_negative(double k = 3.0) const { return mean < -k * std_error && mean < 0.0; }
};

inline RateEstimate exact_estimate(double value) { return {value, 0.0, 1, 1}; }

/// Batch-means estimate over `batches` equal contiguous batches. The mean uses
/// every sample; when n is not a multiple of the batch count the leading
/// remainder is left out of the batches only.
template <class Derived>
RateEstimate batch_means(const Eigen::DenseBase<Derived>& series, long batches = 20) {
  const long n = static_cast<long>(series.size());
  RateEstimate est;
  est.n = n;
  if (n == 0) return est;
  // shifted by the first sample so a constant series gives its value exactly
  const double shift = series.derived().coeff(0);
  est.mean = shift + (series.derived().array() - shift).mean();
  const long b = std::min(batches, n);
  est.batches = b;
  if (b < 2) return est;
  const long size = n / b;
  const long offset = n - size * b;
  Eigen::ArrayXd means(b);
  for (long i = 0; i < b; ++i) means[i] = (series.derived().array().segment(offset + i * size, size) - shift).mean();
  const double centre = means.mean();
  const double var = (means - centre).square().sum() / static_cast<double>(b - 1);
  est.std_error = std::sqrt(var / static_cast<double>(b));
  return est;
}

inline RateEstimate batch_means(std::span<const double> series, long batches = 20) {
  return batch_means(Eigen::Map<const Eigen::ArrayXd>(series.data(), static_cast<Eigen::Index>(series.size())),
                     batches);
}

/// Estimate from independent samples: SE = sd / sqrt(n).
template <class Derived>
RateEstimate iid_estimate(const Eigen::DenseBase<Derived>& samples) {
  const long n = static_cast<long>(samples.size());
  RateEstimate est;
  est.n = n;
  est.batches = n;
  if (n == 0) return est;
  const double shift = samples.derived().coeff(0);
  const double offset = (samples.derived().array() - shift).mean();
  est.mean = shift + offset;
  if (n > 1) {
    const double var = (samples.derived().array() - shift - offset).square().sum() / static_cast<double>(n - 1);
    est.std_error = std::sqrt(var / static_cast<double>(n));
  }
  return est;
}

/// Combines independent replicate estimates in order: mean of means and
/// SE = sqrt(sum se^2) / R.
RateEstimate pool(std::span<const RateEstimate> parts);

/// Binomial proportion with SE = sqrt(p(1-p)/n).
RateEstimate proportion(long hits, long trials);

}  // namespace stochpersist
