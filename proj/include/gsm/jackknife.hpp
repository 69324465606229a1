#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "gsm/errors.hpp"

namespace gsm {

/// A statistical estimate with its standard error.
struct Estimate {
  double value = 0.0;
  double std_error = 0.0;

  /// |value - target| in units of the standard error (inf if the error is zero and they differ).
  double sigmas_from(double target) const {
    const double d = std::abs(value - target);
    if (d == 0.0) return 0.0;
    return std_error > 0.0 ? d / std_error : INFINITY;
  }
};

/// Delete-one jackknife for a smooth function of column means. `columns[j][i]` is the
/// j-th observable of sample i; `f` maps a span of means to the statistic. All sums run
/// in index order, so results are bit-reproducible.
template <class F>
Estimate jackknife(std::span<const std::vector<double>> columns, F&& f) {
  if (columns.empty()) throw std::invalid_argument("jackknife: no observables");
  const std::size_t n = columns.front().size();
  for (const auto& c : columns)
    if (c.size() != n) throw std::invalid_argument("jackknife: columns differ in length");
  if (n < 2) throw InsufficientSamplesError("jackknife: at least 2 samples required");

  const std::size_t k = columns.size();
  std::vector<double> sums(k, 0.0);
  for (std::size_t j = 0; j < k; ++j)
    for (double v : columns[j]) sums[j] += v;

  std::vector<double> means(k);
  for (std::size_t j = 0; j < k; ++j) means[j] = sums[j] / static_cast<double>(n);
  const double full = f(std::span<const double>(means));

  std::vector<double> loo(n);
  std::vector<double> partial(k);
  const double inv = 1.0 / static_cast<double>(n - 1);
  double loo_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) partial[j] = (sums[j] - columns[j][i]) * inv;
    loo[i] = f(std::span<const double>(partial));
    loo_sum += loo[i];
  }
  const double loo_mean = loo_sum / static_cast<double>(n);
  double ss = 0.0;
  for (double v : loo) ss += (v - loo_mean) * (v - loo_mean);
  return {full, std::sqrt(ss * static_cast<double>(n - 1) / static_cast<double>(n))};
}

}  // namespace gsm
