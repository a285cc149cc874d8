#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace metaci {

inline double mean(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("mean: empty vector");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Population variance (divide by n).
inline double population_variance(const std::vector<double>& v) {
  const double m = mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return acc / static_cast<double>(v.size());
}

// Lower nearest-rank quantile: element at index floor(q * (n-1)) of the
// sorted vector. No interpolation.
inline double empirical_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("empirical_quantile: empty vector");
  if (!(q >= 0.0 && q <= 1.0)) {
    throw std::invalid_argument("empirical_quantile: q = " + std::to_string(q) +
                                " outside [0, 1]");
  }
  std::sort(values.begin(), values.end());
  const auto idx = static_cast<std::size_t>(
      std::floor(q * static_cast<double>(values.size() - 1)));
  return values[idx];
}

// Central-difference gradient: (loss(p + h e_i) - loss(p - h e_i)) / (2h).
// Probes must evaluate finite or the offending coordinate is reported.
inline std::vector<double> finite_diff_gradient(
    const std::function<double(const std::vector<double>&)>& loss_fn,
    std::vector<double> params, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_gradient: h must be > 0");
  std::vector<double> grad(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = loss_fn(params);
    params[i] = saved - h;
    const double down = loss_fn(params);
    params[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::runtime_error(
          "finite_diff_gradient: non-finite loss probing coordinate " +
          std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace metaci
