#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>

#include "palmbridge/common.hpp"

namespace palmbridge {

/// Central-difference check of an analytic gradient. `loss` must be a
/// deterministic function of the point; each coordinate is perturbed by
/// +/- epsilon and the worst relative error against `analytic_grad` is
/// returned, with an absolute floor of 1e-12 on the denominator so exact
/// zeros do not divide out.
inline double finite_difference_check(
    const std::function<double(std::span<const double>)>& loss,
    std::span<const double> point, std::span<const double> analytic_grad,
    double epsilon) {
  if (epsilon <= 0.0) throw ConfigError("finite_difference_check: epsilon <= 0");
  if (point.size() != analytic_grad.size()) {
    throw DimensionError("finite_difference_check: gradient size mismatch");
  }

  Vector work(point.begin(), point.end());
  const double first = loss(work);
  const double second = loss(work);
  if (!(first == second)) {
    throw OracleError("finite_difference_check: evaluator is not deterministic");
  }

  double worst = 0.0;
  for (std::size_t i = 0; i < work.size(); ++i) {
    const double original = work[i];
    work[i] = original + epsilon;
    const double up = loss(work);
    work[i] = original - epsilon;
    const double down = loss(work);
    work[i] = original;
    const double fd = (up - down) / (2.0 * epsilon);
    const double err =
        std::abs(fd - analytic_grad[i]) / std::max(std::abs(fd), 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace palmbridge
