#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "palmbridge/common.hpp"

namespace palmbridge {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over one flat parameter array.
class AdamState {
 public:
  AdamState(std::size_t size, AdamConfig config = {})
      : config_(config), first_moment_(size, 0.0), second_moment_(size, 0.0) {
    if (!(config_.lr > 0.0) || !(config_.eps > 0.0) ||
        !(config_.beta1 > 0.0 && config_.beta1 < 1.0) ||
        !(config_.beta2 > 0.0 && config_.beta2 < 1.0)) {
      throw ConfigError("adam: invalid hyperparameters");
    }
  }

  void step(std::span<double> params, std::span<const double> grads) {
    if (params.size() != first_moment_.size() ||
        grads.size() != first_moment_.size()) {
      throw DimensionError("adam: parameter/gradient size mismatch");
    }
    ++step_count_;
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (!std::isfinite(grads[i])) {
        throw NumericError("adam: non-finite gradient at step " +
                           std::to_string(step_count_));
      }
      first_moment_[i] =
          config_.beta1 * first_moment_[i] + (1.0 - config_.beta1) * grads[i];
      second_moment_[i] = config_.beta2 * second_moment_[i] +
                          (1.0 - config_.beta2) * grads[i] * grads[i];
      const double m_hat =
          first_moment_[i] / (1.0 - std::pow(config_.beta1, step_count_));
      const double v_hat =
          second_moment_[i] / (1.0 - std::pow(config_.beta2, step_count_));
      params[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }

  std::size_t step_count() const { return step_count_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  Vector first_moment_;
  Vector second_moment_;
  std::size_t step_count_ = 0;
};

}  // namespace palmbridge
