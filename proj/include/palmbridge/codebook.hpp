#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "palmbridge/common.hpp"
#include "palmbridge/matrix.hpp"

namespace palmbridge {

inline constexpr const char* kCodebookFormatVersion = "palmbridge-codebook-v1";

/// Set of K representative vectors in feature space. Rows are free vectors;
/// they are not kept unit-norm.
class Codebook {
 public:
  explicit Codebook(Matrix vectors,
                    std::string version = kCodebookFormatVersion)
      : vectors_(std::move(vectors)), version_(std::move(version)) {
    if (vectors_.rows() == 0) {
      throw ConfigError("codebook must contain at least one vector");
    }
    if (!all_finite(vectors_.flat())) {
      throw ConfigError("codebook contains non-finite entries");
    }
  }

  std::size_t size() const { return vectors_.rows(); }
  std::size_t dim() const { return vectors_.cols(); }
  const Matrix& vectors() const { return vectors_; }
  Matrix& vectors() { return vectors_; }
  std::span<const double> vector(std::size_t k) const {
    return vectors_.row(k);
  }
  const std::string& version() const { return version_; }

  nlohmann::json to_json() const {
    return nlohmann::json{{"version", version_},
                          {"K", size()},
                          {"D", dim()},
                          {"vectors", vectors_.storage()}};
  }

  static Codebook from_json(const nlohmann::json& j) {
    if (!j.contains("version") || !j.contains("K") || !j.contains("D") ||
        !j.contains("vectors")) {
      throw ConfigError("codebook JSON: missing field");
    }
    const std::string version = j.at("version").get<std::string>();
    if (version != kCodebookFormatVersion) {
      throw ConfigError("codebook JSON: unsupported version '" + version +
                        "'");
    }
    const auto k = j.at("K").get<std::size_t>();
    const auto d = j.at("D").get<std::size_t>();
    const auto values = j.at("vectors").get<std::vector<double>>();
    if (values.size() != k * d) {
      throw ConfigError("codebook JSON: vector payload does not match K*D");
    }
    Matrix m(k, d);
    m.storage() = values;
    return Codebook(std::move(m), version);
  }

 private:
  Matrix vectors_;
  std::string version_;
};

/// Blending weights for combining an original feature vector with its mapped
/// counterpart. Constrained to w_ori + w_map = 1 so the blend is a convex
/// combination parameterized by w_map alone; `unconstrained` lifts the
/// constraint for experiments with free weights.
class BlendingCoefficients {
 public:
  static BlendingCoefficients convex(double w_map) {
    if (!(w_map >= 0.0 && w_map <= 1.0)) {
      throw ConfigError("w_map must lie in [0, 1]");
    }
    return BlendingCoefficients(1.0 - w_map, w_map);
  }

  static BlendingCoefficients unconstrained(double w_ori, double w_map) {
    if (!std::isfinite(w_ori) || !std::isfinite(w_map)) {
      throw ConfigError("blending coefficients must be finite");
    }
    BlendingCoefficients c(w_ori, w_map);
    c.constrained_ = false;
    return c;
  }

  double w_ori() const { return w_ori_; }
  double w_map() const { return w_map_; }
  bool constrained() const { return constrained_; }

 private:
  BlendingCoefficients(double w_ori, double w_map)
      : w_ori_(w_ori), w_map_(w_map) {}
  double w_ori_;
  double w_map_;
  bool constrained_ = true;
};

struct AssignmentResult {
  std::size_t index = 0;
  double squared_distance = 0.0;
};

/// Index of the codebook vector nearest to z in squared Euclidean distance.
/// Ties break to the lowest index. Exhaustive scan; distances in 64-bit.
inline AssignmentResult nearest_assignment(std::span<const double> z,
                                           const Codebook& codebook) {
  if (codebook.size() == 0) throw ConfigError("empty codebook");
  if (z.size() != codebook.dim()) {
    throw DimensionError("nearest_assignment: feature dim != codebook dim");
  }
  if (!all_finite(z)) {
    throw InputError("nearest_assignment: non-finite feature vector");
  }
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < codebook.size(); ++k) {
    const double d = squared_distance(z, codebook.vector(k));
    if (d < best_dist) {
      best_dist = d;
      best = k;
    }
  }
  return {best, best_dist};
}

/// Replaces every row of the batch with its assigned codebook vector. The
/// mapped rows are copies of codebook rows, not recomputed values.
inline std::pair<Matrix, std::vector<AssignmentResult>> map_batch(
    const Matrix& batch, const Codebook& codebook) {
  if (batch.rows() == 0) throw InputError("map_batch: empty batch");
  Matrix mapped(batch.rows(), codebook.dim());
  std::vector<AssignmentResult> assignments;
  assignments.reserve(batch.rows());
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    const AssignmentResult a = nearest_assignment(batch.row(i), codebook);
    mapped.set_row(i, codebook.vector(a.index));
    assignments.push_back(a);
  }
  return {std::move(mapped), std::move(assignments)};
}

/// Blended feature: w_ori * z + w_map * z_mapped, elementwise.
inline Vector blend(std::span<const double> z, std::span<const double> mapped,
                    const BlendingCoefficients& coeffs) {
  if (z.size() != mapped.size()) {
    throw DimensionError("blend: dimension mismatch");
  }
  Vector out(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) {
    out[j] = coeffs.w_ori() * z[j] + coeffs.w_map() * mapped[j];
  }
  return out;
}

/// Maps then blends a whole batch. With w_map = 0 the mapped branch is
/// skipped entirely and the input is returned bit-identically, which keeps
/// the reduction to the unaligned pipeline exact.
inline Matrix align(const Matrix& batch, const Codebook& codebook,
                    const BlendingCoefficients& coeffs) {
  if (batch.rows() == 0) throw InputError("align: empty batch");
  if (coeffs.constrained() && coeffs.w_map() == 0.0) return batch;
  auto [mapped, assignments] = map_batch(batch, codebook);
  Matrix out(batch.rows(), batch.cols());
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    for (std::size_t j = 0; j < batch.cols(); ++j) {
      out(i, j) =
          coeffs.w_ori() * batch(i, j) + coeffs.w_map() * mapped(i, j);
    }
  }
  return out;
}

inline Vector align_one(std::span<const double> z, const Codebook& codebook,
                        const BlendingCoefficients& coeffs) {
  if (coeffs.constrained() && coeffs.w_map() == 0.0) {
    return Vector(z.begin(), z.end());
  }
  const AssignmentResult a = nearest_assignment(z, codebook);
  return blend(z, codebook.vector(a.index), coeffs);
}

}  // namespace palmbridge
