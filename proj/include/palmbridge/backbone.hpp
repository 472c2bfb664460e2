#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "palmbridge/common.hpp"
#include "palmbridge/matrix.hpp"

namespace palmbridge {

/// Affine feature extractor plus a linear softmax head. Stands in for a
/// heavier convolutional extractor; the alignment machinery only assumes a
/// differentiable map from raw observations to D-dimensional features.
struct BackboneParams {
  Matrix weight;             // D x raw_dim
  Vector bias;               // D
  Matrix classifier_weight;  // C x D
  Vector classifier_bias;    // C

  std::size_t feature_dim() const { return weight.rows(); }
  std::size_t raw_dim() const { return weight.cols(); }
  std::size_t num_classes() const { return classifier_weight.rows(); }
};

inline Vector embed(const BackboneParams& params,
                    std::span<const double> raw) {
  if (raw.size() != params.raw_dim()) {
    throw DimensionError("embed: raw dimension does not match weight columns");
  }
  Vector z = matvec(params.weight, raw);
  for (std::size_t j = 0; j < z.size(); ++j) z[j] += params.bias[j];
  return z;
}

inline Matrix embed_batch(const BackboneParams& params, const Matrix& raw) {
  Matrix out(raw.rows(), params.feature_dim());
  for (std::size_t i = 0; i < raw.rows(); ++i) {
    out.set_row(i, embed(params, raw.row(i)));
  }
  return out;
}

struct TaskLossResult {
  double loss = 0.0;
  Matrix grad_features;           // B x D, w.r.t. the classifier input
  Matrix grad_classifier_weight;  // C x D
  Vector grad_classifier_bias;    // C
};

/// Softmax cross-entropy over the training classes, averaged over the batch.
/// `features` is whatever the classifier consumes (aligned features during
/// joint training, raw features otherwise). Returns gradients w.r.t. the
/// classifier parameters and w.r.t. the input features; the feature gradient
/// is what joint training routes back through the blend.
inline TaskLossResult task_loss_and_grad(const BackboneParams& params,
                                         const Matrix& features,
                                         const std::vector<std::size_t>& labels) {
  const std::size_t batch = features.rows();
  const std::size_t classes = params.num_classes();
  if (batch == 0) throw InputError("task_loss_and_grad: empty batch");
  if (labels.size() != batch) {
    throw DimensionError("task_loss_and_grad: labels/batch size mismatch");
  }
  if (features.cols() != params.feature_dim()) {
    throw DimensionError("task_loss_and_grad: feature dim mismatch");
  }

  TaskLossResult result;
  result.grad_features = Matrix(batch, features.cols());
  result.grad_classifier_weight = Matrix(classes, features.cols());
  result.grad_classifier_bias = Vector(classes, 0.0);

  const double inv_batch = 1.0 / static_cast<double>(batch);
  Vector probs(classes);
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i] >= classes) {
      throw LabelError("task_loss_and_grad: label outside training set");
    }
    Vector logits = matvec(params.classifier_weight, features.row(i));
    for (std::size_t c = 0; c < classes; ++c) {
      logits[c] += params.classifier_bias[c];
    }
    const double max_logit = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      probs[c] = std::exp(logits[c] - max_logit);
      denom += probs[c];
    }
    for (double& p : probs) p /= denom;

    result.loss -= inv_batch * std::log(probs[labels[i]]);

    // dL/dlogit_c = (p_c - [c == y]) / B, then chain into head and features.
    for (std::size_t c = 0; c < classes; ++c) {
      const double dlogit =
          (probs[c] - (c == labels[i] ? 1.0 : 0.0)) * inv_batch;
      result.grad_classifier_bias[c] += dlogit;
      add_scaled(result.grad_classifier_weight.row(c), dlogit,
                 features.row(i));
      add_scaled(result.grad_features.row(i), dlogit,
                 params.classifier_weight.row(c));
    }
  }
  return result;
}

}  // namespace palmbridge
