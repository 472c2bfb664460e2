#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "palmbridge/backbone.hpp"
#include "palmbridge/codebook.hpp"
#include "palmbridge/common.hpp"
#include "palmbridge/matrix.hpp"

namespace palmbridge {

struct LossWeights {
  double lambda_con_inner = 0.25;  // weight of the feature-side term
  double alpha_con = 1.0;          // weight of the consistency loss
  double beta_orth = 1.0;          // weight of the orthogonality loss
};

struct ConsistencyResult {
  double value = 0.0;
  Matrix grad_features;  // B x D, only the lambda term contributes
  Matrix grad_assigned;  // B x D, only the alignment term contributes
};

/// Two-sided consistency between features z_i and their assigned codebook
/// rows p_i:
///
///   (1/B) sum_i [ a * ||p_i - sg(z_i)||^2 + lambda * ||sg(p_i) - z_i||^2 ]
///
/// where sg freezes its argument during differentiation and `a` is the
/// alignment-term weight (1 unless ablated). grad_assigned therefore carries
/// only the first term's contribution and grad_features only the second's;
/// the caller scatter-adds grad_assigned into codebook rows by assignment
/// index.
inline ConsistencyResult consistency_loss(const Matrix& features,
                                          const Matrix& assigned,
                                          double lambda,
                                          double alignment_weight = 1.0) {
  if (features.rows() != assigned.rows() ||
      features.cols() != assigned.cols()) {
    throw DimensionError("consistency_loss: shape mismatch");
  }
  if (features.rows() == 0) throw InputError("consistency_loss: empty batch");
  if (lambda < 0.0 || alignment_weight < 0.0) {
    throw ConfigError("consistency_loss: negative term weight");
  }

  const std::size_t batch = features.rows();
  const double inv_batch = 1.0 / static_cast<double>(batch);
  ConsistencyResult result;
  result.grad_features = Matrix(batch, features.cols());
  result.grad_assigned = Matrix(batch, features.cols());

  for (std::size_t i = 0; i < batch; ++i) {
    const double sq = squared_distance(assigned.row(i), features.row(i));
    result.value += inv_batch * (alignment_weight + lambda) * sq;
    for (std::size_t j = 0; j < features.cols(); ++j) {
      const double diff = assigned(i, j) - features(i, j);
      result.grad_assigned(i, j) = 2.0 * alignment_weight * inv_batch * diff;
      result.grad_features(i, j) = -2.0 * lambda * inv_batch * diff;
    }
  }
  return result;
}

struct OrthogonalityResult {
  double value = 0.0;
  Matrix grad;  // K x D, w.r.t. the raw (unnormalized) codebook rows
};

/// Pushes the cosine-similarity matrix of the codebook toward the identity:
///
///   (1/K^2) sum_ij (S_ij - delta_ij)^2,  S = W W^T,  W = row-normalized P.
///
/// The gradient is exact w.r.t. the raw rows, chained through the
/// normalization with the projection (I - w w^T)/||v||.
inline OrthogonalityResult orthogonality_loss(const Codebook& codebook) {
  const std::size_t k_count = codebook.size();
  const std::size_t dim = codebook.dim();
  const double inv_k2 = 1.0 / (static_cast<double>(k_count) *
                               static_cast<double>(k_count));

  Matrix normalized(k_count, dim);
  Vector norms(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    const double n = norm(codebook.vector(k));
    if (n == 0.0) {
      throw DegenerateCodebookError(
          "orthogonality_loss: zero-norm codebook row " + std::to_string(k));
    }
    norms[k] = n;
    for (std::size_t j = 0; j < dim; ++j) {
      normalized(k, j) = codebook.vectors()(k, j) / n;
    }
  }

  // E = S - I, accumulated value, and grad w.r.t. normalized rows:
  // dL/dw_k = (4/K^2) sum_j E_kj w_j.
  OrthogonalityResult result;
  Matrix grad_normalized(k_count, dim);
  for (std::size_t i = 0; i < k_count; ++i) {
    for (std::size_t j = 0; j < k_count; ++j) {
      const double s = dot(normalized.row(i), normalized.row(j));
      const double e = s - (i == j ? 1.0 : 0.0);
      if (j >= i) result.value += inv_k2 * (i == j ? 1.0 : 2.0) * e * e;
      add_scaled(grad_normalized.row(i), 4.0 * inv_k2 * e, normalized.row(j));
    }
  }

  result.grad = Matrix(k_count, dim);
  for (std::size_t k = 0; k < k_count; ++k) {
    const double projection = dot(normalized.row(k), grad_normalized.row(k));
    for (std::size_t j = 0; j < dim; ++j) {
      result.grad(k, j) =
          (grad_normalized(k, j) - projection * normalized(k, j)) / norms[k];
    }
  }
  return result;
}

struct BackboneGradients {
  Matrix weight;
  Vector bias;
  Matrix classifier_weight;
  Vector classifier_bias;

  static BackboneGradients zeros_like(const BackboneParams& params) {
    BackboneGradients g;
    g.weight = Matrix(params.weight.rows(), params.weight.cols());
    g.bias = Vector(params.bias.size(), 0.0);
    g.classifier_weight = Matrix(params.classifier_weight.rows(),
                                 params.classifier_weight.cols());
    g.classifier_bias = Vector(params.classifier_bias.size(), 0.0);
    return g;
  }
};

struct LossReport {
  double total = 0.0;
  double task = 0.0;
  double consistency = 0.0;
  double orthogonality = 0.0;
  Matrix grad_codebook;  // K x D: scattered consistency term + orthogonality
  Matrix grad_features;  // B x D: task (pass-through) + weighted consistency
  Matrix grad_aligned;   // B x D: task gradient w.r.t. the classifier input
  BackboneGradients grad_backbone;
};

/// Composes the task, consistency, and orthogonality objectives:
/// total = task + alpha_con * consistency + beta_orth * orthogonality.
///
/// grad_codebook holds the scatter-added consistency term plus the
/// orthogonality term; how the task gradient is routed through the blend
/// (including any codebook route) is the trainer's concern, which is why
/// grad_aligned is reported separately. grad_features carries the task
/// gradient passed through unchanged plus the consistency contribution.
/// The orthogonality term is skipped when beta_orth is zero.
inline LossReport total_loss(const BackboneParams& params,
                             const Matrix& aligned, const Matrix& features,
                             const Matrix& assigned,
                             const std::vector<AssignmentResult>& assignments,
                             const Codebook& codebook,
                             const std::vector<std::size_t>& labels,
                             const LossWeights& weights) {
  if (assignments.size() != features.rows()) {
    throw DimensionError("total_loss: assignment/batch size mismatch");
  }

  LossReport report;
  TaskLossResult task = task_loss_and_grad(params, aligned, labels);
  ConsistencyResult con =
      consistency_loss(features, assigned, weights.lambda_con_inner);

  report.task = task.loss;
  report.consistency = con.value;
  report.grad_codebook = Matrix(codebook.size(), codebook.dim());
  if (weights.beta_orth != 0.0) {
    OrthogonalityResult orth = orthogonality_loss(codebook);
    report.orthogonality = orth.value;
    for (std::size_t idx = 0; idx < report.grad_codebook.size(); ++idx) {
      report.grad_codebook.flat()[idx] =
          weights.beta_orth * orth.grad.flat()[idx];
    }
  }
  for (std::size_t i = 0; i < features.rows(); ++i) {
    add_scaled(report.grad_codebook.row(assignments[i].index),
               weights.alpha_con, con.grad_assigned.row(i));
  }

  report.total = report.task + weights.alpha_con * report.consistency +
                 weights.beta_orth * report.orthogonality;

  report.grad_aligned = task.grad_features;
  report.grad_features = Matrix(features.rows(), features.cols());
  for (std::size_t idx = 0; idx < report.grad_features.size(); ++idx) {
    report.grad_features.flat()[idx] =
        task.grad_features.flat()[idx] +
        weights.alpha_con * con.grad_features.flat()[idx];
  }

  report.grad_backbone = BackboneGradients::zeros_like(params);
  report.grad_backbone.classifier_weight = std::move(task.grad_classifier_weight);
  report.grad_backbone.classifier_bias = std::move(task.grad_classifier_bias);
  return report;
}

}  // namespace palmbridge
