#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "palmbridge/adam.hpp"
#include "palmbridge/backbone.hpp"
#include "palmbridge/codebook.hpp"
#include "palmbridge/common.hpp"
#include "palmbridge/losses.hpp"
#include "palmbridge/matrix.hpp"
#include "palmbridge/rng.hpp"
#include "palmbridge/synthetic.hpp"

namespace palmbridge {

inline constexpr const char* kCheckpointFormatVersion =
    "palmbridge-checkpoint-v1";

enum class TrainMode { joint, naive, plug_and_play };

inline const char* mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::joint: return "joint";
    case TrainMode::naive: return "naive";
    case TrainMode::plug_and_play: return "plug_and_play";
  }
  return "?";
}

inline TrainMode mode_from_name(const std::string& name) {
  if (name == "joint") return TrainMode::joint;
  if (name == "naive") return TrainMode::naive;
  if (name == "plug_and_play") return TrainMode::plug_and_play;
  throw ConfigError("unknown train mode '" + name + "'");
}

struct TrainerConfig {
  TrainMode mode = TrainMode::joint;
  std::size_t feature_dim = 32;  // extractor output dimension D
  std::size_t batch_size = 16;
  std::size_t epochs = 200;
  double early_stop_rel_change = 1e-6;
  std::size_t early_stop_patience = 10;
  AdamConfig adam;
  double codebook_lr = -1.0;  // < 0 means "use adam.lr"
  std::size_t codebook_size = 512;
  BlendingCoefficients coeffs = BlendingCoefficients::convex(0.3);
  LossWeights weights;
  // When set, the task gradient passes through the mapped branch unchanged to
  // the features and additionally reaches the assigned codebook rows scaled
  // by w_map. When unset, the mapped branch is detached: features receive the
  // w_ori share only and the codebook sees no task gradient.
  bool straight_through = true;
  std::uint64_t seed = 0;
};

struct TrainLogRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double task = 0.0;
  double consistency = 0.0;
  double orthogonality = 0.0;
  double total = 0.0;
};

struct TrainedModel {
  BackboneParams backbone;
  std::optional<Codebook> codebook;
  BlendingCoefficients coeffs = BlendingCoefficients::convex(0.0);
  LossWeights weights;
  TrainMode mode = TrainMode::naive;
  std::vector<std::size_t> class_identities;  // classifier row -> identity
  std::string training_log;                   // path, filled by the runner
};

namespace detail {
inline constexpr std::uint64_t kInitTag = 0x696e6974ull;
inline constexpr std::uint64_t kShuffleTag = 0x73687566ull;
inline constexpr std::uint64_t kCodebookTag = 0x636f6465ull;

inline std::size_t class_index(const std::vector<std::size_t>& classes,
                               std::size_t identity) {
  const auto it = std::lower_bound(classes.begin(), classes.end(), identity);
  if (it == classes.end() || *it != identity) {
    throw LabelError("identity " + std::to_string(identity) +
                     " is not a training class");
  }
  return static_cast<std::size_t>(it - classes.begin());
}

inline Matrix gather_rows(const std::vector<RawObservation>& samples,
                          const std::vector<std::size_t>& order,
                          std::size_t begin, std::size_t end) {
  Matrix out(end - begin, samples.front().values.size());
  for (std::size_t i = begin; i < end; ++i) {
    out.set_row(i - begin, samples[order[i]].values);
  }
  return out;
}
}  // namespace detail

/// Joint (or naive) optimization of the extractor and the codebook with Adam.
/// Deterministic given (split, config): one seeded stream drives the batch
/// order, all updates run in fixed order on a single thread.
inline TrainedModel train(const OpenSetSplit& split, const TrainerConfig& cfg,
                          std::vector<TrainLogRow>* log = nullptr) {
  if (split.train.empty()) throw TrainingError("train: empty training set");
  if (cfg.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (cfg.mode == TrainMode::plug_and_play) {
    throw ConfigError("train: plug_and_play models come from attach_codebook");
  }
  const bool joint = cfg.mode == TrainMode::joint;
  if (joint && cfg.codebook_size < 1) {
    throw ConfigError("train: codebook_size must be >= 1");
  }

  const std::size_t raw_dim = split.train.front().values.size();
  const std::size_t dim = cfg.feature_dim;

  std::vector<std::size_t> classes = split.train_identities;
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

  std::vector<std::size_t> labels(split.train.size());
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    labels[i] = detail::class_index(classes, split.train[i].identity);
  }

  // Extractor init: small random weights; both heads of the classifier start
  // at zero so the first logits are uniform.
  RandomStream init_rng(derive_seed(cfg.seed, detail::kInitTag));
  BackboneParams params;
  params.weight = Matrix(dim, raw_dim);
  const double init_scale = 1.0 / std::sqrt(static_cast<double>(raw_dim));
  for (double& w : params.weight.flat()) w = init_rng.normal(0.0, init_scale);
  params.bias = Vector(dim, 0.0);
  params.classifier_weight = Matrix(classes.size(), dim);
  params.classifier_bias = Vector(classes.size(), 0.0);

  RandomStream shuffle_rng(derive_seed(cfg.seed, detail::kShuffleTag));
  std::vector<std::size_t> order(split.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle_rng.shuffle(order);  // epoch-0 order, also feeds the codebook init

  std::optional<Codebook> codebook;
  if (joint) {
    const std::size_t first_batch =
        std::min(cfg.batch_size, split.train.size());
    const Matrix first_features = embed_batch(
        params, detail::gather_rows(split.train, order, 0, first_batch));
    RandomStream cb_rng(derive_seed(cfg.seed, detail::kCodebookTag));
    Matrix init_vectors(cfg.codebook_size, dim);
    for (std::size_t k = 0; k < cfg.codebook_size; ++k) {
      const std::size_t pick = cb_rng.below(first_batch);
      for (std::size_t j = 0; j < dim; ++j) {
        init_vectors(k, j) = first_features(pick, j) + cb_rng.normal(0.0, 0.1);
      }
    }
    codebook.emplace(std::move(init_vectors));
  }

  AdamConfig cb_adam = cfg.adam;
  if (cfg.codebook_lr > 0.0) cb_adam.lr = cfg.codebook_lr;
  AdamState opt_weight(params.weight.size(), cfg.adam);
  AdamState opt_bias(params.bias.size(), cfg.adam);
  AdamState opt_cls_weight(params.classifier_weight.size(), cfg.adam);
  AdamState opt_cls_bias(params.classifier_bias.size(), cfg.adam);
  std::optional<AdamState> opt_codebook;
  if (joint) opt_codebook.emplace(codebook->vectors().size(), cb_adam);

  double previous_epoch_loss = 0.0;
  bool have_previous = false;
  std::size_t plateau_epochs = 0;
  std::size_t last_finite_epoch = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (epoch > 0) shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t steps = 0;

    for (std::size_t begin = 0; begin < order.size();
         begin += cfg.batch_size) {
      const std::size_t end = std::min(begin + cfg.batch_size, order.size());
      const Matrix raw = detail::gather_rows(split.train, order, begin, end);
      std::vector<std::size_t> batch_labels(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        batch_labels[i - begin] = labels[order[i]];
      }

      const Matrix features = embed_batch(params, raw);
      double total = 0.0;
      Matrix grad_features;  // w.r.t. raw features z
      Matrix grad_cls_weight;
      Vector grad_cls_bias;

      if (!joint) {
        TaskLossResult task = task_loss_and_grad(params, features, batch_labels);
        total = task.loss;
        grad_features = std::move(task.grad_features);
        grad_cls_weight = std::move(task.grad_classifier_weight);
        grad_cls_bias = std::move(task.grad_classifier_bias);
        if (log) {
          log->push_back({epoch, steps, task.loss, 0.0, 0.0, task.loss});
        }
      } else {
        auto [assigned, assignments] = map_batch(features, *codebook);
        Matrix aligned(features.rows(), dim);
        for (std::size_t i = 0; i < features.rows(); ++i) {
          for (std::size_t j = 0; j < dim; ++j) {
            aligned(i, j) = cfg.coeffs.w_ori() * features(i, j) +
                            cfg.coeffs.w_map() * assigned(i, j);
          }
        }
        LossReport report =
            total_loss(params, aligned, features, assigned, assignments,
                       *codebook, batch_labels, cfg.weights);
        total = report.total;

        Matrix grad_codebook = std::move(report.grad_codebook);
        if (cfg.straight_through) {
          grad_features = std::move(report.grad_features);
          for (std::size_t i = 0; i < features.rows(); ++i) {
            add_scaled(grad_codebook.row(assignments[i].index),
                       cfg.coeffs.w_map(), report.grad_aligned.row(i));
          }
        } else {
          grad_features = std::move(report.grad_features);
          for (std::size_t idx = 0; idx < grad_features.size(); ++idx) {
            grad_features.flat()[idx] -=
                cfg.coeffs.w_map() * report.grad_aligned.flat()[idx];
          }
        }
        grad_cls_weight = std::move(report.grad_backbone.classifier_weight);
        grad_cls_bias = std::move(report.grad_backbone.classifier_bias);

        opt_codebook->step(codebook->vectors().flat(), grad_codebook.flat());
        if (log) {
          log->push_back({epoch, steps, report.task, report.consistency,
                          report.orthogonality, report.total});
        }
      }

      if (!std::isfinite(total)) {
        throw TrainingError("train: loss diverged at epoch " +
                            std::to_string(epoch) + " step " +
                            std::to_string(steps) + "; last finite epoch " +
                            std::to_string(last_finite_epoch));
      }

      // Chain the feature gradient into the affine extractor.
      Matrix grad_weight(dim, raw_dim);
      Vector grad_bias(dim, 0.0);
      for (std::size_t i = 0; i < raw.rows(); ++i) {
        for (std::size_t r = 0; r < dim; ++r) {
          const double g = grad_features(i, r);
          grad_bias[r] += g;
          add_scaled(grad_weight.row(r), g, raw.row(i));
        }
      }

      opt_weight.step(params.weight.flat(), grad_weight.flat());
      opt_bias.step(params.bias, grad_bias);
      opt_cls_weight.step(params.classifier_weight.flat(),
                          grad_cls_weight.flat());
      opt_cls_bias.step(params.classifier_bias, grad_cls_bias);

      epoch_loss += total;
      ++steps;
    }

    epoch_loss /= static_cast<double>(steps);
    last_finite_epoch = epoch;
    if (have_previous) {
      const double rel = std::abs(epoch_loss - previous_epoch_loss) /
                         std::max(std::abs(previous_epoch_loss), 1e-12);
      plateau_epochs = rel < cfg.early_stop_rel_change ? plateau_epochs + 1 : 0;
      if (plateau_epochs >= cfg.early_stop_patience) break;
    }
    previous_epoch_loss = epoch_loss;
    have_previous = true;
  }

  TrainedModel model;
  model.backbone = std::move(params);
  model.codebook = std::move(codebook);
  model.coeffs = joint ? cfg.coeffs : BlendingCoefficients::convex(0.0);
  model.weights = cfg.weights;
  model.mode = cfg.mode;
  model.class_identities = std::move(classes);
  return model;
}

/// Plug-and-play attachment of a codebook to a frozen extractor. No parameter
/// of either side is modified.
inline TrainedModel attach_codebook(const BackboneParams& backbone,
                                    Codebook codebook,
                                    const BlendingCoefficients& coeffs) {
  if (codebook.dim() != backbone.feature_dim()) {
    throw CompatibilityError(
        "attach_codebook: codebook dimension " + std::to_string(codebook.dim()) +
        " does not match extractor output " +
        std::to_string(backbone.feature_dim()));
  }
  TrainedModel model;
  model.backbone = backbone;
  model.codebook = std::move(codebook);
  model.coeffs = coeffs;
  model.mode = TrainMode::plug_and_play;
  return model;
}

/// Fraction of samples whose identity-class logit is the strict argmax.
inline double classification_accuracy(const TrainedModel& model,
                                      const std::vector<RawObservation>& samples) {
  if (samples.empty()) throw InputError("classification_accuracy: no samples");
  std::size_t correct = 0;
  for (const RawObservation& obs : samples) {
    Vector z = embed(model.backbone, obs.values);
    if (model.mode == TrainMode::joint && model.codebook) {
      z = align_one(z, *model.codebook, model.coeffs);
    }
    Vector logits = matvec(model.backbone.classifier_weight, z);
    for (std::size_t c = 0; c < logits.size(); ++c) {
      logits[c] += model.backbone.classifier_bias[c];
    }
    const std::size_t label =
        detail::class_index(model.class_identities, obs.identity);
    const std::size_t best = static_cast<std::size_t>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (best == label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

/// FNV-1a checksum over all extractor parameter bytes; used to demonstrate
/// that attachment and verification leave parameters untouched.
inline std::uint64_t backbone_checksum(const BackboneParams& params) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  const auto feed = [&hash](std::span<const double> values) {
    for (double v : values) {
      std::uint64_t bits;
      static_assert(sizeof(bits) == sizeof(v));
      std::memcpy(&bits, &v, sizeof(bits));
      for (int b = 0; b < 8; ++b) {
        hash ^= (bits >> (8 * b)) & 0xffu;
        hash *= 0x100000001b3ull;
      }
    }
  };
  feed(params.weight.flat());
  feed(params.bias);
  feed(params.classifier_weight.flat());
  feed(params.classifier_bias);
  return hash;
}

inline nlohmann::json backbone_to_json(const BackboneParams& params) {
  return nlohmann::json{{"feature_dim", params.feature_dim()},
                        {"raw_dim", params.raw_dim()},
                        {"num_classes", params.num_classes()},
                        {"weight", params.weight.storage()},
                        {"bias", params.bias},
                        {"classifier_weight", params.classifier_weight.storage()},
                        {"classifier_bias", params.classifier_bias}};
}

inline BackboneParams backbone_from_json(const nlohmann::json& j) {
  BackboneParams params;
  const auto dim = j.at("feature_dim").get<std::size_t>();
  const auto raw_dim = j.at("raw_dim").get<std::size_t>();
  const auto classes = j.at("num_classes").get<std::size_t>();
  params.weight = Matrix(dim, raw_dim);
  params.weight.storage() = j.at("weight").get<std::vector<double>>();
  params.bias = j.at("bias").get<Vector>();
  params.classifier_weight = Matrix(classes, dim);
  params.classifier_weight.storage() =
      j.at("classifier_weight").get<std::vector<double>>();
  params.classifier_bias = j.at("classifier_bias").get<Vector>();
  if (params.weight.storage().size() != dim * raw_dim ||
      params.bias.size() != dim ||
      params.classifier_weight.storage().size() != classes * dim ||
      params.classifier_bias.size() != classes) {
    throw ConfigError("checkpoint: inconsistent extractor shapes");
  }
  return params;
}

inline nlohmann::json model_to_json(const TrainedModel& model,
                                    const std::string& config_hash = "",
                                    std::uint64_t seed = 0) {
  nlohmann::json j{{"version", kCheckpointFormatVersion},
                   {"mode", mode_name(model.mode)},
                   {"seed", seed},
                   {"config_hash", config_hash},
                   {"backbone", backbone_to_json(model.backbone)},
                   {"coeffs",
                    {{"w_ori", model.coeffs.w_ori()},
                     {"w_map", model.coeffs.w_map()}}},
                   {"weights",
                    {{"lambda_con_inner", model.weights.lambda_con_inner},
                     {"alpha_con", model.weights.alpha_con},
                     {"beta_orth", model.weights.beta_orth}}},
                   {"class_identities", model.class_identities}};
  j["codebook"] =
      model.codebook ? model.codebook->to_json() : nlohmann::json(nullptr);
  return j;
}

inline TrainedModel model_from_json(const nlohmann::json& j) {
  if (j.at("version").get<std::string>() != kCheckpointFormatVersion) {
    throw ConfigError("checkpoint: unsupported version");
  }
  TrainedModel model;
  model.mode = mode_from_name(j.at("mode").get<std::string>());
  model.backbone = backbone_from_json(j.at("backbone"));
  if (!j.at("codebook").is_null()) {
    model.codebook = Codebook::from_json(j.at("codebook"));
  }
  const auto& coeffs = j.at("coeffs");
  const double w_ori = coeffs.at("w_ori").get<double>();
  const double w_map = coeffs.at("w_map").get<double>();
  model.coeffs = (w_ori + w_map == 1.0 && w_map >= 0.0 && w_map <= 1.0)
                     ? BlendingCoefficients::convex(w_map)
                     : BlendingCoefficients::unconstrained(w_ori, w_map);
  const auto& weights = j.at("weights");
  model.weights.lambda_con_inner = weights.at("lambda_con_inner").get<double>();
  model.weights.alpha_con = weights.at("alpha_con").get<double>();
  model.weights.beta_orth = weights.at("beta_orth").get<double>();
  model.class_identities =
      j.at("class_identities").get<std::vector<std::size_t>>();
  return model;
}

}  // namespace palmbridge
