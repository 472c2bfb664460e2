#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "palmbridge/codebook.hpp"
#include "palmbridge/common.hpp"
#include "palmbridge/synthetic.hpp"
#include "palmbridge/trainer.hpp"

namespace palmbridge {

enum class ScoreKind { negative_l2, cosine };

inline const char* score_kind_name(ScoreKind k) {
  return k == ScoreKind::negative_l2 ? "negative_l2" : "cosine";
}

inline ScoreKind score_kind_from_name(const std::string& name) {
  if (name == "negative_l2") return ScoreKind::negative_l2;
  if (name == "cosine") return ScoreKind::cosine;
  throw ConfigError("unknown score kind '" + name + "'");
}

/// Shared embedding path for enrollment and query sides. Alignment applies
/// whenever the model carries a codebook; naive models store raw features.
inline Vector aligned_embedding(const TrainedModel& model,
                                const RawObservation& obs) {
  Vector z = embed(model.backbone, obs.values);
  if (model.mode != TrainMode::naive && model.codebook) {
    z = align_one(z, *model.codebook, model.coeffs);
  }
  return z;
}

struct GalleryTemplateSet {
  struct Entry {
    std::size_t identity;
    Vector feature;
  };
  std::vector<Entry> entries;
};

inline GalleryTemplateSet enroll(const TrainedModel& model,
                                 std::span<const RawObservation> samples) {
  if (samples.empty()) throw InputError("enroll: no gallery samples");
  GalleryTemplateSet set;
  set.entries.reserve(samples.size());
  for (const RawObservation& obs : samples) {
    Vector feature = aligned_embedding(model, obs);
    if (!all_finite(feature)) {
      throw CompatibilityError("enroll: non-finite template");
    }
    set.entries.push_back({obs.identity, std::move(feature)});
  }
  return set;
}

inline double similarity(std::span<const double> a, std::span<const double> b,
                         ScoreKind kind) {
  if (a.size() != b.size()) throw DimensionError("similarity: dim mismatch");
  if (kind == ScoreKind::negative_l2) return -squared_distance(a, b);
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

struct ScoreSet {
  struct Scored {
    double value;
    bool genuine;
  };
  std::vector<Scored> scores;
  ScoreKind kind = ScoreKind::negative_l2;
};

/// Scores every (query, gallery) pair; queries run through the same alignment
/// path as enrollment. The genuine flag is an identity match.
inline ScoreSet score_pairs(const TrainedModel& model,
                            const GalleryTemplateSet& gallery,
                            std::span<const RawObservation> queries,
                            ScoreKind kind = ScoreKind::negative_l2) {
  if (gallery.entries.empty() || queries.empty()) {
    throw InputError("score_pairs: empty gallery or query set");
  }
  ScoreSet set;
  set.kind = kind;
  set.scores.reserve(gallery.entries.size() * queries.size());
  for (const RawObservation& q : queries) {
    const Vector feature = aligned_embedding(model, q);
    for (const auto& entry : gallery.entries) {
      set.scores.push_back({similarity(feature, entry.feature, kind),
                            entry.identity == q.identity});
    }
  }
  return set;
}

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
  double far_at_threshold = 0.0;
  double frr_at_threshold = 0.0;
  double crossing_gap = 0.0;  // |FAR - FRR| at the reported discrete threshold
};

namespace detail {
struct ErrorRates {
  double far;
  double frr;
};

/// FAR/FRR over the "accept iff score >= t" rule.
inline ErrorRates rates_at(const std::vector<double>& genuine_sorted,
                           const std::vector<double>& impostor_sorted,
                           double threshold) {
  const auto below = [](const std::vector<double>& v, double t) {
    return static_cast<std::size_t>(
        std::lower_bound(v.begin(), v.end(), t) - v.begin());
  };
  const double frr = static_cast<double>(below(genuine_sorted, threshold)) /
                     static_cast<double>(genuine_sorted.size());
  const double far =
      static_cast<double>(impostor_sorted.size() -
                          below(impostor_sorted, threshold)) /
      static_cast<double>(impostor_sorted.size());
  return {far, frr};
}

inline void split_scores(const ScoreSet& scores, std::vector<double>& genuine,
                         std::vector<double>& impostor) {
  for (const auto& s : scores.scores) {
    (s.genuine ? genuine : impostor).push_back(s.value);
  }
  if (genuine.empty() || impostor.empty()) {
    throw MetricError("score set needs at least one genuine and one impostor");
  }
  std::sort(genuine.begin(), genuine.end());
  std::sort(impostor.begin(), impostor.end());
}
}  // namespace detail

/// Operating point where FAR crosses FRR. The threshold sweep visits every
/// distinct score; FAR - FRR is non-increasing in the threshold, so the sign
/// change is unique and the EER is linearly interpolated between the two
/// bracketing thresholds.
inline EerResult compute_eer(const ScoreSet& scores) {
  std::vector<double> genuine, impostor;
  detail::split_scores(scores, genuine, impostor);

  std::vector<double> thresholds;
  thresholds.reserve(genuine.size() + impostor.size() + 1);
  thresholds.insert(thresholds.end(), genuine.begin(), genuine.end());
  thresholds.insert(thresholds.end(), impostor.begin(), impostor.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());
  // Sentinel above every score: FAR = 0, FRR = 1.
  thresholds.push_back(thresholds.back() + 1.0);

  EerResult result;
  detail::ErrorRates prev = detail::rates_at(genuine, impostor, thresholds[0]);
  double prev_threshold = thresholds[0];
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    const detail::ErrorRates cur =
        detail::rates_at(genuine, impostor, thresholds[i]);
    const double diff = cur.far - cur.frr;
    if (diff <= 0.0) {
      if (diff == 0.0) {
        result.eer = cur.far;
        result.threshold = thresholds[i];
        result.far_at_threshold = cur.far;
        result.frr_at_threshold = cur.frr;
        result.crossing_gap = 0.0;
        return result;
      }
      const double d_prev = prev.far - prev.frr;  // >= 0 here
      const double u = d_prev / (d_prev - diff);
      result.eer = prev.frr + u * (cur.frr - prev.frr);
      result.threshold = prev_threshold + u * (thresholds[i] - prev_threshold);
      const double gap_prev = std::abs(prev.far - prev.frr);
      const double gap_cur = std::abs(cur.far - cur.frr);
      if (gap_prev <= gap_cur) {
        result.far_at_threshold = prev.far;
        result.frr_at_threshold = prev.frr;
        result.crossing_gap = gap_prev;
      } else {
        result.far_at_threshold = cur.far;
        result.frr_at_threshold = cur.frr;
        result.crossing_gap = gap_cur;
      }
      return result;
    }
    prev = cur;
    prev_threshold = thresholds[i];
  }
  throw MetricError("compute_eer: no FAR/FRR crossing found");
}

/// ROC staircase downsampled to n_points FAR grid positions. GAR is
/// non-decreasing in FAR; the first point is (0, gar at zero FAR) and the
/// last is (1, 1).
inline std::vector<std::pair<double, double>> compute_roc(
    const ScoreSet& scores, std::size_t n_points) {
  if (n_points < 2) throw ConfigError("compute_roc: n_points must be >= 2");
  std::vector<double> genuine, impostor;
  detail::split_scores(scores, genuine, impostor);

  std::vector<double> thresholds;
  thresholds.reserve(genuine.size() + impostor.size() + 1);
  thresholds.insert(thresholds.end(), genuine.begin(), genuine.end());
  thresholds.insert(thresholds.end(), impostor.begin(), impostor.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());

  // Staircase from the most permissive threshold (FAR=1, GAR=1) to the most
  // conservative; at each achievable FAR keep the best GAR.
  std::vector<std::pair<double, double>> staircase;
  staircase.emplace_back(0.0, 0.0);
  for (auto it = thresholds.rbegin(); it != thresholds.rend(); ++it) {
    const detail::ErrorRates r = detail::rates_at(genuine, impostor, *it);
    const double gar = 1.0 - r.frr;
    if (!staircase.empty() && staircase.back().first == r.far) {
      staircase.back().second = std::max(staircase.back().second, gar);
    } else {
      staircase.emplace_back(r.far, gar);
    }
  }

  std::vector<std::pair<double, double>> curve;
  curve.reserve(n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    const double far_target =
        static_cast<double>(i) / static_cast<double>(n_points - 1);
    double gar = 0.0;
    for (const auto& [far, g] : staircase) {
      if (far <= far_target) gar = std::max(gar, g);
    }
    curve.emplace_back(far_target, gar);
  }
  curve.back().second = 1.0;  // threshold below every score accepts everything
  return curve;
}

/// Fraction of queries whose single best-scoring gallery entry carries the
/// matching identity. Ties count as failures.
inline double rank1_accuracy(const TrainedModel& model,
                             const GalleryTemplateSet& gallery,
                             std::span<const RawObservation> queries,
                             ScoreKind kind = ScoreKind::negative_l2) {
  if (gallery.entries.empty() || queries.empty()) {
    throw InputError("rank1_accuracy: empty gallery or query set");
  }
  std::size_t correct = 0;
  for (const RawObservation& q : queries) {
    bool present = false;
    for (const auto& entry : gallery.entries) {
      if (entry.identity == q.identity) {
        present = true;
        break;
      }
    }
    if (!present) {
      throw ProtocolError("rank1_accuracy: query identity " +
                          std::to_string(q.identity) + " absent from gallery");
    }
    const Vector feature = aligned_embedding(model, q);
    double best = -std::numeric_limits<double>::infinity();
    std::size_t best_identity = 0;
    bool tie = false;
    for (const auto& entry : gallery.entries) {
      const double s = similarity(feature, entry.feature, kind);
      if (s > best) {
        best = s;
        best_identity = entry.identity;
        tie = false;
      } else if (s == best && entry.identity != best_identity) {
        tie = true;
      }
    }
    if (!tie && best_identity == q.identity) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(queries.size());
}

struct GiHistogram {
  Vector edges;  // n_bins + 1 shared edges spanning all scores
  std::vector<std::size_t> genuine;
  std::vector<std::size_t> impostor;
};

inline GiHistogram gi_histogram(const ScoreSet& scores, std::size_t n_bins) {
  if (n_bins < 1) throw ConfigError("gi_histogram: n_bins must be >= 1");
  std::vector<double> genuine, impostor;
  detail::split_scores(scores, genuine, impostor);

  const double lo = std::min(genuine.front(), impostor.front());
  const double hi = std::max(genuine.back(), impostor.back());
  const double span = hi > lo ? hi - lo : 1.0;

  GiHistogram hist;
  hist.edges.resize(n_bins + 1);
  for (std::size_t b = 0; b <= n_bins; ++b) {
    hist.edges[b] = lo + span * static_cast<double>(b) /
                             static_cast<double>(n_bins);
  }
  hist.genuine.assign(n_bins, 0);
  hist.impostor.assign(n_bins, 0);
  const auto bin_of = [&](double v) {
    const std::size_t b = static_cast<std::size_t>(
        std::floor((v - lo) / span * static_cast<double>(n_bins)));
    return std::min(b, n_bins - 1);  // top edge inclusive
  };
  for (double v : genuine) ++hist.genuine[bin_of(v)];
  for (double v : impostor) ++hist.impostor[bin_of(v)];
  return hist;
}

/// Sample variance of the genuine scores; used for distribution-concentration
/// comparisons between aligned and unaligned pipelines.
inline double genuine_score_variance(const ScoreSet& scores) {
  double mean = 0.0;
  std::size_t n = 0;
  for (const auto& s : scores.scores) {
    if (s.genuine) {
      mean += s.value;
      ++n;
    }
  }
  if (n < 2) throw MetricError("genuine_score_variance: need >= 2 genuine");
  mean /= static_cast<double>(n);
  double acc = 0.0;
  for (const auto& s : scores.scores) {
    if (s.genuine) acc += (s.value - mean) * (s.value - mean);
  }
  return acc / static_cast<double>(n - 1);
}

}  // namespace palmbridge
