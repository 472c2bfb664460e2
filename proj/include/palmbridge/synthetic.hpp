#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "palmbridge/common.hpp"
#include "palmbridge/matrix.hpp"
#include "palmbridge/rng.hpp"

namespace palmbridge {

/// Affine acquisition shift applied in latent space, plus optional extra
/// observation noise. Domain 0 is always the identity shift.
struct DomainShift {
  Vector bias;               // D entries
  double scale = 1.0;
  double extra_sigma = 0.0;
};

/// Config-level description of a non-identity domain; the bias direction is
/// drawn per world and scaled to bias_norm.
struct DomainShiftSpec {
  double scale = 1.0;
  double bias_norm = 0.0;
  double extra_sigma = 0.0;
};

struct WorldConfig {
  std::size_t num_identities = 2;
  std::size_t feature_dim = 2;  // D
  std::size_t raw_dim = 2;
  double nuisance_sigma = 0.0;
  // Minimum pairwise distance between identity means; negative means
  // "4 * nuisance_sigma".
  double mean_separation = -1.0;
  std::vector<DomainShiftSpec> extra_domains;
};

struct RawObservation {
  Vector values;
  std::size_t identity = 0;
  std::size_t domain = 0;
};

/// Identity world: each observation is a random linear lift of
/// scale * (mu_y + eps) + bias, with eps ~ N(0, (sigma^2 + extra^2) I).
/// The lift's top D rows are the identity, so a linear extractor can recover
/// the latent vector exactly.
struct SyntheticWorld {
  Matrix identity_means;  // num_identities x D
  double nuisance_sigma = 0.0;
  std::vector<DomainShift> domains;
  std::size_t raw_dim = 0;
  std::uint64_t seed = 0;
  Matrix lift;                    // raw_dim x D
  double min_mean_distance = 0.0;  // metadata

  std::size_t num_identities() const { return identity_means.rows(); }
  std::size_t feature_dim() const { return identity_means.cols(); }
};

namespace detail {
inline constexpr std::uint64_t kMeansTag = 0x6d65616e73ull;
inline constexpr std::uint64_t kLiftTag = 0x6c696674ull;
inline constexpr std::uint64_t kDomainTag = 0x646f6d61696eull;
inline constexpr std::uint64_t kSplitIdTag = 0x69647368ull;
inline constexpr std::uint64_t kSplitSampleTag = 0x73616d70ull;
}  // namespace detail

inline SyntheticWorld generate_world(const WorldConfig& config,
                                     std::uint64_t seed) {
  if (config.num_identities < 2) {
    throw ConfigError("generate_world: need at least 2 identities");
  }
  if (config.feature_dim < 1) {
    throw ConfigError("generate_world: feature_dim must be >= 1");
  }
  if (config.raw_dim < config.feature_dim) {
    throw ConfigError("generate_world: raw_dim must be >= feature_dim");
  }
  if (config.nuisance_sigma < 0.0) {
    throw ConfigError("generate_world: nuisance_sigma must be >= 0");
  }
  for (const DomainShiftSpec& spec : config.extra_domains) {
    if (!(spec.scale > 0.0)) {
      throw ConfigError("generate_world: domain scale must be > 0");
    }
    if (spec.bias_norm < 0.0 || spec.extra_sigma < 0.0) {
      throw ConfigError("generate_world: negative domain parameter");
    }
  }

  SyntheticWorld world;
  world.nuisance_sigma = config.nuisance_sigma;
  world.raw_dim = config.raw_dim;
  world.seed = seed;

  const double separation = config.mean_separation >= 0.0
                                ? config.mean_separation
                                : 4.0 * config.nuisance_sigma;

  RandomStream means_rng(derive_seed(seed, detail::kMeansTag));
  world.identity_means = Matrix(config.num_identities, config.feature_dim);
  for (std::size_t i = 0; i < config.num_identities; ++i) {
    bool accepted = false;
    for (int attempt = 0; attempt < 10000 && !accepted; ++attempt) {
      Vector candidate(config.feature_dim);
      for (double& v : candidate) v = means_rng.normal();
      accepted = true;
      for (std::size_t p = 0; p < i; ++p) {
        const double dist = std::sqrt(
            squared_distance(candidate, world.identity_means.row(p)));
        if (dist < separation || dist == 0.0) {
          accepted = false;
          break;
        }
      }
      if (accepted) world.identity_means.set_row(i, candidate);
    }
    if (!accepted) {
      throw ConfigError(
          "generate_world: could not place identity means with separation " +
          std::to_string(separation));
    }
  }

  world.min_mean_distance = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < config.num_identities; ++i) {
    for (std::size_t j = i + 1; j < config.num_identities; ++j) {
      world.min_mean_distance = std::min(
          world.min_mean_distance,
          std::sqrt(squared_distance(world.identity_means.row(i),
                                     world.identity_means.row(j))));
    }
  }

  RandomStream lift_rng(derive_seed(seed, detail::kLiftTag));
  world.lift = Matrix(config.raw_dim, config.feature_dim);
  for (std::size_t j = 0; j < config.feature_dim; ++j) world.lift(j, j) = 1.0;
  const double lift_scale = 1.0 / std::sqrt(double(config.feature_dim));
  for (std::size_t r = config.feature_dim; r < config.raw_dim; ++r) {
    for (std::size_t j = 0; j < config.feature_dim; ++j) {
      world.lift(r, j) = lift_rng.normal(0.0, lift_scale);
    }
  }

  RandomStream domain_rng(derive_seed(seed, detail::kDomainTag));
  world.domains.push_back(
      DomainShift{Vector(config.feature_dim, 0.0), 1.0, 0.0});
  for (const DomainShiftSpec& spec : config.extra_domains) {
    Vector bias(config.feature_dim, 0.0);
    if (spec.bias_norm > 0.0) {
      for (double& v : bias) v = domain_rng.normal();
      const double n = norm(bias);
      for (double& v : bias) v *= spec.bias_norm / n;
    }
    world.domains.push_back(
        DomainShift{std::move(bias), spec.scale, spec.extra_sigma});
  }
  return world;
}

inline RawObservation sample_observation(const SyntheticWorld& world,
                                         std::size_t identity,
                                         std::size_t domain,
                                         RandomStream& rng) {
  if (identity >= world.num_identities()) {
    throw IndexError("sample_observation: identity out of range");
  }
  if (domain >= world.domains.size()) {
    throw IndexError("sample_observation: domain out of range");
  }
  const DomainShift& shift = world.domains[domain];
  const double sigma =
      std::sqrt(world.nuisance_sigma * world.nuisance_sigma +
                shift.extra_sigma * shift.extra_sigma);
  Vector latent(world.feature_dim());
  const auto mean = world.identity_means.row(identity);
  for (std::size_t j = 0; j < latent.size(); ++j) {
    const double eps = sigma > 0.0 ? rng.normal(0.0, sigma) : 0.0;
    latent[j] = shift.scale * (mean[j] + eps) + shift.bias[j];
  }
  return RawObservation{matvec(world.lift, latent), identity, domain};
}

enum class Protocol { intra, cross_domain, closed };

inline const char* protocol_name(Protocol p) {
  switch (p) {
    case Protocol::intra: return "intra";
    case Protocol::cross_domain: return "cross_domain";
    case Protocol::closed: return "closed";
  }
  return "?";
}

struct SplitSpec {
  std::size_t train_samples_per_identity = 8;
  std::size_t eval_samples_per_identity = 8;
  double gallery_fraction = 0.5;
};

struct OpenSetSplit {
  std::vector<std::size_t> train_identities;
  std::vector<std::size_t> eval_identities;
  std::vector<RawObservation> train;
  std::vector<RawObservation> gallery;
  std::vector<RawObservation> query;
  Protocol protocol = Protocol::intra;
};

inline OpenSetSplit make_openset_split(const SyntheticWorld& world,
                                       Protocol protocol,
                                       const SplitSpec& spec,
                                       std::uint64_t seed) {
  if (spec.train_samples_per_identity < 1 ||
      spec.eval_samples_per_identity < 1) {
    throw ProtocolError("make_openset_split: need >= 1 sample per identity");
  }
  if (!(spec.gallery_fraction > 0.0 && spec.gallery_fraction < 1.0)) {
    throw ProtocolError("make_openset_split: gallery_fraction must be in (0,1)");
  }
  const std::size_t n_ids = world.num_identities();
  if (protocol != Protocol::closed && n_ids < 2) {
    throw ProtocolError("make_openset_split: open protocols need >= 2 identities");
  }
  if (protocol == Protocol::cross_domain && world.domains.size() < 2) {
    throw ProtocolError("make_openset_split: cross_domain needs >= 2 domains");
  }

  const std::size_t gallery_count = static_cast<std::size_t>(
      std::llround(spec.gallery_fraction *
                   static_cast<double>(spec.eval_samples_per_identity)));
  if (gallery_count < 1 || gallery_count >= spec.eval_samples_per_identity) {
    throw ProtocolError(
        "make_openset_split: gallery fraction leaves gallery or query empty");
  }

  OpenSetSplit split;
  split.protocol = protocol;
  RandomStream id_rng(derive_seed(seed, detail::kSplitIdTag));
  RandomStream sample_rng(derive_seed(seed, detail::kSplitSampleTag));

  if (protocol == Protocol::closed) {
    for (std::size_t i = 0; i < n_ids; ++i) {
      split.train_identities.push_back(i);
      split.eval_identities.push_back(i);
    }
  } else {
    std::vector<std::size_t> ids(n_ids);
    for (std::size_t i = 0; i < n_ids; ++i) ids[i] = i;
    id_rng.shuffle(ids);
    const std::size_t half = n_ids / 2;
    split.train_identities.assign(ids.begin(),
                                  ids.begin() + static_cast<std::ptrdiff_t>(half));
    split.eval_identities.assign(ids.begin() + static_cast<std::ptrdiff_t>(half),
                                 ids.end());
  }

  const std::size_t train_domain = 0;
  const std::size_t eval_domain =
      protocol == Protocol::cross_domain ? 1 : 0;

  for (std::size_t id : split.train_identities) {
    for (std::size_t s = 0; s < spec.train_samples_per_identity; ++s) {
      split.train.push_back(
          sample_observation(world, id, train_domain, sample_rng));
    }
  }
  for (std::size_t id : split.eval_identities) {
    for (std::size_t s = 0; s < spec.eval_samples_per_identity; ++s) {
      RawObservation obs = sample_observation(world, id, eval_domain, sample_rng);
      if (s < gallery_count) {
        split.gallery.push_back(std::move(obs));
      } else {
        split.query.push_back(std::move(obs));
      }
    }
  }
  return split;
}

/// One row per sample: split_role,identity,domain,values...
inline void write_split_csv(const OpenSetSplit& split, std::ostream& out) {
  out << std::setprecision(17);
  const auto emit = [&](const char* role,
                        const std::vector<RawObservation>& samples) {
    for (const RawObservation& obs : samples) {
      out << role << ',' << obs.identity << ',' << obs.domain;
      for (double v : obs.values) out << ',' << v;
      out << '\n';
    }
  };
  emit("train", split.train);
  emit("gallery", split.gallery);
  emit("query", split.query);
}

}  // namespace palmbridge
