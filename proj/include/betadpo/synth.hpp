#pragma once

#include <cstdint>
#include <string>

#include "betadpo/policy.hpp"
#include "betadpo/reward.hpp"
#include "betadpo/types.hpp"

namespace betadpo {

/// Synthetic preference data. A low-gap pair has both responses drawn from the
/// expert tilt; a high-gap pair draws one from the expert and one from the
/// flatter weak tilt. The winner comes from a Bradley-Terry draw on the
/// ground-truth reward, then labels are flipped with probability flip_prob.
struct GenConfig {
  ModelShape shape{};
  std::size_t n_triplets = 8192;
  double mixture_ratio = 0.0;  // fraction of high-gap pairs
  double flip_prob = 0.0;
  double tau_expert = 1.0;
  double tau_weak = 8.0;
  double bt_scale = 4.0;
  std::uint64_t seed = 0;

  void check() const;
  /// Canonical key=value text; the digest hashes this.
  std::string canonical() const;
  std::string digest() const;

  friend bool operator==(const GenConfig&, const GenConfig&) = default;
};

/// i.i.d. standard-normal weights, deterministic per seed.
GroundTruthReward make_ground_truth(const ModelShape& shape, std::uint64_t seed);

/// logits = weights / tau, the exponential tilt exp(r*/tau) of the uniform policy.
PolicyParams tilt_policy(const GroundTruthReward& gt, double tau);

PreferenceDataset generate(const GenConfig& cfg, const GroundTruthReward& gt);

}  // namespace betadpo
