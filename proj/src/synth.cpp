#include "betadpo/synth.hpp"

#include <cmath>
#include <sstream>
#include <utility>

namespace betadpo {

namespace {

// Stream ids keep the ground truth and the pair draws independent even when
// they share a seed.
constexpr std::uint64_t kGroundTruthStream = 0x6774;  // "gt"
constexpr std::uint64_t kGenerateStream = 0x67656e;   // "gen"

}  // namespace

void GenConfig::check() const {
  shape.check();
  if (!(mixture_ratio >= 0.0 && mixture_ratio <= 1.0)) throw InvalidInput("mixture_ratio must be in [0, 1]");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw InvalidInput("flip_prob must be in [0, 1]");
  if (!(tau_expert > 0.0) || !(tau_weak > 0.0)) throw InvalidInput("tau_expert and tau_weak must be > 0");
  if (tau_weak < tau_expert) throw InvalidInput("tau_weak must be >= tau_expert");
  if (!(bt_scale > 0.0)) throw InvalidInput("bt_scale must be > 0");
}

std::string GenConfig::canonical() const {
  std::ostringstream os;
  os << "P=" << shape.num_prompts << "\nT=" << shape.seq_len << "\nV=" << shape.vocab_size
     << "\nn_triplets=" << n_triplets << "\nmixture_ratio=" << format_double(mixture_ratio)
     << "\nflip_prob=" << format_double(flip_prob) << "\ntau_expert=" << format_double(tau_expert)
     << "\ntau_weak=" << format_double(tau_weak) << "\nbt_scale=" << format_double(bt_scale)
     << "\nseed=" << seed << "\n";
  return os.str();
}

std::string GenConfig::digest() const { return hex64(fnv1a64(canonical())); }

GroundTruthReward make_ground_truth(const ModelShape& shape, std::uint64_t seed) {
  shape.check();
  Rng rng = make_rng(seed, kGroundTruthStream);
  GroundTruthReward gt{Tensor3(shape, 0.0)};
  for (double& w : gt.weights.values()) w = standard_normal(rng);
  return gt;
}

PolicyParams tilt_policy(const GroundTruthReward& gt, double tau) {
  if (!(tau > 0.0)) throw InvalidInput("tilt_policy: tau must be > 0");
  PolicyParams p(gt.shape());
  auto src = gt.weights.values();
  auto dst = p.logits.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] / tau;
  return p;
}

PreferenceDataset generate(const GenConfig& cfg, const GroundTruthReward& gt) {
  cfg.check();
  if (!(gt.shape() == cfg.shape)) throw InvalidInput("generate: ground truth shape mismatch");
  const PolicyParams expert = tilt_policy(gt, cfg.tau_expert);
  const PolicyParams weak = tilt_policy(gt, cfg.tau_weak);
  Rng rng = make_rng(cfg.seed, kGenerateStream);

  PreferenceDataset ds;
  ds.shape = cfg.shape;
  ds.generator_config_digest = cfg.digest();
  ds.triplets.reserve(cfg.n_triplets);
  for (std::size_t i = 0; i < cfg.n_triplets; ++i) {
    Triplet tr;
    tr.prompt_id = static_cast<std::size_t>(uniform_index(rng, cfg.shape.num_prompts));
    const bool high = bernoulli(rng, cfg.mixture_ratio);
    ResponseSeq a = sample(expert, tr.prompt_id, rng);
    ResponseSeq b = sample(high ? weak : expert, tr.prompt_id, rng);
    const double ra = true_reward(gt, tr.prompt_id, a);
    const double rb = true_reward(gt, tr.prompt_id, b);
    const bool a_wins = bernoulli(rng, sigmoid(cfg.bt_scale * (ra - rb)));
    const bool flip = bernoulli(rng, cfg.flip_prob);
    const bool a_chosen = a_wins != flip;
    tr.chosen = a_chosen ? std::move(a) : std::move(b);
    tr.rejected = a_chosen ? std::move(b) : std::move(a);
    tr.meta.gap_class = high ? GapClass::HighGap : GapClass::LowGap;
    tr.meta.label_flipped = flip;
    tr.meta.true_reward_chosen = a_chosen ? ra : rb;
    tr.meta.true_reward_rejected = a_chosen ? rb : ra;
    ds.triplets.push_back(std::move(tr));
  }
  return ds;
}

}  // namespace betadpo
