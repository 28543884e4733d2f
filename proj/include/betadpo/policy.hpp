#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "betadpo/types.hpp"

namespace betadpo {

/// Position-wise categorical policy: given a prompt, token t is drawn from
/// softmax(logits[prompt][t]) independently of the other positions. Both the
/// trainable policy and the frozen reference are instances of this.
struct PolicyParams {
  Tensor3 logits;

  PolicyParams() = default;
  explicit PolicyParams(const ModelShape& shape) : logits(shape, 0.0) {}
  explicit PolicyParams(Tensor3 t) : logits(std::move(t)) {}

  const ModelShape& shape() const { return logits.shape(); }

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;
};

struct LogProbPair {
  double logp_chosen = 0.0;
  double logp_rejected = 0.0;
};

/// log-softmax of one logit row into `out` (max-subtracted log-sum-exp).
void log_softmax(std::span<const double> logits, std::span<double> out);
void softmax(std::span<const double> logits, std::span<double> out);

/// Sum over positions of log softmax(logits[prompt][t])[resp[t]], in nats.
double log_prob(const PolicyParams& params, std::size_t prompt_id, const ResponseSeq& resp);

LogProbPair log_prob_pair(const PolicyParams& params, const Triplet& triplet);

/// d log_prob / d logits. Nonzero only in the prompt's slice, where entry
/// [t][v] = 1[resp[t]==v] - softmax(logits[prompt][t])[v].
Gradient grad_log_prob(const PolicyParams& params, std::size_t prompt_id, const ResponseSeq& resp);

/// Adds `scale * grad_log_prob(...)` into `out` without materializing it.
void accumulate_grad_log_prob(const PolicyParams& params, std::size_t prompt_id,
                              const ResponseSeq& resp, double scale, Gradient& out);

ResponseSeq sample(const PolicyParams& params, std::size_t prompt_id, Rng& rng);

struct WeightedResponse {
  ResponseSeq response;
  double probability = 0.0;
};

/// Every response in lexicographic token order (position 0 most significant)
/// with its probability. Throws CapacityError when V^T exceeds `budget`.
std::vector<WeightedResponse> enumerate_distribution(
    const PolicyParams& params, std::size_t prompt_id,
    std::uint64_t budget = kDefaultEnumerationBudget);

/// Decode the i-th response in enumeration order.
ResponseSeq response_at(const ModelShape& shape, std::uint64_t index);

inline constexpr double kDefaultSftSmoothing = 0.5;

/// Logit assigned to a zero-count token when smoothing is 0. Finite so every
/// downstream log-probability and gradient stays finite; exp() of it
/// underflows, so the fitted distribution is still exactly degenerate.
inline constexpr double kZeroCountLogit = -1000.0;

/// Closed-form add-k MLE of the position-wise model on the chosen responses:
/// logits[x][t][v] = log(count + k) - log(total + V k). Cells with no data and
/// k = 0 fall back to uniform.
PolicyParams fit_sft(const PreferenceDataset& ds, double smoothing = kDefaultSftSmoothing);

void save_policy(const std::filesystem::path& path, const PolicyParams& params);
PolicyParams load_policy(const std::filesystem::path& path);

}  // namespace betadpo
