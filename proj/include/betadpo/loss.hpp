#pragma once

#include <functional>
#include <span>
#include <vector>

#include "betadpo/calibration.hpp"
#include "betadpo/filter.hpp"
#include "betadpo/policy.hpp"

namespace betadpo {

struct SampleLoss {
  double loss = 0.0;
  Gradient grad;
  /// Log-ratio margin h = [log pi(y_w) - log ref(y_w)] - [log pi(y_l) - log ref(y_l)].
  double margin = 0.0;
};

/// Single-sample preference loss. beta is a constant w.r.t. differentiation.
using SampleLossFn = std::function<SampleLoss(const PolicyParams& theta, const PolicyParams& ref,
                                              const Triplet& triplet, double beta)>;

/// DPO: loss = -log sigmoid(beta * h) = softplus(-beta * h);
/// grad = -beta * sigmoid(-beta * h) * (grad log pi(y_w) - grad log pi(y_l)).
SampleLoss dpo_loss_single(const PolicyParams& theta, const PolicyParams& ref,
                           const Triplet& triplet, double beta);

struct BatchLossResult {
  double loss = 0.0;  // mean of per_sample_loss over kept indices
  Gradient grad;      // mean of per-sample gradients over kept indices
  double effective_beta = 0.0;
  std::vector<double> per_sample_loss;
  std::vector<double> per_sample_M;
  std::vector<double> per_sample_beta;  // beta each sample's loss was evaluated at
  FilterOutcome filter;
  std::size_t clamp_count = 0;
};

struct BatchOptions {
  /// Discrepancies from an external source (explicit scores, oracle), one
  /// per batch element. Empty: use the implicit discrepancy under (theta, ref).
  std::span<const double> external_M;
  /// Empty: DPO.
  SampleLossFn loss_fn;
};

struct BatchStep {
  BatchLossResult result;
  RunningStats stats;
};

/// One beta-DPO objective evaluation:
///   1. M_i for every batch element;
///   2. running stats updated from the full batch;
///   3. filter (Gaussian around the threshold, rank baselines, or none);
///   4. effective beta over the set chosen by cfg.beta_on;
///   5. loss and gradient averaged over the kept samples.
/// beta, the stats and the kept set are stop-gradient inputs to step 5.
BatchStep beta_dpo_batch(const PolicyParams& theta, const PolicyParams& ref,
                         std::span<const Triplet> batch, const BetaConfig& cfg,
                         const RunningStats& stats, Rng& rng, const BatchOptions& opts = {});

/// Mean loss and gradient over `kept` with per-sample betas held fixed. This
/// is step 5 on its own, shared with gradient checks and reference loops.
std::pair<double, Gradient> mean_loss_over(const PolicyParams& theta, const PolicyParams& ref,
                                           std::span<const Triplet> batch,
                                           std::span<const std::size_t> kept,
                                           std::span<const double> betas,
                                           const SampleLossFn& loss_fn = dpo_loss_single);

}  // namespace betadpo
