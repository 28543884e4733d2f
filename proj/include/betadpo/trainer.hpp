#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "betadpo/calibration.hpp"
#include "betadpo/loss.hpp"
#include "betadpo/policy.hpp"
#include "betadpo/reward.hpp"

namespace betadpo {

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t epochs = 1;
  double lr = 1e-2;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  BetaConfig beta{};
  bool shuffle = true;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
  double sft_smoothing = kDefaultSftSmoothing;

  void check() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct TrainState {
  PolicyParams theta;
  PolicyParams ref;  // frozen
  Tensor3 adam_m;
  Tensor3 adam_v;
  std::uint64_t step = 0;
  RunningStats stats;
  Rng rng;  // drives the Gaussian filter draws

  friend bool operator==(const TrainState&, const TrainState&) = default;
};

struct BatchReport {
  std::uint64_t step = 0;  // optimizer step this batch produced (1-based)
  double loss = 0.0;
  double effective_beta = 0.0;
  double mean_M = 0.0;
  double std_M = 0.0;
  std::vector<double> per_sample_M;
  std::vector<std::size_t> kept_indices;
  double grad_norm = 0.0;
  std::size_t clamp_count = 0;
  bool fallback_uniform = false;
  bool padded = false;
};

/// theta = ref = fit_sft(ds); fresh stats and zero Adam moments.
TrainState init_from_sft(const PreferenceDataset& ds, const TrainConfig& cfg);

/// One beta-DPO evaluation followed by one Adam update of theta.
/// `external_M` is forwarded to beta_dpo_batch (empty: implicit discrepancy).
std::pair<TrainState, BatchReport> train_step(TrainState state, std::span<const Triplet> batch,
                                              const TrainConfig& cfg,
                                              std::span<const double> external_M = {});

/// Adam update in place; step_index is the 1-based optimizer step.
void adam_update(PolicyParams& theta, Tensor3& m, Tensor3& v, const Gradient& grad,
                 const TrainConfig& cfg, std::uint64_t step_index);

/// Dataset indices for every batch of one epoch. Full batches from a seeded
/// permutation; a trailing remainder of at least batch_size/2 is padded by
/// wrapping around to the start of the permutation, a smaller one is dropped.
struct EpochPlan {
  std::vector<std::vector<std::size_t>> batches;
  bool last_padded = false;
  std::size_t dropped = 0;
};
EpochPlan plan_epoch(std::size_t n, const TrainConfig& cfg, std::size_t epoch);

/// External discrepancies for a batch when cfg.beta.m_source is not implicit.
std::vector<double> external_discrepancies(const PreferenceDataset& ds,
                                           std::span<const std::size_t> indices,
                                           const BetaConfig& cfg, const ExplicitScores* scores);

struct TrainOptions {
  /// Checkpoints go here as checkpoint.json (latest) when set.
  std::filesystem::path checkpoint_dir;
  /// Stop once state.step reaches this value (simulates an interruption).
  std::optional<std::uint64_t> stop_at_step;
  const ExplicitScores* explicit_scores = nullptr;
  std::function<void(const BatchReport&)> on_step;
};

struct TrainResult {
  TrainState state;
  std::vector<BatchReport> reports;
};

TrainResult train(const PreferenceDataset& ds, const TrainConfig& cfg, const TrainOptions& opts = {});

/// Continue a run from `state` (e.g. a loaded checkpoint) to the end of the
/// configured schedule. Reports cover only the steps executed here.
TrainResult resume(const PreferenceDataset& ds, const TrainConfig& cfg, TrainState state,
                   const TrainOptions& opts = {});

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

std::string metrics_csv_header();
std::string metrics_csv_row(const BatchReport& r);
void write_metrics_csv(const std::filesystem::path& path, std::span<const BatchReport> reports);

}  // namespace betadpo
