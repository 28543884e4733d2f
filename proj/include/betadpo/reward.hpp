#pragma once

#include <filesystem>
#include <map>
#include <optional>

#include "betadpo/policy.hpp"
#include "betadpo/types.hpp"

namespace betadpo {

/// Ground-truth reward r*(y; x) = sum_t weights[x][t][y_t]. Stands in for the
/// human/LLM preference oracle when generating labels and judging duels.
struct GroundTruthReward {
  Tensor3 weights;

  const ModelShape& shape() const { return weights.shape(); }

  friend bool operator==(const GroundTruthReward&, const GroundTruthReward&) = default;
};

double true_reward(const GroundTruthReward& gt, std::size_t prompt_id, const ResponseSeq& resp);

void save_reward(const std::filesystem::path& path, const GroundTruthReward& gt);
GroundTruthReward load_reward(const std::filesystem::path& path);

/// Individual reward discrepancy of one triplet, with its batch position.
struct DiscrepancyRecord {
  std::size_t index = 0;
  double M = 0.0;
};

/// Implicit reward gap of a triplet under (theta, ref):
///   beta0 * [log pi_theta(y_w) - log pi_ref(y_w)] - beta0 * [log pi_theta(y_l) - log pi_ref(y_l)].
/// A plain number: nothing downstream differentiates through it.
double implicit_discrepancy(const PolicyParams& theta, const PolicyParams& ref,
                            const Triplet& triplet, double beta0);

/// Log-ratio margin h (the implicit discrepancy divided by beta0).
double log_ratio_margin(const PolicyParams& theta, const PolicyParams& ref, const Triplet& triplet);

struct ScorePair {
  double score_chosen = 0.0;
  double score_rejected = 0.0;
};

/// Scores from an external reward model, keyed by dataset index.
/// File format: JSONL, one {"index":i,"score_chosen":..,"score_rejected":..} per line.
struct ExplicitScores {
  std::map<std::size_t, ScorePair> entries;
};

/// score_chosen - score_rejected for the given dataset index.
double explicit_discrepancy(const ExplicitScores& scores, std::size_t index);

ExplicitScores read_explicit_scores(const std::filesystem::path& path);
void write_explicit_scores(const std::filesystem::path& path, const ExplicitScores& scores);

/// Optional affine map applied to externally sourced M (off by default).
struct AffineRescale {
  double scale = 1.0;
  double shift = 0.0;

  double operator()(double m) const { return scale * m + shift; }
  bool is_identity() const { return scale == 1.0 && shift == 0.0; }
};

}  // namespace betadpo
