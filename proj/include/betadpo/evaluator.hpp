#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "betadpo/policy.hpp"
#include "betadpo/reward.hpp"

namespace betadpo {

enum class WinRateMethod { Exact, MonteCarlo };

/// How often a policy's response beats a baseline response under r*.
/// Ties are tracked separately, so win(A,B) + win(B,A) + tie = 1.
struct WinRateResult {
  double win_rate = 0.0;
  double tie_rate = 0.0;
  std::vector<double> per_prompt;
  WinRateMethod method = WinRateMethod::Exact;
  std::uint64_t mc_samples = 0;
  bool fell_back = false;  // exact requested but the budget forced Monte Carlo

  /// Win rate with ties counted as half a win.
  double split_ties() const { return win_rate + 0.5 * tie_rate; }
};

inline constexpr std::uint64_t kDefaultMonteCarloSamples = 100000;

/// Exact duel by enumeration: E_x sum_{y,y'} pi(y|x) base(y'|x) 1[r*(y) > r*(y')],
/// prompts weighted uniformly. Falls back to Monte Carlo (fell_back = true)
/// when V^T exceeds `budget`.
WinRateResult exact_win_rate(const PolicyParams& policy, const PolicyParams& baseline,
                             const GroundTruthReward& gt,
                             std::uint64_t budget = kDefaultEnumerationBudget,
                             std::uint64_t fallback_seed = 0);

/// Sampled duel: prompt uniform, one response from each side per sample.
WinRateResult monte_carlo_win_rate(const PolicyParams& policy, const PolicyParams& baseline,
                                   const GroundTruthReward& gt, std::uint64_t samples,
                                   std::uint64_t seed);

/// Exact duel against the empirical distribution of chosen responses in `ds`
/// (prompts without any triplet are skipped).
WinRateResult win_rate_vs_chosen(const PolicyParams& policy, const PreferenceDataset& ds,
                                 const GroundTruthReward& gt,
                                 std::uint64_t budget = kDefaultEnumerationBudget);

nlohmann::ordered_json to_json(const WinRateResult& r);

struct DiscrepancyHistogram {
  std::vector<double> bin_edges;  // bins + 1, strictly increasing
  std::vector<std::size_t> counts;
  double mean = 0.0;
  double std = 0.0;  // population
  double p05 = 0.0;
  double p95 = 0.0;
};

/// Equal-width bins over [min, max] (a unit-wide span centred on the value
/// when all samples coincide). Percentiles interpolate linearly.
DiscrepancyHistogram make_histogram(std::span<const double> values, std::size_t bins);

/// Histogram of the implicit discrepancy of every triplet under (theta, ref).
DiscrepancyHistogram discrepancy_histogram(const PolicyParams& theta, const PolicyParams& ref,
                                           const PreferenceDataset& ds, double beta0,
                                           std::size_t bins);

/// CSV with header bin_lo,bin_hi,count.
std::string histogram_csv(const DiscrepancyHistogram& h);

double percentile(std::vector<double> values, double q);

struct DatasetStats {
  std::size_t n = 0;
  std::size_t n_high_gap = 0;
  std::size_t n_flipped = 0;
  double mean_abs_gap_low = 0.0;   // mean |r*(chosen) - r*(rejected)|
  double mean_abs_gap_high = 0.0;
  double chosen_better_rate = 0.0;  // fraction with r*(chosen) > r*(rejected)
};

DatasetStats dataset_stats(const PreferenceDataset& ds);
nlohmann::ordered_json to_json(const DatasetStats& s);

}  // namespace betadpo
