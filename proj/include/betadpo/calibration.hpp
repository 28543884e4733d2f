#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace betadpo {

inline constexpr double kSigmaMin = 1e-6;

/// Momentum-averaged mean (M0) and standard deviation (sigma) of the reward
/// discrepancy stream. Bootstrapped from the first batch.
struct RunningStats {
  double M0 = 0.0;
  double sigma = kSigmaMin;
  double momentum = 0.9;
  bool initialized = false;

  friend bool operator==(const RunningStats&, const RunningStats&) = default;
};

enum class CalibrationMode { Population, Instance, Batch };
enum class BetaOn { Full, Filtered };
enum class FilterStrategy { GaussianBeta, FilterHead, FilterTail, FilterTailHead, None };
enum class RankOn { MarginGrad, ParamGradNorm };
enum class DiscrepancySource { Implicit, Explicit, Oracle };

std::string_view to_string(CalibrationMode m);
std::string_view to_string(BetaOn b);
std::string_view to_string(FilterStrategy s);
std::string_view to_string(RankOn r);
std::string_view to_string(DiscrepancySource s);
CalibrationMode parse_calibration_mode(std::string_view s);
BetaOn parse_beta_on(std::string_view s);
FilterStrategy parse_filter_strategy(std::string_view s);
RankOn parse_rank_on(std::string_view s);
DiscrepancySource parse_discrepancy_source(std::string_view s);

struct BetaConfig {
  double beta0 = 0.1;
  double alpha = 0.6;
  CalibrationMode mode = CalibrationMode::Batch;
  double momentum = 0.9;
  double rho = 0.8;
  double factor_min = 0.1;
  std::optional<double> fixed_M0;
  BetaOn beta_on = BetaOn::Filtered;
  FilterStrategy filter = FilterStrategy::GaussianBeta;
  RankOn rank_on = RankOn::MarginGrad;
  double exclusion = 0.2;
  DiscrepancySource m_source = DiscrepancySource::Implicit;
  double explicit_scale = 1.0;
  double explicit_shift = 0.0;

  /// Throws InvalidInput on out-of-range values.
  void check() const;

  friend bool operator==(const BetaConfig&, const BetaConfig&) = default;
};

/// Plain DPO: fixed beta, no filtering.
BetaConfig plain_dpo_config(double beta0 = 0.1);

/// Fresh (uninitialized) stats carrying the configured momentum.
RunningStats initial_stats(const BetaConfig& cfg);

double mean(std::span<const double> xs);
/// Population standard deviation (divides by n).
double population_std(std::span<const double> xs);

/// One moving-average step of M0 and sigma over a batch of discrepancies.
/// The first call seeds both from the batch itself.
RunningStats update_stats(const RunningStats& stats, std::span<const double> batch_M);

struct EffectiveBeta {
  double beta_batch = 0.0;
  std::optional<std::vector<double>> per_instance;
  /// Number of factors that hit the factor_min floor.
  std::size_t clamp_count = 0;
};

/// The threshold actually used: fixed_M0 when set, else the running mean.
double threshold_M0(const BetaConfig& cfg, const RunningStats& stats);

/// max(factor_min, 1 + alpha * (m - M0)) * beta0.
double scaled_beta(const BetaConfig& cfg, double m, double M0, bool* clamped = nullptr);

/// Population: beta0. Batch: scaled_beta at the batch mean. Instance: one
/// scaled_beta per element, beta_batch = their mean.
EffectiveBeta effective_beta(const BetaConfig& cfg, const RunningStats& stats,
                             std::span<const double> batch_M);

}  // namespace betadpo
