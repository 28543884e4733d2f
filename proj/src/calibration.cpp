#include "betadpo/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "betadpo/common.hpp"

namespace betadpo {

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::pair<std::string_view, E> (&table)[N],
             const char* what) {
  for (const auto& [name, value] : table) {
    if (name == s) return value;
  }
  std::string msg = std::string("unknown ") + what + " '" + std::string(s) + "' (expected one of:";
  for (const auto& [name, value] : table) msg += " " + std::string(name);
  throw InvalidInput(msg + ")");
}

template <typename E, std::size_t N>
std::string_view enum_name(E e, const std::pair<std::string_view, E> (&table)[N]) {
  for (const auto& [name, value] : table) {
    if (value == e) return name;
  }
  return "?";
}

constexpr std::pair<std::string_view, CalibrationMode> kModes[] = {
    {"population", CalibrationMode::Population},
    {"instance", CalibrationMode::Instance},
    {"batch", CalibrationMode::Batch}};
constexpr std::pair<std::string_view, BetaOn> kBetaOn[] = {{"full", BetaOn::Full},
                                                           {"filtered", BetaOn::Filtered}};
constexpr std::pair<std::string_view, FilterStrategy> kFilters[] = {
    {"gaussian", FilterStrategy::GaussianBeta},
    {"filter_head", FilterStrategy::FilterHead},
    {"filter_tail", FilterStrategy::FilterTail},
    {"filter_tail_head", FilterStrategy::FilterTailHead},
    {"none", FilterStrategy::None}};
constexpr std::pair<std::string_view, RankOn> kRankOn[] = {
    {"margin_grad", RankOn::MarginGrad}, {"param_grad_norm", RankOn::ParamGradNorm}};
constexpr std::pair<std::string_view, DiscrepancySource> kSources[] = {
    {"implicit", DiscrepancySource::Implicit},
    {"explicit", DiscrepancySource::Explicit},
    {"oracle", DiscrepancySource::Oracle}};

}  // namespace

std::string_view to_string(CalibrationMode m) { return enum_name(m, kModes); }
std::string_view to_string(BetaOn b) { return enum_name(b, kBetaOn); }
std::string_view to_string(FilterStrategy s) { return enum_name(s, kFilters); }
std::string_view to_string(RankOn r) { return enum_name(r, kRankOn); }
std::string_view to_string(DiscrepancySource s) { return enum_name(s, kSources); }
CalibrationMode parse_calibration_mode(std::string_view s) { return parse_enum(s, kModes, "mode"); }
BetaOn parse_beta_on(std::string_view s) { return parse_enum(s, kBetaOn, "beta_on"); }
FilterStrategy parse_filter_strategy(std::string_view s) { return parse_enum(s, kFilters, "filter"); }
RankOn parse_rank_on(std::string_view s) { return parse_enum(s, kRankOn, "rank_on"); }
DiscrepancySource parse_discrepancy_source(std::string_view s) {
  return parse_enum(s, kSources, "m_source");
}

void BetaConfig::check() const {
  if (!(beta0 > 0.0) || !std::isfinite(beta0)) throw InvalidInput("beta0 must be > 0");
  if (!(alpha >= 0.0 && alpha <= 2.0)) throw InvalidInput("alpha must be in [0, 2]");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidInput("m must be in [0, 1)");
  if (!(rho > 0.0 && rho <= 1.0)) throw InvalidInput("rho must be in (0, 1]");
  if (!(factor_min > 0.0)) throw InvalidInput("factor_min must be > 0");
  if (!(exclusion >= 0.0 && exclusion < 1.0)) throw InvalidInput("exclusion must be in [0, 1)");
  if (fixed_M0 && !std::isfinite(*fixed_M0)) throw InvalidInput("fixed_M0 must be finite");
  if (!std::isfinite(explicit_scale) || !std::isfinite(explicit_shift)) {
    throw InvalidInput("explicit rescale must be finite");
  }
}

BetaConfig plain_dpo_config(double beta0) {
  BetaConfig cfg;
  cfg.beta0 = beta0;
  cfg.alpha = 0.0;
  cfg.mode = CalibrationMode::Population;
  cfg.rho = 1.0;
  cfg.filter = FilterStrategy::None;
  return cfg;
}

RunningStats initial_stats(const BetaConfig& cfg) {
  RunningStats s;
  s.momentum = cfg.momentum;
  return s;
}

double mean(std::span<const double> xs) {
  if (xs.empty()) throw InvalidInput("mean of empty list");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double population_std(std::span<const double> xs) {
  const double mu = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - mu) * (x - mu);
  return std::sqrt(ss / static_cast<double>(xs.size()));
}

RunningStats update_stats(const RunningStats& stats, std::span<const double> batch_M) {
  if (batch_M.empty()) throw InvalidInput("update_stats: empty batch");
  for (double m : batch_M) {
    if (!std::isfinite(m)) throw InvalidInput("update_stats: non-finite discrepancy");
  }
  const double mu = mean(batch_M);
  const double sd = population_std(batch_M);
  RunningStats out = stats;
  if (!stats.initialized) {
    out.M0 = mu;
    out.sigma = std::max(sd, kSigmaMin);
    out.initialized = true;
    return out;
  }
  const double m = stats.momentum;
  out.M0 = m * stats.M0 + (1.0 - m) * mu;
  out.sigma = std::max(m * stats.sigma + (1.0 - m) * sd, kSigmaMin);
  return out;
}

double threshold_M0(const BetaConfig& cfg, const RunningStats& stats) {
  if (cfg.fixed_M0) return *cfg.fixed_M0;
  if (!stats.initialized) throw StateError("running stats not initialized and no fixed_M0 set");
  return stats.M0;
}

double scaled_beta(const BetaConfig& cfg, double m, double M0, bool* clamped) {
  const double factor = 1.0 + cfg.alpha * (m - M0);
  const bool hit = factor < cfg.factor_min;
  if (clamped) *clamped = hit;
  return (hit ? cfg.factor_min : factor) * cfg.beta0;
}

EffectiveBeta effective_beta(const BetaConfig& cfg, const RunningStats& stats,
                             std::span<const double> batch_M) {
  if (batch_M.empty()) throw InvalidInput("effective_beta: empty batch");
  EffectiveBeta out;
  switch (cfg.mode) {
    case CalibrationMode::Population:
      out.beta_batch = cfg.beta0;
      return out;
    case CalibrationMode::Batch: {
      const double M0 = threshold_M0(cfg, stats);
      bool clamped = false;
      out.beta_batch = scaled_beta(cfg, mean(batch_M), M0, &clamped);
      out.clamp_count = clamped ? 1 : 0;
      return out;
    }
    case CalibrationMode::Instance: {
      const double M0 = threshold_M0(cfg, stats);
      std::vector<double> betas;
      betas.reserve(batch_M.size());
      double factor_sum = 0.0;
      for (double m : batch_M) {
        bool clamped = false;
        betas.push_back(scaled_beta(cfg, m, M0, &clamped));
        factor_sum += betas.back() / cfg.beta0;
        out.clamp_count += clamped ? 1 : 0;
      }
      out.beta_batch = factor_sum / static_cast<double>(betas.size()) * cfg.beta0;
      out.per_instance = std::move(betas);
      return out;
    }
  }
  throw StateError("effective_beta: unknown mode");
}

}  // namespace betadpo
