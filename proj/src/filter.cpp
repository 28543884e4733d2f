#include "betadpo/filter.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <spdlog/spdlog.h>

namespace betadpo {

double gaussian_weight(double M, double M0, double sigma) {
  const double d = M - M0;
  return std::exp(-(d * d) / (2.0 * sigma * sigma)) / (std::sqrt(2.0 * std::numbers::pi) * sigma);
}

std::size_t keep_count(std::size_t n, double rho) {
  const auto k = static_cast<std::size_t>(std::llround(rho * static_cast<double>(n)));
  return std::clamp<std::size_t>(k, 1, std::max<std::size_t>(n, 1));
}

FilterOutcome keep_all(std::size_t n) {
  FilterOutcome out;
  out.kept_indices.resize(n);
  std::iota(out.kept_indices.begin(), out.kept_indices.end(), std::size_t{0});
  out.weights.assign(n, 1.0);
  out.strategy = FilterStrategy::None;
  return out;
}

FilterOutcome select_gaussian(std::span<const double> batch_M, double center, double sigma,
                              double rho, Rng& rng) {
  const std::size_t n = batch_M.size();
  if (n == 0) throw InvalidInput("select_gaussian: empty batch");
  if (!(rho > 0.0 && rho <= 1.0)) throw InvalidInput("select_gaussian: rho must be in (0, 1]");
  if (!(sigma > 0.0)) throw InvalidInput("select_gaussian: sigma must be > 0");

  FilterOutcome out;
  out.strategy = FilterStrategy::GaussianBeta;
  out.weights.resize(n);
  std::vector<double> log_w(n);
  bool any_positive = false;
  const double log_norm = std::log(std::sqrt(2.0 * std::numbers::pi) * sigma);
  for (std::size_t i = 0; i < n; ++i) {
    out.weights[i] = gaussian_weight(batch_M[i], center, sigma);
    const double d = batch_M[i] - center;
    log_w[i] = -(d * d) / (2.0 * sigma * sigma) - log_norm;
    any_positive = any_positive || out.weights[i] > 0.0;
  }

  const std::size_t k = keep_count(n, rho);
  if (k == n) {
    out.kept_indices.resize(n);
    std::iota(out.kept_indices.begin(), out.kept_indices.end(), std::size_t{0});
    return out;
  }
  if (!any_positive) {
    spdlog::warn("select_gaussian: all {} weights underflowed, sampling uniformly", n);
    out.fallback_uniform = true;
    std::fill(log_w.begin(), log_w.end(), 0.0);
  }

  // Smaller score = larger exponential key log(u)/w.
  std::vector<double> score(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double e = -std::log(uniform01(rng));
    score[i] = std::log(e) - log_w[i];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
  out.kept_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(out.kept_indices.begin(), out.kept_indices.end());
  return out;
}

FilterOutcome select_gaussian(std::span<const double> batch_M, const RunningStats& stats,
                              double rho, Rng& rng) {
  if (!stats.initialized) throw StateError("select_gaussian: running stats not initialized");
  return select_gaussian(batch_M, stats.M0, stats.sigma, rho, rng);
}

FilterOutcome select_rank(std::span<const double> batch_grad_norms, FilterStrategy strategy,
                          double exclusion) {
  const std::size_t n = batch_grad_norms.size();
  if (n == 0) throw InvalidInput("select_rank: empty batch");
  if (strategy == FilterStrategy::None) return keep_all(n);
  if (strategy == FilterStrategy::GaussianBeta) {
    throw InvalidInput("select_rank: gaussian is not a rank strategy");
  }
  if (!(exclusion >= 0.0 && exclusion < 1.0)) throw InvalidInput("select_rank: bad exclusion");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return batch_grad_norms[a] > batch_grad_norms[b];
  });

  const auto r = static_cast<std::size_t>(std::llround(exclusion * static_cast<double>(n)));
  std::size_t drop_head = 0;
  std::size_t drop_tail = 0;
  switch (strategy) {
    case FilterStrategy::FilterHead: drop_head = r; break;
    case FilterStrategy::FilterTail: drop_tail = r; break;
    case FilterStrategy::FilterTailHead:
      drop_head = r - r / 2;
      drop_tail = r / 2;
      break;
    default: break;
  }
  // Never drop the whole batch.
  if (drop_head + drop_tail >= n) {
    drop_tail = 0;
    drop_head = n - 1;
  }

  FilterOutcome out;
  out.strategy = strategy;
  out.weights.assign(batch_grad_norms.begin(), batch_grad_norms.end());
  out.kept_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(drop_head),
                          order.end() - static_cast<std::ptrdiff_t>(drop_tail));
  std::sort(out.kept_indices.begin(), out.kept_indices.end());
  return out;
}

double margin_grad_magnitude(double beta, double h) { return beta * sigmoid(-beta * h); }

}  // namespace betadpo
