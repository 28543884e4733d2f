#pragma once

#include <span>
#include <vector>

#include "betadpo/calibration.hpp"
#include "betadpo/common.hpp"

namespace betadpo {

struct FilterOutcome {
  std::vector<std::size_t> kept_indices;  // sorted, distinct
  std::vector<double> weights;            // per batch element: p(M_i) or the rank score
  FilterStrategy strategy = FilterStrategy::None;
  bool fallback_uniform = false;
};

/// Gaussian density N(M; M0, sigma^2).
double gaussian_weight(double M, double M0, double sigma);

/// max(1, round(rho * n)).
std::size_t keep_count(std::size_t n, double rho);

/// Keep-everything outcome for strategy None.
FilterOutcome keep_all(std::size_t n);

/// Draws keep_count(n, rho) indices without replacement, favouring samples
/// whose discrepancy is close to `center` under the Gaussian weight.
///
/// Exponential keys: element i gets key log(u_i) / w_i and the k largest keys
/// win, which is sequential weighted sampling without replacement. Ranking is
/// done on the equivalent log(E_i) - log(w_i) (smallest first, E_i = -log u_i)
/// so weights that underflow in linear space still order correctly. If every
/// linear weight is 0 the draw falls back to uniform and sets
/// fallback_uniform. rho == 1 keeps everything without touching the rng.
FilterOutcome select_gaussian(std::span<const double> batch_M, double center, double sigma,
                              double rho, Rng& rng);

/// Same, reading the center and sigma from running stats.
FilterOutcome select_gaussian(std::span<const double> batch_M, const RunningStats& stats,
                              double rho, Rng& rng);

/// Rank-based baselines. Samples are sorted by descending gradient magnitude
/// (ties: lower index first). With r = round(exclusion * n): FilterHead drops
/// the first r, FilterTail the last r, FilterTailHead the first ceil(r/2) and
/// the last floor(r/2).
FilterOutcome select_rank(std::span<const double> batch_grad_norms, FilterStrategy strategy,
                          double exclusion = 0.2);

/// |d loss / d h| for the DPO loss at margin h: beta * sigmoid(-beta * h).
double margin_grad_magnitude(double beta, double h);

}  // namespace betadpo
