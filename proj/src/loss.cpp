#include "betadpo/loss.hpp"

#include <algorithm>
#include <cmath>

#include "betadpo/reward.hpp"

namespace betadpo {

namespace {

/// Sum in ascending order, so the result does not depend on batch order.
double order_free_sum(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += x;
  return s;
}

}  // namespace

SampleLoss dpo_loss_single(const PolicyParams& theta, const PolicyParams& ref,
                           const Triplet& triplet, double beta) {
  if (!(beta > 0.0)) throw InvalidInput("dpo_loss_single: beta must be > 0");
  const auto& shape = theta.shape();
  const double h = log_ratio_margin(theta, ref, triplet);
  SampleLoss out;
  out.margin = h;
  out.loss = softplus(-beta * h);
  const double coef = -beta * sigmoid(-beta * h);

  out.grad = Gradient(shape, 0.0);
  std::vector<double> probs(shape.vocab_size);
  const std::size_t x = triplet.prompt_id;
  for (std::size_t t = 0; t < shape.seq_len; ++t) {
    softmax(theta.logits.row(x, t), probs);
    auto g = out.grad.row(x, t);
    const Token w = triplet.chosen.tokens[t];
    const Token l = triplet.rejected.tokens[t];
    for (std::size_t v = 0; v < shape.vocab_size; ++v) {
      const double gw = (w == v ? 1.0 : 0.0) - probs[v];
      const double gl = (l == v ? 1.0 : 0.0) - probs[v];
      g[v] = coef * (gw - gl);
    }
  }
  if (!std::isfinite(out.loss) || !out.grad.all_finite()) {
    throw NumericError("dpo_loss_single: non-finite loss or gradient");
  }
  return out;
}

std::pair<double, Gradient> mean_loss_over(const PolicyParams& theta, const PolicyParams& ref,
                                           std::span<const Triplet> batch,
                                           std::span<const std::size_t> kept,
                                           std::span<const double> betas,
                                           const SampleLossFn& loss_fn) {
  if (kept.empty()) throw InvalidInput("mean_loss_over: no kept samples");
  Gradient grad(theta.shape(), 0.0);
  std::vector<double> losses;
  losses.reserve(kept.size());
  for (std::size_t i : kept) {
    const auto s = loss_fn(theta, ref, batch[i], betas[i]);
    losses.push_back(s.loss);
    auto dst = grad.values();
    auto src = s.grad.values();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
  const double k = static_cast<double>(kept.size());
  for (double& g : grad.values()) g /= k;
  return {order_free_sum(std::move(losses)) / k, std::move(grad)};
}

BatchStep beta_dpo_batch(const PolicyParams& theta, const PolicyParams& ref,
                         std::span<const Triplet> batch, const BetaConfig& cfg,
                         const RunningStats& stats, Rng& rng, const BatchOptions& opts) {
  const std::size_t n = batch.size();
  if (n == 0) throw InvalidInput("beta_dpo_batch: empty batch");
  if (!opts.external_M.empty() && opts.external_M.size() != n) {
    throw InvalidInput("beta_dpo_batch: external_M size does not match batch");
  }
  const SampleLossFn& loss_fn = opts.loss_fn ? opts.loss_fn : SampleLossFn(dpo_loss_single);

  BatchStep step;
  auto& res = step.result;

  // (1) discrepancies
  res.per_sample_M.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    try {
      res.per_sample_M[i] = opts.external_M.empty()
                                ? implicit_discrepancy(theta, ref, batch[i], cfg.beta0)
                                : opts.external_M[i];
    } catch (const NumericError& e) {
      throw NumericError("batch item " + std::to_string(i) + ": " + e.what());
    }
  }

  // (2) running stats from the full batch
  step.stats = update_stats(stats, res.per_sample_M);

  // (3) filter
  switch (cfg.filter) {
    case FilterStrategy::None:
      res.filter = keep_all(n);
      break;
    case FilterStrategy::GaussianBeta:
      res.filter = select_gaussian(res.per_sample_M, threshold_M0(cfg, step.stats),
                                   step.stats.sigma, cfg.rho, rng);
      break;
    default: {
      std::vector<double> norms(n);
      for (std::size_t i = 0; i < n; ++i) {
        if (cfg.rank_on == RankOn::MarginGrad) {
          norms[i] = margin_grad_magnitude(cfg.beta0, res.per_sample_M[i] / cfg.beta0);
        } else {
          norms[i] = loss_fn(theta, ref, batch[i], cfg.beta0).grad.l2_norm();
        }
      }
      res.filter = select_rank(norms, cfg.filter, cfg.exclusion);
      break;
    }
  }
  const auto& kept = res.filter.kept_indices;

  // (4) effective beta
  std::vector<double> beta_set_M;
  if (cfg.beta_on == BetaOn::Filtered) {
    beta_set_M.reserve(kept.size());
    for (std::size_t i : kept) beta_set_M.push_back(res.per_sample_M[i]);
  } else {
    beta_set_M = res.per_sample_M;
  }
  const auto eb = effective_beta(cfg, step.stats, beta_set_M);
  res.effective_beta = eb.beta_batch;
  res.clamp_count = eb.clamp_count;
  res.per_sample_beta.assign(n, eb.beta_batch);
  if (cfg.mode == CalibrationMode::Instance) {
    const double M0 = threshold_M0(cfg, step.stats);
    for (std::size_t i = 0; i < n; ++i) res.per_sample_beta[i] = scaled_beta(cfg, res.per_sample_M[i], M0);
  }

  // (5) loss and gradient over kept samples
  res.per_sample_loss.resize(n);
  res.grad = Gradient(theta.shape(), 0.0);
  std::vector<bool> is_kept(n, false);
  for (std::size_t i : kept) is_kept[i] = true;
  std::vector<double> kept_losses;
  kept_losses.reserve(kept.size());
  for (std::size_t i = 0; i < n; ++i) {
    SampleLoss s;
    try {
      s = loss_fn(theta, ref, batch[i], res.per_sample_beta[i]);
    } catch (const NumericError& e) {
      throw NumericError("batch item " + std::to_string(i) + ": " + e.what());
    }
    res.per_sample_loss[i] = s.loss;
    if (!is_kept[i]) continue;
    kept_losses.push_back(s.loss);
    auto dst = res.grad.values();
    auto src = s.grad.values();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
  const double k = static_cast<double>(kept.size());
  for (double& g : res.grad.values()) g /= k;
  res.loss = order_free_sum(std::move(kept_losses)) / k;
  return step;
}

}  // namespace betadpo
