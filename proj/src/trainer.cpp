#include "betadpo/trainer.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "betadpo/io.hpp"

namespace betadpo {

namespace {

constexpr std::uint64_t kFilterStream = 0x66696c74;   // "filt"
constexpr std::uint64_t kShuffleStream = 0x73687566;  // "shuf"

std::string rng_to_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng rng_from_string(const std::string& s) {
  std::istringstream is(s);
  Rng rng;
  is >> rng;
  if (!is) throw IoError("checkpoint: malformed generator state");
  return rng;
}

std::uint64_t total_steps(std::size_t n, const TrainConfig& cfg) {
  if (cfg.epochs == 0) return 0;
  return static_cast<std::uint64_t>(plan_epoch(n, cfg, 0).batches.size()) * cfg.epochs;
}

}  // namespace

void TrainConfig::check() const {
  if (batch_size < 1) throw InvalidInput("batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw InvalidInput("lr must be a finite value >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw InvalidInput("adam_beta1 must be in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw InvalidInput("adam_beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw InvalidInput("adam_eps must be > 0");
  if (!(sft_smoothing >= 0.0)) throw InvalidInput("sft_smoothing must be >= 0");
  beta.check();
}

TrainState init_from_sft(const PreferenceDataset& ds, const TrainConfig& cfg) {
  if (ds.empty()) throw InvalidInput("init_from_sft: empty dataset");
  cfg.check();
  TrainState s;
  s.theta = fit_sft(ds, cfg.sft_smoothing);
  s.ref = s.theta;
  s.adam_m = Tensor3(ds.shape, 0.0);
  s.adam_v = Tensor3(ds.shape, 0.0);
  s.step = 0;
  s.stats = initial_stats(cfg.beta);
  s.rng = make_rng(cfg.seed, kFilterStream);
  return s;
}

void adam_update(PolicyParams& theta, Tensor3& m, Tensor3& v, const Gradient& grad,
                 const TrainConfig& cfg, std::uint64_t step_index) {
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double t = static_cast<double>(step_index);
  const double bias1 = 1.0 - std::pow(b1, t);
  const double bias2 = 1.0 - std::pow(b2, t);
  auto th = theta.logits.values();
  auto mv = m.values();
  auto vv = v.values();
  auto g = grad.values();
  for (std::size_t i = 0; i < th.size(); ++i) {
    mv[i] = b1 * mv[i] + (1.0 - b1) * g[i];
    vv[i] = b2 * vv[i] + (1.0 - b2) * g[i] * g[i];
    const double mhat = mv[i] / bias1;
    const double vhat = vv[i] / bias2;
    th[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
  }
}

std::pair<TrainState, BatchReport> train_step(TrainState state, std::span<const Triplet> batch,
                                              const TrainConfig& cfg,
                                              std::span<const double> external_M) {
  BatchOptions opts;
  opts.external_M = external_M;
  auto step = beta_dpo_batch(state.theta, state.ref, batch, cfg.beta, state.stats, state.rng, opts);
  auto& res = step.result;
  const std::uint64_t next = state.step + 1;
  if (!res.grad.all_finite()) {
    throw NumericError("non-finite gradient at step " + std::to_string(next));
  }
  adam_update(state.theta, state.adam_m, state.adam_v, res.grad, cfg, next);
  state.step = next;
  state.stats = step.stats;

  BatchReport rep;
  rep.step = next;
  rep.loss = res.loss;
  rep.effective_beta = res.effective_beta;
  rep.mean_M = mean(res.per_sample_M);
  rep.std_M = population_std(res.per_sample_M);
  rep.per_sample_M = std::move(res.per_sample_M);
  rep.kept_indices = std::move(res.filter.kept_indices);
  rep.grad_norm = res.grad.l2_norm();
  rep.clamp_count = res.clamp_count;
  rep.fallback_uniform = res.filter.fallback_uniform;
  if (rep.clamp_count > 0) {
    spdlog::debug("step {}: beta factor clamped {} time(s)", next, rep.clamp_count);
  }
  return {std::move(state), std::move(rep)};
}

EpochPlan plan_epoch(std::size_t n, const TrainConfig& cfg, std::size_t epoch) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  if (cfg.shuffle && n > 1) {
    Rng rng = make_rng(cfg.seed, kShuffleStream + epoch);
    for (std::size_t i = n - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(uniform_index(rng, i + 1));
      std::swap(perm[i], perm[j]);
    }
  }
  EpochPlan plan;
  const std::size_t bs = cfg.batch_size;
  const std::size_t full = n / bs;
  for (std::size_t b = 0; b < full; ++b) {
    plan.batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(b * bs),
                              perm.begin() + static_cast<std::ptrdiff_t>((b + 1) * bs));
  }
  const std::size_t rem = n - full * bs;
  if (rem > 0) {
    if (2 * rem >= bs) {
      std::vector<std::size_t> last(perm.begin() + static_cast<std::ptrdiff_t>(full * bs), perm.end());
      for (std::size_t i = 0; last.size() < bs; ++i) last.push_back(perm[i % n]);
      plan.batches.push_back(std::move(last));
      plan.last_padded = true;
    } else {
      plan.dropped = rem;
    }
  }
  return plan;
}

std::vector<double> external_discrepancies(const PreferenceDataset& ds,
                                           std::span<const std::size_t> indices,
                                           const BetaConfig& cfg, const ExplicitScores* scores) {
  std::vector<double> out;
  if (cfg.m_source == DiscrepancySource::Implicit) return out;
  const AffineRescale rescale{cfg.explicit_scale, cfg.explicit_shift};
  out.reserve(indices.size());
  for (std::size_t idx : indices) {
    double m = 0.0;
    if (cfg.m_source == DiscrepancySource::Oracle) {
      const auto& meta = ds.triplets[idx].meta;
      m = meta.true_reward_chosen - meta.true_reward_rejected;
    } else {
      if (!scores) throw InvalidInput("m_source=explicit requires an explicit scores file");
      m = explicit_discrepancy(*scores, idx);
    }
    out.push_back(rescale(m));
  }
  return out;
}

TrainResult resume(const PreferenceDataset& ds, const TrainConfig& cfg, TrainState state,
                   const TrainOptions& opts) {
  if (ds.empty()) throw InvalidInput("train: empty dataset");
  cfg.check();
  const std::size_t n = ds.size();
  const std::uint64_t total = total_steps(n, cfg);
  TrainResult out;
  if (total == 0) {
    if (cfg.epochs > 0) {
      spdlog::warn("train: {} triplets is less than half a batch of {}; no steps run", n,
                   cfg.batch_size);
    }
    out.state = std::move(state);
    return out;
  }
  const std::uint64_t per_epoch = total / cfg.epochs;
  const std::uint64_t end = opts.stop_at_step ? std::min(total, *opts.stop_at_step) : total;

  std::optional<EpochPlan> plan;
  std::size_t plan_epoch_index = 0;
  std::vector<Triplet> batch;
  while (state.step < end) {
    const auto epoch = static_cast<std::size_t>(state.step / per_epoch);
    const auto pos = static_cast<std::size_t>(state.step % per_epoch);
    if (!plan || plan_epoch_index != epoch) {
      plan = plan_epoch(n, cfg, epoch);
      plan_epoch_index = epoch;
      if (plan->last_padded) spdlog::info("epoch {}: trailing batch padded by wrap-around", epoch);
      if (plan->dropped > 0) spdlog::info("epoch {}: dropped {} trailing triplets", epoch, plan->dropped);
    }
    const auto& idx = plan->batches[pos];
    batch.clear();
    for (std::size_t i : idx) batch.push_back(ds.triplets[i]);
    const auto ext = external_discrepancies(ds, idx, cfg.beta, opts.explicit_scores);
    auto [next, rep] = train_step(std::move(state), batch, cfg, ext);
    state = std::move(next);
    rep.padded = plan->last_padded && pos + 1 == plan->batches.size();
    if (opts.on_step) opts.on_step(rep);
    out.reports.push_back(std::move(rep));
    if (!opts.checkpoint_dir.empty() && cfg.checkpoint_every > 0 &&
        state.step % cfg.checkpoint_every == 0) {
      save_checkpoint(opts.checkpoint_dir / "checkpoint.json", state);
    }
  }
  if (!opts.checkpoint_dir.empty()) save_checkpoint(opts.checkpoint_dir / "checkpoint.json", state);
  out.state = std::move(state);
  return out;
}

TrainResult train(const PreferenceDataset& ds, const TrainConfig& cfg, const TrainOptions& opts) {
  return resume(ds, cfg, init_from_sft(ds, cfg), opts);
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  nlohmann::ordered_json j;
  j["format"] = "betadpo-checkpoint-v1";
  j["step"] = state.step;
  j["theta"] = tensor_to_json(state.theta.logits, "policy");
  j["ref"] = tensor_to_json(state.ref.logits, "policy");
  j["adam_m"] = tensor_to_json(state.adam_m, "moment");
  j["adam_v"] = tensor_to_json(state.adam_v, "moment");
  nlohmann::ordered_json st;
  st["M0"] = state.stats.M0;
  st["sigma"] = state.stats.sigma;
  st["m"] = state.stats.momentum;
  st["initialized"] = state.stats.initialized;
  j["stats"] = std::move(st);
  j["rng"] = rng_to_string(state.rng);
  write_json_file(path, j);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  const auto j = read_json_file(path);
  try {
    if (j.at("format").get<std::string>() != "betadpo-checkpoint-v1") {
      throw IoError(path.string() + ": not a checkpoint");
    }
    TrainState s;
    s.step = j.at("step").get<std::uint64_t>();
    s.theta = PolicyParams(tensor_from_json(j.at("theta"), "policy"));
    s.ref = PolicyParams(tensor_from_json(j.at("ref"), "policy"));
    s.adam_m = tensor_from_json(j.at("adam_m"), "moment");
    s.adam_v = tensor_from_json(j.at("adam_v"), "moment");
    const auto& st = j.at("stats");
    s.stats.M0 = st.at("M0").get<double>();
    s.stats.sigma = st.at("sigma").get<double>();
    s.stats.momentum = st.at("m").get<double>();
    s.stats.initialized = st.at("initialized").get<bool>();
    s.rng = rng_from_string(j.at("rng").get<std::string>());
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::string metrics_csv_header() {
  return "step,loss,effective_beta,mean_M,std_M,kept_count,grad_norm,clamp_flag";
}

std::string metrics_csv_row(const BatchReport& r) {
  std::ostringstream os;
  os << r.step << ',' << format_double(r.loss) << ',' << format_double(r.effective_beta) << ','
     << format_double(r.mean_M) << ',' << format_double(r.std_M) << ',' << r.kept_indices.size()
     << ',' << format_double(r.grad_norm) << ',' << (r.clamp_count > 0 ? 1 : 0);
  return os.str();
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const BatchReport> reports) {
  std::ostringstream os;
  os << metrics_csv_header() << '\n';
  for (const auto& r : reports) os << metrics_csv_row(r) << '\n';
  write_text_file(path, os.str());
}

}  // namespace betadpo
