#include "betadpo/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <spdlog/spdlog.h>

#include "betadpo/calibration.hpp"

namespace betadpo {

namespace {

/// Baseline side of a duel for one prompt: rewards sorted ascending with
/// cumulative probability, so P(r' < r) and P(r' == r) are two binary searches.
class SortedBaseline {
 public:
  void add(double reward, double prob) { items_.push_back({reward, prob}); }

  void finalize() {
    std::sort(items_.begin(), items_.end(),
              [](const Item& a, const Item& b) { return a.reward < b.reward; });
    cumulative_.resize(items_.size() + 1, 0.0);
    for (std::size_t i = 0; i < items_.size(); ++i) cumulative_[i + 1] = cumulative_[i] + items_[i].prob;
  }

  /// (mass strictly below r, mass equal to r)
  std::pair<double, double> below_and_equal(double r) const {
    auto lo = std::lower_bound(items_.begin(), items_.end(), r,
                               [](const Item& it, double v) { return it.reward < v; });
    auto hi = std::upper_bound(items_.begin(), items_.end(), r,
                               [](double v, const Item& it) { return v < it.reward; });
    const auto a = static_cast<std::size_t>(lo - items_.begin());
    const auto b = static_cast<std::size_t>(hi - items_.begin());
    return {cumulative_[a], cumulative_[b] - cumulative_[a]};
  }

 private:
  struct Item {
    double reward;
    double prob;
  };
  std::vector<Item> items_;
  std::vector<double> cumulative_;
};

void check_shapes(const PolicyParams& a, const ModelShape& b) {
  if (!(a.shape() == b)) throw InvalidInput("win rate: policy and reward shapes differ");
}

/// Duel the policy against per-prompt baselines; `active[x]` false skips a prompt.
WinRateResult duel(const PolicyParams& policy, const GroundTruthReward& gt,
                   const std::vector<SortedBaseline>& baselines, const std::vector<bool>& active,
                   std::uint64_t budget) {
  const auto& shape = policy.shape();
  WinRateResult out;
  out.method = WinRateMethod::Exact;
  out.per_prompt.assign(shape.num_prompts, 0.0);
  std::size_t used = 0;
  for (std::size_t x = 0; x < shape.num_prompts; ++x) {
    if (!active[x]) continue;
    double win = 0.0;
    double tie = 0.0;
    for (const auto& wr : enumerate_distribution(policy, x, budget)) {
      const auto [below, equal] = baselines[x].below_and_equal(true_reward(gt, x, wr.response));
      win += wr.probability * below;
      tie += wr.probability * equal;
    }
    out.per_prompt[x] = win;
    out.win_rate += win;
    out.tie_rate += tie;
    ++used;
  }
  if (used == 0) throw InvalidInput("win rate: no prompts to evaluate");
  out.win_rate /= static_cast<double>(used);
  out.tie_rate /= static_cast<double>(used);
  return out;
}

}  // namespace

WinRateResult monte_carlo_win_rate(const PolicyParams& policy, const PolicyParams& baseline,
                                   const GroundTruthReward& gt, std::uint64_t samples,
                                   std::uint64_t seed) {
  check_shapes(policy, gt.shape());
  check_shapes(baseline, gt.shape());
  if (samples == 0) throw InvalidInput("monte_carlo_win_rate: zero samples");
  const auto& shape = policy.shape();
  Rng rng = make_rng(seed, 0x6d63);
  std::vector<std::uint64_t> wins(shape.num_prompts, 0);
  std::vector<std::uint64_t> draws(shape.num_prompts, 0);
  std::uint64_t total_wins = 0;
  std::uint64_t total_ties = 0;
  for (std::uint64_t i = 0; i < samples; ++i) {
    const auto x = static_cast<std::size_t>(uniform_index(rng, shape.num_prompts));
    const double r = true_reward(gt, x, sample(policy, x, rng));
    const double rb = true_reward(gt, x, sample(baseline, x, rng));
    ++draws[x];
    if (r > rb) {
      ++wins[x];
      ++total_wins;
    } else if (r == rb) {
      ++total_ties;
    }
  }
  WinRateResult out;
  out.method = WinRateMethod::MonteCarlo;
  out.mc_samples = samples;
  out.win_rate = static_cast<double>(total_wins) / static_cast<double>(samples);
  out.tie_rate = static_cast<double>(total_ties) / static_cast<double>(samples);
  out.per_prompt.resize(shape.num_prompts);
  for (std::size_t x = 0; x < shape.num_prompts; ++x) {
    out.per_prompt[x] = draws[x] ? static_cast<double>(wins[x]) / static_cast<double>(draws[x]) : 0.0;
  }
  return out;
}

WinRateResult exact_win_rate(const PolicyParams& policy, const PolicyParams& baseline,
                             const GroundTruthReward& gt, std::uint64_t budget,
                             std::uint64_t fallback_seed) {
  check_shapes(policy, gt.shape());
  check_shapes(baseline, gt.shape());
  const auto& shape = policy.shape();
  if (shape.response_space() > budget) {
    spdlog::warn("exact_win_rate: V^T exceeds budget {}, using Monte Carlo ({} samples)", budget,
                 kDefaultMonteCarloSamples);
    auto r = monte_carlo_win_rate(policy, baseline, gt, kDefaultMonteCarloSamples, fallback_seed);
    r.fell_back = true;
    return r;
  }
  std::vector<SortedBaseline> baselines(shape.num_prompts);
  for (std::size_t x = 0; x < shape.num_prompts; ++x) {
    for (const auto& wr : enumerate_distribution(baseline, x, budget)) {
      baselines[x].add(true_reward(gt, x, wr.response), wr.probability);
    }
    baselines[x].finalize();
  }
  return duel(policy, gt, baselines, std::vector<bool>(shape.num_prompts, true), budget);
}

WinRateResult win_rate_vs_chosen(const PolicyParams& policy, const PreferenceDataset& ds,
                                 const GroundTruthReward& gt, std::uint64_t budget) {
  check_shapes(policy, gt.shape());
  const auto& shape = policy.shape();
  std::vector<std::size_t> counts(shape.num_prompts, 0);
  for (const auto& tr : ds.triplets) ++counts.at(tr.prompt_id);
  std::vector<SortedBaseline> baselines(shape.num_prompts);
  for (const auto& tr : ds.triplets) {
    baselines[tr.prompt_id].add(true_reward(gt, tr.prompt_id, tr.chosen),
                                1.0 / static_cast<double>(counts[tr.prompt_id]));
  }
  std::vector<bool> active(shape.num_prompts);
  for (std::size_t x = 0; x < shape.num_prompts; ++x) {
    baselines[x].finalize();
    active[x] = counts[x] > 0;
  }
  return duel(policy, gt, baselines, active, budget);
}

nlohmann::ordered_json to_json(const WinRateResult& r) {
  nlohmann::ordered_json j;
  j["win_rate"] = r.win_rate;
  j["tie_rate"] = r.tie_rate;
  j["per_prompt"] = r.per_prompt;
  j["method"] = r.method == WinRateMethod::Exact ? "exact" : "monte_carlo";
  if (r.method == WinRateMethod::MonteCarlo) j["mc_samples"] = r.mc_samples;
  if (r.fell_back) j["fell_back"] = true;
  return j;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw InvalidInput("percentile of empty list");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

DiscrepancyHistogram make_histogram(std::span<const double> values, std::size_t bins) {
  if (values.empty()) throw InvalidInput("histogram: no samples");
  if (bins == 0) throw InvalidInput("histogram: bins must be >= 1");
  DiscrepancyHistogram h;
  auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
  double lo = *mn_it;
  double hi = *mx_it;
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / static_cast<double>(bins);
  h.bin_edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) h.bin_edges[b] = lo + width * static_cast<double>(b);
  h.bin_edges.back() = hi;
  h.counts.assign(bins, 0);
  for (double v : values) {
    auto b = static_cast<std::size_t>(std::floor((v - lo) / width));
    b = std::min(b, bins - 1);
    ++h.counts[b];
  }
  h.mean = mean(values);
  h.std = population_std(values);
  std::vector<double> copy(values.begin(), values.end());
  h.p05 = percentile(copy, 0.05);
  h.p95 = percentile(std::move(copy), 0.95);
  return h;
}

DiscrepancyHistogram discrepancy_histogram(const PolicyParams& theta, const PolicyParams& ref,
                                           const PreferenceDataset& ds, double beta0,
                                           std::size_t bins) {
  if (ds.empty()) throw InvalidInput("discrepancy_histogram: empty dataset");
  std::vector<double> ms;
  ms.reserve(ds.size());
  for (const auto& tr : ds.triplets) ms.push_back(implicit_discrepancy(theta, ref, tr, beta0));
  return make_histogram(ms, bins);
}

std::string histogram_csv(const DiscrepancyHistogram& h) {
  std::ostringstream os;
  os << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    os << format_double(h.bin_edges[b]) << ',' << format_double(h.bin_edges[b + 1]) << ','
       << h.counts[b] << '\n';
  }
  return os.str();
}

DatasetStats dataset_stats(const PreferenceDataset& ds) {
  DatasetStats s;
  s.n = ds.size();
  double sum_low = 0.0;
  double sum_high = 0.0;
  std::size_t better = 0;
  for (const auto& tr : ds.triplets) {
    const double gap = tr.meta.true_reward_chosen - tr.meta.true_reward_rejected;
    if (tr.meta.gap_class == GapClass::HighGap) {
      ++s.n_high_gap;
      sum_high += std::abs(gap);
    } else {
      sum_low += std::abs(gap);
    }
    if (tr.meta.label_flipped) ++s.n_flipped;
    if (gap > 0) ++better;
  }
  const std::size_t n_low = s.n - s.n_high_gap;
  s.mean_abs_gap_low = n_low ? sum_low / static_cast<double>(n_low) : 0.0;
  s.mean_abs_gap_high = s.n_high_gap ? sum_high / static_cast<double>(s.n_high_gap) : 0.0;
  s.chosen_better_rate = s.n ? static_cast<double>(better) / static_cast<double>(s.n) : 0.0;
  return s;
}

nlohmann::ordered_json to_json(const DatasetStats& s) {
  nlohmann::ordered_json j;
  j["n"] = s.n;
  j["n_high_gap"] = s.n_high_gap;
  j["n_flipped"] = s.n_flipped;
  j["mean_abs_gap_low"] = s.mean_abs_gap_low;
  j["mean_abs_gap_high"] = s.mean_abs_gap_high;
  j["chosen_better_rate"] = s.chosen_better_rate;
  return j;
}

}  // namespace betadpo
