// Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "betadpo/calibration.hpp"
#include "betadpo/evaluator.hpp"
#include "betadpo/filter.hpp"
#include "betadpo/harness.hpp"
#include "betadpo/io.hpp"
#include "betadpo/loss.hpp"
#include "betadpo/policy.hpp"
#include "betadpo/synth.hpp"
#include "betadpo/trainer.hpp"

namespace fs = std::filesystem;
using namespace betadpo;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

PolicyParams random_policy(const ModelShape& shape, Rng& rng, double scale = 1.0) {
  PolicyParams p(shape);
  for (double& v : p.logits.values()) v = scale * standard_normal(rng);
  return p;
}

Tensor3 random_direction(const ModelShape& shape, Rng& rng) {
  Tensor3 d(shape);
  for (double& v : d.values()) v = standard_normal(rng);
  return d;
}

PolicyParams shifted(const PolicyParams& p, const Tensor3& d, double eps) {
  PolicyParams q = p;
  auto qv = q.logits.values();
  auto dv = d.values();
  for (std::size_t i = 0; i < qv.size(); ++i) qv[i] += eps * dv[i];
  return q;
}

double dot(const Tensor3& a, const Tensor3& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

double rel_err(double fd, double an) { return std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}); }

// ---------------------------------------------------------------------------

Outcome reduction_identity() {
  GenConfig gen;
  gen.n_triplets = 200 * 64;
  gen.mixture_ratio = 0.3;
  gen.flip_prob = 0.05;
  const auto ds = generate(gen, make_ground_truth(gen.shape, gen.seed));

  TrainConfig cfg;
  cfg.beta = plain_dpo_config(0.1);
  cfg.beta.rho = 1.0;

  // Reference loop: SFT init, mean DPO gradient per batch, textbook Adam.
  auto theta = fit_sft(ds, cfg.sft_smoothing);
  const auto ref = theta;
  std::vector<double> m(theta.logits.size(), 0.0), v(theta.logits.size(), 0.0);
  std::vector<PolicyParams> trajectory;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::uint64_t t = 0;
  for (const auto& idx : plan_epoch(ds.size(), cfg, 0).batches) {
    std::vector<double> g(theta.logits.size(), 0.0);
    for (auto i : idx) {
      const auto s = dpo_loss_single(theta, ref, ds.triplets[i], 0.1);
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += s.grad.values()[j];
    }
    for (double& x : g) x /= static_cast<double>(idx.size());
    ++t;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    auto th = theta.logits.values();
    for (std::size_t j = 0; j < g.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      th[j] -= cfg.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
    }
    trajectory.push_back(theta);
  }

  auto state = init_from_sft(ds, cfg);
  std::size_t first_mismatch = 0;
  for (std::uint64_t s = 1; s <= trajectory.size(); ++s) {
    TrainOptions opts;
    opts.stop_at_step = s;
    state = resume(ds, cfg, std::move(state), opts).state;
    if (!first_mismatch && !(state.theta == trajectory[s - 1])) first_mismatch = s;
  }
  Outcome o;
  o.pass = trajectory.size() == 200 && state.step == 200 && first_mismatch == 0;
  o.detail = "steps=" + std::to_string(trajectory.size()) +
             (first_mismatch ? " first mismatch at step " + std::to_string(first_mismatch) : " bit-identical");
  return o;
}

Outcome gradient_check() {
  auto rng = make_rng(20);
  const ModelShape shape{};
  GenConfig gen;
  gen.n_triplets = 512;
  gen.mixture_ratio = 0.5;
  gen.flip_prob = 0.1;
  const auto ds = generate(gen, make_ground_truth(shape, 3));
  const double h = 1e-5;
  double worst_single = 0.0;
  double worst_batch = 0.0;
  const std::size_t probes = 64;

  for (std::size_t p = 0; p < probes; ++p) {
    const auto theta = random_policy(shape, rng);
    const auto ref = random_policy(shape, rng);
    const auto& tr = ds.triplets[uniform_index(rng, ds.size())];
    const double beta = 0.05 + 0.5 * uniform01(rng);
    const auto d = random_direction(shape, rng);
    const auto an = dot(dpo_loss_single(theta, ref, tr, beta).grad, d);
    const double fd = (dpo_loss_single(shifted(theta, d, h), ref, tr, beta).loss -
                       dpo_loss_single(shifted(theta, d, -h), ref, tr, beta).loss) /
                      (2 * h);
    worst_single = std::max(worst_single, rel_err(fd, an));
  }

  BetaConfig cfg;
  cfg.mode = CalibrationMode::Instance;
  for (std::size_t p = 0; p < probes; ++p) {
    cfg.mode = p % 2 ? CalibrationMode::Batch : CalibrationMode::Instance;
    const auto theta = random_policy(shape, rng, 0.5);
    const auto ref = random_policy(shape, rng, 0.5);
    const std::size_t start = uniform_index(rng, ds.size() - 64);
    const std::span<const Triplet> batch(ds.triplets.data() + start, 64);
    auto stats = initial_stats(cfg);
    auto step = beta_dpo_batch(theta, ref, batch, cfg, stats, rng);
    const auto& res = step.result;
    const auto& kept = res.filter.kept_indices;
    const auto d = random_direction(shape, rng);
    const double an = dot(res.grad, d);
    const double fd = (mean_loss_over(shifted(theta, d, h), ref, batch, kept, res.per_sample_beta).first -
                       mean_loss_over(shifted(theta, d, -h), ref, batch, kept, res.per_sample_beta).first) /
                      (2 * h);
    worst_batch = std::max(worst_batch, rel_err(fd, an));
  }
  Outcome o;
  o.pass = worst_single < 1e-5 && worst_batch < 1e-5;
  o.detail = "probes=" + std::to_string(probes) + "+" + std::to_string(probes) + " max rel err single=" +
             num(worst_single) + " batch=" + num(worst_batch);
  return o;
}

Outcome calibration_arithmetic() {
  std::vector<std::string> failures;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };
  const RunningStats at_zero{0.0, 1.0, 0.9, true};
  BetaConfig cfg;
  cfg.beta0 = 0.1;
  cfg.alpha = 0.6;
  const std::vector<double> one{1.0};
  expect(std::abs(effective_beta(cfg, at_zero, one).beta_batch - 0.16) < 1e-15, "0.16 example");
  const std::vector<double> low{-20.0};
  const auto clamped = effective_beta(cfg, at_zero, low);
  expect(std::abs(clamped.beta_batch - 0.01) < 1e-15 && clamped.clamp_count == 1, "clamp example");

  // Recursions against a long-double oracle.
  auto rng = make_rng(30);
  RunningStats s = initial_stats(cfg);
  long double M0 = 0, sigma = 0;
  bool first = true;
  double worst = 0.0;
  for (int step = 0; step < 500; ++step) {
    std::vector<double> batch(1 + uniform_index(rng, 64));
    const double centre = 3 * standard_normal(rng);
    for (double& x : batch) x = centre + 2 * standard_normal(rng);
    long double mu = 0;
    for (double x : batch) mu += x;
    mu /= batch.size();
    long double sq = 0;
    for (double x : batch) sq += (x - mu) * (x - mu);
    const long double sd = std::sqrt(sq / batch.size());
    const long double m = cfg.momentum;
    if (first) {
      M0 = mu;
      sigma = std::max<long double>(sd, kSigmaMin);
      first = false;
    } else {
      M0 = m * M0 + (1 - m) * mu;
      sigma = std::max<long double>(m * sigma + (1 - m) * sd, kSigmaMin);
    }
    s = update_stats(s, batch);
    worst = std::max({worst, static_cast<double>(std::abs(s.M0 - M0)), static_cast<double>(std::abs(s.sigma - sigma))});
  }
  expect(worst < 1e-12, "recursion error " + num(worst));

  cfg.alpha = 0.0;
  std::size_t off = 0;
  for (auto mode : {CalibrationMode::Batch, CalibrationMode::Instance, CalibrationMode::Population}) {
    cfg.mode = mode;
    for (int i = 0; i < 1000; ++i) {
      std::vector<double> batch(64);
      const double centre = 5 * standard_normal(rng);
      for (double& x : batch) x = centre + 3 * standard_normal(rng);
      const RunningStats st{standard_normal(rng), 1.0, 0.9, true};
      const auto b = effective_beta(cfg, st, batch);
      bool ok = b.beta_batch == cfg.beta0;
      if (b.per_instance) {
        for (double v : *b.per_instance) ok = ok && v == cfg.beta0;
      }
      off += ok ? 0 : 1;
    }
  }
  expect(off == 0, std::to_string(off) + " alpha=0 batches off beta0");

  Outcome o;
  o.pass = failures.empty();
  o.detail = "recursion max err=" + num(worst) + " alpha0 batches=3000";
  for (const auto& f : failures) o.detail += "; " + f;
  return o;
}

Outcome filter_contracts() {
  auto rng = make_rng(40);
  std::size_t bad_card = 0, dupes = 0;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t n = 1 + uniform_index(rng, 128);
    const double rho = 0.01 + 0.99 * uniform01(rng);
    std::vector<double> M(n);
    for (double& x : M) x = 2 * standard_normal(rng);
    const auto out = select_gaussian(M, 0.0, 1.0 + uniform01(rng), rho, rng);
    const auto& k = out.kept_indices;
    bad_card += k.size() == std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(rho * n))) ? 0 : 1;
    for (std::size_t j = 1; j < k.size(); ++j) dupes += k[j] <= k[j - 1] ? 1 : 0;
  }

  const std::size_t n = 64, reps = 10000;
  const double rho = 0.8;
  std::vector<std::size_t> freq(n, 0);
  const std::vector<double> flat(n, 0.5);
  for (std::size_t r = 0; r < reps; ++r) {
    for (auto i : select_gaussian(flat, 0.0, 1.0, rho, rng).kept_indices) ++freq[i];
  }
  const double sd = std::sqrt(rho * (1 - rho) / reps);
  double worst_z = 0.0;
  for (auto f : freq) worst_z = std::max(worst_z, std::abs(static_cast<double>(f) / reps - rho) / sd);

  std::size_t outlier_kept = 0;
  for (std::size_t r = 0; r < reps; ++r) {
    std::vector<double> M(n);
    for (double& x : M) x = standard_normal(rng);
    M[0] = 10.0;
    const auto k = select_gaussian(M, 0.0, 1.0, rho, rng).kept_indices;
    outlier_kept += std::binary_search(k.begin(), k.end(), std::size_t{0}) ? 1 : 0;
  }
  const double outlier_rate = static_cast<double>(outlier_kept) / reps;

  Outcome o;
  o.pass = bad_card == 0 && dupes == 0 && worst_z <= 4.0 && outlier_rate < 0.05;
  o.detail = "cardinality errors=" + std::to_string(bad_card) + " duplicates=" + std::to_string(dupes) +
             " max |z| uniform=" + num(worst_z) + " outlier keep rate=" + num(outlier_rate);
  return o;
}

// ---------------------------------------------------------------------------

struct Sweep {
  ResultsTable table;
  double max_cell_seconds = 0.0;
};

Sweep run_fresh_sweep(SweepSpec spec, const fs::path& dir) {
  fs::remove_all(dir);
  spec.outputs_dir = dir;
  spec.replicates = 5;
  spec.workers = std::max(1u, std::thread::hardware_concurrency());
  Sweep s;
  s.table = run_sweep(spec);
  std::istringstream timings(read_text_file(dir / "timings.csv"));
  std::string line;
  std::getline(timings, line);
  while (std::getline(timings, line)) {
    const auto comma = line.rfind(',');
    if (comma != std::string::npos) s.max_cell_seconds = std::max(s.max_cell_seconds, std::stod(line.substr(comma + 1)));
  }
  return s;
}

std::string errors_of(const ResultsTable& t) {
  std::size_t n = 0;
  for (const auto& r : t.rows) n += r.error.empty() ? 0 : 1;
  return n ? " errors=" + std::to_string(n) : "";
}

Outcome gap_direction(const fs::path& work) {
  SweepSpec low;
  low.base_gen.mixture_ratio = 0.0;
  low.base_gen.flip_prob = 0.0;
  low.axes = {{"train.beta0", {"0.05", "0.5"}}};
  SweepSpec high = low;
  high.base_gen.mixture_ratio = 0.8;
  high.base_gen.flip_prob = 0.05;
  const auto a = run_fresh_sweep(low, work / "c5_low");
  const auto b = run_fresh_sweep(high, work / "c5_high");

  const std::vector<std::string> group{"train.beta0"};
  const std::vector<std::pair<std::string, std::string>> cmp{{"train.beta0=0.05", "train.beta0=0.5"}};
  const auto sl = report(a.table, group, cmp);
  const auto sh = report(b.table, group, cmp);
  const auto& cl = sl.comparisons.front();
  const auto& ch = sh.comparisons.front();
  const bool low_ok = cl.mean_diff > 0 && cl.a_better >= 4;
  const bool high_ok = ch.mean_diff < 0 && ch.b_better >= 4;
  const double slowest = std::max(a.max_cell_seconds, b.max_cell_seconds);
  Outcome o;
  o.pass = low_ok && high_ok && slowest <= 60.0;
  o.detail = "low gap: beta0=0.05 " + num(sl.cell("train.beta0=0.05").mean_win) + " vs 0.5 " +
             num(sl.cell("train.beta0=0.5").mean_win) + " (small wins " + std::to_string(cl.a_better) +
             "/5); high gap: 0.05 " + num(sh.cell("train.beta0=0.05").mean_win) + " vs 0.5 " +
             num(sh.cell("train.beta0=0.5").mean_win) + " (large wins " + std::to_string(ch.b_better) +
             "/5); slowest run " + num(slowest) + "s" + errors_of(a.table) + errors_of(b.table);
  return o;
}

Outcome component_ablation(const fs::path& work) {
  SweepSpec spec;
  spec.base_gen.mixture_ratio = 0.3;
  spec.base_gen.flip_prob = 0.05;
  spec.axes = {{"train.alpha", {"0", "0.6"}}, {"train.filter", {"none", "gaussian"}}};
  const auto s = run_fresh_sweep(spec, work / "c6");
  const std::vector<std::string> group{"train.alpha", "train.filter"};
  const auto r = report(s.table, group);
  const double plain = r.cell("train.alpha=0;train.filter=none").mean_win;
  const double dyn = r.cell("train.alpha=0.6;train.filter=none").mean_win;
  const double filt = r.cell("train.alpha=0;train.filter=gaussian").mean_win;
  const double full = r.cell("train.alpha=0.6;train.filter=gaussian").mean_win;
  Outcome o;
  o.pass = full >= std::max(dyn, filt) && std::max(dyn, filt) >= plain && full > plain;
  o.detail = "beta-dpo=" + num(full) + " dynamic-only=" + num(dyn) + " filter-only=" + num(filt) +
             " dpo=" + num(plain) + errors_of(s.table);
  return o;
}

Outcome calibration_levels(const fs::path& work) {
  SweepSpec spec;
  spec.base_gen.mixture_ratio = 0.4;
  spec.base_gen.flip_prob = 0.05;
  spec.axes = {{"train.mode", {"batch", "population", "instance"}}};
  const auto s = run_fresh_sweep(spec, work / "c7");
  const std::vector<std::string> group{"train.mode"};
  const auto r = report(s.table, group);
  const double batch = r.cell("train.mode=batch").mean_win;
  const double pop = r.cell("train.mode=population").mean_win;
  const double inst = r.cell("train.mode=instance").mean_win;
  Outcome o;
  o.pass = batch > pop && pop > inst;
  o.detail = "batch=" + num(batch) + " population=" + num(pop) + " instance=" + num(inst) + errors_of(s.table);
  return o;
}

Outcome dispersion_growth() {
  GenConfig common;
  common.mixture_ratio = 0.0;
  const auto gt = make_ground_truth(common.shape, common.seed);
  const auto base = generate(common, gt);
  const auto trained = train(base, TrainConfig{}).state;

  std::vector<double> stds;
  for (double mix : {0.1, 0.2, 0.3, 0.4}) {
    GenConfig g = common;
    g.mixture_ratio = mix;
    stds.push_back(discrepancy_histogram(trained.theta, trained.ref, generate(g, gt), 0.1, 30).std);
  }
  Outcome o;
  o.pass = std::is_sorted(stds.begin(), stds.end());
  o.detail = "std by mixture 0.1..0.4:";
  for (double s : stds) o.detail += " " + num(s);
  return o;
}

Outcome fixed_threshold(const fs::path& work) {
  SweepSpec spec;
  spec.base_gen.mixture_ratio = 0.3;
  spec.base_gen.flip_prob = 0.05;
  spec.axes = {{"train.fixed_M0", {"none", "0", "1", "3"}}};
  const auto s = run_fresh_sweep(spec, work / "c9");
  const std::vector<std::string> group{"train.fixed_M0"};
  const auto r = report(s.table, group);
  const double moving = r.cell("train.fixed_M0=none").mean_win;
  const double f0 = r.cell("train.fixed_M0=0").mean_win;
  const double f1 = r.cell("train.fixed_M0=1").mean_win;
  const double f3 = r.cell("train.fixed_M0=3").mean_win;
  Outcome o;
  o.pass = moving >= std::max({f0, f1, f3}) - 0.01;
  o.detail = "moving=" + num(moving) + " fixed0=" + num(f0) + " fixed1=" + num(f1) + " fixed3=" + num(f3) +
             errors_of(s.table);
  return o;
}

Outcome determinism(const fs::path& work) {
  std::vector<std::string> failures;
  GenConfig gen;
  gen.n_triplets = 2048;
  gen.mixture_ratio = 0.3;
  gen.flip_prob = 0.05;
  const auto gt = make_ground_truth(gen.shape, gen.seed);
  auto dataset_bytes = [&] {
    std::ostringstream os;
    write_jsonl(os, generate(gen, gt));
    return os.str();
  };
  if (dataset_bytes() != dataset_bytes()) failures.push_back("dataset bytes differ");
  const auto ds = generate(gen, gt);

  TrainConfig cfg;
  cfg.epochs = 2;
  auto run_into = [&](const fs::path& dir, std::optional<std::uint64_t> stop) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    TrainOptions opts;
    opts.checkpoint_dir = dir;
    opts.stop_at_step = stop;
    const auto res = train(ds, cfg, opts);
    write_metrics_csv(dir / "metrics.csv", res.reports);
    return res;
  };
  run_into(work / "c10_a", std::nullopt);
  run_into(work / "c10_b", std::nullopt);
  if (read_text_file(work / "c10_a/checkpoint.json") != read_text_file(work / "c10_b/checkpoint.json")) {
    failures.push_back("checkpoint bytes differ");
  }
  if (read_text_file(work / "c10_a/metrics.csv") != read_text_file(work / "c10_b/metrics.csv")) {
    failures.push_back("metrics bytes differ");
  }

  const auto part = run_into(work / "c10_c", 37);
  auto state = load_checkpoint(work / "c10_c/checkpoint.json");
  TrainOptions opts;
  opts.checkpoint_dir = work / "c10_c";
  const auto rest = resume(ds, cfg, std::move(state), opts);
  auto reports = part.reports;
  reports.insert(reports.end(), rest.reports.begin(), rest.reports.end());
  write_metrics_csv(work / "c10_c/metrics.csv", reports);
  if (read_text_file(work / "c10_a/checkpoint.json") != read_text_file(work / "c10_c/checkpoint.json")) {
    failures.push_back("resumed checkpoint differs");
  }
  if (read_text_file(work / "c10_a/metrics.csv") != read_text_file(work / "c10_c/metrics.csv")) {
    failures.push_back("resumed metrics differ");
  }

  Outcome o;
  o.pass = failures.empty();
  o.detail = failures.empty() ? "datasets, checkpoints, metrics and resume byte-identical" : "";
  for (const auto& f : failures) o.detail += (o.detail.empty() ? "" : "; ") + f;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  fs::path work = fs::temp_directory_path() / "betadpo_acceptance";
  std::vector<int> only;
  app.add_option("--work-dir", work, "Scratch directory for sweeps and checkpoints");
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::err);
  fs::create_directories(work);

  struct Criterion {
    int id;
    std::string name;
    double limit_s;  // 0: none
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "reduction identity", 30, reduction_identity},
      {2, "gradient correctness", 60, gradient_check},
      {3, "calibration arithmetic", 0, calibration_arithmetic},
      {4, "filter contracts", 60, filter_contracts},
      {5, "beta vs gap direction", 0, [&] { return gap_direction(work); }},
      {6, "component ablation ordering", 25 * 60, [&] { return component_ablation(work); }},
      {7, "calibration level ordering", 15 * 60, [&] { return calibration_levels(work); }},
      {8, "dispersion grows with mixture", 5 * 60, dispersion_growth},
      {9, "moving vs fixed threshold", 20 * 60, [&] { return fixed_threshold(work); }},
      {10, "determinism and resume", 0, [&] { return determinism(work); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.limit_s > 0 && secs >= c.limit_s) {
      o.pass = false;
      o.detail += " (over time limit " + num(c.limit_s) + "s)";
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s criterion %d (%s): %s [%.2fs]\n", o.pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
