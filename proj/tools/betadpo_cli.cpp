#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "betadpo/config.hpp"
#include "betadpo/evaluator.hpp"
#include "betadpo/harness.hpp"
#include "betadpo/io.hpp"
#include "betadpo/synth.hpp"
#include "betadpo/trainer.hpp"

namespace fs = std::filesystem;
using namespace betadpo;

namespace {

constexpr const char* kDatasetFile = "dataset.jsonl";
constexpr const char* kRewardFile = "ground_truth.json";
constexpr const char* kCheckpointFile = "checkpoint.json";

struct RunFiles {
  TrainConfig cfg;
  PreferenceDataset dataset;
  GroundTruthReward gt;
  TrainState state;
};

RunFiles load_run(const fs::path& run_dir) {
  const auto run = read_json_file(run_dir / "run.json");
  const fs::path data_dir = run.at("data").get<std::string>();
  RunFiles f;
  f.cfg = load_train_config(run_dir / "train_config.txt");
  f.dataset = read_dataset_file(data_dir / kDatasetFile);
  f.gt = load_reward(data_dir / kRewardFile);
  f.state = load_checkpoint(run_dir / kCheckpointFile);
  return f;
}

void cmd_gen_data(const fs::path& config, const fs::path& out) {
  const auto cfg = load_gen_config(config);
  const auto gt = make_ground_truth(cfg.shape, cfg.seed);
  const auto ds = generate(cfg, gt);
  fs::create_directories(out);
  write_dataset_file(out / kDatasetFile, ds);
  save_reward(out / kRewardFile, gt);
  write_text_file(out / "gen_config.txt", to_text(cfg));
  spdlog::info("wrote {} triplets to {}", ds.size(), out.string());
}

void cmd_train(const fs::path& data, const fs::path& config, const fs::path& out,
               const std::string& scores, bool resume_run) {
  const auto cfg = load_train_config(config);
  const auto ds = read_dataset_file(data / kDatasetFile);
  fs::create_directories(out);

  ExplicitScores explicit_scores;
  TrainOptions opts;
  opts.checkpoint_dir = out;
  if (!scores.empty()) {
    explicit_scores = read_explicit_scores(scores);
    opts.explicit_scores = &explicit_scores;
  }

  TrainResult result;
  const auto ckpt = out / kCheckpointFile;
  if (resume_run && fs::exists(ckpt)) {
    if (load_train_config(out / "train_config.txt") != cfg) {
      throw InvalidInput("--resume: " + out.string() + " was trained with a different config");
    }
    auto state = load_checkpoint(ckpt);
    spdlog::info("resuming at step {}", state.step);
    result = resume(ds, cfg, std::move(state), opts);
    if (fs::exists(out / "metrics.csv")) {
      std::ofstream metrics(out / "metrics.csv", std::ios::app);
      for (const auto& r : result.reports) metrics << metrics_csv_row(r) << '\n';
    } else {
      write_metrics_csv(out / "metrics.csv", result.reports);
    }
  } else {
    result = train(ds, cfg, opts);
    write_metrics_csv(out / "metrics.csv", result.reports);
  }

  write_text_file(out / "train_config.txt", to_text(cfg));
  nlohmann::ordered_json run;
  run["data"] = fs::absolute(data).lexically_normal().string();
  if (!scores.empty()) run["scores"] = fs::absolute(scores).lexically_normal().string();
  write_json_file(out / "run.json", run);

  nlohmann::ordered_json summary;
  summary["steps"] = result.state.step;
  summary["final_loss"] = result.reports.empty() ? 0.0 : result.reports.back().loss;
  double beta_sum = 0.0;
  for (const auto& r : result.reports) beta_sum += r.effective_beta;
  summary["mean_effective_beta"] =
      result.reports.empty() ? cfg.beta.beta0 : beta_sum / static_cast<double>(result.reports.size());
  summary["running_M0"] = result.state.stats.M0;
  summary["running_sigma"] = result.state.stats.sigma;
  write_json_file(out / "summary.json", summary);
  spdlog::info("trained {} steps, checkpoint at {}", result.state.step, ckpt.string());
}

void cmd_eval(const fs::path& run_dir, const std::string& baseline) {
  const auto f = load_run(run_dir);
  WinRateResult wr;
  if (baseline == "sft") {
    wr = exact_win_rate(f.state.theta, f.state.ref, f.gt);
  } else if (baseline == "chosen_empirical") {
    wr = win_rate_vs_chosen(f.state.theta, f.dataset, f.gt);
  } else {
    throw InvalidInput("unknown baseline '" + baseline + "'");
  }
  auto j = to_json(wr);
  j["baseline"] = baseline;
  write_json_file(run_dir / "eval.json", j);
  std::cout << "win_rate " << format_double(wr.win_rate) << " tie_rate " << format_double(wr.tie_rate)
            << '\n';
}

void cmd_analyze(const fs::path& run_dir, std::size_t bins) {
  const auto f = load_run(run_dir);
  const auto h = discrepancy_histogram(f.state.theta, f.state.ref, f.dataset, f.cfg.beta.beta0, bins);
  write_text_file(run_dir / "histogram.csv", histogram_csv(h));
  nlohmann::ordered_json j;
  j["mean"] = h.mean;
  j["std"] = h.std;
  j["p05"] = h.p05;
  j["p95"] = h.p95;
  j["dataset"] = to_json(dataset_stats(f.dataset));
  write_json_file(run_dir / "analysis.json", j);
  std::cout << "M mean " << format_double(h.mean) << " std " << format_double(h.std) << '\n';
}

void cmd_sweep(const fs::path& spec_path, std::optional<std::size_t> workers) {
  auto spec = load_sweep_spec(spec_path);
  if (workers) spec.workers = *workers;
  SweepRunStats stats;
  const auto table = run_sweep(spec, &stats);
  spdlog::info("sweep: {} cells run, {} already done, {} rows in {}", stats.executed, stats.skipped,
               table.rows.size(), (spec.outputs_dir / "results.csv").string());
}

void cmd_report(const fs::path& results, const std::vector<std::string>& group,
                const std::vector<std::string>& compare) {
  const auto table = read_results_csv(results);
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& c : compare) {
    const auto sep = c.find("::");
    if (sep == std::string::npos) throw InvalidInput("--compare expects A::B, got '" + c + "'");
    pairs.emplace_back(c.substr(0, sep), c.substr(sep + 2));
  }
  std::cout << format_summary(report(table, group, pairs));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference optimization with batch-calibrated beta on a synthetic toy policy"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

  fs::path config, out, data, run_dir, spec_path, results;
  std::string scores, baseline = "sft";
  std::size_t bins = 40;
  bool resume_run = false;
  std::optional<std::size_t> workers;
  std::vector<std::string> group, compare;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic preference dataset");
  gen->add_option("--config", config, "GenConfig file")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "SFT-initialize and train on a dataset");
  tr->add_option("--data", data, "Directory written by gen-data")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--config", config, "TrainConfig file")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", out, "Run directory")->required();
  tr->add_option("--scores", scores, "Explicit score JSONL for m_source = explicit")->check(CLI::ExistingFile);
  tr->add_flag("--resume", resume_run, "Continue from <out>/checkpoint.json if present");

  auto* ev = app.add_subcommand("eval", "Exact win rate of a trained run");
  ev->add_option("--run", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--baseline", baseline, "sft or chosen_empirical");

  auto* sw = app.add_subcommand("sweep", "Run (or resume) a grid sweep");
  sw->add_option("--spec", spec_path, "Sweep spec file")->required()->check(CLI::ExistingFile);
  sw->add_option("--workers", workers, "Override the spec's worker count");

  auto* an = app.add_subcommand("analyze", "Discrepancy histogram and dataset statistics");
  an->add_option("--run", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  an->add_option("--hist-bins", bins, "Histogram bins")->check(CLI::PositiveNumber);

  auto* rp = app.add_subcommand("report", "Summarize a sweep results.csv");
  rp->add_option("--results", results, "results.csv")->required()->check(CLI::ExistingFile);
  rp->add_option("--group", group, "Param columns to group by")->delimiter(',');
  rp->add_option("--compare", compare, "Group labels to compare, as A::B");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*gen) cmd_gen_data(config, out);
    else if (*tr) cmd_train(data, config, out, scores, resume_run);
    else if (*ev) cmd_eval(run_dir, baseline);
    else if (*sw) cmd_sweep(spec_path, workers);
    else if (*an) cmd_analyze(run_dir, bins);
    else if (*rp) cmd_report(results, group, compare);
  } catch (const InvalidInput& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
