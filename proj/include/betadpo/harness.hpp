#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "betadpo/evaluator.hpp"
#include "betadpo/synth.hpp"
#include "betadpo/trainer.hpp"

namespace betadpo {

enum class BaselineKind { Sft, ChosenEmpirical };

// ----------------------------------------------------------------------------
// Sweep specification
//
//   outputs_dir = runs/fig2          # relative to the spec file
//   replicates = 5
//   workers = 1
//   baseline = sft                   # or chosen_empirical
//   gen.mixture_ratio = 0            # any GenConfig key
//   train.lr = 0.01                  # any TrainConfig / BetaConfig key
//   axis.train.beta0 = 0.05, 0.5     # one line per axis, in nesting order
//
// Replicate r adds r to both gen.seed and train.seed, so cells that differ
// only in training settings share their datasets.
// ----------------------------------------------------------------------------

struct SweepAxis {
  std::string path;  // "gen.<key>" or "train.<key>"
  std::vector<std::string> values;
};

struct SweepSpec {
  TrainConfig base_train{};
  GenConfig base_gen{};
  std::vector<SweepAxis> axes;
  std::size_t replicates = 5;
  std::filesystem::path outputs_dir;
  std::size_t workers = 1;
  BaselineKind baseline = BaselineKind::Sft;

  /// Throws InvalidInput unless every axis path names a real field and
  /// replicates >= 1.
  void check() const;
};

SweepSpec parse_sweep_spec(std::string_view text, const std::filesystem::path& base_dir = {});
SweepSpec load_sweep_spec(const std::filesystem::path& path);

/// Applies "gen.<key>" / "train.<key>" = value. Throws on an unknown path.
void set_param(GenConfig& gen, TrainConfig& train, std::string_view path, std::string_view value);

struct CellSpec {
  std::string cell_id;
  std::vector<std::pair<std::string, std::string>> params;  // axis path -> value
  std::size_t replicate = 0;
  GenConfig gen;
  TrainConfig train;
};

/// Cartesian product of the axes (first axis outermost) times replicates.
std::vector<CellSpec> expand_cells(const SweepSpec& spec);

struct ResultRow {
  std::string cell_id;
  std::vector<std::pair<std::string, std::string>> params;
  std::size_t replicate = 0;
  std::uint64_t gen_seed = 0;
  std::uint64_t train_seed = 0;
  double win_rate = 0.0;
  double tie_rate = 0.0;
  double final_loss = 0.0;
  double mean_beta = 0.0;
  std::string error;  // empty on success
};

struct ResultsTable {
  std::vector<std::string> param_columns;
  std::vector<ResultRow> rows;
};

std::string results_csv_header(std::span<const std::string> param_columns);
std::string results_csv_row(const ResultRow& row);
ResultsTable parse_results_csv(std::string_view text);
ResultsTable read_results_csv(const std::filesystem::path& path);

struct CellData {
  PreferenceDataset dataset;
  GroundTruthReward ground_truth;
};

/// Ground truth from gen.seed plus the generated dataset.
CellData make_cell_data(const GenConfig& gen);

struct CellOutcome {
  ResultRow row;
  TrainResult training;
};

/// SFT-init, train, and duel the final policy against the baseline.
CellOutcome run_cell(const CellSpec& cell, const CellData& data,
                     BaselineKind baseline = BaselineKind::Sft);

struct SweepRunStats {
  std::size_t executed = 0;
  std::size_t skipped = 0;
};

/// Runs every cell not already present in <outputs_dir>/results.csv and
/// returns the complete table. Rows are appended in cell order as they
/// finish. Cell failures are recorded in the row's error column. Wall-clock
/// times go to timings.csv so results.csv stays reproducible.
/// `max_new_cells` stops early (used to exercise resume).
ResultsTable run_sweep(const SweepSpec& spec, SweepRunStats* stats = nullptr,
                       std::optional<std::size_t> max_new_cells = std::nullopt);

// ----------------------------------------------------------------------------
// Reporting
// ----------------------------------------------------------------------------

struct CellSummary {
  std::string label;  // "key=value;key=value" over the grouping keys
  std::size_t n = 0;
  double mean_win = 0.0;
  double std_win = 0.0;  // sample std over replicates, 0 for n == 1
  double mean_tie = 0.0;
  double mean_final_loss = 0.0;
  double mean_beta = 0.0;
  std::vector<std::pair<std::size_t, double>> win_by_replicate;
};

struct Comparison {
  std::string a;
  std::string b;
  double mean_diff = 0.0;  // mean_win(a) - mean_win(b)
  int sign = 0;
  std::size_t a_better = 0;  // paired replicates where a > b
  std::size_t b_better = 0;
  std::size_t ties = 0;
  double sign_test_p = 1.0;  // two-sided
};

struct Summary {
  std::vector<std::string> group_keys;
  std::vector<CellSummary> cells;
  std::vector<Comparison> comparisons;

  const CellSummary& cell(std::string_view label) const;
};

/// Two-sided exact sign test p-value for k successes out of n.
double sign_test_p_value(std::size_t k, std::size_t n);

/// Groups successful rows by `grouping` (param columns), then evaluates each
/// (a, b) comparison between group labels paired by replicate.
Summary report(const ResultsTable& table, std::span<const std::string> grouping,
               std::span<const std::pair<std::string, std::string>> comparisons = {});

std::string format_summary(const Summary& s);

}  // namespace betadpo
