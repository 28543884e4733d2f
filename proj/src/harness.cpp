#include "betadpo/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "betadpo/config.hpp"
#include "betadpo/io.hpp"

namespace betadpo {

namespace fs = std::filesystem;

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string csv_safe(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

std::string file_safe(std::string_view s) {
  std::string out;
  for (char c : s) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_' || c == '=';
    out.push_back(ok ? c : '_');
  }
  return out;
}

std::string fmt(double v) { return std::isnan(v) ? std::string("nan") : format_double(v); }

double parse_metric(std::string_view s) {
  if (trim(s) == "nan") return std::numeric_limits<double>::quiet_NaN();
  return parse_double(s);
}

BaselineKind parse_baseline(std::string_view s) {
  if (s == "sft") return BaselineKind::Sft;
  if (s == "chosen_empirical") return BaselineKind::ChosenEmpirical;
  throw InvalidInput("unknown baseline '" + std::string(s) + "' (expected sft or chosen_empirical)");
}

}  // namespace

void set_param(GenConfig& gen, TrainConfig& train, std::string_view path, std::string_view value) {
  bool known = false;
  if (path.starts_with("gen.")) {
    known = set_gen_field(gen, path.substr(4), value);
  } else if (path.starts_with("train.")) {
    known = set_train_field(train, path.substr(6), value);
  }
  if (!known) throw InvalidInput("unknown parameter path '" + std::string(path) + "'");
}

void SweepSpec::check() const {
  if (replicates < 1) throw InvalidInput("replicates must be >= 1");
  if (workers < 1) throw InvalidInput("workers must be >= 1");
  std::set<std::string> paths;
  for (const auto& ax : axes) {
    if (ax.values.empty()) throw InvalidInput("axis '" + ax.path + "' has no values");
    if (!paths.insert(ax.path).second) throw InvalidInput("axis '" + ax.path + "' repeated");
    for (const auto& v : ax.values) {
      if (v.find(',') != std::string::npos || v.find('|') != std::string::npos) {
        throw InvalidInput("axis value '" + v + "' contains a reserved character");
      }
      GenConfig g = base_gen;
      TrainConfig t = base_train;
      set_param(g, t, ax.path, v);
      try {
        g.check();
        t.check();
      } catch (const InvalidInput& e) {
        throw InvalidInput("axis " + ax.path + "=" + v + ": " + e.what());
      }
    }
  }
  base_gen.check();
  base_train.check();
}

SweepSpec parse_sweep_spec(std::string_view text, const fs::path& base_dir) {
  SweepSpec spec;
  for (const auto& kv : parse_key_values(text)) {
    try {
      if (kv.key == "outputs_dir") {
        fs::path p(kv.value);
        spec.outputs_dir = p.is_absolute() || base_dir.empty() ? p : base_dir / p;
      } else if (kv.key == "replicates") {
        spec.replicates = parse_uint(kv.value);
      } else if (kv.key == "workers") {
        spec.workers = parse_uint(kv.value);
      } else if (kv.key == "baseline") {
        spec.baseline = parse_baseline(kv.value);
      } else if (kv.key.starts_with("axis.")) {
        SweepAxis ax;
        ax.path = kv.key.substr(5);
        for (const auto& v : split(kv.value, ',')) {
          auto t = trim(v);
          if (!t.empty()) ax.values.emplace_back(t);
        }
        spec.axes.push_back(std::move(ax));
      } else {
        set_param(spec.base_gen, spec.base_train, kv.key, kv.value);
      }
    } catch (const InvalidInput& e) {
      throw InvalidInput("line " + std::to_string(kv.line) + ": " + e.what());
    }
  }
  if (spec.outputs_dir.empty()) throw InvalidInput("sweep spec: outputs_dir is required");
  spec.check();
  return spec;
}

SweepSpec load_sweep_spec(const fs::path& path) {
  try {
    return parse_sweep_spec(read_text_file(path), path.parent_path());
  } catch (const InvalidInput& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

std::vector<CellSpec> expand_cells(const SweepSpec& spec) {
  std::vector<std::vector<std::pair<std::string, std::string>>> combos{{}};
  for (const auto& ax : spec.axes) {
    std::vector<std::vector<std::pair<std::string, std::string>>> next;
    for (const auto& c : combos) {
      for (const auto& v : ax.values) {
        auto e = c;
        e.emplace_back(ax.path, v);
        next.push_back(std::move(e));
      }
    }
    combos = std::move(next);
  }
  std::vector<CellSpec> cells;
  for (const auto& combo : combos) {
    std::string label;
    for (const auto& [p, v] : combo) label += (label.empty() ? "" : ";") + p + "=" + v;
    if (label.empty()) label = "base";
    for (std::size_t r = 0; r < spec.replicates; ++r) {
      CellSpec cell;
      cell.params = combo;
      cell.replicate = r;
      cell.gen = spec.base_gen;
      cell.train = spec.base_train;
      for (const auto& [p, v] : combo) set_param(cell.gen, cell.train, p, v);
      cell.gen.seed += r;
      cell.train.seed += r;
      cell.cell_id = label + "|r=" + std::to_string(r);
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

std::string results_csv_header(std::span<const std::string> param_columns) {
  std::string h = "cell_id";
  for (const auto& c : param_columns) h += "," + c;
  h += ",replicate,gen_seed,train_seed,win_rate,tie_rate,final_loss,mean_beta,error";
  return h;
}

std::string results_csv_row(const ResultRow& r) {
  std::ostringstream os;
  os << r.cell_id;
  for (const auto& [k, v] : r.params) os << ',' << v;
  os << ',' << r.replicate << ',' << r.gen_seed << ',' << r.train_seed << ',' << fmt(r.win_rate)
     << ',' << fmt(r.tie_rate) << ',' << fmt(r.final_loss) << ',' << fmt(r.mean_beta) << ','
     << csv_safe(r.error);
  return os.str();
}

ResultsTable parse_results_csv(std::string_view text) {
  ResultsTable table;
  auto lines = split(text, '\n');
  if (lines.empty() || trim(lines[0]).empty()) throw IoError("results: missing header");
  const auto header = split(trim(lines[0]), ',');
  constexpr std::size_t kFixedTail = 8;
  if (header.size() < 1 + kFixedTail || header[0] != "cell_id") throw IoError("results: bad header");
  const std::size_t np = header.size() - 1 - kFixedTail;
  table.param_columns.assign(header.begin() + 1, header.begin() + 1 + static_cast<std::ptrdiff_t>(np));
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto line = trim(lines[li]);
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != header.size()) {
      throw IoError("results line " + std::to_string(li + 1) + ": expected " +
                    std::to_string(header.size()) + " fields");
    }
    ResultRow r;
    r.cell_id = f[0];
    for (std::size_t i = 0; i < np; ++i) r.params.emplace_back(table.param_columns[i], f[1 + i]);
    std::size_t k = 1 + np;
    r.replicate = parse_uint(f[k++]);
    r.gen_seed = parse_uint(f[k++]);
    r.train_seed = parse_uint(f[k++]);
    r.win_rate = parse_metric(f[k++]);
    r.tie_rate = parse_metric(f[k++]);
    r.final_loss = parse_metric(f[k++]);
    r.mean_beta = parse_metric(f[k++]);
    r.error = f[k++];
    table.rows.push_back(std::move(r));
  }
  return table;
}

ResultsTable read_results_csv(const fs::path& path) { return parse_results_csv(read_text_file(path)); }

CellData make_cell_data(const GenConfig& gen) {
  CellData d;
  d.ground_truth = make_ground_truth(gen.shape, gen.seed);
  d.dataset = generate(gen, d.ground_truth);
  return d;
}

CellOutcome run_cell(const CellSpec& cell, const CellData& data, BaselineKind baseline) {
  CellOutcome out;
  auto& row = out.row;
  row.cell_id = cell.cell_id;
  row.params = cell.params;
  row.replicate = cell.replicate;
  row.gen_seed = cell.gen.seed;
  row.train_seed = cell.train.seed;
  try {
    out.training = train(data.dataset, cell.train);
    const auto& st = out.training.state;
    const auto wr = baseline == BaselineKind::Sft
                        ? exact_win_rate(st.theta, st.ref, data.ground_truth)
                        : win_rate_vs_chosen(st.theta, data.dataset, data.ground_truth);
    row.win_rate = wr.win_rate;
    row.tie_rate = wr.tie_rate;
    const auto& reps = out.training.reports;
    row.final_loss = reps.empty() ? std::numeric_limits<double>::quiet_NaN() : reps.back().loss;
    double sum_beta = 0.0;
    for (const auto& r : reps) sum_beta += r.effective_beta;
    row.mean_beta = reps.empty() ? cell.train.beta.beta0 : sum_beta / static_cast<double>(reps.size());
  } catch (const std::exception& e) {
    row.error = e.what();
    row.win_rate = row.tie_rate = row.final_loss = row.mean_beta =
        std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

ResultsTable run_sweep(const SweepSpec& spec, SweepRunStats* stats,
                       std::optional<std::size_t> max_new_cells) {
  spec.check();
  const auto cells = expand_cells(spec);
  std::vector<std::string> param_columns;
  for (const auto& ax : spec.axes) param_columns.push_back(ax.path);

  fs::create_directories(spec.outputs_dir);
  const auto results_path = spec.outputs_dir / "results.csv";
  const auto timings_path = spec.outputs_dir / "timings.csv";
  std::set<std::string> done;
  if (fs::exists(results_path)) {
    const auto existing = read_results_csv(results_path);
    if (existing.param_columns != param_columns) {
      throw InvalidInput(results_path.string() + " was produced by a different sweep spec");
    }
    for (const auto& r : existing.rows) done.insert(r.cell_id);
  } else {
    write_text_file(results_path, results_csv_header(param_columns) + "\n");
    write_text_file(timings_path, "cell_id,runtime_s\n");
  }

  std::vector<const CellSpec*> pending;
  for (const auto& c : cells) {
    if (!done.contains(c.cell_id)) pending.push_back(&c);
  }
  SweepRunStats local;
  local.skipped = cells.size() - pending.size();
  if (max_new_cells && pending.size() > *max_new_cells) pending.resize(*max_new_cells);

  // Datasets are built up front on this thread, once per distinct GenConfig.
  std::map<std::string, CellData> data_cache;
  for (const auto* c : pending) {
    const auto digest = c->gen.digest();
    if (data_cache.contains(digest)) continue;
    const auto dir = spec.outputs_dir / "data" / digest;
    CellData d;
    if (fs::exists(dir / "dataset.jsonl") && fs::exists(dir / "ground_truth.json")) {
      d.dataset = read_dataset_file(dir / "dataset.jsonl");
      d.ground_truth = load_reward(dir / "ground_truth.json");
    } else {
      d = make_cell_data(c->gen);
      write_dataset_file(dir / "dataset.jsonl", d.dataset);
      save_reward(dir / "ground_truth.json", d.ground_truth);
      write_text_file(dir / "gen_config.txt", to_text(c->gen));
    }
    data_cache.emplace(digest, std::move(d));
  }

  std::vector<std::optional<ResultRow>> finished(pending.size());
  std::vector<double> runtimes(pending.size(), 0.0);
  std::size_t flushed = 0;
  std::mutex mu;
  std::atomic<std::size_t> next{0};

  auto flush_prefix = [&]() {
    std::ofstream res(results_path, std::ios::app);
    std::ofstream tim(timings_path, std::ios::app);
    while (flushed < finished.size() && finished[flushed]) {
      res << results_csv_row(*finished[flushed]) << '\n';
      tim << finished[flushed]->cell_id << ',' << format_double(runtimes[flushed]) << '\n';
      ++flushed;
    }
  };

  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= pending.size()) return;
      const auto& cell = *pending[i];
      const auto t0 = std::chrono::steady_clock::now();
      auto outcome = run_cell(cell, data_cache.at(cell.gen.digest()), spec.baseline);
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (!outcome.row.error.empty()) {
        spdlog::warn("cell {} failed: {}", cell.cell_id, outcome.row.error);
      }
      nlohmann::ordered_json summary;
      summary["cell_id"] = cell.cell_id;
      summary["gen_config"] = to_text(cell.gen);
      summary["train_config"] = to_text(cell.train);
      summary["win_rate"] = outcome.row.win_rate;
      summary["tie_rate"] = outcome.row.tie_rate;
      summary["final_loss"] = outcome.row.final_loss;
      summary["mean_beta"] = outcome.row.mean_beta;
      summary["steps"] = outcome.training.reports.size();
      summary["runtime_s"] = secs;
      if (!outcome.row.error.empty()) summary["error"] = outcome.row.error;
      write_json_file(spec.outputs_dir / "runs" / (file_safe(cell.cell_id) + ".json"), summary);

      std::lock_guard lock(mu);
      finished[i] = std::move(outcome.row);
      runtimes[i] = secs;
      flush_prefix();
    }
  };

  const std::size_t nthreads = std::min(spec.workers, std::max<std::size_t>(pending.size(), 1));
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
  }
  local.executed = pending.size();
  if (stats) *stats = local;
  return read_results_csv(results_path);
}

const CellSummary& Summary::cell(std::string_view label) const {
  for (const auto& c : cells) {
    if (c.label == label) return c;
  }
  throw InvalidInput("summary: no group '" + std::string(label) + "'");
}

double sign_test_p_value(std::size_t k, std::size_t n) {
  if (n == 0) return 1.0;
  const std::size_t tail = std::min(k, n - k);
  // log-space binomial coefficients keep large n finite.
  double p = 0.0;
  for (std::size_t i = 0; i <= tail; ++i) {
    const double log_c = std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(i) + 1) -
                         std::lgamma(static_cast<double>(n - i) + 1);
    p += std::exp(log_c - static_cast<double>(n) * std::log(2.0));
  }
  return std::min(1.0, 2.0 * p);
}

Summary report(const ResultsTable& table, std::span<const std::string> grouping,
               std::span<const std::pair<std::string, std::string>> comparisons) {
  if (table.rows.empty()) throw InvalidInput("report: empty results table");
  for (const auto& g : grouping) {
    if (std::find(table.param_columns.begin(), table.param_columns.end(), g) ==
        table.param_columns.end()) {
      throw InvalidInput("report: unknown grouping key '" + g + "'");
    }
  }
  Summary s;
  s.group_keys.assign(grouping.begin(), grouping.end());
  std::map<std::string, std::size_t> index;
  for (const auto& row : table.rows) {
    if (!row.error.empty() || std::isnan(row.win_rate)) continue;
    std::string label;
    for (const auto& g : grouping) {
      const auto it = std::find_if(row.params.begin(), row.params.end(),
                                   [&](const auto& kv) { return kv.first == g; });
      label += (label.empty() ? "" : ";") + g + "=" + it->second;
    }
    if (label.empty()) label = "all";
    auto [it, inserted] = index.emplace(label, s.cells.size());
    if (inserted) {
      s.cells.emplace_back();
      s.cells.back().label = label;
    }
    auto& c = s.cells[it->second];
    c.win_by_replicate.emplace_back(row.replicate, row.win_rate);
    c.mean_tie += row.tie_rate;
    c.mean_final_loss += row.final_loss;
    c.mean_beta += row.mean_beta;
    ++c.n;
  }
  for (auto& c : s.cells) {
    const double n = static_cast<double>(c.n);
    double sum = 0.0;
    for (const auto& [r, w] : c.win_by_replicate) sum += w;
    c.mean_win = sum / n;
    double ss = 0.0;
    for (const auto& [r, w] : c.win_by_replicate) ss += (w - c.mean_win) * (w - c.mean_win);
    c.std_win = c.n > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    c.mean_tie /= n;
    c.mean_final_loss /= n;
    c.mean_beta /= n;
  }
  for (const auto& [a, b] : comparisons) {
    const auto& ca = s.cell(a);
    const auto& cb = s.cell(b);
    Comparison cmp;
    cmp.a = a;
    cmp.b = b;
    cmp.mean_diff = ca.mean_win - cb.mean_win;
    cmp.sign = cmp.mean_diff > 0 ? 1 : (cmp.mean_diff < 0 ? -1 : 0);
    std::map<std::size_t, double> bw(cb.win_by_replicate.begin(), cb.win_by_replicate.end());
    for (const auto& [r, w] : ca.win_by_replicate) {
      auto it = bw.find(r);
      if (it == bw.end()) continue;
      if (w > it->second) ++cmp.a_better;
      else if (w < it->second) ++cmp.b_better;
      else ++cmp.ties;
    }
    cmp.sign_test_p = sign_test_p_value(cmp.a_better, cmp.a_better + cmp.b_better);
    s.comparisons.push_back(cmp);
  }
  return s;
}

std::string format_summary(const Summary& s) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "group | n | win_rate mean +- std | tie | final_loss | mean_beta\n";
  for (const auto& c : s.cells) {
    os << c.label << " | " << c.n << " | " << c.mean_win << " +- " << c.std_win << " | "
       << c.mean_tie << " | " << c.mean_final_loss << " | " << c.mean_beta << '\n';
  }
  for (const auto& cmp : s.comparisons) {
    os << cmp.a << " vs " << cmp.b << ": diff " << cmp.mean_diff << " (sign " << cmp.sign
       << "), paired " << cmp.a_better << "/" << cmp.b_better << "/" << cmp.ties
       << " (a/b/tie), sign-test p = " << cmp.sign_test_p << '\n';
  }
  return os.str();
}

}  // namespace betadpo
