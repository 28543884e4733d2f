#include "betadpo/config.hpp"

#include <charconv>
#include <set>
#include <sstream>

#include "betadpo/io.hpp"

namespace betadpo {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fixed_m0_text(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string("none");
}

}  // namespace

double parse_double(std::string_view s) {
  s = trim(s);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) {
    throw InvalidInput("not a number: '" + std::string(s) + "'");
  }
  return v;
}

std::uint64_t parse_uint(std::string_view s) {
  s = trim(s);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) {
    throw InvalidInput("not a non-negative integer: '" + std::string(s) + "'");
  }
  return v;
}

bool parse_bool(std::string_view s) {
  s = trim(s);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw InvalidInput("not a boolean: '" + std::string(s) + "'");
}

std::vector<KeyValue> parse_key_values(std::string_view text) {
  std::vector<KeyValue> out;
  std::set<std::string, std::less<>> seen;
  std::size_t lineno = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw InvalidInput("line " + std::to_string(lineno) + ": expected key = value");
    }
    KeyValue kv{std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))), lineno};
    if (kv.key.empty()) throw InvalidInput("line " + std::to_string(lineno) + ": empty key");
    if (!seen.insert(kv.key).second) {
      throw InvalidInput("line " + std::to_string(lineno) + ": duplicate key '" + kv.key + "'");
    }
    out.push_back(std::move(kv));
    if (end == text.size()) break;
  }
  return out;
}

bool set_gen_field(GenConfig& c, std::string_view k, std::string_view v) {
  if (k == "P") c.shape.num_prompts = parse_uint(v);
  else if (k == "T") c.shape.seq_len = parse_uint(v);
  else if (k == "V") c.shape.vocab_size = parse_uint(v);
  else if (k == "n_triplets") c.n_triplets = parse_uint(v);
  else if (k == "mixture_ratio") c.mixture_ratio = parse_double(v);
  else if (k == "flip_prob") c.flip_prob = parse_double(v);
  else if (k == "tau_expert") c.tau_expert = parse_double(v);
  else if (k == "tau_weak") c.tau_weak = parse_double(v);
  else if (k == "bt_scale") c.bt_scale = parse_double(v);
  else if (k == "seed") c.seed = parse_uint(v);
  else return false;
  return true;
}

bool set_train_field(TrainConfig& c, std::string_view k, std::string_view v) {
  auto& b = c.beta;
  if (k == "batch_size") c.batch_size = parse_uint(v);
  else if (k == "epochs") c.epochs = parse_uint(v);
  else if (k == "lr") c.lr = parse_double(v);
  else if (k == "adam_beta1") c.adam_beta1 = parse_double(v);
  else if (k == "adam_beta2") c.adam_beta2 = parse_double(v);
  else if (k == "adam_eps") c.adam_eps = parse_double(v);
  else if (k == "seed") c.seed = parse_uint(v);
  else if (k == "shuffle") c.shuffle = parse_bool(v);
  else if (k == "checkpoint_every") c.checkpoint_every = parse_uint(v);
  else if (k == "sft_smoothing") c.sft_smoothing = parse_double(v);
  else if (k == "beta0") b.beta0 = parse_double(v);
  else if (k == "alpha") b.alpha = parse_double(v);
  else if (k == "mode") b.mode = parse_calibration_mode(trim(v));
  else if (k == "m") b.momentum = parse_double(v);
  else if (k == "rho") b.rho = parse_double(v);
  else if (k == "factor_min") b.factor_min = parse_double(v);
  else if (k == "fixed_M0") {
    if (trim(v) == "none") b.fixed_M0.reset();
    else b.fixed_M0 = parse_double(v);
  }
  else if (k == "beta_on") b.beta_on = parse_beta_on(trim(v));
  else if (k == "filter") b.filter = parse_filter_strategy(trim(v));
  else if (k == "rank_on") b.rank_on = parse_rank_on(trim(v));
  else if (k == "exclusion") b.exclusion = parse_double(v);
  else if (k == "m_source") b.m_source = parse_discrepancy_source(trim(v));
  else if (k == "explicit_scale") b.explicit_scale = parse_double(v);
  else if (k == "explicit_shift") b.explicit_shift = parse_double(v);
  else return false;
  return true;
}

GenConfig gen_config_from_text(std::string_view text) {
  GenConfig cfg;
  for (const auto& kv : parse_key_values(text)) {
    try {
      if (!set_gen_field(cfg, kv.key, kv.value)) throw InvalidInput("unknown key '" + kv.key + "'");
    } catch (const InvalidInput& e) {
      throw InvalidInput("line " + std::to_string(kv.line) + ": " + e.what());
    }
  }
  cfg.check();
  return cfg;
}

TrainConfig train_config_from_text(std::string_view text) {
  TrainConfig cfg;
  for (const auto& kv : parse_key_values(text)) {
    try {
      if (!set_train_field(cfg, kv.key, kv.value)) throw InvalidInput("unknown key '" + kv.key + "'");
    } catch (const InvalidInput& e) {
      throw InvalidInput("line " + std::to_string(kv.line) + ": " + e.what());
    }
  }
  cfg.check();
  return cfg;
}

GenConfig load_gen_config(const std::filesystem::path& path) {
  try {
    return gen_config_from_text(read_text_file(path));
  } catch (const InvalidInput& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  try {
    return train_config_from_text(read_text_file(path));
  } catch (const InvalidInput& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

std::string to_text(const GenConfig& c) { return c.canonical(); }

std::string to_text(const TrainConfig& c) {
  const auto& b = c.beta;
  std::ostringstream os;
  os << "batch_size = " << c.batch_size << "\nepochs = " << c.epochs
     << "\nlr = " << format_double(c.lr) << "\nadam_beta1 = " << format_double(c.adam_beta1)
     << "\nadam_beta2 = " << format_double(c.adam_beta2)
     << "\nadam_eps = " << format_double(c.adam_eps) << "\nseed = " << c.seed
     << "\nshuffle = " << (c.shuffle ? "true" : "false")
     << "\ncheckpoint_every = " << c.checkpoint_every
     << "\nsft_smoothing = " << format_double(c.sft_smoothing)
     << "\nbeta0 = " << format_double(b.beta0) << "\nalpha = " << format_double(b.alpha)
     << "\nmode = " << to_string(b.mode) << "\nm = " << format_double(b.momentum)
     << "\nrho = " << format_double(b.rho) << "\nfactor_min = " << format_double(b.factor_min)
     << "\nfixed_M0 = " << fixed_m0_text(b.fixed_M0) << "\nbeta_on = " << to_string(b.beta_on)
     << "\nfilter = " << to_string(b.filter) << "\nrank_on = " << to_string(b.rank_on)
     << "\nexclusion = " << format_double(b.exclusion) << "\nm_source = " << to_string(b.m_source)
     << "\nexplicit_scale = " << format_double(b.explicit_scale)
     << "\nexplicit_shift = " << format_double(b.explicit_shift) << "\n";
  return os.str();
}

}  // namespace betadpo
