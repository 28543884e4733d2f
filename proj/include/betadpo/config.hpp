#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "betadpo/synth.hpp"
#include "betadpo/trainer.hpp"

namespace betadpo {

// Config files are flat `key = value` lines; `#` starts a comment. Keys are
// the field names of GenConfig (P, T, V, n_triplets, mixture_ratio, ...) and
// of TrainConfig plus BetaConfig (batch_size, lr, beta0, alpha, mode, m, rho,
// ...). Unknown or repeated keys are errors.

struct KeyValue {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

std::vector<KeyValue> parse_key_values(std::string_view text);

/// Set one field by name. Returns false if `key` is not a field of the struct;
/// throws InvalidInput if the value does not parse.
bool set_gen_field(GenConfig& cfg, std::string_view key, std::string_view value);
bool set_train_field(TrainConfig& cfg, std::string_view key, std::string_view value);

GenConfig gen_config_from_text(std::string_view text);
TrainConfig train_config_from_text(std::string_view text);
GenConfig load_gen_config(const std::filesystem::path& path);
TrainConfig load_train_config(const std::filesystem::path& path);

/// Every field as key = value, readable back by the matching *_from_text.
std::string to_text(const GenConfig& cfg);
std::string to_text(const TrainConfig& cfg);

double parse_double(std::string_view s);
std::uint64_t parse_uint(std::string_view s);
bool parse_bool(std::string_view s);

}  // namespace betadpo
