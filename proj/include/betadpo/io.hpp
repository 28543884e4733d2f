#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "betadpo/types.hpp"

namespace betadpo {

// Dataset JSONL.
//
// Line 1 is a header {"P":..,"T":..,"V":..,"generator_digest":..}; every
// following line is one triplet:
//   {"prompt_id":0,"chosen":[..],"rejected":[..],
//    "meta":{"gap_class":"low","label_flipped":false,"r_chosen":..,"r_rejected":..}}
// Doubles are written in shortest round-trip form, so read(write(ds)) == ds.

void write_jsonl(std::ostream& os, const PreferenceDataset& ds);
PreferenceDataset read_jsonl(std::istream& is);

void write_dataset_file(const std::filesystem::path& path, const PreferenceDataset& ds);
PreferenceDataset read_dataset_file(const std::filesystem::path& path);

// Tensor files (policy checkpoints and ground-truth rewards share this layout):
//   {"format":"betadpo-tensor-v1","kind":"policy","P":4,"T":4,"V":8,"values":[...]}
// with `values` row-major over [prompt][position][token].

nlohmann::ordered_json tensor_to_json(const Tensor3& t, std::string_view kind);
Tensor3 tensor_from_json(const nlohmann::json& j, std::string_view expected_kind);

// Whole-file helpers. Throw IoError on open/parse failure.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view contents);
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::ordered_json& j);

}  // namespace betadpo
