#include "betadpo/io.hpp"

#include <fstream>
#include <sstream>

namespace betadpo {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

ordered_json seq_to_json(const ResponseSeq& s) {
  ordered_json arr = ordered_json::array();
  for (Token t : s.tokens) arr.push_back(t);
  return arr;
}

ResponseSeq seq_from_json(const json& j) {
  ResponseSeq s;
  s.tokens.reserve(j.size());
  for (const auto& v : j) s.tokens.push_back(v.get<Token>());
  return s;
}

}  // namespace

void write_jsonl(std::ostream& os, const PreferenceDataset& ds) {
  ordered_json header;
  header["P"] = ds.shape.num_prompts;
  header["T"] = ds.shape.seq_len;
  header["V"] = ds.shape.vocab_size;
  header["generator_digest"] = ds.generator_config_digest;
  os << header.dump() << '\n';
  for (const auto& tr : ds.triplets) {
    ordered_json rec;
    rec["prompt_id"] = tr.prompt_id;
    rec["chosen"] = seq_to_json(tr.chosen);
    rec["rejected"] = seq_to_json(tr.rejected);
    ordered_json meta;
    meta["gap_class"] = std::string(to_string(tr.meta.gap_class));
    meta["label_flipped"] = tr.meta.label_flipped;
    meta["r_chosen"] = tr.meta.true_reward_chosen;
    meta["r_rejected"] = tr.meta.true_reward_rejected;
    rec["meta"] = std::move(meta);
    os << rec.dump() << '\n';
  }
}

PreferenceDataset read_jsonl(std::istream& is) {
  PreferenceDataset ds;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
    try {
      if (!have_header) {
        ds.shape.num_prompts = j.at("P").get<std::size_t>();
        ds.shape.seq_len = j.at("T").get<std::size_t>();
        ds.shape.vocab_size = j.at("V").get<std::size_t>();
        ds.generator_config_digest = j.value("generator_digest", std::string{});
        have_header = true;
        continue;
      }
      Triplet tr;
      tr.prompt_id = j.at("prompt_id").get<std::size_t>();
      tr.chosen = seq_from_json(j.at("chosen"));
      tr.rejected = seq_from_json(j.at("rejected"));
      const auto& meta = j.at("meta");
      tr.meta.gap_class = parse_gap_class(meta.at("gap_class").get<std::string>());
      tr.meta.label_flipped = meta.at("label_flipped").get<bool>();
      tr.meta.true_reward_chosen = meta.at("r_chosen").get<double>();
      tr.meta.true_reward_rejected = meta.at("r_rejected").get<double>();
      ds.triplets.push_back(std::move(tr));
    } catch (const json::exception& e) {
      throw IoError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_header) throw IoError("dataset: missing header line");
  if (const auto issues = validate_dataset(ds); !issues.empty()) throw InvalidInput("dataset: " + issues.front());
  return ds;
}

void write_dataset_file(const std::filesystem::path& path, const PreferenceDataset& ds) {
  std::ostringstream os;
  write_jsonl(os, ds);
  write_text_file(path, os.str());
}

PreferenceDataset read_dataset_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_jsonl(in);
}

ordered_json tensor_to_json(const Tensor3& t, std::string_view kind) {
  ordered_json j;
  j["format"] = "betadpo-tensor-v1";
  j["kind"] = std::string(kind);
  j["P"] = t.shape().num_prompts;
  j["T"] = t.shape().seq_len;
  j["V"] = t.shape().vocab_size;
  ordered_json vals = ordered_json::array();
  for (double v : t.values()) vals.push_back(v);
  j["values"] = std::move(vals);
  return j;
}

Tensor3 tensor_from_json(const json& j, std::string_view expected_kind) {
  try {
    if (j.at("format").get<std::string>() != "betadpo-tensor-v1") {
      throw IoError("unsupported tensor format");
    }
    const auto kind = j.at("kind").get<std::string>();
    if (kind != expected_kind) {
      throw IoError("tensor kind '" + kind + "', expected '" + std::string(expected_kind) + "'");
    }
    ModelShape shape{j.at("P").get<std::size_t>(), j.at("T").get<std::size_t>(),
                     j.at("V").get<std::size_t>()};
    shape.check();
    auto values = j.at("values").get<std::vector<double>>();
    return Tensor3(shape, std::move(values));
  } catch (const json::exception& e) {
    throw IoError(std::string("tensor: ") + e.what());
  }
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Readers never observe a partially written file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

json read_json_file(const std::filesystem::path& path) {
  const auto text = read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const ordered_json& j) {
  write_text_file(path, j.dump(1) + "\n");
}

}  // namespace betadpo
