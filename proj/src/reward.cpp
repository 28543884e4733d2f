#include "betadpo/reward.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "betadpo/io.hpp"

namespace betadpo {

double true_reward(const GroundTruthReward& gt, std::size_t prompt_id, const ResponseSeq& resp) {
  const auto& shape = gt.shape();
  if (prompt_id >= shape.num_prompts) throw InvalidInput("true_reward: prompt_id out of range");
  check_response(shape, resp);
  double r = 0.0;
  for (std::size_t t = 0; t < shape.seq_len; ++t) r += gt.weights(prompt_id, t, resp.tokens[t]);
  return r;
}

void save_reward(const std::filesystem::path& path, const GroundTruthReward& gt) {
  write_json_file(path, tensor_to_json(gt.weights, "reward"));
}

GroundTruthReward load_reward(const std::filesystem::path& path) {
  return {tensor_from_json(read_json_file(path), "reward")};
}

double log_ratio_margin(const PolicyParams& theta, const PolicyParams& ref, const Triplet& triplet) {
  if (!(theta.shape() == ref.shape())) throw InvalidInput("policy and reference shapes differ");
  const auto th = log_prob_pair(theta, triplet);
  const auto rf = log_prob_pair(ref, triplet);
  return (th.logp_chosen - rf.logp_chosen) - (th.logp_rejected - rf.logp_rejected);
}

double implicit_discrepancy(const PolicyParams& theta, const PolicyParams& ref,
                            const Triplet& triplet, double beta0) {
  if (!(beta0 > 0.0)) throw InvalidInput("implicit_discrepancy: beta0 must be > 0");
  if (!(theta.shape() == ref.shape())) throw InvalidInput("policy and reference shapes differ");
  const auto th = log_prob_pair(theta, triplet);
  const auto rf = log_prob_pair(ref, triplet);
  const double m = beta0 * (th.logp_chosen - rf.logp_chosen) - beta0 * (th.logp_rejected - rf.logp_rejected);
  if (!std::isfinite(m)) throw NumericError("implicit_discrepancy: non-finite value");
  return m;
}

double explicit_discrepancy(const ExplicitScores& scores, std::size_t index) {
  auto it = scores.entries.find(index);
  if (it == scores.entries.end()) {
    throw LookupError("explicit scores: no entry for index " + std::to_string(index));
  }
  return it->second.score_chosen - it->second.score_rejected;
}

ExplicitScores read_explicit_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  ExplicitScores out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto idx = j.at("index").get<std::size_t>();
      ScorePair p{j.at("score_chosen").get<double>(), j.at("score_rejected").get<double>()};
      if (!out.entries.emplace(idx, p).second) {
        throw IoError(path.string() + ":" + std::to_string(lineno) + ": duplicate index");
      }
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_explicit_scores(const std::filesystem::path& path, const ExplicitScores& scores) {
  std::ostringstream os;
  for (const auto& [idx, p] : scores.entries) {
    nlohmann::ordered_json j;
    j["index"] = idx;
    j["score_chosen"] = p.score_chosen;
    j["score_rejected"] = p.score_rejected;
    os << j.dump() << '\n';
  }
  write_text_file(path, os.str());
}

}  // namespace betadpo
