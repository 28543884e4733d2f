#include "betadpo/policy.hpp"

#include <algorithm>
#include <cmath>

#include "betadpo/io.hpp"

namespace betadpo {

namespace {

void check_prompt(const ModelShape& shape, std::size_t prompt_id) {
  if (prompt_id >= shape.num_prompts) {
    throw InvalidInput("prompt_id " + std::to_string(prompt_id) +
                       " out of range for P=" + std::to_string(shape.num_prompts));
  }
}

double log_sum_exp(std::span<const double> xs) {
  const double mx = *std::max_element(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace

void log_softmax(std::span<const double> logits, std::span<double> out) {
  const double lse = log_sum_exp(logits);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
}

void softmax(std::span<const double> logits, std::span<double> out) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    s += out[i];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] /= s;
}

double log_prob(const PolicyParams& params, std::size_t prompt_id, const ResponseSeq& resp) {
  const auto& shape = params.shape();
  check_prompt(shape, prompt_id);
  check_response(shape, resp);
  double total = 0.0;
  for (std::size_t t = 0; t < shape.seq_len; ++t) {
    const auto row = params.logits.row(prompt_id, t);
    total += row[resp.tokens[t]] - log_sum_exp(row);
  }
  return total;
}

LogProbPair log_prob_pair(const PolicyParams& params, const Triplet& triplet) {
  return {log_prob(params, triplet.prompt_id, triplet.chosen),
          log_prob(params, triplet.prompt_id, triplet.rejected)};
}

void accumulate_grad_log_prob(const PolicyParams& params, std::size_t prompt_id,
                              const ResponseSeq& resp, double scale, Gradient& out) {
  const auto& shape = params.shape();
  check_prompt(shape, prompt_id);
  check_response(shape, resp);
  if (!(out.shape() == shape)) throw InvalidInput("gradient shape mismatch");
  std::vector<double> probs(shape.vocab_size);
  for (std::size_t t = 0; t < shape.seq_len; ++t) {
    softmax(params.logits.row(prompt_id, t), probs);
    auto g = out.row(prompt_id, t);
    for (std::size_t v = 0; v < shape.vocab_size; ++v) {
      const double ind = resp.tokens[t] == v ? 1.0 : 0.0;
      g[v] += scale * (ind - probs[v]);
    }
  }
}

Gradient grad_log_prob(const PolicyParams& params, std::size_t prompt_id, const ResponseSeq& resp) {
  Gradient g(params.shape(), 0.0);
  accumulate_grad_log_prob(params, prompt_id, resp, 1.0, g);
  return g;
}

ResponseSeq sample(const PolicyParams& params, std::size_t prompt_id, Rng& rng) {
  const auto& shape = params.shape();
  check_prompt(shape, prompt_id);
  ResponseSeq out;
  out.tokens.resize(shape.seq_len);
  std::vector<double> probs(shape.vocab_size);
  for (std::size_t t = 0; t < shape.seq_len; ++t) {
    softmax(params.logits.row(prompt_id, t), probs);
    const double u = uniform01(rng);
    double acc = 0.0;
    Token pick = static_cast<Token>(shape.vocab_size - 1);
    for (std::size_t v = 0; v < shape.vocab_size; ++v) {
      acc += probs[v];
      if (u < acc) {
        pick = static_cast<Token>(v);
        break;
      }
    }
    out.tokens[t] = pick;
  }
  return out;
}

ResponseSeq response_at(const ModelShape& shape, std::uint64_t index) {
  ResponseSeq r;
  r.tokens.resize(shape.seq_len);
  for (std::size_t t = shape.seq_len; t-- > 0;) {
    r.tokens[t] = static_cast<Token>(index % shape.vocab_size);
    index /= shape.vocab_size;
  }
  return r;
}

std::vector<WeightedResponse> enumerate_distribution(const PolicyParams& params,
                                                     std::size_t prompt_id,
                                                     std::uint64_t budget) {
  const auto& shape = params.shape();
  check_prompt(shape, prompt_id);
  const std::uint64_t n = shape.response_space();
  if (n > budget) {
    throw CapacityError("response space V^T = " + std::to_string(n) +
                        " exceeds enumeration budget " + std::to_string(budget));
  }
  // Per-position log-softmax table, then one sum per sequence.
  std::vector<double> table(shape.seq_len * shape.vocab_size);
  for (std::size_t t = 0; t < shape.seq_len; ++t) {
    log_softmax(params.logits.row(prompt_id, t),
                std::span<double>(table.data() + t * shape.vocab_size, shape.vocab_size));
  }
  std::vector<WeightedResponse> out;
  out.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    ResponseSeq r = response_at(shape, i);
    double lp = 0.0;
    for (std::size_t t = 0; t < shape.seq_len; ++t) lp += table[t * shape.vocab_size + r.tokens[t]];
    out.push_back({std::move(r), std::exp(lp)});
  }
  return out;
}

PolicyParams fit_sft(const PreferenceDataset& ds, double smoothing) {
  if (ds.empty()) throw InvalidInput("fit_sft: empty dataset");
  if (!(smoothing >= 0.0) || !std::isfinite(smoothing)) {
    throw InvalidInput("fit_sft: smoothing must be a finite value >= 0");
  }
  const auto& shape = ds.shape;
  shape.check();
  Tensor3 counts(shape, 0.0);
  for (const auto& tr : ds.triplets) {
    if (tr.prompt_id >= shape.num_prompts) throw InvalidInput("fit_sft: prompt_id out of range");
    check_response(shape, tr.chosen);
    for (std::size_t t = 0; t < shape.seq_len; ++t) counts(tr.prompt_id, t, tr.chosen.tokens[t]) += 1.0;
  }
  PolicyParams out(shape);
  const double vk = static_cast<double>(shape.vocab_size) * smoothing;
  for (std::size_t x = 0; x < shape.num_prompts; ++x) {
    for (std::size_t t = 0; t < shape.seq_len; ++t) {
      auto c = counts.row(x, t);
      double total = 0.0;
      for (double v : c) total += v;
      auto dst = out.logits.row(x, t);
      if (total + vk == 0.0) {
        std::fill(dst.begin(), dst.end(), 0.0);
        continue;
      }
      const double log_norm = std::log(total + vk);
      for (std::size_t v = 0; v < shape.vocab_size; ++v) {
        const double num = c[v] + smoothing;
        dst[v] = num > 0.0 ? std::log(num) - log_norm : kZeroCountLogit;
      }
    }
  }
  return out;
}

void save_policy(const std::filesystem::path& path, const PolicyParams& params) {
  write_json_file(path, tensor_to_json(params.logits, "policy"));
}

PolicyParams load_policy(const std::filesystem::path& path) {
  return PolicyParams(tensor_from_json(read_json_file(path), "policy"));
}

}  // namespace betadpo
