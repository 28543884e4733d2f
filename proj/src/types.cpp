#include "betadpo/types.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace betadpo {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::uint64_t ModelShape::response_space() const {
  std::uint64_t n = 1;
  for (std::size_t t = 0; t < seq_len; ++t) {
    if (n > std::numeric_limits<std::uint64_t>::max() / vocab_size) {
      return std::numeric_limits<std::uint64_t>::max();
    }
    n *= vocab_size;
  }
  return n;
}

void ModelShape::check() const {
  if (num_prompts < 1 || seq_len < 1 || vocab_size < 2) {
    std::ostringstream os;
    os << "invalid model shape P=" << num_prompts << " T=" << seq_len << " V=" << vocab_size
       << " (need P>=1, T>=1, V>=2)";
    throw InvalidInput(os.str());
  }
}

Tensor3::Tensor3(const ModelShape& shape, std::vector<double> values)
    : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape_.tensor_size()) {
    throw InvalidInput("tensor size " + std::to_string(data_.size()) + " does not match shape (" +
                       std::to_string(shape_.tensor_size()) + ")");
  }
}

bool Tensor3::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

double Tensor3::l2_norm() const {
  double s = 0.0;
  for (double x : data_) s += x * x;
  return std::sqrt(s);
}

void check_response(const ModelShape& shape, const ResponseSeq& resp) {
  if (resp.tokens.size() != shape.seq_len) {
    throw InvalidInput("response length " + std::to_string(resp.tokens.size()) +
                       " != T=" + std::to_string(shape.seq_len));
  }
  for (Token tok : resp.tokens) {
    if (tok >= shape.vocab_size) {
      throw InvalidInput("token id " + std::to_string(tok) +
                         " out of range for V=" + std::to_string(shape.vocab_size));
    }
  }
}

std::string_view to_string(GapClass g) { return g == GapClass::HighGap ? "high" : "low"; }

GapClass parse_gap_class(std::string_view s) {
  if (s == "low") return GapClass::LowGap;
  if (s == "high") return GapClass::HighGap;
  throw InvalidInput("unknown gap_class '" + std::string(s) + "'");
}

namespace {

void check_seq(const ModelShape& shape, const ResponseSeq& seq, std::size_t index,
               const char* which, std::vector<std::string>& out) {
  if (seq.tokens.size() != shape.seq_len) {
    out.push_back("triplet " + std::to_string(index) + ": " + which + " has length " +
                  std::to_string(seq.tokens.size()) + ", expected " +
                  std::to_string(shape.seq_len));
  }
  for (std::size_t t = 0; t < seq.tokens.size(); ++t) {
    if (seq.tokens[t] >= shape.vocab_size) {
      out.push_back("triplet " + std::to_string(index) + ": " + which + " token " +
                    std::to_string(t) + " = " + std::to_string(seq.tokens[t]) +
                    " is not < V=" + std::to_string(shape.vocab_size));
    }
  }
}

}  // namespace

std::vector<std::string> validate_dataset(const PreferenceDataset& ds) {
  std::vector<std::string> out;
  const auto& s = ds.shape;
  if (s.num_prompts < 1 || s.seq_len < 1 || s.vocab_size < 2) {
    out.push_back("shape: need P>=1, T>=1, V>=2");
  }
  for (std::size_t i = 0; i < ds.triplets.size(); ++i) {
    const auto& tr = ds.triplets[i];
    if (tr.prompt_id >= s.num_prompts) {
      out.push_back("triplet " + std::to_string(i) + ": prompt_id " +
                    std::to_string(tr.prompt_id) + " is not < P=" +
                    std::to_string(s.num_prompts));
    }
    check_seq(s, tr.chosen, i, "chosen", out);
    check_seq(s, tr.rejected, i, "rejected", out);
    if (!std::isfinite(tr.meta.true_reward_chosen) ||
        !std::isfinite(tr.meta.true_reward_rejected)) {
      out.push_back("triplet " + std::to_string(i) + ": non-finite true reward");
    }
  }
  return out;
}

}  // namespace betadpo
