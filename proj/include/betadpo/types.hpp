#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "betadpo/common.hpp"

namespace betadpo {

using Token = std::uint32_t;

/// Default cap on V^T for anything that enumerates the full response space.
inline constexpr std::uint64_t kDefaultEnumerationBudget = std::uint64_t{1} << 20;

struct ModelShape {
  std::size_t num_prompts = 4;  // P
  std::size_t seq_len = 4;      // T
  std::size_t vocab_size = 8;   // V

  /// Number of distinct responses per prompt, saturating at UINT64_MAX.
  std::uint64_t response_space() const;
  std::size_t tensor_size() const { return num_prompts * seq_len * vocab_size; }
  /// Throws InvalidInput unless P >= 1, T >= 1, V >= 2.
  void check() const;

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

/// Dense [prompt][position][token] tensor of doubles, row-major.
class Tensor3 {
 public:
  Tensor3() = default;
  explicit Tensor3(const ModelShape& shape, double fill = 0.0)
      : shape_(shape), data_(shape.tensor_size(), fill) {}
  Tensor3(const ModelShape& shape, std::vector<double> values);

  const ModelShape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::size_t offset(std::size_t prompt, std::size_t pos, std::size_t tok = 0) const {
    return (prompt * shape_.seq_len + pos) * shape_.vocab_size + tok;
  }
  double& operator()(std::size_t prompt, std::size_t pos, std::size_t tok) {
    return data_[offset(prompt, pos, tok)];
  }
  double operator()(std::size_t prompt, std::size_t pos, std::size_t tok) const {
    return data_[offset(prompt, pos, tok)];
  }

  std::span<double> row(std::size_t prompt, std::size_t pos) {
    return {data_.data() + offset(prompt, pos), shape_.vocab_size};
  }
  std::span<const double> row(std::size_t prompt, std::size_t pos) const {
    return {data_.data() + offset(prompt, pos), shape_.vocab_size};
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool all_finite() const;
  double l2_norm() const;

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  ModelShape shape_{};
  std::vector<double> data_;
};

using Gradient = Tensor3;

struct ResponseSeq {
  std::vector<Token> tokens;

  friend bool operator==(const ResponseSeq&, const ResponseSeq&) = default;
};

/// Throws InvalidInput if `resp` does not have length T with every token < V.
void check_response(const ModelShape& shape, const ResponseSeq& resp);

enum class GapClass { LowGap, HighGap };

std::string_view to_string(GapClass g);
GapClass parse_gap_class(std::string_view s);

struct TripletMeta {
  GapClass gap_class = GapClass::LowGap;
  bool label_flipped = false;
  double true_reward_chosen = 0.0;
  double true_reward_rejected = 0.0;

  friend bool operator==(const TripletMeta&, const TripletMeta&) = default;
};

/// One preference record. chosen == rejected is allowed.
struct Triplet {
  std::size_t prompt_id = 0;
  ResponseSeq chosen;
  ResponseSeq rejected;
  TripletMeta meta;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

struct PreferenceDataset {
  ModelShape shape;
  std::vector<Triplet> triplets;
  std::string generator_config_digest;

  bool empty() const { return triplets.empty(); }
  std::size_t size() const { return triplets.size(); }

  friend bool operator==(const PreferenceDataset&, const PreferenceDataset&) = default;
};

/// Every invariant violation, one human-readable line each. Never throws.
std::vector<std::string> validate_dataset(const PreferenceDataset& ds);

}  // namespace betadpo
