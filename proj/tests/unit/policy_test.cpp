#include <doctest.h>

#include <map>
#include <numeric>

#include "betadpo/policy.hpp"
#include "test_support.hpp"

using namespace betadpo;
using betadpo::testing::random_policy;
using betadpo::testing::random_response;

namespace {

/// log prob by explicit normalization in long double.
double oracle_log_prob(const PolicyParams& p, std::size_t x, const ResponseSeq& r) {
  long double total = 0.0L;
  for (std::size_t t = 0; t < p.shape().seq_len; ++t) {
    long double z = 0.0L;
    for (std::size_t v = 0; v < p.shape().vocab_size; ++v) z += std::exp(static_cast<long double>(p.logits(x, t, v)));
    total += std::log(std::exp(static_cast<long double>(p.logits(x, t, r.tokens[t]))) / z);
  }
  return static_cast<double>(total);
}

}  // namespace

TEST_CASE("log_prob of a uniform policy") {
  PolicyParams p(ModelShape{2, 3, 4});
  const ResponseSeq r{{0, 3, 1}};
  CHECK(log_prob(p, 1, r) == doctest::Approx(3.0 * std::log(0.25)).epsilon(1e-14));
  CHECK(log_prob(p, 1, r) == doctest::Approx(-4.158883083359672).epsilon(1e-12));
}

TEST_CASE("log_prob near-deterministic") {
  PolicyParams p(ModelShape{1, 3, 4});
  const ResponseSeq r{{2, 0, 1}};
  for (std::size_t t = 0; t < 3; ++t) p.logits(0, t, r.tokens[t]) = 1e6;
  CHECK(log_prob(p, 0, r) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(log_prob(p, 0, ResponseSeq{{1, 0, 1}}) < -1e5);
}

TEST_CASE("log_prob matches explicit normalization") {
  auto rng = make_rng(1);
  const ModelShape shape{3, 5, 7};
  for (int i = 0; i < 200; ++i) {
    const auto p = random_policy(shape, rng, 2.0);
    const auto x = uniform_index(rng, shape.num_prompts);
    const auto r = random_response(shape, rng);
    const double got = log_prob(p, x, r);
    CHECK(got <= 0.0);
    CHECK(got == doctest::Approx(oracle_log_prob(p, x, r)).epsilon(1e-12));
  }
}

TEST_CASE("log_prob is invariant to per-position logit shifts") {
  auto rng = make_rng(2);
  const ModelShape shape{};
  for (int i = 0; i < 100; ++i) {
    auto p = random_policy(shape, rng);
    const auto r = random_response(shape, rng);
    const auto x = uniform_index(rng, shape.num_prompts);
    const double before = log_prob(p, x, r);
    const auto t = uniform_index(rng, shape.seq_len);
    const double c = 50.0 * standard_normal(rng);
    for (double& v : p.logits.row(x, t)) v += c;
    CHECK(std::abs(log_prob(p, x, r) - before) < 1e-10);
  }
}

TEST_CASE("log_prob rejects malformed responses") {
  PolicyParams p(ModelShape{1, 2, 3});
  CHECK_THROWS_AS(log_prob(p, 0, ResponseSeq{{0}}), InvalidInput);
  CHECK_THROWS_AS(log_prob(p, 0, ResponseSeq{{0, 3}}), InvalidInput);
  CHECK_THROWS_AS(log_prob(p, 1, ResponseSeq{{0, 0}}), InvalidInput);
}

TEST_CASE("grad_log_prob on uniform binary logits") {
  PolicyParams p(ModelShape{2, 1, 2});
  const auto g = grad_log_prob(p, 1, ResponseSeq{{1}});
  CHECK(g(1, 0, 1) == 0.5);
  CHECK(g(1, 0, 0) == -0.5);
  CHECK(g(0, 0, 0) == 0.0);
  CHECK(g(0, 0, 1) == 0.0);
}

TEST_CASE("grad_log_prob rows sum to zero and other prompts are zero") {
  auto rng = make_rng(3);
  const ModelShape shape{};
  for (int i = 0; i < 50; ++i) {
    const auto p = random_policy(shape, rng, 3.0);
    const auto x = uniform_index(rng, shape.num_prompts);
    const auto g = grad_log_prob(p, x, random_response(shape, rng));
    for (std::size_t xx = 0; xx < shape.num_prompts; ++xx) {
      for (std::size_t t = 0; t < shape.seq_len; ++t) {
        const auto row = g.row(xx, t);
        const double s = std::accumulate(row.begin(), row.end(), 0.0);
        CHECK(std::abs(s) < 1e-12);
        if (xx != x) {
          for (double v : row) CHECK(v == 0.0);
        }
      }
    }
  }
}

TEST_CASE("grad_log_prob matches central finite differences") {
  auto rng = make_rng(4);
  const ModelShape shape{};
  const double step = 1e-5;
  double worst = 0.0;
  for (int probe = 0; probe < 100; ++probe) {
    auto p = random_policy(shape, rng);
    const auto x = uniform_index(rng, shape.num_prompts);
    const auto r = random_response(shape, rng);
    const auto g = grad_log_prob(p, x, r);
    const auto t = uniform_index(rng, shape.seq_len);
    const auto v = uniform_index(rng, shape.vocab_size);
    const double orig = p.logits(x, t, v);
    p.logits(x, t, v) = orig + step;
    const double up = log_prob(p, x, r);
    p.logits(x, t, v) = orig - step;
    const double down = log_prob(p, x, r);
    const double fd = (up - down) / (2 * step);
    worst = std::max(worst, testing::rel_err(g(x, t, v), fd));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("accumulate_grad_log_prob adds a scaled gradient") {
  auto rng = make_rng(5);
  const ModelShape shape{};
  const auto p = random_policy(shape, rng);
  const auto r = random_response(shape, rng);
  Gradient acc(shape, 1.0);
  accumulate_grad_log_prob(p, 2, r, -0.25, acc);
  const auto g = grad_log_prob(p, 2, r);
  for (std::size_t i = 0; i < acc.size(); ++i) {
    CHECK(acc.values()[i] == doctest::Approx(1.0 - 0.25 * g.values()[i]).epsilon(1e-15));
  }
}

TEST_CASE("sample is deterministic per seed") {
  auto rng = make_rng(6);
  const auto p = random_policy(ModelShape{}, rng);
  auto a = make_rng(99);
  auto b = make_rng(99);
  for (int i = 0; i < 20; ++i) CHECK(sample(p, 1, a) == sample(p, 1, b));
}

TEST_CASE("sample follows near-deterministic logits") {
  PolicyParams p(ModelShape{1, 4, 5});
  const ResponseSeq target{{4, 0, 2, 2}};
  for (std::size_t t = 0; t < 4; ++t) p.logits(0, t, target.tokens[t]) = 1e6;
  auto rng = make_rng(7);
  for (int i = 0; i < 100; ++i) CHECK(sample(p, 0, rng) == target);
}

TEST_CASE("uniform sampling frequencies within 4 sigma") {
  const ModelShape shape{1, 1, 8};
  PolicyParams p(shape);
  auto rng = make_rng(8);
  const int n = 100000;
  std::vector<int> counts(shape.vocab_size, 0);
  for (int i = 0; i < n; ++i) ++counts[sample(p, 0, rng).tokens[0]];
  const double q = 1.0 / 8.0;
  const double sd = std::sqrt(n * q * (1 - q));
  for (int c : counts) CHECK(std::abs(c - n * q) < 4 * sd);
}

TEST_CASE("sample frequencies track softmax") {
  auto rng = make_rng(9);
  const ModelShape shape{1, 1, 6};
  const auto p = random_policy(shape, rng);
  std::vector<double> probs(shape.vocab_size);
  softmax(p.logits.row(0, 0), probs);
  const int n = 100000;
  std::vector<int> counts(shape.vocab_size, 0);
  for (int i = 0; i < n; ++i) ++counts[sample(p, 0, rng).tokens[0]];
  for (std::size_t v = 0; v < shape.vocab_size; ++v) {
    const double sd = std::sqrt(n * probs[v] * (1 - probs[v]));
    CHECK(std::abs(counts[v] - n * probs[v]) < 4 * sd);
  }
}

TEST_CASE("enumerate_distribution small cases") {
  PolicyParams binary(ModelShape{1, 1, 2});
  const auto d = enumerate_distribution(binary, 0);
  REQUIRE(d.size() == 2);
  CHECK(d[0].response.tokens == std::vector<Token>{0});
  CHECK(d[1].response.tokens == std::vector<Token>{1});
  CHECK(d[0].probability == 0.5);
  CHECK(d[1].probability == 0.5);

  PolicyParams three(ModelShape{1, 2, 3});
  const auto e = enumerate_distribution(three, 0);
  REQUIRE(e.size() == 9);
  for (const auto& w : e) CHECK(w.probability == doctest::Approx(1.0 / 9.0).epsilon(1e-15));
  CHECK(e[5].response == response_at(three.shape(), 5));
  CHECK(e[5].response.tokens == std::vector<Token>{1, 2});
}

TEST_CASE("enumerate_distribution normalizes and matches log_prob") {
  auto rng = make_rng(10);
  const ModelShape shape{};
  for (int i = 0; i < 5; ++i) {
    const auto p = random_policy(shape, rng, 2.0);
    for (std::size_t x = 0; x < shape.num_prompts; ++x) {
      const auto d = enumerate_distribution(p, x);
      REQUIRE(d.size() == 4096);
      double s = 0.0;
      for (const auto& w : d) s += w.probability;
      CHECK(std::abs(s - 1.0) < 1e-10);
      for (std::size_t k = 0; k < d.size(); k += 257) {
        CHECK(d[k].probability == doctest::Approx(std::exp(log_prob(p, x, d[k].response))).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("enumerate_distribution enforces the budget") {
  PolicyParams p(ModelShape{1, 8, 8});
  CHECK_THROWS_AS(enumerate_distribution(p, 0, 1000), CapacityError);
}

TEST_CASE("fit_sft degenerate MLE") {
  const ModelShape shape{2, 3, 4};
  PreferenceDataset ds;
  ds.shape = shape;
  const ResponseSeq s{{3, 1, 0}};
  for (int i = 0; i < 5; ++i) ds.triplets.push_back(Triplet{0, s, ResponseSeq{{0, 0, 0}}, {}});
  const auto p = fit_sft(ds, 0.0);
  CHECK(p.logits.all_finite());
  CHECK(std::exp(log_prob(p, 0, s)) == 1.0);
  // Prompt 1 has no data: uniform fallback.
  CHECK(log_prob(p, 1, s) == doctest::Approx(3 * std::log(0.25)).epsilon(1e-14));
}

TEST_CASE("fit_sft with smoothing and no data is uniform") {
  const ModelShape shape{2, 2, 5};
  PreferenceDataset ds;
  ds.shape = shape;
  ds.triplets.push_back(Triplet{0, ResponseSeq{{1, 1}}, ResponseSeq{{0, 0}}, {}});
  const auto p = fit_sft(ds, 1.0);
  std::vector<double> probs(5);
  softmax(p.logits.row(1, 0), probs);
  for (double q : probs) CHECK(q == doctest::Approx(0.2).epsilon(1e-14));
}

TEST_CASE("fit_sft matches an independent counting oracle") {
  const ModelShape shape{3, 4, 6};
  auto rng = make_rng(12);
  PreferenceDataset ds;
  ds.shape = shape;
  for (int i = 0; i < 300; ++i) ds.triplets.push_back(testing::random_triplet(shape, rng));
  const double k = 0.5;
  const auto p = fit_sft(ds, k);

  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, int> counts;
  std::map<std::size_t, int> totals;
  for (const auto& tr : ds.triplets) {
    ++totals[tr.prompt_id];
    for (std::size_t t = 0; t < shape.seq_len; ++t) ++counts[{tr.prompt_id, t, tr.chosen.tokens[t]}];
  }
  std::vector<double> probs(shape.vocab_size);
  for (std::size_t x = 0; x < shape.num_prompts; ++x) {
    for (std::size_t t = 0; t < shape.seq_len; ++t) {
      softmax(p.logits.row(x, t), probs);
      for (std::size_t v = 0; v < shape.vocab_size; ++v) {
        const double expect = (counts[{x, t, v}] + k) / (totals[x] + shape.vocab_size * k);
        CHECK(probs[v] == doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("fit_sft rejects empty data") {
  PreferenceDataset ds;
  CHECK_THROWS_AS(fit_sft(ds), InvalidInput);
}

TEST_CASE("policy checkpoint round-trip is bit-exact") {
  auto rng = make_rng(13);
  const auto p = random_policy(ModelShape{}, rng, 5.0);
  const auto dir = testing::scratch_dir("policy_roundtrip");
  save_policy(dir / "p.json", p);
  CHECK(load_policy(dir / "p.json") == p);
}
