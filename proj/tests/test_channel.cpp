#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "shimer/analysis.hpp"
#include "shimer/channel.hpp"
#include "support.hpp"

using namespace shimer;
using shimer::testing::fixture;

namespace {

TokenDistribution dist(std::vector<double> probs, std::vector<TokenId> ids = {}) {
  TokenDistribution d;
  if (ids.empty()) {
    ids.resize(probs.size());
    std::iota(ids.begin(), ids.end(), 0);
  }
  d.token_ids = std::move(ids);
  d.probs = std::move(probs);
  return d;
}

TokenDistribution random_distribution(std::mt19937_64& rng, std::size_t n) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(n);
  double sum = 0.0;
  for (auto& x : p) sum += (x = e(rng) + 1e-12);
  for (auto& x : p) x /= sum;
  std::vector<TokenId> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  std::shuffle(ids.begin(), ids.end(), rng);
  return dist(p, ids);
}

std::vector<std::uint64_t> weights_of(const QuantizedDistribution& q) { return q.weights; }

}  // namespace

TEST_SUITE("channel-model") {
  TEST_CASE("validate") {
    CHECK_NOTHROW(dist({0.5, 0.5}).validate());
    CHECK_ERROR(dist({0.5, 0.6}).validate(), ErrorCode::ContractViolation);
    CHECK_ERROR(dist({1.0, 0.0}).validate(), ErrorCode::ContractViolation);
    CHECK_ERROR(dist({0.5, 0.5}, {3, 3}).validate(), ErrorCode::ContractViolation);
  }

  TEST_CASE("top_k_truncate") {
    const TokenDistribution d = dist({0.5, 0.3, 0.2}, {10, 11, 12});
    TokenDistribution all = top_k_truncate(d, 5);
    CHECK(all.token_ids == d.token_ids);
    for (std::size_t i = 0; i < 3; ++i) CHECK(all.probs[i] == doctest::Approx(d.probs[i]));

    TokenDistribution two = top_k_truncate(d, 2);
    CHECK(two.token_ids == std::vector<TokenId>{10, 11});
    CHECK(two.probs[0] == doctest::Approx(0.625));
    CHECK(two.probs[1] == doctest::Approx(0.375));

    TokenDistribution tie = top_k_truncate(dist({0.4, 0.4, 0.2}, {9, 4, 1}), 1);
    CHECK(tie.token_ids == std::vector<TokenId>{4});
    CHECK(tie.probs[0] == 1.0);

    // Kept entries stay in their original order.
    TokenDistribution mixed = top_k_truncate(dist({0.1, 0.4, 0.05, 0.3, 0.15}), 3);
    CHECK(mixed.token_ids == std::vector<TokenId>{1, 3, 4});
    CHECK_ERROR(top_k_truncate(d, 0), ErrorCode::ContractViolation);
  }

  TEST_CASE("quantize examples") {
    CHECK(weights_of(quantize(dist({0.7, 0.3}), 4)) == std::vector<std::uint64_t>{11, 5});
    CHECK(weights_of(quantize(dist({0.25, 0.25, 0.25, 0.25}), 4)) ==
          std::vector<std::uint64_t>{4, 4, 4, 4});
    CHECK(weights_of(quantize(dist({0.999, 0.001}), 4)) == std::vector<std::uint64_t>{15, 1});
    // Equal remainders: the lower list index wins the leftover unit.
    CHECK(weights_of(quantize(dist({1.0 / 3, 1.0 / 3, 1.0 / 3}), 4)) ==
          std::vector<std::uint64_t>{6, 5, 5});
    const QuantizedDistribution q = quantize(dist({0.7, 0.3}), 4);
    CHECK(q.cumulative == std::vector<std::uint64_t>{0, 11, 16});
    CHECK(q.cell_at(0) == 0);
    CHECK(q.cell_at(10) == 0);
    CHECK(q.cell_at(11) == 1);
    CHECK(q.cell_at(15) == 1);
    CHECK(q.index_of(1) == std::optional<std::size_t>(1));
    CHECK_FALSE(q.index_of(7).has_value());

    CHECK_ERROR(quantize(dist({0.2, 0.2, 0.2, 0.2, 0.2}), 2), ErrorCode::TooManyTokens);
    CHECK_ERROR(quantize(dist({0.5, 0.5}), 1), ErrorCode::ContractViolation);
    CHECK_ERROR(quantize(dist({0.5, 0.5}), 33), ErrorCode::ContractViolation);
  }

  TEST_CASE("quantize invariants on random distributions") {
    std::mt19937_64 rng(31);
    for (int t = 0; t < 2000; ++t) {
      const std::size_t n = 1 + rng() % 300;
      const unsigned q = 10 + rng() % 23;
      if (n > (std::size_t{1} << q)) continue;
      const TokenDistribution d = random_distribution(rng, n);
      const QuantizedDistribution qd = quantize(d, q);
      const std::uint64_t total = std::uint64_t{1} << q;
      std::uint64_t sum = 0;
      double max_err = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(qd.weights[i] >= 1);
        sum += qd.weights[i];
        max_err = std::max(max_err, std::fabs(static_cast<double>(qd.weights[i]) / total - d.probs[i]));
      }
      CHECK(sum == total);
      CHECK(max_err <= static_cast<double>(n) / total);
      CHECK(qd.cumulative.front() == 0);
      CHECK(qd.cumulative.back() == total);
      CHECK(std::adjacent_find(qd.cumulative.begin(), qd.cumulative.end(),
                               std::greater_equal<>()) == qd.cumulative.end());
      CHECK(qd.token_ids == d.token_ids);

      // Order stability: weights per id survive a permutation of the input.
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      TokenDistribution shuffled;
      for (auto i : perm) {
        shuffled.token_ids.push_back(d.token_ids[i]);
        shuffled.probs.push_back(d.probs[i]);
      }
      const QuantizedDistribution qs = quantize(shuffled, q);
      for (std::size_t j = 0; j < n; ++j) CHECK(qs.weights[j] == qd.weights[perm[j]]);
    }
  }

  TEST_CASE("quantize is the largest-remainder apportionment when nothing is lifted") {
    // Oracle: Hamilton's method computed in exact integer arithmetic from
    // probabilities that are multiples of 2^-40.
    std::mt19937_64 rng(37);
    for (int t = 0; t < 500; ++t) {
      const std::size_t n = 2 + rng() % 20;
      const unsigned q = 8 + rng() % 8;
      std::vector<std::uint64_t> units(n, 0);
      const std::uint64_t grand = std::uint64_t{1} << 40;
      std::uint64_t left = grand;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        units[i] = grand / n / 2 + rng() % (grand / n / 2);
        left -= units[i];
      }
      units[n - 1] = left;
      std::vector<double> p(n);
      for (std::size_t i = 0; i < n; ++i) p[i] = std::ldexp(static_cast<double>(units[i]), -40);
      const QuantizedDistribution qd = quantize(dist(p), q);

      const unsigned shift = 40 - q;
      std::vector<std::uint64_t> w(n);
      std::vector<std::uint64_t> rem(n);
      std::uint64_t sum = 0;
      for (std::size_t i = 0; i < n; ++i) {
        w[i] = units[i] >> shift;
        rem[i] = units[i] & ((std::uint64_t{1} << shift) - 1);
        sum += w[i];
      }
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
      for (std::size_t j = 0; sum < (std::uint64_t{1} << q); ++j, ++sum) ++w[order[j]];
      CHECK(qd.weights == w);
    }
  }

  TEST_CASE("synthetic channels") {
    auto u4 = make_synthetic_channel("uniform:4");
    const TokenDistribution d4 = u4->next_distribution({});
    CHECK(d4.probs == std::vector<double>{0.25, 0.25, 0.25, 0.25});
    CHECK(entropy(d4) == doctest::Approx(2.0));
    CHECK(u4->model_id() == "uniform:4");

    auto z = make_synthetic_channel("zipf:1.0:3");
    const TokenDistribution dz = z->next_distribution({});
    CHECK(dz.probs[0] == doctest::Approx(6.0 / 11));
    CHECK(dz.probs[1] == doctest::Approx(3.0 / 11));
    CHECK(dz.probs[2] == doctest::Approx(2.0 / 11));

    auto tp = make_synthetic_channel("twopoint:0.75");
    CHECK(tp->next_distribution({}).probs == std::vector<double>{0.75, 0.25});

    auto m1 = make_synthetic_channel("markov:64:5");
    auto m2 = make_synthetic_channel("markov:64:5");
    auto m3 = make_synthetic_channel("markov:64:6");
    const std::vector<TokenId> h = {3, 17, 9};
    const TokenDistribution a = m1->next_distribution(h);
    CHECK(a.probs == m2->next_distribution(h).probs);
    CHECK(a.token_ids == m2->next_distribution(h).token_ids);
    CHECK(a.probs != m3->next_distribution(h).probs);
    CHECK_NOTHROW(a.validate());
    // State is the last token.
    CHECK(m1->next_distribution(std::vector<TokenId>{1, 9}).probs == a.probs);

    for (const char* bad : {"uniform", "uniform:0", "zipf:x:3", "markov:4", "twopoint:1.5",
                            "nonsense:1", "scripted:"})
      CHECK_ERROR(make_synthetic_channel(bad), ErrorCode::BadSpec);
  }

  TEST_CASE("scripted channel") {
    auto s = make_synthetic_channel("scripted:" + fixture("hello_channel.txt").string());
    const TokenDistribution d = s->next_distribution({});
    CHECK(d.token_ids == std::vector<TokenId>{7, 1});
    const QuantizedDistribution q = quantize(d, 32);
    CHECK(q.weights == std::vector<std::uint64_t>{3006477108ull, 1288490188ull});

    ScriptedChannel five = ScriptedChannel::load(fixture("five_step.txt"), 2);
    CHECK(five.script().size() == 5);
    const std::vector<TokenId> prompt = {100, 101};
    CHECK(five.next_distribution(prompt).token_ids == std::vector<TokenId>{0, 1, 2});
    const std::vector<TokenId> later = {100, 101, 0, 0, 0};
    CHECK(five.next_distribution(later).token_ids == std::vector<TokenId>{0, 1});
    CHECK_ERROR(ScriptedChannel::load(fixture("does_not_exist.txt")), ErrorCode::Io);
  }

  TEST_CASE("channel entropy matches the analysis entropy") {
    for (const char* spec : {"uniform:10", "zipf:1.3:200", "markov:128:3", "twopoint:0.6"}) {
      auto c = make_synthetic_channel(spec);
      const TokenDistribution d = c->next_distribution(std::vector<TokenId>{5});
      double h = 0.0;
      for (double p : d.probs) h -= p * std::log2(p);
      CHECK(std::fabs(entropy(d) - h) < 1e-12);
      CHECK(std::fabs(entropy_bits(d) - h) < 1e-12);
    }
  }
}
