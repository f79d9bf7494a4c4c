#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include <gmpxx.h>

#include "shimer/reorder.hpp"
#include "support.hpp"

using namespace shimer;

namespace {

QuantizedDistribution make_q(std::vector<std::uint64_t> weights, unsigned q,
                             std::vector<TokenId> ids = {}) {
  QuantizedDistribution out;
  out.q = q;
  out.weights = std::move(weights);
  if (ids.empty()) {
    ids.resize(out.weights.size());
    std::iota(ids.begin(), ids.end(), 0);
  }
  out.token_ids = std::move(ids);
  out.rebuild_cumulative();
  return out;
}

// Reference reading of the list construction with exact rationals:
// front_sum + w < u * 2^q  <=>  (front_sum + w) * 2^64 < u_int * 2^q.
std::vector<std::size_t> reference_reorder(const QuantizedDistribution& q, Fraction64 u) {
  std::vector<std::size_t> idx(q.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (q.weights[a] != q.weights[b]) return q.weights[a] > q.weights[b];
    return q.token_ids[a] < q.token_ids[b];
  });
  std::vector<std::size_t> front, back;
  mpz_class sum = 0;
  const mpz_class target = mpz_class(std::to_string(u.numerator)) << q.q;
  for (auto i : idx) {
    mpz_class candidate = (sum + mpz_class(std::to_string(q.weights[i]))) << 64;
    if (candidate < target) {
      front.push_back(i);
      sum += mpz_class(std::to_string(q.weights[i]));
    } else {
      back.insert(back.begin(), i);
    }
  }
  front.insert(front.end(), back.begin(), back.end());
  return front;
}

}  // namespace

TEST_SUITE("reorder") {
  TEST_CASE("examples") {
    // Weights proportional to 0.5, 0.3, 0.2 at q = 10: 512, 307, 205.
    const QuantizedDistribution q = make_q({512, 307, 205}, 10);
    const Permutation p = reorder(q, Fraction64::from_double(0.6));
    CHECK(p.order == std::vector<std::size_t>{0, 2, 1});
    const QuantizedDistribution r = apply_permutation(q, p);
    CHECK(r.cumulative == std::vector<std::uint64_t>{0, 512, 717, 1024});
    // u = 0.6 falls in the shortest cell.
    CHECK(r.cell_at(static_cast<std::uint64_t>(0.6 * 1024)) == 1);
    CHECK(r.token_ids[1] == 2);

    // u = 0: every index is prepended, so the order is weight ascending.
    CHECK(reorder(make_q({9, 4, 2, 1}, 4), Fraction64{0}).order ==
          std::vector<std::size_t>{3, 2, 1, 0});
    CHECK(reorder(make_q({16}, 4), Fraction64::from_double(0.3)).order ==
          std::vector<std::size_t>{0});
  }

  TEST_CASE("strict comparison sends equality to the back list") {
    // front_sum + w == u * 2^q exactly: 8 == 0.5 * 16.
    const QuantizedDistribution q = make_q({8, 8}, 4);
    CHECK(reorder(q, Fraction64{std::uint64_t{1} << 63}).order ==
          std::vector<std::size_t>{1, 0});
    // Just above the boundary the heavy index joins the front.
    CHECK(reorder(q, Fraction64{(std::uint64_t{1} << 63) + 1}).order ==
          std::vector<std::size_t>{0, 1});
  }

  TEST_CASE("apply_permutation") {
    const QuantizedDistribution q = make_q({8, 5, 3}, 4);
    const QuantizedDistribution same = apply_permutation(q, Permutation::identity(3));
    CHECK(same.weights == q.weights);
    CHECK(same.cumulative == q.cumulative);

    Permutation p{{0, 2, 1}};
    const QuantizedDistribution r = apply_permutation(q, p);
    CHECK(r.weights == std::vector<std::uint64_t>{8, 3, 5});
    CHECK(r.cumulative == std::vector<std::uint64_t>{0, 8, 11, 16});

    Permutation rot{{2, 0, 1}};
    const QuantizedDistribution back = apply_permutation(apply_permutation(q, rot), rot.inverse());
    CHECK(back.weights == q.weights);
    CHECK(back.token_ids == q.token_ids);
    CHECK_ERROR(apply_permutation(q, Permutation{{0, 1}}), ErrorCode::ContractViolation);
  }

  TEST_CASE("matches the reference construction on random inputs") {
    std::mt19937_64 rng(41);
    for (int t = 0; t < 3000; ++t) {
      const unsigned q = 4 + rng() % 29;
      const std::size_t n = 1 + rng() % std::min<std::size_t>(60, std::size_t{1} << (q - 1));
      std::vector<std::uint64_t> w(n, 1);
      std::uint64_t left = (std::uint64_t{1} << q) - n;
      for (std::size_t i = 0; i + 1 < n && left > 0; ++i) {
        const std::uint64_t take = rng() % (left + 1) / 2;
        w[i] += take;
        left -= take;
      }
      w[n - 1] += left;
      // Some equal weights to exercise the id tie-break.
      if (n > 2 && rng() % 2) {
        const std::uint64_t moved = w[1] > w[0] ? w[1] - w[0] : 0;
        w[1] -= moved;
        w[n - 1] += moved;
      }
      std::vector<TokenId> ids(n);
      std::iota(ids.begin(), ids.end(), 100);
      std::shuffle(ids.begin(), ids.end(), rng);
      const QuantizedDistribution qd = make_q(w, q, ids);
      const Fraction64 u{rng()};
      const Permutation p = reorder(qd, u);
      CHECK(p.valid(n));
      CHECK(p.order == reference_reorder(qd, u));
      const QuantizedDistribution r = apply_permutation(qd, p);
      CHECK(r.cumulative.back() == qd.cumulative.back());
    }
  }
}
