#include "shimer/reorder.hpp"

#include <algorithm>
#include <numeric>

#include "shimer/error.hpp"

namespace shimer {

Permutation Permutation::identity(std::size_t n) {
  Permutation p;
  p.order.resize(n);
  std::iota(p.order.begin(), p.order.end(), 0);
  return p;
}

bool Permutation::valid(std::size_t n) const {
  if (order.size() != n) return false;
  std::vector<bool> seen(n, false);
  for (auto i : order) {
    if (i >= n || seen[i]) return false;
    seen[i] = true;
  }
  return true;
}

Permutation Permutation::inverse() const {
  Permutation inv;
  inv.order.resize(order.size());
  for (std::size_t j = 0; j < order.size(); ++j) inv.order[order[j]] = j;
  return inv;
}

void reorder_into(const QuantizedDistribution& q, Fraction64 u, std::vector<std::size_t>& order,
                  std::vector<std::size_t>& byweight) {
  const std::size_t n = q.size();
  byweight.resize(n);
  std::iota(byweight.begin(), byweight.end(), 0);
  auto heavier = [&](std::size_t a, std::size_t b) {
    if (q.weights[a] != q.weights[b]) return q.weights[a] > q.weights[b];
    return q.token_ids[a] < q.token_ids[b];
  };
  if (!std::is_sorted(byweight.begin(), byweight.end(), heavier)) {
    std::sort(byweight.begin(), byweight.end(), heavier);
  }

  // front_sum + w < u * 2^q, scaled by 2^64 so both sides are integers.
  // The front list grows from the start of `order`; prepending to the back
  // list is writing from the end towards the middle.
  const unsigned __int128 target = static_cast<unsigned __int128>(u.numerator) << q.q;
  order.resize(n);
  std::size_t front = 0;
  std::size_t back = n;
  std::uint64_t front_sum = 0;
  for (auto i : byweight) {
    auto candidate = static_cast<unsigned __int128>(front_sum + q.weights[i]) << 64;
    if (candidate < target) {
      order[front++] = i;
      front_sum += q.weights[i];
    } else {
      order[--back] = i;
    }
  }
}

Permutation reorder(const QuantizedDistribution& q, Fraction64 u) {
  Permutation perm;
  std::vector<std::size_t> scratch;
  reorder_into(q, u, perm.order, scratch);
  return perm;
}

void apply_permutation_into(const QuantizedDistribution& q, const std::vector<std::size_t>& order,
                            QuantizedDistribution& out) {
  require(order.size() == q.size(), "permutation size differs from distribution");
  const std::size_t n = q.size();
  out.q = q.q;
  out.token_ids.resize(n);
  out.weights.resize(n);
  out.cumulative.resize(n + 1);
  out.cumulative[0] = 0;
  for (std::size_t j = 0; j < n; ++j) {
    out.token_ids[j] = q.token_ids[order[j]];
    out.weights[j] = q.weights[order[j]];
    out.cumulative[j + 1] = out.cumulative[j] + out.weights[j];
  }
}

QuantizedDistribution apply_permutation(const QuantizedDistribution& q, const Permutation& perm) {
  QuantizedDistribution out;
  apply_permutation_into(q, perm.order, out);
  return out;
}

}  // namespace shimer
