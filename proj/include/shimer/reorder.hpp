#pragma once

#include <cstddef>
#include <vector>

#include "shimer/channel.hpp"
#include "shimer/prg.hpp"

namespace shimer {

/// order[j] is the index (into the source distribution) placed at position j.
struct Permutation {
  std::vector<std::size_t> order;

  static Permutation identity(std::size_t n);
  bool valid(std::size_t n) const;
  Permutation inverse() const;
};

/// Draw-dependent layout: heavy cells go to the boundaries, light cells end
/// up next to the draw u. Visits indices by weight (descending, ties to the
/// lower token id); an index joins the front list while
/// front_sum + w < u * 2^q, otherwise it is prepended to the back list.
Permutation reorder(const QuantizedDistribution& q, Fraction64 u);
/// Same as reorder(), writing into a caller-owned buffer.
/// `scratch` is working storage.
void reorder_into(const QuantizedDistribution& q, Fraction64 u, std::vector<std::size_t>& order,
                  std::vector<std::size_t>& scratch);

/// Same tokens and weights in permuted order with cumulative rebuilt.
QuantizedDistribution apply_permutation(const QuantizedDistribution& q, const Permutation& perm);
void apply_permutation_into(const QuantizedDistribution& q, const std::vector<std::size_t>& order,
                            QuantizedDistribution& out);

}  // namespace shimer
