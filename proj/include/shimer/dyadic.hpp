#pragma once

#include <gmpxx.h>

#include <compare>
#include <cstdint>
#include <optional>
#include <string>

#include "shimer/bitstring.hpp"
#include "shimer/prg.hpp"

namespace shimer {

/// Exact rational numerator / 2^exponent, kept canonical (odd numerator, or
/// zero with exponent 0). Arithmetic results may leave [0,1]; Interval is
/// where the unit range is enforced.
class Dyadic {
 public:
  Dyadic() = default;
  Dyadic(mpz_class numerator, std::uint64_t exponent);

  static Dyadic zero() { return Dyadic(); }
  static Dyadic one() { return Dyadic(1, 0); }
  /// Every finite double is a dyadic; the conversion is exact.
  static Dyadic from_double(double x);
  static Dyadic from_fraction(Fraction64 u) { return Dyadic(mpz_class(to_mpz(u.numerator)), 64); }

  const mpz_class& numerator() const noexcept { return num_; }
  std::uint64_t exponent() const noexcept { return exp_; }

  /// numerator scaled to denominator 2^target; target must be >= exponent().
  mpz_class scaled_to(std::uint64_t target) const;

  double to_double() const;
  /// Rendering as "numerator/2^W".
  std::string to_ratio_string() const;
  /// Binary expansion "0.b1b2..." (or "1.") truncated to max_bits digits.
  std::string to_binary_string(std::size_t max_bits = 64) const;

  friend Dyadic operator+(const Dyadic& a, const Dyadic& b);
  friend Dyadic operator-(const Dyadic& a, const Dyadic& b);
  friend Dyadic operator*(const Dyadic& a, const Dyadic& b);
  /// Multiplication by 2^k.
  Dyadic shifted_left(std::uint64_t k) const;

  friend bool operator==(const Dyadic& a, const Dyadic& b) {
    return a.exp_ == b.exp_ && a.num_ == b.num_;
  }
  friend std::strong_ordering operator<=>(const Dyadic& a, const Dyadic& b);

  static mpz_class to_mpz(std::uint64_t v);

 private:
  void canonicalize();

  mpz_class num_ = 0;
  std::uint64_t exp_ = 0;
};

/// Half-open [lo, hi) with 0 <= lo < hi <= 1.
class Interval {
 public:
  Interval(Dyadic lo, Dyadic hi);
  static Interval unit() { return Interval(Dyadic::zero(), Dyadic::one()); }

  const Dyadic& lo() const noexcept { return lo_; }
  const Dyadic& hi() const noexcept { return hi_; }
  Dyadic length() const { return hi_ - lo_; }
  bool contains(const Dyadic& x) const { return lo_ <= x && x < hi_; }
  bool contains(const Interval& other) const {
    return lo_ <= other.lo_ && other.hi_ <= hi_;
  }

  friend bool operator==(const Interval&, const Interval&) = default;

 private:
  Dyadic lo_;
  Dyadic hi_;
};

enum class StepKind { Inside, Wrapped, Split };

std::string_view to_string(StepKind kind);

struct StepCase {
  StepKind kind = StepKind::Split;
  /// Present for Inside and Wrapped.
  std::optional<Interval> interval;
};

/// Nests `inner` inside `outer`; the result's length is the product of lengths.
Interval compose(const Interval& outer, const Interval& inner);

/// Shifts `composed` down by `offset` and classifies it against `outer`.
/// The boundary composed.hi - offset == outer.lo resolves to Wrapped.
StepCase shift_and_classify(const Interval& composed, const Dyadic& offset,
                            const Interval& outer);

struct PrefixResult {
  BitString prefix;
  Interval renormalized;
};

/// Longest bit prefix p with iv contained in [f(p), f(p) + 2^-|p|), and iv
/// rescaled by 2^|p| around that cell.
PrefixResult extract_prefix(const Interval& iv);

}  // namespace shimer
