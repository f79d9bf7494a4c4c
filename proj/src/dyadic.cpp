#include "shimer/dyadic.hpp"

#include <cmath>

#include "shimer/error.hpp"

namespace shimer {

mpz_class Dyadic::to_mpz(std::uint64_t v) {
  static_assert(sizeof(unsigned long) == 8, "expects LP64");
  return mpz_class(static_cast<unsigned long>(v));
}

Dyadic::Dyadic(mpz_class numerator, std::uint64_t exponent)
    : num_(std::move(numerator)), exp_(exponent) {
  canonicalize();
}

void Dyadic::canonicalize() {
  if (num_ == 0) {
    exp_ = 0;
    return;
  }
  auto tz = mpz_scan1(num_.get_mpz_t(), 0);
  auto drop = std::min<std::uint64_t>(tz, exp_);
  if (drop) {
    mpz_tdiv_q_2exp(num_.get_mpz_t(), num_.get_mpz_t(), drop);
    exp_ -= drop;
  }
}

Dyadic Dyadic::from_double(double x) {
  require(std::isfinite(x), "dyadic from non-finite double");
  int e = 0;
  double m = std::frexp(x, &e);  // x = m * 2^e, 0.5 <= |m| < 1
  mpz_class num(std::ldexp(m, 53));  // exact: 53-bit mantissa
  std::int64_t exp = 53 - static_cast<std::int64_t>(e);
  if (exp < 0) {
    mpz_mul_2exp(num.get_mpz_t(), num.get_mpz_t(), static_cast<unsigned long>(-exp));
    exp = 0;
  }
  return Dyadic(num, static_cast<std::uint64_t>(exp));
}

mpz_class Dyadic::scaled_to(std::uint64_t target) const {
  require(target >= exp_, "cannot scale a dyadic to a coarser denominator");
  mpz_class out;
  mpz_mul_2exp(out.get_mpz_t(), num_.get_mpz_t(), target - exp_);
  return out;
}

double Dyadic::to_double() const {
  long e = 0;
  double m = mpz_get_d_2exp(&e, num_.get_mpz_t());
  return std::ldexp(m, static_cast<int>(e - static_cast<long>(exp_)));
}

std::string Dyadic::to_ratio_string() const {
  return num_.get_str() + "/2^" + std::to_string(exp_);
}

std::string Dyadic::to_binary_string(std::size_t max_bits) const {
  mpz_class whole;
  mpz_tdiv_q_2exp(whole.get_mpz_t(), num_.get_mpz_t(), exp_);
  std::string out = whole.get_str() + ".";
  for (std::size_t i = 1; i <= std::min<std::uint64_t>(max_bits, exp_); ++i) {
    out.push_back(mpz_tstbit(num_.get_mpz_t(), exp_ - i) ? '1' : '0');
  }
  return out;
}

namespace {

std::uint64_t common_exponent(const Dyadic& a, const Dyadic& b) {
  return std::max(a.exponent(), b.exponent());
}

}  // namespace

Dyadic operator+(const Dyadic& a, const Dyadic& b) {
  auto e = common_exponent(a, b);
  return Dyadic(a.scaled_to(e) + b.scaled_to(e), e);
}

Dyadic operator-(const Dyadic& a, const Dyadic& b) {
  auto e = common_exponent(a, b);
  return Dyadic(a.scaled_to(e) - b.scaled_to(e), e);
}

Dyadic operator*(const Dyadic& a, const Dyadic& b) {
  return Dyadic(a.num_ * b.num_, a.exp_ + b.exp_);
}

Dyadic Dyadic::shifted_left(std::uint64_t k) const {
  if (k <= exp_) return Dyadic(num_, exp_ - k);
  mpz_class n;
  mpz_mul_2exp(n.get_mpz_t(), num_.get_mpz_t(), k - exp_);
  return Dyadic(n, 0);
}

std::strong_ordering operator<=>(const Dyadic& a, const Dyadic& b) {
  auto e = common_exponent(a, b);
  int c = cmp(a.scaled_to(e), b.scaled_to(e));
  if (c < 0) return std::strong_ordering::less;
  if (c > 0) return std::strong_ordering::greater;
  return std::strong_ordering::equal;
}

Interval::Interval(Dyadic lo, Dyadic hi) : lo_(std::move(lo)), hi_(std::move(hi)) {
  require(Dyadic::zero() <= lo_ && lo_ < hi_ && hi_ <= Dyadic::one(),
          "interval must satisfy 0 <= lo < hi <= 1");
}

std::string_view to_string(StepKind kind) {
  switch (kind) {
    case StepKind::Inside: return "inside";
    case StepKind::Wrapped: return "wrapped";
    case StepKind::Split: return "split";
  }
  return "?";
}

Interval compose(const Interval& outer, const Interval& inner) {
  Dyadic len = outer.length();
  return Interval(outer.lo() + inner.lo() * len, outer.lo() + inner.hi() * len);
}

StepCase shift_and_classify(const Interval& composed, const Dyadic& offset,
                            const Interval& outer) {
  require(outer.contains(composed), "composed interval must lie inside outer");
  Dyadic len = outer.length();
  require(Dyadic::zero() <= offset && offset < len, "offset must lie in [0, len(outer))");

  Dyadic lo = composed.lo() - offset;
  Dyadic hi = composed.hi() - offset;
  if (lo >= outer.lo()) return {StepKind::Inside, Interval(lo, hi)};
  if (hi <= outer.lo()) return {StepKind::Wrapped, Interval(lo + len, hi + len)};
  return {StepKind::Split, std::nullopt};
}

PrefixResult extract_prefix(const Interval& iv) {
  std::uint64_t w = common_exponent(iv.lo(), iv.hi());
  mpz_class lo = iv.lo().scaled_to(w);
  mpz_class last = iv.hi().scaled_to(w) - 1;  // largest grid point inside
  mpz_class diff = lo ^ last;
  std::uint64_t differing = diff == 0 ? 0 : mpz_sizeinbase(diff.get_mpz_t(), 2);
  std::uint64_t n = w - differing;
  if (n == 0) return {BitString{}, iv};

  std::uint64_t keep = w - n;
  mpz_class prefix;
  mpz_tdiv_q_2exp(prefix.get_mpz_t(), lo.get_mpz_t(), keep);
  BitString bits;
  for (std::uint64_t i = n; i-- > 0;) bits.push_back(mpz_tstbit(prefix.get_mpz_t(), i));

  mpz_class base;
  mpz_mul_2exp(base.get_mpz_t(), prefix.get_mpz_t(), keep);
  return {std::move(bits),
          Interval(Dyadic(lo - base, keep), Dyadic(iv.hi().scaled_to(w) - base, keep))};
}

}  // namespace shimer
