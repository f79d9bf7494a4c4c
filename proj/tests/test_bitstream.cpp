#include <doctest.h>

#include <random>

#include "shimer/bitstream.hpp"
#include "support.hpp"

using namespace shimer;
using shimer::testing::error_of;

namespace {

StegoKey key_from(std::uint64_t seed) { return keygen(seed); }

BitString stream_prefix(const BitSource& s, std::size_t n) {
  BitString out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(s.bit(i));
  return out;
}

// Reference: the framed stream bit by bit from bytes and padding_bit().
BitString reference_frame(std::span<const std::uint8_t> payload, const StegoKey& key,
                          std::size_t padding) {
  BitString out;
  const auto n = static_cast<std::uint32_t>(payload.size());
  out.append_bits(n, 32);
  for (auto b : payload) out.append_bits(b, 8);
  for (std::size_t i = 0; i < padding; ++i) out.push_back(padding_bit(key, i));
  return out;
}

}  // namespace

TEST_SUITE("bitstream") {
  TEST_CASE("bit string round-trips bytes and text") {
    const std::vector<std::uint8_t> bytes = {0x00, 0xff, 0xa5, 0x3c, 0x81};
    BitString b = BitString::from_bytes(bytes);
    CHECK(b.size() == 40);
    CHECK(b.to_bytes() == bytes);
    CHECK(BitString::from_string(b.to_string()) == b);
    CHECK(b.slice(8, 16).to_string() == "11111111");

    BitString c;
    c.append_bits(0b1011, 4);
    c.push_back(true);
    CHECK(c.to_string() == "10111");
    c.flip(0);
    CHECK(c.to_string() == "00111");
  }

  TEST_CASE("bits_to_fraction truncates to the requested precision") {
    // 0101... read at 32 bits is floor(2^32 / 3) / 2^32, the truncation of 1/3.
    PeriodicBits periodic(BitString::from_string("01"));
    const Dyadic third = bits_to_fraction(stream_prefix(periodic, 32), 32);
    CHECK(third.scaled_to(32) == mpz_class(1431655765));
    CHECK(third.to_double() == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
    CHECK(third * Dyadic(3, 0) < Dyadic::one());
    CHECK(Dyadic(mpz_class(1431655766), 32) * Dyadic(3, 0) > Dyadic::one());

    CHECK(bits_to_fraction(BitString(), 16) == Dyadic::zero());
    CHECK(bits_to_fraction(BitString::from_string("1"), 1) == Dyadic(1, 1));
    // precision shorter than the bits: later bits are dropped, never rounded up.
    CHECK(bits_to_fraction(BitString::from_string("0111111"), 1) == Dyadic::zero());
  }

  TEST_CASE("bits_to_fraction range and denominator") {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 500; ++t) {
      BitString b;
      const std::size_t len = rng() % 200;
      for (std::size_t i = 0; i < len; ++i) b.push_back(rng() & 1);
      const std::uint64_t p = len == 0 ? 0 : rng() % (len + 1);
      const Dyadic x = bits_to_fraction(b, p);
      CHECK(x >= Dyadic::zero());
      CHECK(x <= Dyadic::one() - Dyadic(1, p));
      CHECK(x.exponent() <= p);
      mpz_class expected = 0;
      for (std::size_t i = 0; i < p; ++i) expected = 2 * expected + (b[i] ? 1 : 0);
      CHECK(x.scaled_to(p) == expected);
    }
  }

  TEST_CASE("prefix cells: every dyadic in the cell shares the prefix") {
    // Exhaustive for n <= 12 over the cell [f(p), f(p) + 2^-n) at resolution 2^-(n+3).
    const unsigned extra = 3;
    std::size_t mismatches = 0;
    for (unsigned n = 0; n <= 12; ++n) {
      for (std::uint64_t p = 0; p < (std::uint64_t{1} << n); ++p) {
        BitString prefix;
        prefix.append_bits(p, n);
        const Dyadic base = bits_to_fraction(prefix, n);
        for (std::uint64_t t = 0; t < (std::uint64_t{1} << extra); ++t) {
          const Dyadic x = base + Dyadic(mpz_class(static_cast<unsigned long>(t)), n + extra);
          // Canonical form drops trailing zeros; pad them back.
          std::string digits = x.to_binary_string(n + extra);
          digits.resize(2 + n + extra, '0');
          if (digits.compare(0, 2 + n, "0." + prefix.to_string()) != 0) ++mismatches;
        }
      }
    }
    CHECK(mismatches == 0);
  }

  TEST_CASE("frame_message layout") {
    const StegoKey key = key_from(1);
    FramedMessage empty = frame_message({}, key);
    CHECK(empty.header() == 0);
    CHECK(empty.frame_bits() == 32);
    for (std::uint64_t i = 0; i < 32; ++i) CHECK_FALSE(empty.bit(i));
    for (std::uint64_t i = 0; i < 200; ++i) CHECK(empty.bit(32 + i) == padding_bit(key, i));

    const std::vector<std::uint8_t> ff = {0xff};
    FramedMessage one = frame_message(ff, key);
    CHECK(one.header() == 1);
    BitString head;
    for (std::uint64_t i = 0; i < 40; ++i) head.push_back(one.bit(i));
    CHECK(head.to_string() == std::string(31, '0') + "1" + "11111111");
  }

  TEST_CASE("padding depends on the key only") {
    const std::vector<std::uint8_t> payload = {1, 2, 3, 4};
    const StegoKey a = key_from(1), b = key_from(2);
    FramedMessage fa = frame_message(payload, a), fb = frame_message(payload, b);
    for (std::uint64_t i = 0; i < fa.frame_bits(); ++i) CHECK(fa.bit(i) == fb.bit(i));
    std::size_t differ = 0;
    for (std::uint64_t i = 0; i < 256; ++i)
      differ += fa.bit(fa.frame_bits() + i) != fb.bit(fb.frame_bits() + i);
    CHECK(differ > 64);

    // Independent of the payload: same key, different payload, same padding.
    const std::vector<std::uint8_t> other = {9, 9};
    FramedMessage fo = frame_message(other, a);
    for (std::uint64_t i = 0; i < 256; ++i)
      CHECK(fo.bit(fo.frame_bits() + i) == fa.bit(fa.frame_bits() + i));
  }

  TEST_CASE("framed sources agree with the reference layout") {
    std::mt19937_64 rng(9);
    for (int t = 0; t < 40; ++t) {
      std::vector<std::uint8_t> payload(rng() % 70);
      for (auto& b : payload) b = static_cast<std::uint8_t>(rng());
      const StegoKey key = key_from(100 + t);
      FramedMessage m = frame_message(payload, key);
      const BitString ref = reference_frame(payload, key, 300);
      FramedBits raw(m);
      CHECK(stream_prefix(raw, ref.size()) == ref);
      for (std::size_t i = 0; i < ref.size(); ++i)
        if (m.bit(i) != ref[i]) FAIL("FramedMessage::bit disagrees at " << i);

      // Whitened stream: unwhiten recovers the raw frame.
      MessageStream whitened(m);
      CHECK(unwhiten(stream_prefix(whitened, ref.size()), key) == ref);
      // window() against bit-by-bit reads.
      for (int w = 0; w < 20; ++w) {
        const std::uint64_t start = rng() % 300, count = 1 + rng() % 200;
        mpz_class expected = 0;
        for (std::uint64_t i = 0; i < count; ++i) expected = 2 * expected + (whitened.bit(start + i) ? 1 : 0);
        CHECK(whitened.window(start, count) == expected);
      }
    }
  }

  TEST_CASE("materialize_pointer") {
    PeriodicBits s(BitString::from_string("01"));
    CHECK(materialize_pointer(s, 0, 8) == Dyadic(85, 8));
    CHECK(materialize_pointer(s, 2, 8) == materialize_pointer(s, 0, 8));
    CHECK(materialize_pointer(s, 1, 8) == Dyadic(170, 8));
    CHECK(materialize_pointer(s, 17, 0) == Dyadic::zero());

    const std::vector<std::uint8_t> payload = {0xab};
    const StegoKey key = key_from(3);
    FramedMessage m = frame_message(payload, key);
    // Position 32 starts the payload byte 0xab = 10101011.
    CHECK(materialize_pointer(m, 32, 8) == Dyadic(0xab, 8));
    const BitString ref = reference_frame(payload, key, 100);
    CHECK(materialize_pointer(m, 40, 64) == bits_to_fraction(ref.slice(40, 104), 64));
  }

  TEST_CASE("deframe inverts frame_message") {
    const StegoKey key = key_from(4);
    const std::vector<std::uint8_t> ab = {0xab};
    CHECK(deframe(reference_frame(ab, key, 50), key) == ab);
    CHECK(deframe(reference_frame(ab, key, 0), key) == ab);

    CHECK_ERROR(deframe(BitString::from_string(std::string(20, '0')), key), ErrorCode::Incomplete);
    BitString short_payload = reference_frame(ab, key, 0).slice(0, 38);
    CHECK_ERROR(deframe(short_payload, key), ErrorCode::Incomplete);

    BitString flipped = reference_frame(ab, key, 50);
    flipped.flip(40 + 17);
    CHECK_ERROR(deframe(flipped, key), ErrorCode::PaddingMismatch);
    // Correct bits under another key: padding disagrees.
    CHECK_ERROR(deframe(reference_frame(ab, key, 64), key_from(5)), ErrorCode::PaddingMismatch);
  }

  TEST_CASE("deframe round-trips random payloads up to 1 KiB") {
    std::mt19937_64 rng(11);
    for (int t = 0; t < 100; ++t) {
      std::vector<std::uint8_t> payload(rng() % 1025);
      for (auto& b : payload) b = static_cast<std::uint8_t>(rng());
      const StegoKey key = key_from(rng());
      FramedMessage m = frame_message(payload, key);
      MessageStream s(m);
      const std::size_t extra = rng() % 130;
      BitString whitened = stream_prefix(s, m.frame_bits() + extra);
      CHECK(deframe(unwhiten(whitened, key), key) == payload);
    }
  }

  TEST_CASE("frame length from the header") {
    BitString header;
    header.append_bits(3, 32);
    CHECK(frame_length_from_header(header) == std::optional<std::uint64_t>(56));
    CHECK_FALSE(frame_length_from_header(header.slice(0, 31)).has_value());
  }
}
