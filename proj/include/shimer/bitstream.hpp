#pragma once

#include <gmpxx.h>

#include <cstdint>
#include <span>
#include <vector>

#include "shimer/bitstring.hpp"
#include "shimer/dyadic.hpp"
#include "shimer/prg.hpp"

namespace shimer {

/// A conceptually infinite secret bit stream, addressed in 64-bit words
/// (bit 0 is the most significant bit of word 0).
class BitSource {
 public:
  virtual ~BitSource() = default;
  virtual std::uint64_t word(std::uint64_t index) const = 0;

  bool bit(std::uint64_t index) const {
    return (word(index / 64) >> (63 - index % 64)) & 1;
  }
  /// The 64 bits starting at an arbitrary bit offset.
  std::uint64_t bits64(std::uint64_t start) const;
  /// Bits [start, start + count) as a non-negative integer.
  mpz_class window(std::uint64_t start, std::uint64_t count) const;
};

/// Repeats a fixed pattern forever; used for hand-traced vectors.
class PeriodicBits final : public BitSource {
 public:
  explicit PeriodicBits(BitString pattern);
  std::uint64_t word(std::uint64_t index) const override;

 private:
  BitString pattern_;
};

/// Finite bits followed by zeros.
class ZeroExtendedBits final : public BitSource {
 public:
  explicit ZeroExtendedBits(BitString bits) : bits_(std::move(bits)) {}
  std::uint64_t word(std::uint64_t index) const override;

 private:
  BitString bits_;
};

/// header (32-bit big-endian payload byte count) || payload || keyed padding.
class FramedMessage {
 public:
  static constexpr std::uint64_t kHeaderBits = 32;

  const StegoKey& key() const noexcept { return key_; }
  std::span<const std::uint8_t> frame_bytes() const noexcept { return frame_; }
  std::uint32_t header() const noexcept;
  std::span<const std::uint8_t> payload() const noexcept {
    return std::span(frame_).subspan(4);
  }
  /// Header plus payload bits; everything after is padding.
  std::uint64_t frame_bits() const noexcept { return 8 * frame_.size(); }
  bool bit(std::uint64_t index) const;

 private:
  friend FramedMessage frame_message(std::span<const std::uint8_t>, const StegoKey&);
  FramedMessage(std::vector<std::uint8_t> frame, const StegoKey& key)
      : frame_(std::move(frame)), key_(key) {}

  std::vector<std::uint8_t> frame_;
  StegoKey key_;
};

FramedMessage frame_message(std::span<const std::uint8_t> payload, const StegoKey& key);

/// Raw framed stream as a BitSource (no caching).
class FramedBits final : public BitSource {
 public:
  explicit FramedBits(const FramedMessage& message) : message_(message) {}
  std::uint64_t word(std::uint64_t index) const override;

 private:
  const FramedMessage& message_;
};

/// The stream the codec embeds: framed bits XOR the keyed whitening stream.
/// Words are cached as they are first touched, so an instance belongs to one
/// session.
class MessageStream final : public BitSource {
 public:
  explicit MessageStream(const FramedMessage& message);
  std::uint64_t word(std::uint64_t index) const override;

 private:
  std::uint64_t raw_word(std::uint64_t index) const;
  std::uint64_t padding_word(std::uint64_t index) const;

  FramedMessage message_;
  mutable std::vector<std::uint64_t> cache_;
  // Consecutive raw words share one padding block; keep the last two.
  mutable std::uint64_t pad_index_[2] = {UINT64_MAX, UINT64_MAX};
  mutable std::uint64_t pad_word_[2] = {0, 0};
};

/// XORs the keyed whitening stream into `bits` starting at stream bit 0.
BitString unwhiten(const BitString& bits, const StegoKey& key);

/// sum_{i <= min(len, precision)} b_i 2^-i, truncated, never rounded.
Dyadic bits_to_fraction(const BitString& bits, std::uint64_t precision);

/// The stream from bit `consumed` onward read as a fraction, truncated to
/// `precision` bits.
Dyadic materialize_pointer(const BitSource& stream, std::uint64_t consumed,
                           std::uint64_t precision);
Dyadic materialize_pointer(const FramedMessage& message, std::uint64_t consumed,
                           std::uint64_t precision);

/// Inverse of frame_message on extracted (unwhitened) bits. Bits past the
/// payload must match the keyed padding.
std::vector<std::uint8_t> deframe(const BitString& extracted, const StegoKey& key);

/// Number of frame bits (header + payload) once the header is available.
std::optional<std::uint64_t> frame_length_from_header(const BitString& raw);

}  // namespace shimer
