#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace shimer {

/// Domain separation bytes for the keyed streams.
enum class Domain : std::uint8_t {
  Sampling = 0x01,
  Padding = 0x02,
  Filler = 0x03,
  Whitening = 0x04,
};

class StegoKey {
 public:
  static constexpr std::size_t kSize = 32;
  using Bytes = std::array<std::uint8_t, kSize>;

  StegoKey() = default;
  explicit StegoKey(const Bytes& bytes) : bytes_(bytes) {}

  /// Parses exactly 64 hex characters; anything else is rejected.
  static StegoKey from_hex(std::string_view hex);
  std::string to_hex() const;

  const Bytes& bytes() const noexcept { return bytes_; }

  friend bool operator==(const StegoKey&, const StegoKey&) = default;

 private:
  Bytes bytes_{};
};

/// 32 bytes from the operating system. With a seed the key is derived
/// deterministically instead (test hook).
StegoKey keygen(std::optional<std::uint64_t> seed = std::nullopt);

std::array<std::uint8_t, 32> sha256(std::span<const std::uint8_t> data);

/// Stateless evaluation of the keyed PRF: the first 8 bytes (big-endian) of
/// SHA-256(key || tag || counter_be64).
std::uint64_t prf_word(const StegoKey& key, Domain tag, std::uint64_t counter);

/// A uniform draw in [0,1) held as its 64-bit numerator over 2^64.
struct Fraction64 {
  std::uint64_t numerator = 0;

  double to_double() const noexcept {
    return static_cast<double>(numerator) * 0x1p-64;
  }
  /// floor(x * 2^64); x must lie in [0,1).
  static Fraction64 from_double(double x);

  friend auto operator<=>(const Fraction64&, const Fraction64&) = default;
};

/// Counter-indexed cursor over one domain of the keyed PRF.
class PrgStream {
 public:
  PrgStream(const StegoKey& key, Domain tag, std::uint64_t counter = 0)
      : key_(key), tag_(tag), counter_(counter) {}

  Fraction64 next_uniform();
  std::uint64_t counter() const noexcept { return counter_; }
  Domain tag() const noexcept { return tag_; }

 private:
  StegoKey key_;
  Domain tag_;
  std::uint64_t counter_;
  bool exhausted_ = false;
};

/// Bit `index` of the padding stream; 64 bits per counter value, MSB first.
bool padding_bit(const StegoKey& key, std::uint64_t index);

}  // namespace shimer
