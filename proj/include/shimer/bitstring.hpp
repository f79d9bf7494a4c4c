#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace shimer {

/// Ordered bit sequence, packed MSB-first into 64-bit words.
class BitString {
 public:
  BitString() = default;

  /// Parses a string of '0'/'1' characters.
  static BitString from_string(std::string_view bits);
  static BitString from_bytes(std::span<const std::uint8_t> bytes);

  std::size_t size() const noexcept { return size_; }
  bool empty() const noexcept { return size_ == 0; }

  bool operator[](std::size_t i) const noexcept {
    return (words_[i / 64] >> (63 - i % 64)) & 1;
  }

  void push_back(bool bit);
  /// Appends the low `count` bits of `value`, most significant first.
  void append_bits(std::uint64_t value, unsigned count);
  void append(const BitString& other);
  void flip(std::size_t i);

  BitString slice(std::size_t begin, std::size_t end) const;

  /// Requires size() to be a multiple of 8.
  std::vector<std::uint8_t> to_bytes() const;
  std::string to_string() const;

  friend bool operator==(const BitString& a, const BitString& b);

 private:
  std::vector<std::uint64_t> words_;
  std::size_t size_ = 0;
};

}  // namespace shimer
