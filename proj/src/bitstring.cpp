#include "shimer/bitstring.hpp"

#include "shimer/error.hpp"

namespace shimer {

BitString BitString::from_string(std::string_view bits) {
  BitString out;
  for (char c : bits) {
    if (c != '0' && c != '1') fail(ErrorCode::BadSpec, "bit string may only contain 0 and 1");
    out.push_back(c == '1');
  }
  return out;
}

BitString BitString::from_bytes(std::span<const std::uint8_t> bytes) {
  BitString out;
  out.words_.reserve((bytes.size() + 7) / 8);
  for (auto b : bytes) out.append_bits(b, 8);
  return out;
}

void BitString::push_back(bool bit) {
  if (size_ % 64 == 0) words_.push_back(0);
  if (bit) words_.back() |= std::uint64_t{1} << (63 - size_ % 64);
  ++size_;
}

void BitString::append_bits(std::uint64_t value, unsigned count) {
  require(count <= 64, "append_bits takes at most 64 bits");
  if (count == 0) return;
  if (count < 64) value &= (std::uint64_t{1} << count) - 1;
  unsigned used = size_ % 64;
  if (used == 0) {
    words_.push_back(value << (64 - count));
  } else {
    unsigned free_bits = 64 - used;
    if (count <= free_bits) {
      words_.back() |= value << (free_bits - count);
    } else {
      unsigned spill = count - free_bits;
      words_.back() |= value >> spill;
      words_.push_back(value << (64 - spill));
    }
  }
  size_ += count;
}

void BitString::append(const BitString& other) {
  std::size_t full = other.size_ / 64;
  for (std::size_t w = 0; w < full; ++w) append_bits(other.words_[w], 64);
  unsigned rest = other.size_ % 64;
  if (rest) append_bits(other.words_[full] >> (64 - rest), rest);
}

void BitString::flip(std::size_t i) {
  require(i < size_, "bit index out of range");
  words_[i / 64] ^= std::uint64_t{1} << (63 - i % 64);
}

BitString BitString::slice(std::size_t begin, std::size_t end) const {
  require(begin <= end && end <= size_, "slice out of range");
  BitString out;
  for (std::size_t i = begin; i < end; ++i) out.push_back((*this)[i]);
  return out;
}

std::vector<std::uint8_t> BitString::to_bytes() const {
  require(size_ % 8 == 0, "bit count is not a multiple of 8");
  std::vector<std::uint8_t> out(size_ / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(words_[i / 8] >> (56 - 8 * (i % 8)));
  }
  return out;
}

std::string BitString::to_string() const {
  std::string out;
  out.reserve(size_);
  for (std::size_t i = 0; i < size_; ++i) out.push_back((*this)[i] ? '1' : '0');
  return out;
}

bool operator==(const BitString& a, const BitString& b) {
  return a.size_ == b.size_ && a.words_ == b.words_;
}

}  // namespace shimer
