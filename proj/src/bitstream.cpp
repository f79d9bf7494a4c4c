#include "shimer/bitstream.hpp"

#include "shimer/error.hpp"

namespace shimer {

namespace {

std::uint64_t padding_bits64(const StegoKey& key, std::uint64_t offset) {
  std::uint64_t w = offset / 64;
  unsigned shift = offset % 64;
  std::uint64_t first = prf_word(key, Domain::Padding, w);
  if (shift == 0) return first;
  return first << shift | prf_word(key, Domain::Padding, w + 1) >> (64 - shift);
}

std::uint64_t framed_word(const FramedMessage& message, std::uint64_t index) {
  auto frame = message.frame_bytes();
  std::uint64_t frame_bits = message.frame_bits();
  std::uint64_t start = 64 * index;
  if (start >= frame_bits) return padding_bits64(message.key(), start - frame_bits);

  std::uint64_t word = 0;
  std::uint64_t byte = start / 8;
  unsigned taken = 0;
  while (taken < 64 && byte < frame.size()) {
    word = word << 8 | frame[byte++];
    taken += 8;
  }
  if (taken < 64) {
    unsigned rest = 64 - taken;
    word = word << rest | padding_bits64(message.key(), 0) >> taken;
  }
  return word;
}

}  // namespace

std::uint64_t BitSource::bits64(std::uint64_t start) const {
  std::uint64_t w = start / 64;
  unsigned shift = start % 64;
  if (shift == 0) return word(w);
  return word(w) << shift | word(w + 1) >> (64 - shift);
}

mpz_class BitSource::window(std::uint64_t start, std::uint64_t count) const {
  mpz_class out;
  if (count == 0) return out;
  if (count <= 128) {
    std::uint64_t words[2] = {bits64(start), count > 64 ? bits64(start + 64) : 0};
    mpz_import(out.get_mpz_t(), 2, 1, sizeof(std::uint64_t), 0, 0, words);
    mpz_tdiv_q_2exp(out.get_mpz_t(), out.get_mpz_t(), 128 - count);
    return out;
  }
  std::size_t limbs = (count + 63) / 64;
  std::vector<std::uint64_t> words(limbs);
  for (std::size_t k = 0; k < limbs; ++k) words[k] = bits64(start + 64 * k);
  mpz_import(out.get_mpz_t(), limbs, 1, sizeof(std::uint64_t), 0, 0, words.data());
  std::uint64_t excess = 64 * limbs - count;
  if (excess) mpz_tdiv_q_2exp(out.get_mpz_t(), out.get_mpz_t(), excess);
  return out;
}

PeriodicBits::PeriodicBits(BitString pattern) : pattern_(std::move(pattern)) {
  require(!pattern_.empty(), "periodic pattern must be non-empty");
}

std::uint64_t PeriodicBits::word(std::uint64_t index) const {
  std::uint64_t out = 0;
  std::size_t period = pattern_.size();
  std::uint64_t pos = (64 * index) % period;
  for (int i = 0; i < 64; ++i) {
    out = out << 1 | pattern_[pos];
    if (++pos == period) pos = 0;
  }
  return out;
}

std::uint64_t ZeroExtendedBits::word(std::uint64_t index) const {
  std::uint64_t out = 0;
  for (std::uint64_t i = 64 * index; i < 64 * index + 64; ++i) {
    out = out << 1 | (i < bits_.size() && bits_[i]);
  }
  return out;
}

FramedMessage frame_message(std::span<const std::uint8_t> payload, const StegoKey& key) {
  if (payload.size() > UINT32_MAX) {
    fail(ErrorCode::PayloadTooLarge, "payload must be shorter than 2^32 bytes");
  }
  auto n = static_cast<std::uint32_t>(payload.size());
  std::vector<std::uint8_t> frame;
  frame.reserve(4 + payload.size());
  for (int shift = 24; shift >= 0; shift -= 8) {
    frame.push_back(static_cast<std::uint8_t>(n >> shift));
  }
  frame.insert(frame.end(), payload.begin(), payload.end());
  return FramedMessage(std::move(frame), key);
}

std::uint32_t FramedMessage::header() const noexcept {
  return static_cast<std::uint32_t>(frame_[0]) << 24 | frame_[1] << 16 | frame_[2] << 8 |
         frame_[3];
}

bool FramedMessage::bit(std::uint64_t index) const {
  if (index < frame_bits()) return (frame_[index / 8] >> (7 - index % 8)) & 1;
  return padding_bit(key_, index - frame_bits());
}

std::uint64_t FramedBits::word(std::uint64_t index) const {
  return framed_word(message_, index);
}

MessageStream::MessageStream(const FramedMessage& message) : message_(message) {
  cache_.reserve(message_.frame_bits() / 64 + 8);
}

std::uint64_t MessageStream::padding_word(std::uint64_t index) const {
  for (int i = 0; i < 2; ++i) {
    if (pad_index_[i] == index) return pad_word_[i];
  }
  int slot = index & 1;
  pad_index_[slot] = index;
  pad_word_[slot] = prf_word(message_.key(), Domain::Padding, index);
  return pad_word_[slot];
}

std::uint64_t MessageStream::raw_word(std::uint64_t index) const {
  std::uint64_t start = 64 * index;
  std::uint64_t frame_bits = message_.frame_bits();
  if (start < frame_bits) return framed_word(message_, index);
  std::uint64_t offset = start - frame_bits;
  unsigned shift = offset % 64;
  std::uint64_t first = padding_word(offset / 64);
  if (shift == 0) return first;
  return first << shift | padding_word(offset / 64 + 1) >> (64 - shift);
}

std::uint64_t MessageStream::word(std::uint64_t index) const {
  while (cache_.size() <= index) {
    std::uint64_t k = cache_.size();
    cache_.push_back(raw_word(k) ^ prf_word(message_.key(), Domain::Whitening, k));
  }
  return cache_[index];
}

BitString unwhiten(const BitString& bits, const StegoKey& key) {
  BitString out;
  std::uint64_t mask = 0;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (i % 64 == 0) mask = prf_word(key, Domain::Whitening, i / 64);
    bool white = (mask >> (63 - i % 64)) & 1;
    out.push_back(bits[i] != white);
  }
  return out;
}

Dyadic bits_to_fraction(const BitString& bits, std::uint64_t precision) {
  std::uint64_t m = std::min<std::uint64_t>(bits.size(), precision);
  return Dyadic(ZeroExtendedBits(bits).window(0, m), m);
}

Dyadic materialize_pointer(const BitSource& stream, std::uint64_t consumed,
                           std::uint64_t precision) {
  return Dyadic(stream.window(consumed, precision), precision);
}

Dyadic materialize_pointer(const FramedMessage& message, std::uint64_t consumed,
                           std::uint64_t precision) {
  return materialize_pointer(FramedBits(message), consumed, precision);
}

std::optional<std::uint64_t> frame_length_from_header(const BitString& raw) {
  if (raw.size() < FramedMessage::kHeaderBits) return std::nullopt;
  std::uint64_t length = 0;
  for (std::size_t i = 0; i < FramedMessage::kHeaderBits; ++i) length = length << 1 | raw[i];
  return FramedMessage::kHeaderBits + 8 * length;
}

std::vector<std::uint8_t> deframe(const BitString& extracted, const StegoKey& key) {
  auto total = frame_length_from_header(extracted);
  if (!total) {
    fail(ErrorCode::Incomplete, "only " + std::to_string(extracted.size()) +
                                    " bits extracted, header needs 32");
  }
  if (extracted.size() < *total) {
    fail(ErrorCode::Incomplete, "frame declares " + std::to_string(*total) + " bits, only " +
                                    std::to_string(extracted.size()) + " extracted");
  }
  std::vector<std::uint8_t> payload((*total - FramedMessage::kHeaderBits) / 8);
  for (std::size_t i = 0; i < payload.size(); ++i) {
    std::uint8_t byte = 0;
    for (std::size_t b = 0; b < 8; ++b) {
      byte = static_cast<std::uint8_t>(byte << 1 | extracted[FramedMessage::kHeaderBits + 8 * i + b]);
    }
    payload[i] = byte;
  }
  std::uint64_t pad_word = 0;
  for (std::uint64_t j = *total; j < extracted.size(); ++j) {
    std::uint64_t index = j - *total;
    if (index % 64 == 0) pad_word = prf_word(key, Domain::Padding, index / 64);
    bool expected = (pad_word >> (63 - index % 64)) & 1;
    if (extracted[j] != expected) {
      fail(ErrorCode::PaddingMismatch,
           "padding bit " + std::to_string(index) + " disagrees with the keyed stream");
    }
  }
  return payload;
}

}  // namespace shimer
