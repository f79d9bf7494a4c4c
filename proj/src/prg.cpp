#include "shimer/prg.hpp"

#include <openssl/evp.h>
#include <sys/random.h>

#include <cerrno>
#include <cmath>

#include "shimer/error.hpp"

namespace shimer {

namespace {

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

void put_be64(std::uint8_t* out, std::uint64_t v) {
  for (int i = 7; i >= 0; --i) {
    out[i] = static_cast<std::uint8_t>(v & 0xff);
    v >>= 8;
  }
}

}  // namespace

StegoKey StegoKey::from_hex(std::string_view hex) {
  if (hex.size() != 2 * kSize) {
    fail(ErrorCode::BadSpec, "key must be exactly 64 hex characters, got " +
                                 std::to_string(hex.size()));
  }
  Bytes bytes{};
  for (std::size_t i = 0; i < kSize; ++i) {
    int hi = hex_value(hex[2 * i]);
    int lo = hex_value(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) fail(ErrorCode::BadSpec, "key contains a non-hex character");
    bytes[i] = static_cast<std::uint8_t>(hi << 4 | lo);
  }
  return StegoKey(bytes);
}

std::string StegoKey::to_hex() const {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * kSize);
  for (auto b : bytes_) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xf]);
  }
  return out;
}

StegoKey keygen(std::optional<std::uint64_t> seed) {
  StegoKey::Bytes bytes{};
  if (seed) {
    std::array<std::uint8_t, 24> input{};
    constexpr std::string_view kLabel = "shimer-test-key-";
    std::copy(kLabel.begin(), kLabel.end(), input.begin());
    put_be64(input.data() + kLabel.size(), *seed);
    bytes = sha256(input);
    return StegoKey(bytes);
  }
  std::size_t filled = 0;
  while (filled < bytes.size()) {
    ssize_t got = getrandom(bytes.data() + filled, bytes.size() - filled, 0);
    if (got < 0) {
      if (errno == EINTR) continue;
      fail(ErrorCode::EntropyUnavailable, "getrandom failed");
    }
    filled += static_cast<std::size_t>(got);
  }
  return StegoKey(bytes);
}

namespace {

// The one-shot helpers refetch the algorithm on every call; keep one fetched
// digest and one context per thread instead.
struct DigestContext {
  EVP_MD* md = EVP_MD_fetch(nullptr, "SHA256", nullptr);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  ~DigestContext() {
    EVP_MD_CTX_free(ctx);
    EVP_MD_free(md);
  }
};

}  // namespace

std::array<std::uint8_t, 32> sha256(std::span<const std::uint8_t> data) {
  thread_local DigestContext dc;
  std::array<std::uint8_t, 32> digest{};
  unsigned int len = 0;
  if (!dc.md || !dc.ctx || EVP_DigestInit_ex2(dc.ctx, dc.md, nullptr) != 1 ||
      EVP_DigestUpdate(dc.ctx, data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(dc.ctx, digest.data(), &len) != 1) {
    fail(ErrorCode::ContractViolation, "SHA-256 unavailable");
  }
  return digest;
}

std::uint64_t prf_word(const StegoKey& key, Domain tag, std::uint64_t counter) {
  std::array<std::uint8_t, StegoKey::kSize + 1 + 8> input{};
  std::copy(key.bytes().begin(), key.bytes().end(), input.begin());
  input[StegoKey::kSize] = static_cast<std::uint8_t>(tag);
  put_be64(input.data() + StegoKey::kSize + 1, counter);
  auto digest = sha256(input);
  std::uint64_t word = 0;
  for (int i = 0; i < 8; ++i) word = word << 8 | digest[i];
  return word;
}

Fraction64 Fraction64::from_double(double x) {
  require(x >= 0.0 && x < 1.0, "fraction must lie in [0,1)");
  return Fraction64{static_cast<std::uint64_t>(std::ldexp(x, 64))};
}

Fraction64 PrgStream::next_uniform() {
  if (exhausted_) fail(ErrorCode::CounterExhausted, "PRG counter exhausted");
  Fraction64 u{prf_word(key_, tag_, counter_)};
  if (counter_ == UINT64_MAX) {
    exhausted_ = true;
  } else {
    ++counter_;
  }
  return u;
}

bool padding_bit(const StegoKey& key, std::uint64_t index) {
  std::uint64_t word = prf_word(key, Domain::Padding, index / 64);
  return (word >> (63 - index % 64)) & 1;
}

}  // namespace shimer
