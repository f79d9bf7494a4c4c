#include "shimer/codec.hpp"

#include <algorithm>
#include <cmath>

#include "shimer/error.hpp"

namespace shimer {

namespace {

using u128 = unsigned __int128;

u128 to_u128(const mpz_class& v) {
  u128 out = 0;
  std::size_t count = 0;
  std::uint64_t limbs[2] = {0, 0};
  if (mpz_sizeinbase(v.get_mpz_t(), 2) > 128) fail(ErrorCode::PointerEscape, "value exceeds 128 bits");
  mpz_export(limbs, &count, -1, sizeof(std::uint64_t), 0, 0, v.get_mpz_t());
  out = static_cast<u128>(limbs[1]) << 64 | limbs[0];
  return out;
}

std::uint64_t bit_length(const mpz_class& v) {
  return sgn(v) == 0 ? 0 : mpz_sizeinbase(v.get_mpz_t(), 2);
}

static_assert(GMP_LIMB_BITS == 64, "limb access assumes 64-bit limbs");

// (v >> k) mod 2^128 for v >= 0.
u128 window128(const mpz_class& v, std::uint64_t k) {
  const auto limb = [&](std::uint64_t i) -> std::uint64_t {
    return i < mpz_size(v.get_mpz_t()) ? mpz_getlimbn(v.get_mpz_t(), static_cast<mp_size_t>(i)) : 0;
  };
  const std::uint64_t i = k / 64;
  const unsigned r = k % 64;
  std::uint64_t w0 = limb(i), w1 = limb(i + 1);
  if (r) {
    const std::uint64_t w2 = limb(i + 2);
    w0 = w0 >> r | w1 << (64 - r);
    w1 = w1 >> r | w2 << (64 - r);
  }
  return static_cast<u128>(w1) << 64 | w0;
}

unsigned leading_zeros(u128 x) {
  const auto hi = static_cast<std::uint64_t>(x >> 64);
  if (hi) return static_cast<unsigned>(__builtin_clzll(hi));
  const auto lo = static_cast<std::uint64_t>(x);
  return lo ? 64 + static_cast<unsigned>(__builtin_clzll(lo)) : 128;
}

// Leading bits shared by lo and lo + len - 1 as width-bit numbers, read off
// the top 128 bits when that settles it. Below the window the low parts add
// a carry of -1, 0 or 1 to the top sum; all candidates must agree.
// `l` is (len >> (width - 128)) mod 2^128.
std::optional<std::uint64_t> shared_prefix_estimate(const mpz_class& lo, u128 l, std::uint64_t width) {
  if (width <= 128) return std::nullopt;
  const u128 a = window128(lo, width - 128);
  if (l == 0) return std::nullopt;
  // lo + len <= 2^width, so a + l <= 2^128; s == 0 here means exactly 2^128.
  const u128 s = a + l;
  std::optional<unsigned> agreed;
  for (int d = -1; d <= 1; ++d) {
    if (s == 0 && d >= 0) continue;
    if (d > 0 && s == ~u128{0}) continue;
    const u128 h = d < 0 ? s - 1 : s + static_cast<u128>(d);
    const unsigned m = leading_zeros(a ^ h);
    if (m >= 128 || (agreed && *agreed != m)) return std::nullopt;
    agreed = m;
  }
  return agreed;
}

void check_settings(const CodecSettings& s) {
  if (s.q < 2 || s.q > 32) fail(ErrorCode::BadSpec, "q must lie in [2, 32]");
  if (s.top_k < 1) fail(ErrorCode::BadSpec, "top-k must be at least 1");
}

}  // namespace

double StepOutcome::information() const {
  return static_cast<double>(q) - std::log2(static_cast<double>(weight));
}

void SessionStats::record(const StepOutcome& outcome) {
  ++steps;
  double info = outcome.information();
  information += info;
  switch (outcome.kind) {
    case StepKind::Inside: ++inside; break;
    case StepKind::Wrapped: ++wrapped; break;
    case StepKind::Split:
      ++splits;
      split_information += info;
      break;
  }
  bits += outcome.bits.size();
}

QuantizedDistribution prepare_distribution(const TokenDistribution& d, const CodecSettings& settings) {
  return quantize(top_k_truncate(d, settings.top_k), settings.q);
}

CodecState::CodecState(CodecSettings settings) : settings_(settings) { check_settings(settings_); }

mpz_class CodecState::length() const {
  mpz_class out;
  mpz_mul_2exp(out.get_mpz_t(), len_odd_.get_mpz_t(), len_exp_);
  return out;
}

std::uint64_t CodecState::length_bits() const { return bit_length(len_odd_) + len_exp_; }

Interval CodecState::interval() const {
  return Interval(Dyadic(lo_, width_), Dyadic(lo_ + length(), width_));
}

double CodecState::residual_bits() const {
  long exp = 0;
  double mant = mpz_get_d_2exp(&exp, len_odd_.get_mpz_t());
  return static_cast<double>(width_) -
         (std::log2(mant) + static_cast<double>(exp) + static_cast<double>(len_exp_));
}

u128 CodecState::length_window(std::uint64_t k) const {
  if (k >= len_exp_) return window128(len_odd_, k - len_exp_);
  if (len_exp_ - k >= 128) return 0;
  return window128(len_odd_, 0) << (len_exp_ - k);
}

const QuantizedDistribution& CodecState::layout(const QuantizedDistribution& q, Fraction64 u) {
  if (!settings_.reorder) return q;
  reorder_into(q, u, order_, byweight_);
  apply_permutation_into(q, order_, reordered_);
  return reordered_;
}

StepOutcome CodecState::advance(const QuantizedDistribution& q, std::size_t index, Fraction64 u) {
  StepOutcome out;
  out.token = q.token_ids[index];
  out.q = q.q;
  const std::uint64_t a = q.cumulative[index];
  const std::uint64_t b = q.cumulative[index + 1];
  out.weight = b - a;

  // Relative coordinates scaled by 2^(q+64): cell [A, B), offset T.
  const unsigned shift = q.q + 64;
  const u128 A = static_cast<u128>(a) << 64;
  const u128 B = static_cast<u128>(b) << 64;
  const u128 T = static_cast<u128>(u.numerator) << q.q;
  u128 D;
  if (A >= T) {
    out.kind = StepKind::Inside;
    D = A - T;
  } else if (B <= T) {
    out.kind = StepKind::Wrapped;
    D = (u128{1} << shift) - (T - A);
  } else {
    out.kind = StepKind::Split;
    stats_.record(out);
    return out;
  }

  // lo' = lo*2^(q+64) + len*D, len' = len*w*2^64. D is a multiple of 2^q,
  // so divide the common 2^q out: the step shifts by 64 bits only,
  //   lo' = lo*2^64 + len*o, len' = len*w*2^(64-q), width' = width + 64.
  // The common power of two visible from the factors is divided out at once:
  // with len = odd*2^e it never touches the odd part of the length.
  const auto o = static_cast<std::uint64_t>(D >> q.q);
  constexpr std::uint64_t kNone = UINT64_MAX;
  const unsigned tw = static_cast<unsigned>(__builtin_ctzll(out.weight));
  const std::uint64_t len_tz = len_exp_ + tw + 64 - q.q;
  const std::uint64_t lo_tz = sgn(lo_) == 0 ? kNone : 64 + mpz_scan1(lo_.get_mpz_t(), 0);
  std::uint64_t term_tz = kNone;
  unsigned to = 0;
  if (o != 0) {
    to = static_cast<unsigned>(__builtin_ctzll(o));
    term_tz = len_exp_ + to;
  }
  const std::uint64_t strip = std::min({len_tz, lo_tz, term_tz, width_ + 64});
  if (strip <= 64) {
    mpz_mul_2exp(lo_.get_mpz_t(), lo_.get_mpz_t(), 64 - strip);
  } else {
    mpz_tdiv_q_2exp(lo_.get_mpz_t(), lo_.get_mpz_t(), strip - 64);
  }
  if (o != 0) {
    // len*o / 2^strip = odd * (o >> to) * 2^lift.
    const std::uint64_t odd = o >> to, lift = term_tz - strip;
    if (lift < 64 && (odd >> (63 - lift)) >> 1 == 0) {
      mpz_addmul_ui(lo_.get_mpz_t(), len_odd_.get_mpz_t(), odd << lift);
    } else {
      mpz_class& t = last_tmp_;
      mpz_mul_ui(t.get_mpz_t(), len_odd_.get_mpz_t(), odd);
      mpz_mul_2exp(t.get_mpz_t(), t.get_mpz_t(), lift);
      lo_ += t;
    }
  }
  mpz_mul_ui(len_odd_.get_mpz_t(), len_odd_.get_mpz_t(), out.weight >> tw);
  len_exp_ = len_tz - strip;
  width_ += 64 - strip;

  // Shared prefix of every point in [lo, lo + len): the bits where lo and
  // lo + len - 1 agree.
  std::uint64_t n = 0;
  if (auto estimate = shared_prefix_estimate(lo_, length_window(width_ > 128 ? width_ - 128 : 0), width_)) {
    n = *estimate;
  } else {
    mpz_class& last = last_tmp_;
    mpz_mul_2exp(last.get_mpz_t(), len_odd_.get_mpz_t(), len_exp_);
    mpz_add(last.get_mpz_t(), last.get_mpz_t(), lo_.get_mpz_t());
    mpz_sub_ui(last.get_mpz_t(), last.get_mpz_t(), 1);
    mpz_class& diff = diff_tmp_;
    mpz_xor(diff.get_mpz_t(), lo_.get_mpz_t(), last.get_mpz_t());
    n = width_ - bit_length(diff);
  }
  if (n > 0) {
    for (std::uint64_t i = width_; i-- > width_ - n;) out.bits.push_back(mpz_tstbit(lo_.get_mpz_t(), i));
    mpz_tdiv_r_2exp(lo_.get_mpz_t(), lo_.get_mpz_t(), width_ - n);
    width_ -= n;
    extracted_.append(out.bits);
  }

  // Trailing zeros common to lo and len that only show after the sum.
  std::uint64_t tz = len_exp_;
  if (sgn(lo_) != 0) tz = std::min<std::uint64_t>(tz, mpz_scan1(lo_.get_mpz_t(), 0));
  tz = std::min(tz, width_);
  if (tz > 0) {
    mpz_tdiv_q_2exp(lo_.get_mpz_t(), lo_.get_mpz_t(), tz);
    len_exp_ -= tz;
    width_ -= tz;
  }

  if (width_ - length_bits() > settings_.width_warning_bits) ++stats_.width_warnings;
  stats_.record(out);
  return out;
}

EncoderSession::EncoderSession(const StegoKey& key, const BitSource& stream, CodecSettings settings)
    : CodecState(settings), prg_(key, Domain::Sampling), stream_(stream) {}

// The pointer P is the stream from the first unextracted bit read as a
// fraction; its position in the interval is P - lo, with P truncated to as
// many bits as the question needs.
mpz_class EncoderSession::pointer_offset() const {
  return stream_.window(extracted_.size(), width_) - lo_;
}

u128 EncoderSession::relative_pointer(unsigned q) {
  const unsigned shift = q + 64;
  // Truncating the pointer to width + q + 64 bits does not change
  // floor((P - lo) * 2^(q+64) / len) because len is an integer over 2^width.
  mpz_class& p = scratch_;
  mpz_mul_2exp(p.get_mpz_t(), lo_.get_mpz_t(), shift);
  mpz_sub(p.get_mpz_t(), stream_.window(extracted_.size(), width_ + shift).get_mpz_t(), p.get_mpz_t());
  if (sgn(p) < 0) fail(ErrorCode::PointerEscape, "message pointer fell below the interval");
  mpz_fdiv_q(p.get_mpz_t(), p.get_mpz_t(), length().get_mpz_t());
  if (bit_length(p) > shift) fail(ErrorCode::PointerEscape, "message pointer lies above the interval");
  return to_u128(p);
}

std::optional<EncoderSession::PointerEstimate> EncoderSession::estimate_pointer(unsigned q) const {
  // From the top 128 bits of the width-bit pointer, lo and len, each off by
  // less than one unit: with len's window at least 2^64 the quotient is
  // within 2^(q+1), plus a relative 2^-50 from the doubles, within 2^(q+14).
  if (width_ <= 128) return std::nullopt;
  const std::uint64_t k = width_ - 128, at = extracted_.size();
  const u128 pointer = static_cast<u128>(stream_.bits64(at)) << 64 | stream_.bits64(at + 64);
  const u128 lo = window128(lo_, k), len = length_window(k);
  if (pointer < lo || len >> 64 == 0) return std::nullopt;
  const unsigned shift = q + 64;
  const double v = std::ldexp(static_cast<double>(pointer - lo) / static_cast<double>(len),
                              static_cast<int>(shift));
  if (!(v >= 0.0) || v >= std::ldexp(1.0, static_cast<int>(shift))) return std::nullopt;
  return PointerEstimate{static_cast<u128>(v), u128{1} << (q + 16)};
}

std::size_t EncoderSession::select(const QuantizedDistribution& layout, Fraction64 u) {
  const unsigned shift = layout.q + 64;
  const u128 modulus = u128{1} << shift;
  const u128 draw = static_cast<u128>(u.numerator) << layout.q;
  auto cell = [&](u128 pointer) {
    u128 t = pointer + draw;
    if (t >= modulus) t -= modulus;
    return layout.cell_at(static_cast<std::uint64_t>(t >> 64));
  };
  if (!cached_pointer_) {
    if (auto e = estimate_pointer(layout.q)) {
      cached_pointer_ = *e;
    } else {
      cached_pointer_ = PointerEstimate{relative_pointer(layout.q), 0};
    }
  }
  const PointerEstimate& p = *cached_pointer_;
  if (p.slack == 0) return cell(p.value);
  // The true pointer lies on a short arc around the estimate; the cell map is
  // monotone along it except at the wrap, where the two ends differ.
  const u128 lo = p.value >= p.slack ? p.value - p.slack : p.value + modulus - p.slack;
  u128 hi = p.value + p.slack;
  if (hi >= modulus) hi -= modulus;
  const std::size_t a = cell(lo);
  if (a == cell(hi)) return a;
  cached_pointer_ = PointerEstimate{relative_pointer(layout.q), 0};
  return cell(cached_pointer_->value);
}

StepOutcome EncoderSession::step_quantized(const QuantizedDistribution& q, Fraction64 u) {
  require(q.q == settings_.q, "distribution quantized at a different q");
  const QuantizedDistribution& cells = layout(q, u);
  std::size_t index = select(cells, u);
  StepOutcome out = advance(cells, index, u);
  if (out.kind != StepKind::Split) cached_pointer_.reset();
  return out;
}

StepOutcome EncoderSession::step(const TokenDistribution& d) {
  return step_prepared(prepare_distribution(d, settings_));
}

StepOutcome EncoderSession::step_prepared(const QuantizedDistribution& q) {
  return step_quantized(q, prg_.next_uniform());
}

DecoderSession::DecoderSession(const StegoKey& key, CodecSettings settings)
    : CodecState(settings), prg_(key, Domain::Sampling) {}

StepOutcome DecoderSession::step_quantized(const QuantizedDistribution& q, Fraction64 u,
                                           TokenId token) {
  require(q.q == settings_.q, "distribution quantized at a different q");
  const QuantizedDistribution& cells = layout(q, u);
  auto index = cells.index_of(token);
  if (!index) {
    fail(ErrorCode::UnknownToken, "token " + std::to_string(token) +
                                      " is outside the truncated support (settings or model mismatch)");
  }
  return advance(cells, *index, u);
}

StepOutcome DecoderSession::step(const TokenDistribution& d, TokenId token) {
  return step_prepared(prepare_distribution(d, settings_), token);
}

StepOutcome DecoderSession::step_prepared(const QuantizedDistribution& q, TokenId token) {
  return step_quantized(q, prg_.next_uniform(), token);
}

std::size_t sample_cell(const QuantizedDistribution& q, Fraction64 u) {
  return q.cell_at(u.numerator >> (64 - q.q));
}

// Container layout: "SHMR" | version | q | flags | top_k varint |
// prompt hash (32) | model id (varint length + bytes) | count varint | ids.
namespace {

constexpr std::uint8_t kMagic[4] = {'S', 'H', 'M', 'R'};
constexpr std::uint8_t kFlagReorder = 1;
constexpr std::uint8_t kFlagNatural = 2;
constexpr std::uint8_t kFlagComplete = 4;

void put_varint(std::vector<std::uint8_t>& out, std::uint64_t v) {
  while (v >= 0x80) {
    out.push_back(static_cast<std::uint8_t>(v | 0x80));
    v >>= 7;
  }
  out.push_back(static_cast<std::uint8_t>(v));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t byte() {
    if (pos_ >= bytes_.size()) fail(ErrorCode::BadContainer, "container truncated");
    return bytes_[pos_++];
  }
  std::uint64_t varint() {
    std::uint64_t v = 0;
    for (unsigned shift = 0; shift < 64; shift += 7) {
      std::uint8_t b = byte();
      v |= static_cast<std::uint64_t>(b & 0x7f) << shift;
      if (!(b & 0x80)) return v;
    }
    fail(ErrorCode::BadContainer, "varint too long");
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> StegoContainer::serialize() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(q));
  std::uint8_t flags = 0;
  if (reorder) flags |= kFlagReorder;
  if (finish == FinishMode::Natural) flags |= kFlagNatural;
  if (complete) flags |= kFlagComplete;
  out.push_back(flags);
  put_varint(out, top_k);
  out.insert(out.end(), prompt_hash.begin(), prompt_hash.end());
  put_varint(out, model_id.size());
  out.insert(out.end(), model_id.begin(), model_id.end());
  put_varint(out, tokens.size());
  for (auto t : tokens) put_varint(out, t);
  return out;
}

StegoContainer StegoContainer::parse(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  for (auto m : kMagic) {
    if (in.byte() != m) fail(ErrorCode::BadContainer, "not a stego container (bad magic)");
  }
  if (auto v = in.byte(); v != kVersion) {
    fail(ErrorCode::BadContainer, "unsupported container version " + std::to_string(v));
  }
  StegoContainer c;
  c.q = in.byte();
  if (c.q < 2 || c.q > 32) fail(ErrorCode::BadContainer, "container q out of range");
  std::uint8_t flags = in.byte();
  if (flags & ~(kFlagReorder | kFlagNatural | kFlagComplete)) {
    fail(ErrorCode::BadContainer, "unknown container flags");
  }
  c.reorder = flags & kFlagReorder;
  c.finish = (flags & kFlagNatural) ? FinishMode::Natural : FinishMode::Immediate;
  c.complete = flags & kFlagComplete;
  c.top_k = in.varint();
  if (c.top_k == 0) fail(ErrorCode::BadContainer, "container top-k is zero");
  for (auto& b : c.prompt_hash) b = in.byte();
  std::uint64_t id_len = in.varint();
  if (id_len > in.remaining()) fail(ErrorCode::BadContainer, "container truncated");
  for (std::uint64_t i = 0; i < id_len; ++i) c.model_id.push_back(static_cast<char>(in.byte()));
  std::uint64_t count = in.varint();
  if (count > in.remaining()) fail(ErrorCode::BadContainer, "container truncated");
  c.tokens.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint64_t t = in.varint();
    if (t > UINT32_MAX) fail(ErrorCode::BadContainer, "token id out of range");
    c.tokens.push_back(static_cast<TokenId>(t));
  }
  if (in.remaining() != 0) fail(ErrorCode::BadContainer, "trailing bytes after container");
  return c;
}

std::array<std::uint8_t, 32> hash_prompt(std::span<const TokenId> prompt) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(4 * prompt.size());
  for (auto t : prompt) {
    for (int shift = 24; shift >= 0; shift -= 8) bytes.push_back(static_cast<std::uint8_t>(t >> shift));
  }
  return sha256(bytes);
}

CodecSettings settings_from(const StegoContainer& c) {
  CodecSettings s;
  s.q = c.q;
  s.top_k = c.top_k;
  s.reorder = c.reorder;
  s.finish = c.finish;
  s.max_tokens = c.tokens.size();
  return s;
}

EncodeResult encode(const StegoKey& key, const ChannelSource& channel,
                    std::span<const TokenId> prompt, std::span<const std::uint8_t> payload,
                    const CodecSettings& settings) {
  check_settings(settings);
  FramedMessage message = frame_message(payload, key);
  MessageStream stream(message);
  EncoderSession encoder(key, stream, settings);
  std::vector<TokenId> history(prompt.begin(), prompt.end());
  const std::uint64_t target = message.frame_bits();

  EncodeResult result;
  std::size_t emitted = 0;
  while (encoder.extracted().size() < target && emitted < settings.max_tokens) {
    TokenDistribution truncated = top_k_truncate(channel.next_distribution(history), settings.top_k);
    result.entropy += entropy_bits(truncated);
    StepOutcome out = encoder.step_prepared(quantize(truncated, settings.q));
    history.push_back(out.token);
    ++emitted;
  }
  const bool complete = encoder.extracted().size() >= target;

  auto end = channel.end_token();
  if (complete && settings.finish == FinishMode::Natural && end) {
    PrgStream filler(key, Domain::Filler);
    while (emitted < settings.max_tokens) {
      QuantizedDistribution q = prepare_distribution(channel.next_distribution(history), settings);
      TokenId token = q.token_ids[sample_cell(q, filler.next_uniform())];
      history.push_back(token);
      ++emitted;
      ++result.filler_tokens;
      if (token == *end) break;
    }
  }

  StegoContainer& c = result.container;
  c.q = settings.q;
  c.top_k = settings.top_k;
  c.reorder = settings.reorder;
  c.finish = settings.finish;
  c.complete = complete;
  c.prompt_hash = hash_prompt(prompt);
  c.model_id = channel.model_id();
  c.tokens.assign(history.begin() + static_cast<std::ptrdiff_t>(prompt.size()), history.end());
  result.stats = encoder.stats();
  result.residual_bits = encoder.residual_bits();
  return result;
}

DecodeResult decode(const StegoKey& key, const ChannelSource& channel,
                    std::span<const TokenId> prompt, const StegoContainer& container) {
  if (hash_prompt(prompt) != container.prompt_hash) {
    fail(ErrorCode::SettingsMismatch, "prompt differs from the one the container was encoded with");
  }
  if (channel.model_id() != container.model_id) {
    fail(ErrorCode::SettingsMismatch, "channel model '" + channel.model_id() +
                                          "' differs from container model '" + container.model_id + "'");
  }
  CodecSettings settings = settings_from(container);
  DecoderSession decoder(key, settings);
  std::vector<TokenId> history(prompt.begin(), prompt.end());
  std::optional<std::uint64_t> frame_bits;

  DecodeResult result;
  for (TokenId token : container.tokens) {
    decoder.step(channel.next_distribution(history), token);
    history.push_back(token);
    ++result.tokens_used;
    const BitString& bits = decoder.extracted();
    if (!frame_bits && bits.size() >= FramedMessage::kHeaderBits) {
      frame_bits = frame_length_from_header(unwhiten(bits.slice(0, FramedMessage::kHeaderBits), key));
    }
    // Tokens after the frame is complete are filler.
    if (frame_bits && bits.size() >= *frame_bits) break;
  }

  BitString raw = unwhiten(decoder.extracted(), key);
  try {
    result.payload = deframe(raw, key);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Incomplete && container.complete) {
      fail(ErrorCode::PaddingMismatch,
           std::string("container is marked complete but the frame is not: wrong key or corrupted "
                       "tokens (") + e.what() + ")");
    }
    throw;
  }
  result.stats = decoder.stats();
  return result;
}

}  // namespace shimer
