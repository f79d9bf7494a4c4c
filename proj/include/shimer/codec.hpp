#pragma once

#include <gmpxx.h>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shimer/bitstream.hpp"
#include "shimer/bitstring.hpp"
#include "shimer/channel.hpp"
#include "shimer/dyadic.hpp"
#include "shimer/prg.hpp"
#include "shimer/reorder.hpp"

namespace shimer {

enum class FinishMode : std::uint8_t { Immediate = 0, Natural = 1 };

struct CodecSettings {
  unsigned q = 24;
  std::size_t top_k = 100;
  bool reorder = true;
  std::size_t max_tokens = 512;
  FinishMode finish = FinishMode::Immediate;
  /// Residual interval size (in bits) above which a straddle diagnostic is
  /// counted.
  std::uint64_t width_warning_bits = 4096;
};

struct StepOutcome {
  TokenId token = 0;
  StepKind kind = StepKind::Split;
  BitString bits;
  /// Weight of the selected cell over 2^q.
  std::uint64_t weight = 0;
  unsigned q = 0;

  /// -log2(weight / 2^q): information carried by the token.
  double information() const;
};

/// Running totals kept by a session.
struct SessionStats {
  std::uint64_t steps = 0;
  std::uint64_t inside = 0;
  std::uint64_t wrapped = 0;
  std::uint64_t splits = 0;
  std::uint64_t bits = 0;
  /// Sum of -log2 of selected weights, over all steps and over Split steps.
  double information = 0.0;
  double split_information = 0.0;
  std::uint64_t width_warnings = 0;

  void record(const StepOutcome& outcome);
};

/// Truncation and quantization shared by both directions.
QuantizedDistribution prepare_distribution(const TokenDistribution& d, const CodecSettings& settings);

/// Interval state [lo, lo + len) / 2^width kept as integers, no power of two
/// common to lo, len and 2^width. The state update,
/// classification and prefix extraction run on integers only; the generic
/// Dyadic routines are the reference they are tested against.
class CodecState {
 public:
  explicit CodecState(CodecSettings settings);

  const CodecSettings& settings() const noexcept { return settings_; }
  Interval interval() const;
  const mpz_class& lo() const noexcept { return lo_; }
  mpz_class length() const;
  /// Bit length of length().
  std::uint64_t length_bits() const;
  std::uint64_t width() const noexcept { return width_; }
  /// -log2 of the current interval length.
  double residual_bits() const;
  std::uint64_t step_count() const noexcept { return stats_.steps; }
  const SessionStats& stats() const noexcept { return stats_; }
  /// Bits extracted so far (the embedded stream prefix).
  const BitString& extracted() const noexcept { return extracted_; }

  friend bool operator==(const CodecState& a, const CodecState& b) {
    return a.lo_ == b.lo_ && a.len_odd_ == b.len_odd_ && a.len_exp_ == b.len_exp_ && a.width_ == b.width_ &&
           a.stats_.steps == b.stats_.steps && a.extracted_ == b.extracted_;
  }

 protected:
  /// Layout used for this step: the quantized cells, reordered if enabled.
  /// The result may refer to an internal buffer reused by the next call.
  const QuantizedDistribution& layout(const QuantizedDistribution& q, Fraction64 u);
  /// Merges cell `index` of `q` under draw `u`, extracts the shared prefix.
  StepOutcome advance(const QuantizedDistribution& q, std::size_t index, Fraction64 u);
  /// (len >> k) mod 2^128.
  unsigned __int128 length_window(std::uint64_t k) const;

  CodecSettings settings_;
  mpz_class lo_ = 0;
  // The length is len_odd_ * 2^len_exp_ with len_odd_ odd.
  mpz_class len_odd_ = 1;
  std::uint64_t len_exp_ = 0;
  std::uint64_t width_ = 0;
  SessionStats stats_;
  BitString extracted_;

 private:
  std::vector<std::size_t> order_;
  std::vector<std::size_t> byweight_;
  QuantizedDistribution reordered_;
  mpz_class last_tmp_, diff_tmp_;
};

class EncoderSession : public CodecState {
 public:
  /// `stream` is the bit stream being embedded; it must outlive the session.
  EncoderSession(const StegoKey& key, const BitSource& stream, CodecSettings settings);

  /// Draws the step's uniform from the sampling stream.
  StepOutcome step(const TokenDistribution& d);
  /// Same, on a distribution already truncated and quantized.
  StepOutcome step_prepared(const QuantizedDistribution& q);
  /// One step on an already quantized distribution with an injected draw.
  StepOutcome step_quantized(const QuantizedDistribution& q, Fraction64 u);
  /// Cell index the pointer selects on `layout` under draw u (no state change).
  std::size_t select(const QuantizedDistribution& layout, Fraction64 u);

  std::uint64_t prg_counter() const noexcept { return prg_.counter(); }
  /// The pointer truncated to width() bits, minus lo; in [0, length()).
  mpz_class pointer_offset() const;

 private:
  /// floor of the pointer's relative position in the interval, in units of
  /// 2^-(q+64); valid until the interval changes.
  unsigned __int128 relative_pointer(unsigned q);
  /// The same quantity from the leading bits of pointer, lo and length, with
  /// an error bound; nullopt when those bits cannot bound it.
  struct PointerEstimate {
    unsigned __int128 value = 0;
    unsigned __int128 slack = 0;
  };
  std::optional<PointerEstimate> estimate_pointer(unsigned q) const;

  PrgStream prg_;
  const BitSource& stream_;
  mpz_class scratch_;
  std::optional<PointerEstimate> cached_pointer_;
};

class DecoderSession : public CodecState {
 public:
  DecoderSession(const StegoKey& key, CodecSettings settings);

  /// Throws UnknownToken if the token is outside the truncated support.
  StepOutcome step(const TokenDistribution& d, TokenId token);
  StepOutcome step_prepared(const QuantizedDistribution& q, TokenId token);
  StepOutcome step_quantized(const QuantizedDistribution& q, Fraction64 u, TokenId token);

  std::uint64_t prg_counter() const noexcept { return prg_.counter(); }

 private:
  PrgStream prg_;
};

/// Token selection by plain keyed sampling from the quantized cells (the
/// baseline, and the filler used after the frame is complete).
std::size_t sample_cell(const QuantizedDistribution& q, Fraction64 u);

struct StegoContainer {
  static constexpr std::uint8_t kVersion = 1;

  unsigned q = 24;
  std::size_t top_k = 100;
  bool reorder = true;
  FinishMode finish = FinishMode::Immediate;
  /// False when the encoder ran out of tokens before the frame was embedded.
  bool complete = true;
  std::array<std::uint8_t, 32> prompt_hash{};
  std::string model_id;
  std::vector<TokenId> tokens;

  std::vector<std::uint8_t> serialize() const;
  /// Throws BadContainer on malformed input.
  static StegoContainer parse(std::span<const std::uint8_t> bytes);

  friend bool operator==(const StegoContainer&, const StegoContainer&) = default;
};

std::array<std::uint8_t, 32> hash_prompt(std::span<const TokenId> prompt);

struct EncodeResult {
  StegoContainer container;
  SessionStats stats;
  /// Post-truncation entropy summed over the embedding steps.
  double entropy = 0.0;
  double residual_bits = 0.0;
  /// Tokens emitted after the frame was complete (natural finish).
  std::size_t filler_tokens = 0;
};

/// Runs the encoder until the framed payload is fully extractable or
/// max_tokens is reached (then the container is flagged incomplete).
EncodeResult encode(const StegoKey& key, const ChannelSource& channel,
                    std::span<const TokenId> prompt, std::span<const std::uint8_t> payload,
                    const CodecSettings& settings);

struct DecodeResult {
  std::vector<std::uint8_t> payload;
  SessionStats stats;
  std::size_t tokens_used = 0;
};

/// Settings come from the container. Throws SettingsMismatch (prompt or
/// model differ), UnknownToken, Incomplete, or PaddingMismatch.
DecodeResult decode(const StegoKey& key, const ChannelSource& channel,
                    std::span<const TokenId> prompt, const StegoContainer& container);

CodecSettings settings_from(const StegoContainer& container);

}  // namespace shimer
