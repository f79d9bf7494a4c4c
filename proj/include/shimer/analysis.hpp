#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shimer/channel.hpp"
#include "shimer/codec.hpp"

namespace shimer {

/// -sum p log2 p.
double entropy(const TokenDistribution& d);

/// 2 raised to the mean per-token log-loss (bits) of `tokens` continuing
/// `prompt`. top_k = 0 scores against the untruncated distribution.
double perplexity(const ChannelSource& channel, std::span<const TokenId> prompt,
                  std::span<const TokenId> tokens, std::size_t top_k = 0);

/// Upper bound on the split probability with reordering when the largest
/// probability is p in [1/2, 1]: 4p^2 - 5p + 2.
double split_bound_high(double p_max);

struct GeneralBound {
  double raw = 0.0;
  double clamped = 0.0;
  /// True when raw fell outside [0, 1].
  bool was_clamped = false;
};

/// -(n^3 + 2n^2 + n) p^2 + (2n^2 + 3n) p - n for n > 2 and
/// 1/(n+1) < p <= 1/n. A convex combination of probabilities on that domain;
/// the clamp to [0, 1] only guards rounding.
GeneralBound split_bound_general(double p_max, unsigned n);

/// Expected information merged per step without reordering:
/// -sum_j (p_j log2 p_j - p_j^2 log2 p_j).
double expected_embedding_no_reorder(const TokenDistribution& d);
double expected_embedding_no_reorder(const QuantizedDistribution& q);

/// Extracted-bit expressions exactly as printed in the source analysis (kept
/// for documentation; their sign conventions do not describe a bit count).
double extracted_bits_as_printed(double info, unsigned n);
double extracted_bits_lower_as_printed(double info);

struct MetricsReport {
  std::string channel;
  CodecSettings settings;
  std::uint64_t seed = 0;
  std::size_t payload_bytes = 0;

  std::uint64_t sessions = 0;
  std::uint64_t incomplete_sessions = 0;
  std::uint64_t tokens = 0;
  std::uint64_t bits = 0;
  std::uint64_t splits = 0;
  std::uint64_t width_warnings = 0;

  /// Sums over all steps: post-truncation entropy, information of the
  /// selected tokens, information of Split-step tokens, residual interval
  /// information left at session ends, and token log-loss.
  double entropy_total = 0.0;
  double information_total = 0.0;
  double split_information = 0.0;
  double residual_total = 0.0;
  double log_loss_total = 0.0;

  // Timing, nanoseconds summed over steps.
  double channel_ns = 0.0;
  double codec_ns = 0.0;
  double baseline_channel_ns = 0.0;
  double baseline_sampling_ns = 0.0;
  std::uint64_t baseline_tokens = 0;

  double entropy_per_token() const;
  double capacity() const;
  double utilization() const;
  double split_rate() const;
  double split_waste() const;
  double extraction_waste() const;
  double perplexity() const;
  /// Full step (channel query + codec), milliseconds per token.
  double ms_per_token() const;
  double codec_ms_per_token() const;
  double baseline_ms_per_token() const;
  double baseline_sampling_ms_per_token() const;
  /// Embedded bits per second of full-step time.
  double channel_capacity() const;

  /// One-line self-describing JSON record.
  std::string to_json() const;
  /// Merge of per-session partial reports (sums).
  void merge(const MetricsReport& other);
};

struct BenchmarkConfig {
  CodecSettings settings;
  std::uint64_t token_budget = 100000;
  std::size_t payload_bytes = 64;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  bool baseline = true;
};

/// Encodes random payloads under random keys (both derived from the seed)
/// session after session until the token budget is reached. Sessions run on
/// worker threads; the report is a fold over sessions in index order, so
/// everything except timing is reproducible for a given seed.
MetricsReport run_benchmark(const ChannelSource& channel, const BenchmarkConfig& config);

struct WasteReport {
  double split_waste = 0.0;
  double extraction_waste = 0.0;
  double utilization = 0.0;
  std::uint64_t steps = 0;
};

/// Split and extraction waste measured over at least `trials` steps.
WasteReport monte_carlo_waste(const ChannelSource& channel, const CodecSettings& settings,
                              std::uint64_t trials, std::uint64_t seed = 1);

/// Independent first steps of fresh sessions (fresh key and payload each)
/// on one quantized distribution.
struct FirstStepTrials {
  std::uint64_t trials = 0;
  std::uint64_t splits = 0;
  /// counts[i]: how often cell i of the input distribution was emitted.
  std::vector<std::uint64_t> counts;
  double information_sum = 0.0;
  double information_sq_sum = 0.0;

  double split_rate() const;
  /// Binomial standard error of split_rate.
  double split_se() const;
  double mean_information() const;
  double information_se() const;
};

FirstStepTrials first_step_trials(const QuantizedDistribution& q, bool reorder,
                                  std::uint64_t trials, std::uint64_t seed);

/// Deterministic per-index seed derivation (splitmix64).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Human-readable table, one row per report.
std::string format_table(std::span<const MetricsReport> reports);

}  // namespace shimer
