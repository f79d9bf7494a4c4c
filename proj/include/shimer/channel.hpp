#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace shimer {

using TokenId = std::uint32_t;

struct TokenDistribution {
  std::vector<TokenId> token_ids;
  std::vector<double> probs;

  std::size_t size() const noexcept { return token_ids.size(); }
  /// Throws ContractViolation unless ids are unique, probs positive and
  /// summing to 1 within `tolerance`.
  void validate(double tolerance = 1e-9) const;
};

/// Integer weights summing to exactly 2^q; cell i is
/// [cumulative[i], cumulative[i+1]) / 2^q.
struct QuantizedDistribution {
  std::vector<TokenId> token_ids;
  std::vector<std::uint64_t> weights;
  std::vector<std::uint64_t> cumulative;
  unsigned q = 0;

  std::size_t size() const noexcept { return token_ids.size(); }
  std::uint64_t total() const noexcept { return std::uint64_t{1} << q; }
  /// Index of the cell containing grid point `point` (0 <= point < 2^q).
  std::size_t cell_at(std::uint64_t point) const;
  std::optional<std::size_t> index_of(TokenId id) const;
  void rebuild_cumulative();
};

/// Keeps the k most probable entries (ties to the lower id) in their original
/// order and renormalizes.
TokenDistribution top_k_truncate(const TokenDistribution& d, std::size_t k);

/// Largest-remainder apportionment of 2^q with every entry lifted to >= 1.
QuantizedDistribution quantize(const TokenDistribution& d, unsigned q);

double entropy_bits(const TokenDistribution& d);

/// Source of next-token distributions. Implementations must be deterministic:
/// the same history yields the same distribution bit for bit.
class ChannelSource {
 public:
  virtual ~ChannelSource() = default;
  virtual TokenDistribution next_distribution(std::span<const TokenId> history) const = 0;
  virtual std::optional<TokenId> end_token() const { return std::nullopt; }
  /// Identifier echoed into stego containers.
  virtual std::string model_id() const = 0;
  virtual std::optional<std::string> detokenize(std::span<const TokenId>) const {
    return std::nullopt;
  }
};

class UniformChannel final : public ChannelSource {
 public:
  explicit UniformChannel(std::size_t k);
  TokenDistribution next_distribution(std::span<const TokenId>) const override { return dist_; }
  std::string model_id() const override;

 private:
  TokenDistribution dist_;
};

/// probs proportional to rank^-s over ids 0..k-1.
class ZipfChannel final : public ChannelSource {
 public:
  ZipfChannel(double s, std::size_t k);
  TokenDistribution next_distribution(std::span<const TokenId>) const override { return dist_; }
  std::string model_id() const override;

 private:
  double s_;
  TokenDistribution dist_;
};

/// Two tokens with probabilities {p, 1-p}.
class TwoPointChannel final : public ChannelSource {
 public:
  explicit TwoPointChannel(double p);
  TokenDistribution next_distribution(std::span<const TokenId>) const override { return dist_; }
  std::string model_id() const override;

 private:
  double p_;
  TokenDistribution dist_;
};

/// First-order Markov chain over k states; the state is the last history
/// token (mod k), or 0 for an empty history. Each row is a Zipf law with a
/// seeded exponent in [0.8, 1.6] over a seeded permutation of the ids.
class MarkovChannel final : public ChannelSource {
 public:
  MarkovChannel(std::size_t k, std::uint64_t seed);
  TokenDistribution next_distribution(std::span<const TokenId> history) const override;
  std::string model_id() const override;

 private:
  std::size_t k_;
  std::uint64_t seed_;
  std::vector<TokenDistribution> rows_;
};

/// Replays explicit distributions: step i (history length minus `base`) uses
/// entry i mod n.
class ScriptedChannel final : public ChannelSource {
 public:
  explicit ScriptedChannel(std::vector<TokenDistribution> script, std::size_t base = 0,
                           std::string name = "scripted");
  /// One distribution per line as whitespace-separated `id:prob` pairs;
  /// blank lines and lines starting with '#' are skipped.
  static ScriptedChannel load(const std::filesystem::path& path, std::size_t base = 0);

  TokenDistribution next_distribution(std::span<const TokenId> history) const override;
  std::string model_id() const override { return name_; }
  const std::vector<TokenDistribution>& script() const noexcept { return script_; }

 private:
  std::vector<TokenDistribution> script_;
  std::size_t base_;
  std::string name_;
};

/// Builds a channel from a spec string:
///   uniform:K | zipf:S:K | markov:K:SEED | twopoint:P | scripted:PATH
/// Prompt length is passed so scripted channels index from the first
/// generated token.
std::unique_ptr<ChannelSource> make_synthetic_channel(const std::string& spec,
                                                      std::size_t prompt_length = 0);

}  // namespace shimer
