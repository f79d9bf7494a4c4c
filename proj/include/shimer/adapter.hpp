#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shimer/channel.hpp"

namespace shimer {

struct AdapterConfig {
  /// Base URL, e.g. "http://127.0.0.1:8765".
  std::string endpoint;
  /// Model identifier sent with every request; empty means "ask /v1/health".
  std::string model;
  double timeout_seconds = 30.0;
  /// Extra attempts after a transport failure or a 5xx reply.
  unsigned retries = 2;
  /// Top-k requested from the server.
  std::size_t top_k = 100;
  /// Send every distribution request twice and require identical bodies.
  bool probe = false;
};

struct HealthInfo {
  std::string model;
  std::string determinism_mode;
};

/// Appends every exchange to a JSON-lines fixture that FixtureChannel can
/// replay. Shareable across threads.
class FixtureRecorder {
 public:
  explicit FixtureRecorder(std::filesystem::path path);
  void record(const std::string& kind, const std::string& request, const std::string& response);

 private:
  std::filesystem::path path_;
  std::mutex mutex_;
};

/// Parses a /v1/distribution body. Probabilities are decimal strings parsed
/// with exact round-trip conversion; ordering (descending probability, then
/// ascending id) and shape are checked, values are not renormalized.
TokenDistribution parse_distribution_body(const std::string& body);

/// Canonical request body for /v1/distribution; also the fixture key.
std::string distribution_request_body(const std::string& model,
                                      std::span<const TokenId> context, std::size_t top_k);

/// Formats a probability with the shortest exact round-trip decimal.
std::string format_probability(double p);

class AdapterChannel final : public ChannelSource {
 public:
  explicit AdapterChannel(AdapterConfig config, std::shared_ptr<FixtureRecorder> recorder = {});

  /// Throws ContractViolation on an empty history, Transport, ServerError,
  /// or NonDeterministic (probe mode).
  TokenDistribution fetch_distribution(std::span<const TokenId> history, std::size_t top_k) const;
  TokenDistribution next_distribution(std::span<const TokenId> history) const override {
    return fetch_distribution(history, config_.top_k);
  }

  std::vector<TokenId> tokenize(const std::string& text) const;
  std::string detokenize_ids(std::span<const TokenId> ids) const;
  std::optional<std::string> detokenize(std::span<const TokenId> ids) const override {
    return detokenize_ids(ids);
  }
  HealthInfo health() const;

  std::string model_id() const override { return config_.model; }
  const AdapterConfig& config() const noexcept { return config_; }

 private:
  std::string post(const std::string& path, const std::string& body, const char* kind) const;
  std::string get(const std::string& path, const char* kind) const;

  AdapterConfig config_;
  std::shared_ptr<FixtureRecorder> recorder_;
};

/// Replays a fixture written by FixtureRecorder. Requests that were never
/// recorded raise Transport.
class FixtureChannel final : public ChannelSource {
 public:
  explicit FixtureChannel(const std::filesystem::path& path, std::size_t top_k = 100);

  TokenDistribution fetch_distribution(std::span<const TokenId> history, std::size_t top_k) const;
  TokenDistribution next_distribution(std::span<const TokenId> history) const override {
    return fetch_distribution(history, top_k_);
  }
  std::vector<TokenId> tokenize(const std::string& text) const;
  std::string detokenize_ids(std::span<const TokenId> ids) const;
  std::optional<std::string> detokenize(std::span<const TokenId> ids) const override;
  HealthInfo health() const;

  std::string model_id() const override { return model_; }
  std::size_t distribution_count() const noexcept { return distributions_.size(); }

 private:
  std::string model_;
  std::size_t top_k_;
  std::map<std::string, std::string> distributions_;
  std::map<std::string, std::string> tokenize_;
  std::map<std::string, std::string> detokenize_;
  std::optional<std::string> health_;
};

}  // namespace shimer
