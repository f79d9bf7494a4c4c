#include "shimer/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <json.hpp>

#include "shimer/error.hpp"

namespace shimer {

double entropy(const TokenDistribution& d) { return entropy_bits(d); }

double perplexity(const ChannelSource& channel, std::span<const TokenId> prompt,
                  std::span<const TokenId> tokens, std::size_t top_k) {
  if (tokens.empty()) return 1.0;
  std::vector<TokenId> history(prompt.begin(), prompt.end());
  double loss = 0.0;
  for (TokenId t : tokens) {
    TokenDistribution d = channel.next_distribution(history);
    if (top_k > 0) d = top_k_truncate(d, top_k);
    auto it = std::find(d.token_ids.begin(), d.token_ids.end(), t);
    if (it == d.token_ids.end()) {
      fail(ErrorCode::UnknownToken, "token " + std::to_string(t) + " has no probability under the channel");
    }
    loss -= std::log2(d.probs[static_cast<std::size_t>(it - d.token_ids.begin())]);
    history.push_back(t);
  }
  return std::exp2(loss / static_cast<double>(tokens.size()));
}

double split_bound_high(double p) {
  if (!(p >= 0.5 && p <= 1.0)) {
    fail(ErrorCode::DomainError, "split_bound_high needs 1/2 <= p <= 1");
  }
  return 4.0 * p * p - 5.0 * p + 2.0;
}

GeneralBound split_bound_general(double p, unsigned n) {
  if (n <= 2) fail(ErrorCode::DomainError, "split_bound_general needs n > 2");
  const double nd = n;
  // A small tolerance lets p = 1/n computed in floating point through.
  if (!(p > 1.0 / (nd + 1.0) && p <= 1.0 / nd * (1.0 + 1e-12))) {
    fail(ErrorCode::DomainError, "split_bound_general needs 1/(n+1) < p <= 1/n");
  }
  GeneralBound b;
  b.raw = -(nd * nd * nd + 2 * nd * nd + nd) * p * p + (2 * nd * nd + 3 * nd) * p - nd;
  b.clamped = std::clamp(b.raw, 0.0, 1.0);
  b.was_clamped = b.clamped != b.raw;
  return b;
}

double expected_embedding_no_reorder(const TokenDistribution& d) {
  double sum = 0.0;
  for (double p : d.probs) {
    if (p > 0.0) sum -= (p - p * p) * std::log2(p);
  }
  return sum;
}

double expected_embedding_no_reorder(const QuantizedDistribution& q) {
  double sum = 0.0;
  const double scale = std::ldexp(1.0, -static_cast<int>(q.q));
  for (auto w : q.weights) {
    double p = static_cast<double>(w) * scale;
    sum -= (p - p * p) * std::log2(p);
  }
  return sum;
}

double extracted_bits_as_printed(double info, unsigned n) {
  const double nd = n;
  return nd + std::exp2(info) * (-nd + 3.0 * std::exp2(nd - 1.0) - 2.0);
}

double extracted_bits_lower_as_printed(double info) {
  return info + std::exp2(info) * (-info + 3.0 * std::exp2(info - 1.0) - 3.0);
}

namespace {

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

}  // namespace

double MetricsReport::entropy_per_token() const { return ratio(entropy_total, static_cast<double>(tokens)); }
double MetricsReport::capacity() const { return ratio(static_cast<double>(bits), static_cast<double>(tokens)); }
double MetricsReport::utilization() const { return ratio(static_cast<double>(bits), entropy_total); }
double MetricsReport::split_rate() const { return ratio(static_cast<double>(splits), static_cast<double>(tokens)); }
double MetricsReport::split_waste() const { return ratio(split_information, entropy_total); }
double MetricsReport::extraction_waste() const { return ratio(residual_total, entropy_total); }
double MetricsReport::perplexity() const {
  return tokens ? std::exp2(log_loss_total / static_cast<double>(tokens)) : 1.0;
}
double MetricsReport::ms_per_token() const {
  return ratio(channel_ns + codec_ns, static_cast<double>(tokens)) * 1e-6;
}
double MetricsReport::codec_ms_per_token() const { return ratio(codec_ns, static_cast<double>(tokens)) * 1e-6; }
double MetricsReport::baseline_ms_per_token() const {
  return ratio(baseline_channel_ns + baseline_sampling_ns, static_cast<double>(baseline_tokens)) * 1e-6;
}
double MetricsReport::baseline_sampling_ms_per_token() const {
  return ratio(baseline_sampling_ns, static_cast<double>(baseline_tokens)) * 1e-6;
}
double MetricsReport::channel_capacity() const {
  return ratio(static_cast<double>(bits), (channel_ns + codec_ns) * 1e-9);
}

void MetricsReport::merge(const MetricsReport& o) {
  sessions += o.sessions;
  incomplete_sessions += o.incomplete_sessions;
  tokens += o.tokens;
  bits += o.bits;
  splits += o.splits;
  width_warnings += o.width_warnings;
  entropy_total += o.entropy_total;
  information_total += o.information_total;
  split_information += o.split_information;
  residual_total += o.residual_total;
  log_loss_total += o.log_loss_total;
  channel_ns += o.channel_ns;
  codec_ns += o.codec_ns;
  baseline_channel_ns += o.baseline_channel_ns;
  baseline_sampling_ns += o.baseline_sampling_ns;
  baseline_tokens += o.baseline_tokens;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["channel"] = channel;
  j["q"] = settings.q;
  j["top_k"] = settings.top_k;
  j["reorder"] = settings.reorder;
  j["seed"] = seed;
  j["payload_bytes"] = payload_bytes;
  j["sessions"] = sessions;
  j["incomplete_sessions"] = incomplete_sessions;
  j["tokens"] = tokens;
  j["bits"] = bits;
  j["splits"] = splits;
  j["entropy_bits_per_token"] = entropy_per_token();
  j["capacity_bits_per_token"] = capacity();
  j["utilization"] = utilization();
  j["split_rate"] = split_rate();
  j["split_waste"] = split_waste();
  j["extraction_waste"] = extraction_waste();
  j["information_ratio"] = ratio(information_total, entropy_total);
  j["perplexity"] = perplexity();
  j["ms_per_token"] = ms_per_token();
  j["codec_ms_per_token"] = codec_ms_per_token();
  j["baseline_ms_per_token"] = baseline_ms_per_token();
  j["baseline_sampling_ms_per_token"] = baseline_sampling_ms_per_token();
  j["channel_capacity_bits_per_s"] = channel_capacity();
  j["width_warnings"] = width_warnings;
  return j.dump();
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ns(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::nano>(b - a).count();
}

std::vector<std::uint8_t> random_payload(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  std::vector<std::uint8_t> out(n);
  for (auto& b : out) b = static_cast<std::uint8_t>(rng() >> 56);
  return out;
}

MetricsReport run_session(const ChannelSource& channel, const BenchmarkConfig& config,
                          std::uint64_t index) {
  const CodecSettings& settings = config.settings;
  StegoKey key = keygen(derive_seed(config.seed, 2 * index));
  auto payload = random_payload(derive_seed(config.seed, 2 * index + 1), config.payload_bytes);
  FramedMessage message = frame_message(payload, key);
  MessageStream stream(message);
  EncoderSession encoder(key, stream, settings);
  const std::uint64_t target = message.frame_bits();

  MetricsReport r;
  r.sessions = 1;
  std::vector<TokenId> history;
  while (encoder.extracted().size() < target && history.size() < settings.max_tokens) {
    auto t0 = Clock::now();
    TokenDistribution d = channel.next_distribution(history);
    auto t1 = Clock::now();
    TokenDistribution truncated = top_k_truncate(d, settings.top_k);
    StepOutcome out = encoder.step_prepared(quantize(truncated, settings.q));
    auto t2 = Clock::now();
    r.channel_ns += elapsed_ns(t0, t1);
    r.codec_ns += elapsed_ns(t1, t2);

    r.entropy_total += entropy_bits(truncated);
    auto it = std::find(truncated.token_ids.begin(), truncated.token_ids.end(), out.token);
    r.log_loss_total -= std::log2(truncated.probs[static_cast<std::size_t>(it - truncated.token_ids.begin())]);
    history.push_back(out.token);
  }
  const SessionStats& s = encoder.stats();
  r.tokens = s.steps;
  r.bits = s.bits;
  r.splits = s.splits;
  r.information_total = s.information;
  r.split_information = s.split_information;
  r.width_warnings = s.width_warnings;
  r.residual_total = encoder.residual_bits();
  if (encoder.extracted().size() < target) r.incomplete_sessions = 1;

  if (config.baseline) {
    PrgStream prg(key, Domain::Sampling);
    std::vector<TokenId> sampled;
    sampled.reserve(history.size());
    for (std::size_t i = 0; i < history.size(); ++i) {
      auto t0 = Clock::now();
      TokenDistribution d = channel.next_distribution(sampled);
      auto t1 = Clock::now();
      QuantizedDistribution q = prepare_distribution(d, settings);
      TokenId token = q.token_ids[sample_cell(q, prg.next_uniform())];
      auto t2 = Clock::now();
      r.baseline_channel_ns += elapsed_ns(t0, t1);
      r.baseline_sampling_ns += elapsed_ns(t1, t2);
      sampled.push_back(token);
    }
    r.baseline_tokens = sampled.size();
  }
  return r;
}

}  // namespace

MetricsReport run_benchmark(const ChannelSource& channel, const BenchmarkConfig& config) {
  require(config.token_budget > 0, "token budget must be positive");
  std::atomic<std::uint64_t> next_index{0};
  std::atomic<std::uint64_t> produced{0};
  std::mutex mu;
  std::map<std::uint64_t, MetricsReport> done;
  std::exception_ptr error;

  auto worker = [&] {
    try {
      while (produced.load() < config.token_budget) {
        std::uint64_t index = next_index.fetch_add(1);
        MetricsReport r = run_session(channel, config, index);
        produced.fetch_add(r.tokens);
        std::lock_guard lock(mu);
        done.emplace(index, std::move(r));
      }
    } catch (...) {
      std::lock_guard lock(mu);
      if (!error) error = std::current_exception();
      produced.store(config.token_budget);
    }
  };
  unsigned threads = std::max(1u, config.threads);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  MetricsReport total;
  total.channel = channel.model_id();
  total.settings = config.settings;
  total.seed = config.seed;
  total.payload_bytes = config.payload_bytes;
  // Fold the shortest index prefix that reaches the budget.
  for (auto& [index, r] : done) {
    if (total.tokens >= config.token_budget) break;
    total.merge(r);
  }
  return total;
}

WasteReport monte_carlo_waste(const ChannelSource& channel, const CodecSettings& settings,
                              std::uint64_t trials, std::uint64_t seed) {
  BenchmarkConfig config;
  config.settings = settings;
  config.token_budget = trials;
  config.seed = seed;
  config.baseline = false;
  MetricsReport r = run_benchmark(channel, config);
  return {r.split_waste(), r.extraction_waste(), r.utilization(), r.tokens};
}

double FirstStepTrials::split_rate() const { return ratio(static_cast<double>(splits), static_cast<double>(trials)); }

double FirstStepTrials::split_se() const {
  double p = split_rate();
  return std::sqrt(p * (1.0 - p) / static_cast<double>(trials));
}

double FirstStepTrials::mean_information() const { return ratio(information_sum, static_cast<double>(trials)); }

double FirstStepTrials::information_se() const {
  if (trials < 2) return 0.0;
  double n = static_cast<double>(trials);
  double mean = information_sum / n;
  double var = (information_sq_sum - n * mean * mean) / (n - 1.0);
  return std::sqrt(std::max(var, 0.0) / n);
}

FirstStepTrials first_step_trials(const QuantizedDistribution& q, bool reorder,
                                  std::uint64_t trials, std::uint64_t seed) {
  CodecSettings settings;
  settings.q = q.q;
  settings.reorder = reorder;
  std::unordered_map<TokenId, std::size_t> position;
  for (std::size_t i = 0; i < q.size(); ++i) position.emplace(q.token_ids[i], i);

  FirstStepTrials out;
  out.trials = trials;
  out.counts.assign(q.size(), 0);
  for (std::uint64_t t = 0; t < trials; ++t) {
    StegoKey key = keygen(derive_seed(seed, 2 * t));
    auto payload = random_payload(derive_seed(seed, 2 * t + 1), 16);
    FramedMessage message = frame_message(payload, key);
    MessageStream stream(message);
    EncoderSession encoder(key, stream, settings);
    StepOutcome step = encoder.step_prepared(q);
    ++out.counts[position.at(step.token)];
    if (step.kind == StepKind::Split) {
      ++out.splits;
    } else {
      double info = step.information();
      out.information_sum += info;
      out.information_sq_sum += info * info;
    }
  }
  return out;
}

std::string format_table(std::span<const MetricsReport> reports) {
  std::ostringstream os;
  char line[512];
  std::snprintf(line, sizeof line, "%-22s %5s %5s %9s %8s %8s %7s %7s %7s %9s %9s %11s %8s\n",
                "channel", "top-k", "reord", "tokens", "entropy", "capacity", "util%", "split%",
                "extr%", "ms/tok", "base ms", "chn bits/s", "ppl");
  os << line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line,
                  "%-22s %5zu %5s %9llu %8.4f %8.4f %7.2f %7.2f %7.3f %9.5f %9.5f %11.0f %8.3f\n",
                  r.channel.c_str(), r.settings.top_k, r.settings.reorder ? "on" : "off",
                  static_cast<unsigned long long>(r.tokens), r.entropy_per_token(), r.capacity(),
                  100.0 * r.utilization(), 100.0 * r.split_waste(), 100.0 * r.extraction_waste(),
                  r.ms_per_token(), r.baseline_ms_per_token(), r.channel_capacity(), r.perplexity());
    os << line;
  }
  return os.str();
}

}  // namespace shimer
