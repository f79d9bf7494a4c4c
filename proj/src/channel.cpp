#include "shimer/channel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

#include "shimer/error.hpp"

namespace shimer {

void TokenDistribution::validate(double tolerance) const {
  require(token_ids.size() == probs.size(), "ids and probs differ in length");
  require(!token_ids.empty(), "distribution is empty");
  std::unordered_set<TokenId> seen;
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    require(probs[i] > 0.0 && std::isfinite(probs[i]), "probabilities must be positive");
    require(seen.insert(token_ids[i]).second, "token ids must be unique");
    sum += probs[i];
  }
  require(std::fabs(sum - 1.0) <= tolerance, "probabilities must sum to 1");
}

std::size_t QuantizedDistribution::cell_at(std::uint64_t point) const {
  auto it = std::upper_bound(cumulative.begin(), cumulative.end(), point);
  return static_cast<std::size_t>(it - cumulative.begin()) - 1;
}

std::optional<std::size_t> QuantizedDistribution::index_of(TokenId id) const {
  auto it = std::find(token_ids.begin(), token_ids.end(), id);
  if (it == token_ids.end()) return std::nullopt;
  return static_cast<std::size_t>(it - token_ids.begin());
}

void QuantizedDistribution::rebuild_cumulative() {
  cumulative.resize(weights.size() + 1);
  cumulative[0] = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) cumulative[i + 1] = cumulative[i] + weights[i];
}

TokenDistribution top_k_truncate(const TokenDistribution& d, std::size_t k) {
  require(k >= 1, "top-k needs k >= 1");
  TokenDistribution out;
  if (k >= d.size()) {
    out = d;
  } else {
    std::vector<std::size_t> order(d.size());
    std::iota(order.begin(), order.end(), 0);
    auto better = [&](std::size_t a, std::size_t b) {
      if (d.probs[a] != d.probs[b]) return d.probs[a] > d.probs[b];
      return d.token_ids[a] < d.token_ids[b];
    };
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1),
                     order.end(), better);
    order.resize(k);
    std::sort(order.begin(), order.end());
    out.token_ids.reserve(k);
    out.probs.reserve(k);
    for (auto i : order) {
      out.token_ids.push_back(d.token_ids[i]);
      out.probs.push_back(d.probs[i]);
    }
  }
  double sum = 0.0;
  for (double p : out.probs) sum += p;
  for (double& p : out.probs) p /= sum;
  return out;
}

QuantizedDistribution quantize(const TokenDistribution& d, unsigned q) {
  require(q >= 2 && q <= 32, "quantization exponent must lie in [2, 32]");
  const std::size_t n = d.size();
  require(n >= 1, "cannot quantize an empty distribution");
  const std::uint64_t total = std::uint64_t{1} << q;
  if (n > total) {
    fail(ErrorCode::TooManyTokens,
         std::to_string(n) + " tokens do not fit in 2^" + std::to_string(q) + " weight units");
  }

  QuantizedDistribution out;
  out.q = q;
  out.token_ids = d.token_ids;
  out.weights.resize(n);
  std::vector<double> remainder(n);
  std::vector<char> lifted(n, 0);
  std::uint64_t sum = 0;
  const double scale = static_cast<double>(total);
  for (std::size_t i = 0; i < n; ++i) {
    double scaled = d.probs[i] * scale;  // exact: scale is a power of two
    double floor = std::floor(scaled);
    remainder[i] = scaled - floor;
    auto w = static_cast<std::uint64_t>(floor);
    if (w == 0) {
      w = 1;
      lifted[i] = 1;
    }
    out.weights[i] = w;
    sum += w;
  }

  if (sum < total) {
    std::vector<std::size_t> candidates;
    candidates.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (!lifted[i]) candidates.push_back(i);
    }
    if (candidates.empty()) {
      candidates.resize(n);
      std::iota(candidates.begin(), candidates.end(), 0);
    }
    auto larger_first = [&](std::size_t a, std::size_t b) {
      if (remainder[a] != remainder[b]) return remainder[a] > remainder[b];
      return a < b;
    };
    std::uint64_t extra = total - sum;
    while (extra > 0) {
      std::size_t take = static_cast<std::size_t>(std::min<std::uint64_t>(extra, candidates.size()));
      if (take < candidates.size()) {
        std::nth_element(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                         candidates.end(), larger_first);
      }
      for (std::size_t j = 0; j < take; ++j) ++out.weights[candidates[j]];
      extra -= take;
    }
  } else if (sum > total) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (remainder[a] != remainder[b]) return remainder[a] < remainder[b];
      return a > b;
    });
    std::uint64_t excess = sum - total;
    while (excess > 0) {
      bool progressed = false;
      for (auto i : order) {
        if (excess == 0) break;
        if (out.weights[i] >= 2) {
          --out.weights[i];
          --excess;
          progressed = true;
        }
      }
      require(progressed, "quantization could not shed excess weight");
    }
  }
  out.rebuild_cumulative();
  return out;
}

double entropy_bits(const TokenDistribution& d) {
  double h = 0.0;
  for (double p : d.probs) {
    if (p > 0.0) h -= p * std::log2(p);
  }
  return h;
}

namespace {

std::string format_number(double x) {
  std::ostringstream os;
  os << x;
  return os.str();
}

TokenDistribution zipf_probs(double s, std::size_t k) {
  TokenDistribution d;
  d.token_ids.resize(k);
  d.probs.resize(k);
  double sum = 0.0;
  for (std::size_t r = 0; r < k; ++r) {
    d.token_ids[r] = static_cast<TokenId>(r);
    d.probs[r] = std::pow(static_cast<double>(r + 1), -s);
    sum += d.probs[r];
  }
  for (double& p : d.probs) p /= sum;
  return d;
}

}  // namespace

UniformChannel::UniformChannel(std::size_t k) {
  if (k == 0) fail(ErrorCode::BadSpec, "uniform channel needs k >= 1");
  dist_.token_ids.resize(k);
  std::iota(dist_.token_ids.begin(), dist_.token_ids.end(), TokenId{0});
  dist_.probs.assign(k, 1.0 / static_cast<double>(k));
}

std::string UniformChannel::model_id() const {
  return "uniform:" + std::to_string(dist_.size());
}

ZipfChannel::ZipfChannel(double s, std::size_t k) : s_(s) {
  if (k == 0 || !(s >= 0.0) || !std::isfinite(s)) fail(ErrorCode::BadSpec, "zipf channel needs s >= 0 and k >= 1");
  dist_ = zipf_probs(s, k);
}

std::string ZipfChannel::model_id() const {
  return "zipf:" + format_number(s_) + ":" + std::to_string(dist_.size());
}

TwoPointChannel::TwoPointChannel(double p) : p_(p) {
  if (!(p > 0.0 && p < 1.0)) fail(ErrorCode::BadSpec, "two-point channel needs 0 < p < 1");
  dist_.token_ids = {0, 1};
  dist_.probs = {p, 1.0 - p};
}

std::string TwoPointChannel::model_id() const { return "twopoint:" + format_number(p_); }

MarkovChannel::MarkovChannel(std::size_t k, std::uint64_t seed) : k_(k), seed_(seed) {
  if (k == 0) fail(ErrorCode::BadSpec, "markov channel needs k >= 1");
  std::mt19937_64 rng(seed);
  rows_.reserve(k);
  std::vector<TokenId> perm(k);
  for (std::size_t state = 0; state < k; ++state) {
    double exponent = 0.8 + 0.8 * static_cast<double>(rng() >> 11) * 0x1p-53;
    std::iota(perm.begin(), perm.end(), TokenId{0});
    for (std::size_t i = k; i-- > 1;) {
      std::swap(perm[i], perm[rng() % (i + 1)]);
    }
    TokenDistribution row;
    row.token_ids.resize(k);
    std::iota(row.token_ids.begin(), row.token_ids.end(), TokenId{0});
    row.probs.resize(k);
    double sum = 0.0;
    for (std::size_t r = 0; r < k; ++r) {
      double p = std::pow(static_cast<double>(r + 1), -exponent);
      row.probs[perm[r]] = p;
      sum += p;
    }
    for (double& p : row.probs) p /= sum;
    rows_.push_back(std::move(row));
  }
}

TokenDistribution MarkovChannel::next_distribution(std::span<const TokenId> history) const {
  std::size_t state = history.empty() ? 0 : history.back() % k_;
  return rows_[state];
}

std::string MarkovChannel::model_id() const {
  return "markov:" + std::to_string(k_) + ":" + std::to_string(seed_);
}

ScriptedChannel::ScriptedChannel(std::vector<TokenDistribution> script, std::size_t base,
                                 std::string name)
    : script_(std::move(script)), base_(base), name_(std::move(name)) {
  if (script_.empty()) fail(ErrorCode::BadSpec, "scripted channel needs at least one distribution");
  for (const auto& d : script_) d.validate(1e-9);
}

ScriptedChannel ScriptedChannel::load(const std::filesystem::path& path, std::size_t base) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open scripted channel file " + path.string());
  std::vector<TokenDistribution> script;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    std::string field;
    TokenDistribution d;
    while (fields >> field) {
      auto colon = field.find(':');
      TokenId id = 0;
      double prob = 0.0;
      const char* end = field.data() + field.size();
      bool ok = colon != std::string::npos;
      if (ok) {
        auto r1 = std::from_chars(field.data(), field.data() + colon, id);
        auto r2 = std::from_chars(field.data() + colon + 1, end, prob);
        ok = r1.ec == std::errc{} && r1.ptr == field.data() + colon && r2.ec == std::errc{} &&
             r2.ptr == end;
      }
      if (!ok) {
        fail(ErrorCode::BadSpec, path.string() + ":" + std::to_string(line_no) +
                                     ": expected id:prob, got '" + field + "'");
      }
      d.token_ids.push_back(id);
      d.probs.push_back(prob);
    }
    script.push_back(std::move(d));
  }
  return ScriptedChannel(std::move(script), base, "scripted:" + path.filename().string());
}

TokenDistribution ScriptedChannel::next_distribution(std::span<const TokenId> history) const {
  std::size_t step = history.size() >= base_ ? history.size() - base_ : 0;
  return script_[step % script_.size()];
}

namespace {

std::vector<std::string> split_spec(const std::string& spec, std::size_t max_parts) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (parts.size() + 1 < max_parts) {
    auto colon = spec.find(':', start);
    if (colon == std::string::npos) break;
    parts.push_back(spec.substr(start, colon - start));
    start = colon + 1;
  }
  parts.push_back(spec.substr(start));
  return parts;
}

template <typename T>
T parse_field(const std::string& text, const std::string& spec) {
  T value{};
  auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    fail(ErrorCode::BadSpec, "bad number '" + text + "' in channel spec '" + spec + "'");
  }
  return value;
}

}  // namespace

std::unique_ptr<ChannelSource> make_synthetic_channel(const std::string& spec,
                                                      std::size_t prompt_length) {
  auto kind = spec.substr(0, spec.find(':'));
  if (kind == "scripted") {
    auto parts = split_spec(spec, 2);
    if (parts.size() != 2 || parts[1].empty()) fail(ErrorCode::BadSpec, "scripted channel needs a path");
    return std::make_unique<ScriptedChannel>(ScriptedChannel::load(parts[1], prompt_length));
  }
  auto parts = split_spec(spec, 8);
  if (kind == "uniform" && parts.size() == 2) {
    return std::make_unique<UniformChannel>(parse_field<std::size_t>(parts[1], spec));
  }
  if (kind == "zipf" && parts.size() == 3) {
    return std::make_unique<ZipfChannel>(parse_field<double>(parts[1], spec),
                                         parse_field<std::size_t>(parts[2], spec));
  }
  if (kind == "markov" && parts.size() == 3) {
    return std::make_unique<MarkovChannel>(parse_field<std::size_t>(parts[1], spec),
                                           parse_field<std::uint64_t>(parts[2], spec));
  }
  if (kind == "twopoint" && parts.size() == 2) {
    return std::make_unique<TwoPointChannel>(parse_field<double>(parts[1], spec));
  }
  fail(ErrorCode::BadSpec, "unknown channel spec '" + spec +
                               "' (expected uniform:K, zipf:S:K, markov:K:SEED, twopoint:P or "
                               "scripted:PATH)");
}

}  // namespace shimer
