#pragma once

// In-process HTTP server speaking the distribution wire protocol over a toy
// word-level language model. Used to record fixtures and to exercise the
// adapter without a real model.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

namespace shimer::toy {

inline const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> words = [] {
    const char* list =
        "the of and to a in is it you that he was for on are with as I his they be at one "
        "have this from or had by hot word but what some we can out other were all there "
        "when up use your how said an each she which do their time if will way about many "
        "then them write would like so these her long make thing see him two has look more "
        "day could go come did number sound no most people my over know water than call "
        "first who may down side been now find any new work part take get place made live "
        "where after back little only round man year came show every good me give our under "
        "name very through just form sentence great think say help low line differ turn "
        "cause much mean before move right boy old too same tell does set three want air "
        "well also play small end put home read hand port large spell add even land here "
        "must big high such follow act why ask men change went light kind off need house "
        "picture try us again animal point mother world near build self earth father head "
        "stand own page should country found answer school grow study still learn plant "
        "cover food sun four between state keep eye never last let thought city tree cross "
        "farm hard start might story saw far sea draw left late run while press close night "
        "real life few north . ,";
    std::vector<std::string> out;
    std::istringstream in(list);
    for (std::string w; in >> w;)
      if (std::find(out.begin(), out.end(), w) == out.end()) out.push_back(w);
    return out;
  }();
  return words;
}

/// Word tokens have ids 0..V-1 and render with a leading space; ids
/// 1000 + b spell out byte b for words outside the vocabulary.
constexpr std::uint32_t kByteBase = 1000;
constexpr std::uint32_t kSpace = kByteBase + ' ';

inline std::vector<std::uint32_t> tokenize(const std::string& text) {
  const auto& vocab = vocabulary();
  std::vector<std::uint32_t> ids;
  std::size_t pos = 0;
  while (pos <= text.size() && !text.empty()) {
    std::size_t next = text.find(' ', pos);
    if (next == std::string::npos) next = text.size();
    const std::string word = text.substr(pos, next - pos);
    auto it = std::find(vocab.begin(), vocab.end(), word);
    if (!word.empty() && it != vocab.end()) {
      ids.push_back(static_cast<std::uint32_t>(it - vocab.begin()));
    } else {
      ids.push_back(kSpace);
      for (unsigned char c : word) ids.push_back(kByteBase + c);
    }
    pos = next + 1;
  }
  return ids;
}

inline std::string detokenize(const std::vector<std::uint32_t>& ids) {
  const auto& vocab = vocabulary();
  std::string out;
  for (std::uint32_t id : ids) {
    if (id < vocab.size())
      out += " " + vocab[id];
    else if (id >= kByteBase && id < kByteBase + 256)
      out += static_cast<char>(id - kByteBase);
  }
  if (!out.empty() && out.front() == ' ') out.erase(0, 1);
  return out;
}

inline std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

struct Entry {
  std::uint32_t id;
  double prob;
};

/// Softmax over word tokens with logits from a Zipf prior plus a hash of the
/// last two context tokens; top-k by probability then id, renormalized.
inline std::vector<Entry> distribution(const std::vector<std::uint32_t>& context,
                                       std::size_t top_k, double temperature = 1.0) {
  const std::size_t v = vocabulary().size();
  const std::uint64_t a = context.empty() ? 0 : context.back();
  const std::uint64_t b = context.size() < 2 ? 0 : context[context.size() - 2];
  const std::uint64_t state = mix(a * 0x100000001b3ull ^ mix(b + 7));
  std::vector<double> logits(v);
  for (std::size_t i = 0; i < v; ++i) {
    const double u = static_cast<double>(mix(state ^ (i * 0x2545f4914f6cdd1dull)) >> 11) * 0x1p-53;
    logits[i] = (-1.1 * std::log(static_cast<double>(i) + 1.0) + 3.0 * u) / temperature;
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<Entry> entries(v);
  double sum = 0.0;
  for (std::size_t i = 0; i < v; ++i) {
    entries[i] = {static_cast<std::uint32_t>(i), std::exp(logits[i] - top)};
    sum += entries[i].prob;
  }
  for (auto& e : entries) e.prob /= sum;
  std::sort(entries.begin(), entries.end(), [](const Entry& x, const Entry& y) {
    return x.prob != y.prob ? x.prob > y.prob : x.id < y.id;
  });
  entries.resize(std::min(std::max<std::size_t>(top_k, 1), v));
  double kept = 0.0;
  for (const auto& e : entries) kept += e.prob;
  for (auto& e : entries) e.prob /= kept;
  return entries;
}

inline std::string shortest(double p) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, p);
  return std::string(buf, end);
}

class Server {
 public:
  struct Options {
    std::string model = "toy-zipf-bigram";
    /// Perturbs every response with a request counter (probe-mode tests).
    bool nondeterministic = false;
    /// When nonzero, /v1/distribution answers with this status.
    int fail_status = 0;
  };

  Server() : Server(Options{}) {}
  explicit Server(Options options) : options_(std::move(options)) {
    using nlohmann::ordered_json;
    server_.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
      ordered_json j{{"model", options_.model}, {"determinism_mode", "cpu-fp32"}};
      res.set_content(j.dump(), "application/json");
    });
    server_.Post("/v1/tokenize", [](const httplib::Request& req, httplib::Response& res) {
      auto j = ordered_json::parse(req.body, nullptr, false);
      if (j.is_discarded() || !j.contains("text")) {
        res.status = 400;
        return;
      }
      ordered_json out{{"ids", tokenize(j["text"].get<std::string>())}};
      res.set_content(out.dump(), "application/json");
    });
    server_.Post("/v1/detokenize", [](const httplib::Request& req, httplib::Response& res) {
      auto j = ordered_json::parse(req.body, nullptr, false);
      if (j.is_discarded() || !j.contains("ids")) {
        res.status = 400;
        return;
      }
      ordered_json out{{"text", detokenize(j["ids"].get<std::vector<std::uint32_t>>())}};
      res.set_content(out.dump(), "application/json");
    });
    server_.Post("/v1/distribution", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests_;
      if (options_.fail_status != 0) {
        res.status = options_.fail_status;
        res.set_content("{\"error\":\"injected\"}", "application/json");
        return;
      }
      auto j = ordered_json::parse(req.body, nullptr, false);
      if (j.is_discarded() || !j.contains("context_ids") || !j.contains("top_k") ||
          j.value("model", "") != options_.model) {
        res.status = 400;
        res.set_content("{\"error\":\"bad request\"}", "application/json");
        return;
      }
      const double temperature =
          options_.nondeterministic ? 1.0 + 1e-9 * static_cast<double>(requests_.load()) : 1.0;
      auto entries = distribution(j["context_ids"].get<std::vector<std::uint32_t>>(),
                                  j["top_k"].get<std::size_t>(), temperature);
      ordered_json ids = ordered_json::array(), probs = ordered_json::array();
      for (const auto& e : entries) {
        ids.push_back(e.id);
        probs.push_back(shortest(e.prob));
      }
      ordered_json out{{"token_ids", ids}, {"probs", probs}};
      res.set_content(out.dump(), "application/json");
    });
  }

  ~Server() { stop(); }
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds to 127.0.0.1 (port 0 picks a free port) and serves in the background.
  int start(int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port("127.0.0.1") : port;
    if (port != 0 && !server_.bind_to_port("127.0.0.1", port)) return -1;
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Blocks serving on the calling thread.
  bool listen(const std::string& host, int port) { return server_.listen(host, port); }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  std::uint64_t requests() const { return requests_.load(); }

 private:
  Options options_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<std::uint64_t> requests_{0};
};

}  // namespace shimer::toy
