#include "shimer/adapter.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>

#include <httplib.h>
#include <json.hpp>

#include "shimer/error.hpp"

namespace shimer {
namespace {

using json = nlohmann::ordered_json;

json parse_json(const std::string& body, const char* what) {
  try {
    return json::parse(body);
  } catch (const json::exception& e) {
    fail(ErrorCode::ServerError, std::string(what) + ": malformed JSON: " + e.what());
  }
}

std::string tokenize_request(const std::string& text) { return json{{"text", text}}.dump(); }

std::string detokenize_request(std::span<const TokenId> ids) {
  return json{{"ids", std::vector<TokenId>(ids.begin(), ids.end())}}.dump();
}

std::vector<TokenId> parse_ids(const std::string& body) {
  const json j = parse_json(body, "tokenize");
  if (!j.contains("ids") || !j["ids"].is_array())
    fail(ErrorCode::ServerError, "tokenize: missing ids");
  try {
    return j["ids"].get<std::vector<TokenId>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::ServerError, std::string("tokenize: bad ids: ") + e.what());
  }
}

std::string parse_text(const std::string& body) {
  const json j = parse_json(body, "detokenize");
  if (!j.contains("text") || !j["text"].is_string())
    fail(ErrorCode::ServerError, "detokenize: missing text");
  return j["text"].get<std::string>();
}

HealthInfo parse_health(const std::string& body) {
  const json j = parse_json(body, "health");
  if (!j.contains("model") || !j["model"].is_string())
    fail(ErrorCode::ServerError, "health: missing model");
  HealthInfo h;
  h.model = j["model"].get<std::string>();
  if (j.contains("determinism_mode") && j["determinism_mode"].is_string())
    h.determinism_mode = j["determinism_mode"].get<std::string>();
  return h;
}

}  // namespace

FixtureRecorder::FixtureRecorder(std::filesystem::path path) : path_(std::move(path)) {}

void FixtureRecorder::record(const std::string& kind, const std::string& request,
                             const std::string& response) {
  json line{{"kind", kind}, {"request", request}, {"response", response}};
  std::lock_guard lock(mutex_);
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot append to fixture " + path_.string());
  out << line.dump() << '\n';
}

std::string format_probability(double p) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, p);
  if (ec != std::errc{}) fail(ErrorCode::ContractViolation, "unformattable probability");
  return std::string(buf, end);
}

TokenDistribution parse_distribution_body(const std::string& body) {
  const json j = parse_json(body, "distribution");
  if (!j.contains("token_ids") || !j.contains("probs") || !j["token_ids"].is_array() ||
      !j["probs"].is_array())
    fail(ErrorCode::ServerError, "distribution: missing token_ids or probs");
  const json& ids = j["token_ids"];
  const json& probs = j["probs"];
  if (ids.size() != probs.size() || ids.empty())
    fail(ErrorCode::ServerError, "distribution: token_ids and probs differ in length or are empty");

  TokenDistribution d;
  d.token_ids.reserve(ids.size());
  d.probs.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!ids[i].is_number_unsigned())
      fail(ErrorCode::ServerError, "distribution: token id is not an unsigned integer");
    if (!probs[i].is_string())
      fail(ErrorCode::ServerError, "distribution: probability is not a decimal string");
    const std::string& s = probs[i].get_ref<const std::string&>();
    double p = 0.0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), p);
    if (ec != std::errc{} || end != s.data() + s.size() || !std::isfinite(p) || p <= 0.0)
      fail(ErrorCode::ServerError, "distribution: bad probability \"" + s + "\"");
    d.token_ids.push_back(ids[i].get<TokenId>());
    d.probs.push_back(p);
  }
  for (std::size_t i = 1; i < d.size(); ++i) {
    const bool ordered = d.probs[i - 1] > d.probs[i] ||
                         (d.probs[i - 1] == d.probs[i] && d.token_ids[i - 1] < d.token_ids[i]);
    if (!ordered) fail(ErrorCode::ServerError, "distribution: entries not in canonical order");
  }
  return d;
}

std::string distribution_request_body(const std::string& model, std::span<const TokenId> context,
                                      std::size_t top_k) {
  json j{{"model", model},
         {"context_ids", std::vector<TokenId>(context.begin(), context.end())},
         {"top_k", top_k}};
  return j.dump();
}

AdapterChannel::AdapterChannel(AdapterConfig config, std::shared_ptr<FixtureRecorder> recorder)
    : config_(std::move(config)), recorder_(std::move(recorder)) {
  if (config_.endpoint.empty()) fail(ErrorCode::BadSpec, "adapter endpoint is empty");
  if (config_.model.empty()) config_.model = health().model;
}

namespace {

httplib::Client make_client(const AdapterConfig& config) {
  httplib::Client client(config.endpoint);
  if (!client.is_valid()) fail(ErrorCode::BadSpec, "unsupported endpoint " + config.endpoint);
  const auto timeout = std::chrono::duration<double>(config.timeout_seconds);
  const auto us = std::chrono::duration_cast<std::chrono::microseconds>(timeout);
  client.set_connection_timeout(us);
  client.set_read_timeout(us);
  client.set_write_timeout(us);
  return client;
}

template <class Send>
std::string exchange(const AdapterConfig& config, const std::string& what, Send send) {
  std::string last_error;
  bool server_side = false;
  for (unsigned attempt = 0; attempt <= config.retries; ++attempt) {
    httplib::Client client = make_client(config);
    httplib::Result result = send(client);
    if (!result) {
      last_error = what + ": " + httplib::to_string(result.error());
      server_side = false;
      continue;
    }
    if (result->status >= 500) {
      last_error = what + ": HTTP " + std::to_string(result->status) + " " + result->body;
      server_side = true;
      continue;
    }
    if (result->status != 200)
      fail(ErrorCode::ServerError,
           what + ": HTTP " + std::to_string(result->status) + " " + result->body);
    return result->body;
  }
  if (server_side) fail(ErrorCode::ServerError, last_error);
  fail(ErrorCode::Transport, last_error);
}

}  // namespace

std::string AdapterChannel::post(const std::string& path, const std::string& body,
                                 const char* kind) const {
  std::string response = exchange(config_, "POST " + path, [&](httplib::Client& c) {
    return c.Post(path, body, "application/json");
  });
  if (recorder_) recorder_->record(kind, body, response);
  return response;
}

std::string AdapterChannel::get(const std::string& path, const char* kind) const {
  std::string response =
      exchange(config_, "GET " + path, [&](httplib::Client& c) { return c.Get(path); });
  if (recorder_) recorder_->record(kind, "", response);
  return response;
}

TokenDistribution AdapterChannel::fetch_distribution(std::span<const TokenId> history,
                                                     std::size_t top_k) const {
  require(!history.empty(), "distribution request needs a non-empty history");
  const std::string body = distribution_request_body(config_.model, history, top_k);
  const std::string response = post("/v1/distribution", body, "distribution");
  if (config_.probe) {
    const std::string again = exchange(config_, "POST /v1/distribution", [&](httplib::Client& c) {
      return c.Post("/v1/distribution", body, "application/json");
    });
    if (again != response)
      fail(ErrorCode::NonDeterministic,
           "duplicate distribution request returned a different body (context length " +
               std::to_string(history.size()) + ")");
  }
  return parse_distribution_body(response);
}

std::vector<TokenId> AdapterChannel::tokenize(const std::string& text) const {
  return parse_ids(post("/v1/tokenize", tokenize_request(text), "tokenize"));
}

std::string AdapterChannel::detokenize_ids(std::span<const TokenId> ids) const {
  return parse_text(post("/v1/detokenize", detokenize_request(ids), "detokenize"));
}

HealthInfo AdapterChannel::health() const { return parse_health(get("/v1/health", "health")); }

FixtureChannel::FixtureChannel(const std::filesystem::path& path, std::size_t top_k)
    : top_k_(top_k) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open fixture " + path.string());
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(ErrorCode::BadSpec, path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
    const auto where = path.string() + ":" + std::to_string(number) + ": ";
    if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string() || !j.contains("request") ||
        !j["request"].is_string() || !j.contains("response") || !j["response"].is_string()) {
      fail(ErrorCode::BadSpec, where + "expected string fields kind, request, response");
    }
    const std::string kind = j["kind"].get<std::string>();
    const std::string request = j["request"].get<std::string>();
    const std::string response = j["response"].get<std::string>();
    if (kind == "distribution") {
      const json body = json::parse(request, nullptr, false);
      if (!body.is_object()) fail(ErrorCode::BadSpec, where + "distribution request is not an object");
      if (model_.empty()) model_ = body.value("model", "");
      distributions_.emplace(request, response);
    } else if (kind == "tokenize") {
      tokenize_.emplace(request, response);
    } else if (kind == "detokenize") {
      detokenize_.emplace(request, response);
    } else if (kind == "health") {
      health_ = response;
      model_ = parse_health(response).model;
    } else {
      fail(ErrorCode::BadSpec, where + "unknown kind " + kind);
    }
  }
}

namespace {

const std::string& replay(const std::map<std::string, std::string>& table,
                          const std::string& request, const char* what) {
  auto it = table.find(request);
  if (it == table.end()) fail(ErrorCode::Transport, std::string(what) + ": request not in fixture");
  return it->second;
}

}  // namespace

TokenDistribution FixtureChannel::fetch_distribution(std::span<const TokenId> history,
                                                     std::size_t top_k) const {
  require(!history.empty(), "distribution request needs a non-empty history");
  return parse_distribution_body(
      replay(distributions_, distribution_request_body(model_, history, top_k), "distribution"));
}

std::vector<TokenId> FixtureChannel::tokenize(const std::string& text) const {
  return parse_ids(replay(tokenize_, tokenize_request(text), "tokenize"));
}

std::string FixtureChannel::detokenize_ids(std::span<const TokenId> ids) const {
  return parse_text(replay(detokenize_, detokenize_request(ids), "detokenize"));
}

std::optional<std::string> FixtureChannel::detokenize(std::span<const TokenId> ids) const {
  auto it = detokenize_.find(detokenize_request(ids));
  if (it == detokenize_.end()) return std::nullopt;
  return parse_text(it->second);
}

HealthInfo FixtureChannel::health() const {
  if (!health_) fail(ErrorCode::Transport, "health: not in fixture");
  return parse_health(*health_);
}

}  // namespace shimer
