#include <doctest.h>

#include <httplib.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "shimer/adapter.hpp"
#include "shimer/codec.hpp"
#include "support.hpp"
#include "toy_model_server.hpp"

using namespace shimer;
using shimer::testing::fixture;
using json = nlohmann::json;

namespace {

AdapterConfig config_for(const toy::Server& server) {
  AdapterConfig c;
  c.endpoint = server.url();
  c.timeout_seconds = 5.0;
  c.retries = 1;
  return c;
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "shimer-tests";
  std::filesystem::create_directories(dir);
  auto p = dir / name;
  std::filesystem::remove(p);
  return p;
}

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

}  // namespace

TEST_SUITE("llm-dist-client") {
  TEST_CASE("distribution body parsing") {
    const TokenDistribution d =
        parse_distribution_body(R"({"token_ids":[5,2,9],"probs":["0.5","0.25","0.25"]})");
    CHECK(d.token_ids == std::vector<TokenId>{5, 2, 9});
    CHECK(d.probs == std::vector<double>{0.5, 0.25, 0.25});

    // Shortest decimals round-trip exactly.
    const double p = 0.1 + 0.2;
    CHECK(format_probability(p) == "0.30000000000000004");
    const TokenDistribution exact = parse_distribution_body(
        R"({"token_ids":[0,1],"probs":["0.7",")" + format_probability(p) + R"("]})");
    CHECK(exact.probs[1] == p);

    for (const char* bad : {
             R"({"token_ids":[1,2],"probs":["0.5"]})",
             R"({"token_ids":[],"probs":[]})",
             R"({"token_ids":[1,2],"probs":[0.5,0.5]})",
             R"({"token_ids":[1,2],"probs":["0.5","x"]})",
             R"({"token_ids":[1,2],"probs":["0.5","0"]})",
             R"({"token_ids":[1,2],"probs":["nan","0.5"]})",
             R"({"token_ids":[1,2],"probs":["0.25","0.75"]})",
             R"({"token_ids":[2,1],"probs":["0.5","0.5"]})",
             R"({"probs":["1"]})",
             "not json"}) {
      CHECK_ERROR(parse_distribution_body(bad), ErrorCode::ServerError);
    }
    // Equal probabilities are ordered by ascending id.
    CHECK_NOTHROW(parse_distribution_body(R"({"token_ids":[1,2],"probs":["0.5","0.5"]})"));
  }

  TEST_CASE("canonical request body") {
    const std::vector<TokenId> ctx = {3, 1, 4};
    CHECK(distribution_request_body("m", ctx, 10) ==
          R"({"model":"m","context_ids":[3,1,4],"top_k":10})");
  }

  TEST_CASE("live server exchange") {
    toy::Server server;
    REQUIRE(server.start() > 0);
    AdapterChannel channel(config_for(server));
    const HealthInfo h = channel.health();
    CHECK(h.model == "toy-zipf-bigram");
    CHECK(h.determinism_mode == "cpu-fp32");
    // The model name is filled in from the health endpoint.
    CHECK(channel.model_id() == "toy-zipf-bigram");

    const std::vector<TokenId> ctx = {0, 85};
    const TokenDistribution d = channel.next_distribution(ctx);
    CHECK(d.size() == 100);
    CHECK_NOTHROW(d.validate(1e-9));
    const auto expected = toy::distribution({0, 85}, 100);
    for (std::size_t i = 0; i < d.size(); ++i) {
      CHECK(d.token_ids[i] == expected[i].id);
      CHECK(d.probs[i] == expected[i].prob);
    }
    CHECK(channel.next_distribution(ctx).probs == d.probs);

    const TokenDistribution one = channel.fetch_distribution(ctx, 1);
    CHECK(one.size() == 1);
    CHECK(one.probs[0] == 1.0);

    CHECK_ERROR(channel.next_distribution({}), ErrorCode::ContractViolation);

    const std::string text = "the old man said they would come back home";
    const auto ids = channel.tokenize(text);
    CHECK(ids.size() == 9);
    CHECK(channel.detokenize_ids(ids) == text);
    CHECK(channel.tokenize("").empty());
    // Out-of-vocabulary words fall back to byte tokens and still round-trip.
    CHECK(channel.detokenize_ids(channel.tokenize("a blue sky")) == "a blue sky");
    server.stop();
  }

  TEST_CASE("probe mode detects a nondeterministic server") {
    toy::Server::Options options;
    options.nondeterministic = true;
    toy::Server server(options);
    REQUIRE(server.start() > 0);
    AdapterConfig c = config_for(server);
    c.probe = true;
    AdapterChannel probing(c);
    const std::vector<TokenId> ctx = {4};
    CHECK_ERROR(probing.next_distribution(ctx), ErrorCode::NonDeterministic);

    toy::Server steady;
    REQUIRE(steady.start() > 0);
    AdapterConfig sc = config_for(steady);
    sc.probe = true;
    AdapterChannel ok(sc);
    CHECK_NOTHROW(ok.next_distribution(ctx));
    CHECK(steady.requests() == 2);
  }

  TEST_CASE("server and transport failures") {
    toy::Server::Options options;
    options.fail_status = 503;
    toy::Server failing(options);
    REQUIRE(failing.start() > 0);
    AdapterConfig c = config_for(failing);
    c.model = "toy-zipf-bigram";
    c.retries = 2;
    AdapterChannel channel(c);
    const std::vector<TokenId> ctx = {1};
    CHECK_ERROR(channel.next_distribution(ctx), ErrorCode::ServerError);
    // 5xx replies are retried.
    CHECK(failing.requests() == 3);

    options.fail_status = 400;
    toy::Server rejecting(options);
    REQUIRE(rejecting.start() > 0);
    AdapterConfig rc = config_for(rejecting);
    rc.model = "toy-zipf-bigram";
    CHECK_ERROR(AdapterChannel(rc).next_distribution(ctx), ErrorCode::ServerError);
    CHECK(rejecting.requests() == 1);

    toy::Server wrong_model;
    REQUIRE(wrong_model.start() > 0);
    AdapterConfig wc = config_for(wrong_model);
    wc.model = "other-model";
    CHECK_ERROR(AdapterChannel(wc).next_distribution(ctx), ErrorCode::ServerError);

    // Nothing listens on this port once the server is gone.
    toy::Server gone;
    const int port = gone.start();
    gone.stop();
    AdapterConfig tc;
    tc.endpoint = "http://127.0.0.1:" + std::to_string(port);
    tc.model = "toy-zipf-bigram";
    tc.timeout_seconds = 1.0;
    tc.retries = 0;
    CHECK_ERROR(AdapterChannel(tc).next_distribution(ctx), ErrorCode::Transport);
  }

  TEST_CASE("recorded exchanges replay identically") {
    toy::Server server;
    REQUIRE(server.start() > 0);
    const auto path = temp_path("replay.jsonl");
    auto recorder = std::make_shared<FixtureRecorder>(path);
    AdapterChannel live(config_for(server), recorder);
    live.health();
    const auto prompt = live.tokenize("she said they would write");
    CodecSettings settings;
    settings.max_tokens = 400;
    const StegoKey key = keygen(77);
    const auto payload = bytes_of("fixture replay");
    const EncodeResult r = encode(key, live, prompt, payload, settings);
    REQUIRE(r.container.complete);
    const auto text = live.detokenize_ids(r.container.tokens);
    server.stop();

    FixtureChannel replay(path, settings.top_k);
    CHECK(replay.model_id() == "toy-zipf-bigram");
    CHECK(replay.tokenize("she said they would write") == prompt);
    CHECK(replay.detokenize_ids(r.container.tokens) == text);
    CHECK(replay.distribution_count() == r.container.tokens.size());
    CHECK(decode(key, replay, prompt, r.container).payload == payload);
    std::vector<TokenId> unseen = prompt;
    unseen.push_back(123456);
    CHECK_ERROR(replay.next_distribution(unseen), ErrorCode::Transport);
  }

  TEST_CASE("committed fixture reproduces the recorded sessions") {
    std::ifstream in(fixture("toy_model_sessions.json"));
    REQUIRE(in);
    const json manifest = json::parse(in);
    FixtureChannel channel(fixture("toy_model.jsonl"), manifest["top_k"].get<std::size_t>());
    CHECK(channel.model_id() == manifest["model"].get<std::string>());
    CHECK(channel.health().model == manifest["model"].get<std::string>());

    for (const auto& entry : manifest["corpus"]) {
      const auto text = entry["text"].get<std::string>();
      const auto ids = channel.tokenize(text);
      CHECK(ids == entry["ids"].get<std::vector<TokenId>>());
      CHECK(channel.detokenize_ids(ids) == text);
    }

    for (const auto& s : manifest["sessions"]) {
      const StegoKey key = StegoKey::from_hex(s["key"].get<std::string>());
      const auto prompt = channel.tokenize(s["prompt"].get<std::string>());
      const auto payload = bytes_of(s["payload"].get<std::string>());
      CodecSettings settings;
      settings.top_k = manifest["top_k"].get<std::size_t>();
      settings.reorder = s["reorder"].get<bool>();
      const EncodeResult r = encode(key, channel, prompt, payload, settings);
      REQUIRE(r.container.complete);
      CHECK(r.container.tokens == s["tokens"].get<std::vector<TokenId>>());
      CHECK(channel.detokenize_ids(r.container.tokens) == s["text"].get<std::string>());
      CHECK(decode(key, channel, prompt, r.container).payload == payload);
    }
  }

  TEST_CASE("fixture files are validated") {
    CHECK_ERROR(FixtureChannel(fixture("missing.jsonl")), ErrorCode::Io);
    const auto path = temp_path("broken.jsonl");
    std::ofstream(path) << "{\"kind\":\"distribution\"}\n";
    CHECK_ERROR(FixtureChannel(path), ErrorCode::BadSpec);
  }
}
