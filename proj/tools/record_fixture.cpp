// Records a replayable fixture from a distribution server: health, corpus
// tokenization, and the distribution requests of a few encode sessions.
// Without --endpoint the in-process toy server is used.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "shimer/adapter.hpp"
#include "shimer/codec.hpp"
#include "shimer/prg.hpp"
#include "toy_model_server.hpp"

namespace fs = std::filesystem;
using namespace shimer;

int main(int argc, char** argv) {
  CLI::App app{"Record a distribution-server fixture"};
  std::string endpoint, out, sessions_out, corpus;
  std::size_t top_k = 100;
  app.add_option("--endpoint", endpoint, "Server URL (default: in-process toy server)");
  app.add_option("--out", out, "Fixture file (JSON lines)")->required();
  app.add_option("--sessions", sessions_out, "Session manifest (JSON)")->required();
  app.add_option("--corpus", corpus, "Sentences to tokenize, one per line");
  app.add_option("--top-k", top_k);
  CLI11_PARSE(app, argc, argv);

  std::unique_ptr<toy::Server> server;
  if (endpoint.empty()) {
    server = std::make_unique<toy::Server>();
    server->start();
    endpoint = server->url();
  }
  fs::remove(out);
  auto recorder = std::make_shared<FixtureRecorder>(out);
  AdapterConfig config;
  config.endpoint = endpoint;
  config.top_k = top_k;
  config.probe = true;
  AdapterChannel channel(config, recorder);

  nlohmann::ordered_json manifest;
  manifest["model"] = channel.model_id();
  manifest["top_k"] = top_k;

  if (!corpus.empty()) {
    std::ifstream in(corpus);
    nlohmann::ordered_json sentences = nlohmann::ordered_json::array();
    for (std::string line; std::getline(in, line);) {
      if (line.empty()) continue;
      auto ids = channel.tokenize(line);
      channel.detokenize_ids(ids);
      sentences.push_back({{"text", line}, {"ids", ids}});
    }
    manifest["corpus"] = sentences;
  }

  struct Plan {
    std::uint64_t key_seed;
    std::string prompt;
    std::string payload;
    bool reorder;
  };
  const std::vector<Plan> plans = {
      {11, "the people of the north", "meet me at the old farm", true},
      {12, "a small boy found water", "0123456789abcdef0123456789abcdef", false},
      {13, "she said they would write", "", true},
  };
  nlohmann::ordered_json sessions = nlohmann::ordered_json::array();
  for (const auto& p : plans) {
    CodecSettings settings;
    settings.top_k = top_k;
    settings.reorder = p.reorder;
    const StegoKey key = keygen(p.key_seed);
    const auto prompt = channel.tokenize(p.prompt);
    const std::vector<std::uint8_t> payload(p.payload.begin(), p.payload.end());
    EncodeResult r = encode(key, channel, prompt, payload, settings);
    const std::string text = channel.detokenize_ids(r.container.tokens);
    sessions.push_back({{"key", key.to_hex()},
                        {"prompt", p.prompt},
                        {"payload", p.payload},
                        {"reorder", p.reorder},
                        {"tokens", r.container.tokens},
                        {"text", text}});
    std::cerr << "session: " << r.container.tokens.size() << " tokens, " << r.stats.bits
              << " bits\n";
  }
  manifest["sessions"] = sessions;
  channel.health();

  std::ofstream m(sessions_out);
  m << manifest.dump(2) << '\n';
  return 0;
}
