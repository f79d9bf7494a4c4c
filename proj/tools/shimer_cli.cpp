#include <CLI11.hpp>

#include <cctype>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "shimer/adapter.hpp"
#include "shimer/analysis.hpp"
#include "shimer/channel.hpp"
#include "shimer/codec.hpp"
#include "shimer/error.hpp"
#include "shimer/prg.hpp"

namespace fs = std::filesystem;
using namespace shimer;

namespace {

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::Incomplete: return 2;
    case ErrorCode::PaddingMismatch: return 3;
    case ErrorCode::UnknownToken: return 4;
    case ErrorCode::Transport:
    case ErrorCode::ServerError:
    case ErrorCode::NonDeterministic: return 5;
    case ErrorCode::SettingsMismatch: return 6;
    case ErrorCode::RefuseOverwrite: return 7;
    case ErrorCode::Io: return 8;
    case ErrorCode::BadContainer: return 9;
    case ErrorCode::PointerEscape:
    case ErrorCode::CounterExhausted: return 10;
    default: return 1;
  }
}

struct Options {
  std::string key;
  std::string channel;
  std::string endpoint;
  std::string model;
  std::string prompt;
  std::size_t top_k = 100;
  unsigned q = 24;
  std::string reorder = "on";
  std::size_t max_tokens = 512;
  std::string finish = "immediate";
  std::string in;
  std::string out;
  std::string text;
  std::optional<std::uint64_t> seed;
  bool force = false;
  bool hex = false;
  bool probe = false;
  std::string record;
  double timeout = 30.0;
  unsigned retries = 2;

  // bench
  std::vector<std::string> channels;
  std::uint64_t tokens = 100000;
  std::size_t payload_bytes = 64;
  unsigned threads = 1;
  std::string records;
  std::vector<std::size_t> sweep;
  std::string plot_data;
  bool no_baseline = false;

  // analyze
  std::optional<double> p_max;
  std::optional<unsigned> n;
  std::string dist;
  bool as_printed = false;
  std::optional<double> info;
};

std::string read_file(const std::string& path) {
  if (path == "-") return {std::istreambuf_iterator<char>(std::cin), {}};
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot read " + path);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_file(const std::string& path, const std::string& data, bool force) {
  if (path == "-") {
    std::cout << data;
    return;
  }
  if (!force && fs::exists(path)) fail(ErrorCode::RefuseOverwrite, path + " exists (use --force)");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !out.write(data.data(), static_cast<std::streamsize>(data.size())))
    fail(ErrorCode::Io, "cannot write " + path);
}

std::string trim(std::string s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  return s.substr(i);
}

StegoKey load_key(const std::string& spec) {
  if (spec.empty()) fail(ErrorCode::BadSpec, "--key is required");
  if (fs::exists(spec)) return StegoKey::from_hex(trim(read_file(spec)));
  return StegoKey::from_hex(spec);
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (auto b : bytes) {
    out += digits[b >> 4];
    out += digits[b & 15];
  }
  return out;
}

std::vector<std::uint8_t> from_hex(const std::string& hex) {
  const std::string h = trim(hex);
  if (h.size() % 2 != 0) fail(ErrorCode::BadSpec, "odd-length hex payload");
  std::vector<std::uint8_t> out(h.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto [p, ec] = std::from_chars(h.data() + 2 * i, h.data() + 2 * i + 2, out[i], 16);
    if (ec != std::errc{} || p != h.data() + 2 * i + 2) fail(ErrorCode::BadSpec, "bad hex payload");
  }
  return out;
}

/// Synthetic prompts are token ids separated by spaces or commas.
std::vector<TokenId> parse_id_prompt(const std::string& prompt) {
  std::vector<TokenId> ids;
  std::string s = prompt;
  for (char& c : s)
    if (c == ',') c = ' ';
  std::istringstream in(s);
  for (std::string word; in >> word;) {
    TokenId id = 0;
    auto [p, ec] = std::from_chars(word.data(), word.data() + word.size(), id);
    if (ec != std::errc{} || p != word.data() + word.size())
      fail(ErrorCode::BadSpec, "synthetic prompts are token ids, got \"" + word + "\"");
    ids.push_back(id);
  }
  return ids;
}

struct OpenChannel {
  std::unique_ptr<ChannelSource> channel;
  std::vector<TokenId> prompt;
};

OpenChannel open_channel(const Options& o) {
  OpenChannel out;
  if (!o.endpoint.empty() && !o.channel.empty())
    fail(ErrorCode::BadSpec, "--channel and --endpoint are mutually exclusive");
  if (!o.endpoint.empty()) {
    AdapterConfig config{o.endpoint, o.model, o.timeout, o.retries, o.top_k, o.probe};
    std::shared_ptr<FixtureRecorder> recorder;
    if (!o.record.empty()) recorder = std::make_shared<FixtureRecorder>(o.record);
    auto adapter = std::make_unique<AdapterChannel>(config, recorder);
    out.prompt = adapter->tokenize(o.prompt);
    out.channel = std::move(adapter);
  } else if (o.channel.rfind("fixture:", 0) == 0) {
    auto fixture = std::make_unique<FixtureChannel>(o.channel.substr(8), o.top_k);
    out.prompt = fixture->tokenize(o.prompt);
    out.channel = std::move(fixture);
  } else if (!o.channel.empty()) {
    out.prompt = parse_id_prompt(o.prompt);
    out.channel = make_synthetic_channel(o.channel, out.prompt.size());
  } else {
    fail(ErrorCode::BadSpec, "one of --channel or --endpoint is required");
  }
  return out;
}

bool parse_reorder(const std::string& s) {
  if (s == "on") return true;
  if (s == "off") return false;
  fail(ErrorCode::BadSpec, "--reorder takes on|off");
}

FinishMode parse_finish(const std::string& s) {
  if (s == "immediate") return FinishMode::Immediate;
  if (s == "natural") return FinishMode::Natural;
  fail(ErrorCode::BadSpec, "--finish takes immediate|natural");
}

CodecSettings settings_of(const Options& o) {
  CodecSettings s;
  s.q = o.q;
  s.top_k = o.top_k;
  s.reorder = parse_reorder(o.reorder);
  s.max_tokens = o.max_tokens;
  s.finish = parse_finish(o.finish);
  return s;
}

int cmd_keygen(const Options& o) {
  const std::string hex = keygen(o.seed).to_hex() + "\n";
  write_file(o.out.empty() ? "-" : o.out, hex, o.force);
  return 0;
}

int cmd_encode(const Options& o) {
  const CodecSettings settings = settings_of(o);
  if (o.out.empty()) fail(ErrorCode::BadSpec, "--out is required");
  if (o.in.empty() == o.text.empty()) fail(ErrorCode::BadSpec, "exactly one of --in or --text");
  if (!o.force && o.out != "-" && fs::exists(o.out))
    fail(ErrorCode::RefuseOverwrite, o.out + " exists (use --force)");
  const StegoKey key = load_key(o.key);
  std::vector<std::uint8_t> payload;
  if (!o.text.empty()) {
    payload.assign(o.text.begin(), o.text.end());
  } else {
    const std::string raw = read_file(o.in);
    payload = o.hex ? from_hex(raw) : std::vector<std::uint8_t>(raw.begin(), raw.end());
  }

  OpenChannel ch = open_channel(o);
  EncodeResult r = encode(key, *ch.channel, ch.prompt, payload, settings);
  const auto bytes = r.container.serialize();
  write_file(o.out, std::string(bytes.begin(), bytes.end()), o.force);
  if (o.out != "-") {
    if (auto text = ch.channel->detokenize(r.container.tokens))
      write_file(o.out + ".txt", *text + "\n", true);
  }
  if (r.stats.width_warnings > 0)
    std::cerr << "warning: residual interval exceeded " << settings.width_warning_bits
              << " bits on " << r.stats.width_warnings << " steps\n";
  std::cerr << "tokens=" << r.container.tokens.size() << " bits=" << r.stats.bits
            << " splits=" << r.stats.splits << " entropy=" << r.entropy << "\n";
  if (!r.container.complete)
    fail(ErrorCode::Incomplete, "payload not fully embedded within " +
                                    std::to_string(settings.max_tokens) + " tokens");
  return 0;
}

int cmd_decode(const Options& o, const CLI::App& app) {
  if (o.in.empty()) fail(ErrorCode::BadSpec, "--in is required");
  const std::string raw = read_file(o.in);
  const StegoContainer container = StegoContainer::parse(
      std::span(reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()));

  // Settings come from the container; explicit flags must agree with it.
  auto mismatch = [](const std::string& what) {
    fail(ErrorCode::SettingsMismatch, what + " differs from the container header");
  };
  if (app.count("--top-k") && o.top_k != container.top_k) mismatch("--top-k");
  if (app.count("--q") && o.q != container.q) mismatch("--q");
  if (app.count("--reorder") && parse_reorder(o.reorder) != container.reorder) mismatch("--reorder");
  if (app.count("--finish") && parse_finish(o.finish) != container.finish) mismatch("--finish");

  const StegoKey key = load_key(o.key);
  Options channel_options = o;
  channel_options.top_k = container.top_k;
  OpenChannel ch = open_channel(channel_options);
  DecodeResult r = decode(key, *ch.channel, ch.prompt, container);
  std::string data = o.hex ? to_hex(r.payload) + "\n"
                           : std::string(r.payload.begin(), r.payload.end());
  write_file(o.out.empty() ? "-" : o.out, data, o.force);
  return 0;
}

int cmd_bench(const Options& o) {
  if (o.channels.empty()) fail(ErrorCode::BadSpec, "--channel is required");
  BenchmarkConfig config;
  config.settings = settings_of(o);
  config.token_budget = o.tokens;
  config.payload_bytes = o.payload_bytes;
  config.seed = o.seed.value_or(1);
  config.threads = o.threads;
  config.baseline = !o.no_baseline;

  std::vector<std::size_t> ks = o.sweep;
  if (ks.empty()) ks.push_back(o.top_k);
  std::vector<MetricsReport> reports;
  for (const auto& spec : o.channels) {
    Options co = o;
    co.channel = spec;
    for (std::size_t k : ks) {
      co.top_k = k;
      config.settings.top_k = k;
      OpenChannel ch = open_channel(co);
      MetricsReport r = run_benchmark(*ch.channel, config);
      r.channel = spec;
      reports.push_back(r);
    }
  }
  std::cout << format_table(reports);
  if (!o.records.empty()) {
    std::ofstream out(o.records, std::ios::app);
    if (!out) fail(ErrorCode::Io, "cannot append to " + o.records);
    for (const auto& r : reports) out << r.to_json() << '\n';
  }
  if (!o.plot_data.empty()) {
    std::ostringstream csv;
    csv << "channel,top_k,reorder,entropy_bits_per_token,capacity_bits_per_token,utilization\n";
    for (const auto& r : reports)
      csv << r.channel << ',' << r.settings.top_k << ',' << (r.settings.reorder ? "on" : "off")
          << ',' << r.entropy_per_token() << ',' << r.capacity() << ',' << r.utilization()
          << '\n';
    write_file(o.plot_data, csv.str(), o.force);
  }
  return 0;
}

int cmd_analyze(const Options& o) {
  bool any = false;
  std::cout.precision(10);
  if (o.p_max) {
    any = true;
    const double p = *o.p_max;
    if (p >= 0.5) std::cout << "split_bound_high(" << p << ") = " << split_bound_high(p) << "\n";
    if (o.n) {
      GeneralBound g = split_bound_general(p, *o.n);
      std::cout << "split_bound_general(" << p << ", n=" << *o.n << ") raw = " << g.raw
                << " clamped = " << g.clamped << (g.was_clamped ? " [clamped]" : "") << "\n";
    } else if (p < 0.5) {
      fail(ErrorCode::DomainError, "p_max below 1/2 needs --n for the general bound");
    }
  }
  if (!o.dist.empty()) {
    any = true;
    ScriptedChannel sc = ScriptedChannel::load(o.dist);
    std::size_t line = 0;
    for (const auto& d : sc.script()) {
      const TokenDistribution t = top_k_truncate(d, o.top_k);
      const QuantizedDistribution qd = quantize(t, o.q);
      std::cout << "dist " << line++ << ": entropy = " << entropy(t)
                << " expected_embedding_no_reorder = " << expected_embedding_no_reorder(t)
                << " (quantized q=" << o.q << ": " << expected_embedding_no_reorder(qd) << ")\n";
    }
  }
  if (o.as_printed) {
    any = true;
    if (!o.info) fail(ErrorCode::BadSpec, "--as-printed needs --info");
    std::cout << "extracted_bits_lower_as_printed(" << *o.info
              << ") = " << extracted_bits_lower_as_printed(*o.info) << "\n";
    if (o.n)
      std::cout << "extracted_bits_as_printed(" << *o.info << ", n=" << *o.n
                << ") = " << extracted_bits_as_printed(*o.info, *o.n) << "\n";
  }
  if (!any) fail(ErrorCode::BadSpec, "nothing to analyze (use --p-max, --dist or --as-printed)");
  return 0;
}

void add_codec_flags(CLI::App* c, Options& o) {
  c->add_option("--top-k", o.top_k, "Top-k truncation")->check(CLI::PositiveNumber);
  c->add_option("--q", o.q, "Quantization exponent")->check(CLI::Range(2u, 32u));
  c->add_option("--reorder", o.reorder, "Reordering on|off")->check(CLI::IsMember({"on", "off"}));
  c->add_option("--max-tokens", o.max_tokens, "Token budget per message");
  c->add_option("--finish", o.finish, "immediate|natural")
      ->check(CLI::IsMember({"immediate", "natural"}));
}

void add_channel_flags(CLI::App* c, Options& o) {
  c->add_option("--channel", o.channel,
                "uniform:K | zipf:S:K | markov:K:SEED | twopoint:P | scripted:PATH | fixture:PATH");
  c->add_option("--endpoint", o.endpoint, "Distribution server URL");
  c->add_option("--model", o.model, "Model identifier (default: from /v1/health)");
  c->add_option("--prompt", o.prompt, "Prompt text (ids for synthetic channels)");
  c->add_flag("--probe", o.probe, "Send each distribution request twice and compare");
  c->add_option("--record", o.record, "Append server exchanges to a fixture file");
  c->add_option("--timeout", o.timeout, "Request timeout in seconds");
  c->add_option("--retries", o.retries, "Retries after transport failures");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shift-merge LLM steganography codec"};
  app.require_subcommand(1);
  Options o;

  auto* kg = app.add_subcommand("keygen", "Generate a 256-bit key");
  kg->add_option("--out", o.out, "Key file (default stdout)");
  kg->add_option("--seed", o.seed, "Deterministic test-mode seed");
  kg->add_flag("--force", o.force, "Overwrite an existing file");

  auto* enc = app.add_subcommand("encode", "Embed a payload into generated tokens");
  enc->add_option("--key", o.key, "Key file or 64 hex chars")->required();
  enc->add_option("--in", o.in, "Payload file ('-' for stdin)");
  enc->add_option("--text", o.text, "Payload given inline");
  enc->add_option("--out", o.out, "Container file")->required();
  enc->add_flag("--hex", o.hex, "Payload file holds hex");
  enc->add_flag("--force", o.force, "Overwrite existing outputs");
  add_codec_flags(enc, o);
  add_channel_flags(enc, o);

  auto* dec = app.add_subcommand("decode", "Recover a payload from a container");
  dec->add_option("--key", o.key, "Key file or 64 hex chars")->required();
  dec->add_option("--in", o.in, "Container file")->required();
  dec->add_option("--out", o.out, "Payload file (default stdout)");
  dec->add_flag("--hex", o.hex, "Print the payload as hex");
  dec->add_flag("--force", o.force, "Overwrite an existing file");
  add_codec_flags(dec, o);
  add_channel_flags(dec, o);

  auto* bench = app.add_subcommand("bench", "Measure capacity, utilization and timing");
  bench->add_option("--channel", o.channels, "Channel spec (repeatable)")->required();
  bench->add_option("--tokens", o.tokens, "Token budget per run");
  bench->add_option("--payload-bytes", o.payload_bytes, "Payload size per session");
  bench->add_option("--seed", o.seed, "Seed for keys and payloads");
  bench->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
  bench->add_option("--records", o.records, "Append one JSON record per run");
  bench->add_option("--sweep-top-k", o.sweep, "Run once per listed top-k")->delimiter(',');
  bench->add_option("--plot-data", o.plot_data, "Write capacity/utilization vs top-k CSV");
  bench->add_flag("--no-baseline", o.no_baseline, "Skip the pure-sampling baseline");
  bench->add_flag("--force", o.force, "Overwrite the plot-data file");
  add_codec_flags(bench, o);

  auto* an = app.add_subcommand("analyze", "Evaluate the closed-form bounds");
  an->add_option("--p-max", o.p_max, "Largest token probability");
  an->add_option("--n", o.n, "Number of tokens (general bound)");
  an->add_option("--dist", o.dist, "Distribution file (id:prob per entry, one per line)");
  an->add_option("--top-k", o.top_k, "Top-k applied to --dist");
  an->add_option("--q", o.q, "Quantization exponent for --dist")->check(CLI::Range(2u, 32u));
  an->add_flag("--as-printed", o.as_printed, "Also evaluate the extracted-bit expressions");
  an->add_option("--info", o.info, "Information (bits) for --as-printed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*kg) return cmd_keygen(o);
    if (*enc) return cmd_encode(o);
    if (*dec) return cmd_decode(o, *dec);
    if (*bench) return cmd_bench(o);
    if (*an) return cmd_analyze(o);
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: Internal: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
