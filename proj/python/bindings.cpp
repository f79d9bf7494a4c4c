#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "shimer/adapter.hpp"
#include "shimer/analysis.hpp"
#include "shimer/codec.hpp"
#include "shimer/error.hpp"

namespace py = pybind11;
using namespace shimer;

namespace {

PyObject* error_type = nullptr;

TokenDistribution from_probs(const std::vector<double>& probs) {
  TokenDistribution d;
  for (std::size_t i = 0; i < probs.size(); ++i) d.token_ids.push_back(static_cast<TokenId>(i));
  d.probs = probs;
  return d;
}

// A synthetic spec or fixture:PATH; the latter also tokenizes.
class Channel {
 public:
  Channel(const std::string& spec, std::size_t prompt_length, std::size_t top_k) : spec_(spec) {
    if (spec.rfind("fixture:", 0) == 0) {
      auto fixture = std::make_shared<FixtureChannel>(spec.substr(8), top_k);
      fixture_ = fixture;
      source_ = fixture;
    } else {
      source_ = make_synthetic_channel(spec, prompt_length);
    }
  }

  const ChannelSource& source() const { return *source_; }
  const std::string& spec() const { return spec_; }

  const FixtureChannel& fixture() const {
    if (!fixture_) fail(ErrorCode::BadSpec, "channel '" + spec_ + "' has no tokenizer");
    return *fixture_;
  }

 private:
  std::string spec_;
  std::shared_ptr<const ChannelSource> source_;
  std::shared_ptr<const FixtureChannel> fixture_;
};

py::bytes to_bytes(const std::vector<std::uint8_t>& v) {
  return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

std::vector<std::uint8_t> from_bytes(const py::bytes& b) {
  const std::string s = b;
  return {s.begin(), s.end()};
}

}  // namespace

PYBIND11_MODULE(_shimer, m) {
  m.doc() = "Shift-merge steganography codec";

  error_type = PyErr_NewException("shimer._shimer.ShimerError", PyExc_RuntimeError, nullptr);
  m.attr("ShimerError") = py::handle(error_type);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object instance = py::reinterpret_steal<py::object>(PyObject_CallFunction(error_type, "s", e.what()));
      instance.attr("code") = std::string(to_string(e.code()));
      PyErr_SetObject(error_type, instance.ptr());
    }
  });

  py::class_<Channel>(m, "Channel")
      .def(py::init<const std::string&, std::size_t, std::size_t>(), py::arg("spec"),
           py::arg("prompt_length") = 0, py::arg("top_k") = 100)
      .def_property_readonly("spec", &Channel::spec)
      .def_property_readonly("model_id", [](const Channel& c) { return c.source().model_id(); })
      .def("distribution",
           [](const Channel& c, const std::vector<TokenId>& history) {
             const TokenDistribution d = c.source().next_distribution(history);
             return py::make_tuple(d.token_ids, d.probs);
           },
           py::arg("history"))
      .def("tokenize", [](const Channel& c, const std::string& text) { return c.fixture().tokenize(text); })
      .def("detokenize",
           [](const Channel& c, const std::vector<TokenId>& ids) { return c.fixture().detokenize_ids(ids); });

  m.def("keygen", [](std::optional<std::uint64_t> seed) { return keygen(seed).to_hex(); },
        py::arg("seed") = py::none());

  m.def(
      "encode",
      [](const std::string& key, const Channel& channel, const std::vector<TokenId>& prompt,
         const py::bytes& payload, unsigned q, std::size_t top_k, bool reorder, std::size_t max_tokens,
         bool natural_finish) {
        CodecSettings s;
        s.q = q;
        s.top_k = top_k;
        s.reorder = reorder;
        s.max_tokens = max_tokens;
        s.finish = natural_finish ? FinishMode::Natural : FinishMode::Immediate;
        const auto bytes = from_bytes(payload);
        EncodeResult r;
        {
          py::gil_scoped_release release;
          r = encode(StegoKey::from_hex(key), channel.source(), prompt, bytes, s);
        }
        py::dict out;
        out["tokens"] = r.container.tokens;
        out["complete"] = r.container.complete;
        out["container"] = to_bytes(r.container.serialize());
        out["bits"] = r.stats.bits;
        out["steps"] = r.stats.steps;
        out["splits"] = r.stats.splits;
        out["entropy"] = r.entropy;
        out["residual_bits"] = r.residual_bits;
        return out;
      },
      py::arg("key"), py::arg("channel"), py::arg("prompt"), py::arg("payload"), py::arg("q") = 24,
      py::arg("top_k") = 100, py::arg("reorder") = true, py::arg("max_tokens") = 512,
      py::arg("natural_finish") = false);

  m.def(
      "decode",
      [](const std::string& key, const Channel& channel, const std::vector<TokenId>& prompt,
         const py::bytes& container) {
        const StegoContainer c = StegoContainer::parse(from_bytes(container));
        DecodeResult r;
        {
          py::gil_scoped_release release;
          r = decode(StegoKey::from_hex(key), channel.source(), prompt, c);
        }
        return to_bytes(r.payload);
      },
      py::arg("key"), py::arg("channel"), py::arg("prompt"), py::arg("container"));

  m.def("entropy", [](const std::vector<double>& probs) { return entropy(from_probs(probs)); },
        py::arg("probs"));
  m.def("expected_embedding_no_reorder",
        [](const std::vector<double>& probs) { return expected_embedding_no_reorder(from_probs(probs)); },
        py::arg("probs"));
  m.def("split_bound_high", &split_bound_high, py::arg("p_max"));
  m.def(
      "split_bound_general",
      [](double p_max, unsigned n) {
        const GeneralBound b = split_bound_general(p_max, n);
        return py::make_tuple(b.raw, b.clamped, b.was_clamped);
      },
      py::arg("p_max"), py::arg("n"));

  m.def(
      "run_benchmark",
      [](const Channel& channel, std::uint64_t token_budget, std::size_t payload_bytes,
         std::uint64_t seed, unsigned threads, unsigned q, std::size_t top_k, bool reorder,
         bool baseline) {
        BenchmarkConfig config;
        config.settings.q = q;
        config.settings.top_k = top_k;
        config.settings.reorder = reorder;
        config.token_budget = token_budget;
        config.payload_bytes = payload_bytes;
        config.seed = seed;
        config.threads = threads;
        config.baseline = baseline;
        py::gil_scoped_release release;
        MetricsReport r = run_benchmark(channel.source(), config);
        r.channel = channel.spec();
        return r.to_json();
      },
      py::arg("channel"), py::arg("token_budget") = 20000, py::arg("payload_bytes") = 64,
      py::arg("seed") = 1, py::arg("threads") = 1, py::arg("q") = 24, py::arg("top_k") = 100,
      py::arg("reorder") = true, py::arg("baseline") = true);
}
