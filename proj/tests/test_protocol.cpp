#include <gtest/gtest.h>
#include <httplib.h>

#include <fstream>
#include <thread>

#include "i2d/backend_pool.hpp"
#include "i2d/sim_backend.hpp"
#include "i2d/transport.hpp"
#include "test_support.hpp"

namespace i2d {
namespace {

VirtualAudio reference_audio() {
  VirtualAudio a;
  a.quality = 1.0;
  a.transcript = "reference";
  a.speaker_embedding.assign(kEmbeddingDim, 0.25);
  a.emotion = Emotion::sad;
  return a;
}

BackendDescriptor builtin_synth(const fs::path& work, nlohmann::json params = nlohmann::json::object()) {
  BackendDescriptor d;
  d.backend_id = "sim";
  d.kind = BackendKind::synthesizer;
  d.transport = TransportKind::builtin;
  d.launch = "sim-synthesizer";
  d.config = {{"params", params}, {"work_dir", work.string()}};
  return d;
}

BackendDescriptor builtin_metric(nlohmann::json config = nlohmann::json::object()) {
  BackendDescriptor d;
  d.backend_id = "eval";
  d.kind = BackendKind::metric;
  d.transport = TransportKind::builtin;
  d.launch = "sim-metric";
  d.capabilities = {"mos", "sim", "emotion"};
  d.config = std::move(config);
  return d;
}

BackendDescriptor subprocess_synth(const fs::path& work, nlohmann::json extra = nlohmann::json::object()) {
  auto d = builtin_synth(work);
  d.transport = TransportKind::subprocess_stdio;
  d.launch = std::string(I2D_SIM_BACKEND) + " synthesizer";
  d.config.update(extra);
  return d;
}

TEST(Encoding, LinesFollowTheWireFormat) {
  EXPECT_EQ(encode_hello({{"a", 1}}), R"({"v":1,"op":"hello","config":{"a":1}})");
  EXPECT_EQ(encode_synthesize("n1", {"r.json", "ref", "tgt", 18446744073709551615ull}),
            R"({"v":1,"nonce":"n1","op":"synthesize","ref_wav":"r.json","ref_text":"ref","text":"tgt","seed":18446744073709551615})");
  EXPECT_EQ(encode_metric("n2", "mos", {{"wav", "x"}}), R"({"v":1,"nonce":"n2","op":"metric","name":"mos","payload":{"wav":"x"}})");
}

TEST(Decoding, NonceEchoEnforced) {
  EXPECT_EQ(decode_metric(R"({"v":1,"nonce":"a","ok":true,"score":0.5})", "a"), 0.5);
  EXPECT_THROW(decode_metric(R"({"v":1,"nonce":"b","ok":true,"score":0.5})", "a"), Error);
  EXPECT_THROW(decode_metric(R"({"v":1,"ok":true,"score":0.5})", "a"), Error);
  try {
    decode_metric(R"({"ok":false,"error":"boom"})", "a");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::backend_error);
    EXPECT_EQ(e.message(), "boom");
  }
}

TEST(Decoding, MalformedReplies) {
  auto code_of = [](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::parse;  // sentinel: nothing thrown
  };
  EXPECT_EQ(code_of([] { decode_metric("not json", "a"); }), ErrorCode::protocol);
  EXPECT_EQ(code_of([] { decode_metric(R"({"v":1,"nonce":"a","ok":true})", "a"); }), ErrorCode::protocol);
  EXPECT_EQ(code_of([] { decode_metric(R"({"v":1,"nonce":"a","ok":true,"score":null})", "a"); }), ErrorCode::non_finite);
  EXPECT_EQ(code_of([] { decode_metric(R"({"v":1,"nonce":"a","ok":true,"score":"1"})", "a"); }), ErrorCode::protocol);
  EXPECT_EQ(code_of([] { decode_synthesize(R"({"v":1,"nonce":"a","ok":true})", "a"); }), ErrorCode::protocol);
  EXPECT_EQ(code_of([] { decode_synthesize(R"({"v":2,"nonce":"a","ok":true,"wav":"x"})", "a"); }), ErrorCode::version_mismatch);
  EXPECT_EQ(code_of([] { decode_hello(R"({"v":"2","kind":"metric"})"); }), ErrorCode::version_mismatch);
  EXPECT_EQ(code_of([] { decode_hello(R"({"v":2,"kind":"metric"})"); }), ErrorCode::version_mismatch);
  EXPECT_EQ(code_of([] { decode_hello(R"({"v":1,"kind":"oracle"})"); }), ErrorCode::protocol);
}

TEST(Descriptor, JsonRoundTripAndValidation) {
  const auto j = nlohmann::json::parse(
      R"({"backend_id":"m","kind":"metric","transport":"http","launch":"http://127.0.0.1:1/x","capabilities":["mos"],"timeout_s":5})");
  const auto d = backend_descriptor_from_json(j);
  EXPECT_EQ(d.transport, TransportKind::http);
  EXPECT_EQ(backend_descriptor_from_json(to_json(d)).capabilities, d.capabilities);
  EXPECT_EQ(backend_descriptor_from_json(nlohmann::json::parse(R"({"backend_id":"s","kind":"synthesizer","launch":"x"})")).timeout_s, 300.0);
  EXPECT_THROW(backend_descriptor_from_json(nlohmann::json::parse(R"({"backend_id":"m","kind":"metric","launch":"x"})")), Error);
  EXPECT_THROW(backend_descriptor_from_json(nlohmann::json::parse(R"({"backend_id":"m","kind":"synth","launch":"x"})")), Error);
  EXPECT_THROW(backend_descriptor_from_json(nlohmann::json::parse(R"({"kind":"synthesizer","launch":"x"})")), Error);
}

TEST(Handshake, BuiltinSynthesizer) {
  testing::TempDir dir;
  auto h = handshake(builtin_synth(dir.path()));
  EXPECT_EQ(h.kind(), BackendKind::synthesizer);
  EXPECT_EQ(h.version(), 1);
  EXPECT_TRUE(h.deterministic());
}

TEST(Handshake, MissingCapabilityRejected) {
  auto d = builtin_metric({{"capabilities", {"mos"}}});
  try {
    handshake(d, {"sim"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::capability);
  }
  EXPECT_NO_THROW(handshake(d, {"mos"}));
}

TEST(Handshake, VersionMismatchRejected) {
  testing::TempDir dir;
  for (const auto& v : {nlohmann::json("2"), nlohmann::json(2)}) {
    auto d = builtin_synth(dir.path());
    d.config["version"] = v;
    try {
      handshake(d);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::version_mismatch);
    }
  }
}

TEST(Handshake, KindMismatchRejected) {
  auto d = builtin_metric();
  d.kind = BackendKind::synthesizer;
  EXPECT_THROW(handshake(d), Error);
}

TEST(Handshake, SpawnFailureNamesDescriptor) {
  testing::TempDir dir;
  auto d = builtin_synth(dir.path());
  d.backend_id = "ghost";
  d.transport = TransportKind::subprocess_stdio;
  d.launch = "/nonexistent/backend --serve";
  try {
    handshake(d);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::spawn);
    EXPECT_NE(e.message().find("ghost"), std::string::npos);
  }
}

class SynthesisTransports : public ::testing::TestWithParam<TransportKind> {};

TEST_P(SynthesisTransports, DeterministicForSeed) {
  testing::TempDir dir;
  write_virtual_audio(dir / "ref.json", reference_audio());
  auto d = GetParam() == TransportKind::builtin ? builtin_synth(dir / "work", {{"degradation_rate", 0.1}, {"noise_sd", 0.05}})
                                                 : subprocess_synth(dir / "work");
  d.config["params"] = {{"degradation_rate", 0.1}, {"noise_sd", 0.05}, {"corruption_gain", 1}};
  auto h = handshake(d);
  const SynthesisRequest req{(dir / "ref.json").string(), "reference", "the target words", 99};
  const auto r1 = h.synthesize(req, "x1");
  const auto bytes1 = read_file(r1.wav);
  const auto r2 = h.synthesize(req, "x2");
  EXPECT_EQ(r1.wav, r2.wav);
  EXPECT_EQ(bytes1, read_file(r2.wav));
  const auto out = read_virtual_audio(r1.wav);
  EXPECT_EQ(out.seed_trail, std::vector<std::uint64_t>{99});
  EXPECT_EQ(r1.hyp_text, out.transcript);
  EXPECT_NE(read_file(h.synthesize({req.ref_wav, req.ref_text, req.text, 100}, "x3").wav), bytes1);
}

INSTANTIATE_TEST_SUITE_P(Transports, SynthesisTransports,
                         ::testing::Values(TransportKind::builtin, TransportKind::subprocess_stdio));

TEST(Synthesis, SubprocessCrashIsReportedNotFatal) {
  testing::TempDir dir;
  write_virtual_audio(dir / "ref.json", reference_audio());
  auto h = handshake(subprocess_synth(dir / "work", {{"crash_after", 1}}));
  const SynthesisRequest req{(dir / "ref.json").string(), "reference", "text", 1};
  EXPECT_NO_THROW(h.synthesize(req, "a"));
  try {
    h.synthesize(req, "b");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::backend_crash);
  }
  EXPECT_FALSE(h.healthy());
}

TEST(Synthesis, SubprocessTimeout) {
  testing::TempDir dir;
  write_virtual_audio(dir / "ref.json", reference_audio());
  auto d = subprocess_synth(dir / "work", {{"hang_after", 0}});
  d.timeout_s = 0.2;
  auto h = handshake(d);
  const auto start = std::chrono::steady_clock::now();
  try {
    h.synthesize({(dir / "ref.json").string(), "reference", "text", 1}, "a");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::timeout);
  }
  EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::seconds(5));
  EXPECT_FALSE(h.healthy());
}

TEST(Synthesis, InBandErrorKeepsHandleHealthy) {
  testing::TempDir dir;
  auto d = builtin_synth(dir / "work");
  auto h = handshake(d);
  try {
    h.synthesize({(dir / "missing.json").string(), "r", "t", 1}, "a");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::backend_error);
  }
  EXPECT_TRUE(h.healthy());
}

TEST(Synthesis, MetricHandleRefusesSynthesis) {
  auto h = handshake(builtin_metric());
  EXPECT_THROW(h.synthesize({"a", "b", "c", 1}, "n"), Error);
}

TEST(Metric, SimIdentityAndMosEndpoints) {
  testing::TempDir dir;
  write_virtual_audio(dir / "a.json", reference_audio());
  auto h = handshake(builtin_metric(), {"sim", "mos"});
  const nlohmann::json payload{{"wav", (dir / "a.json").string()}, {"ref_wav", (dir / "a.json").string()}};
  EXPECT_NEAR(h.eval_metric("sim", payload, "n1"), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(h.eval_metric("mos", payload, "n2"), 5.0);
  auto low = reference_audio();
  low.quality = 0.0;
  write_virtual_audio(dir / "b.json", low);
  EXPECT_DOUBLE_EQ(h.eval_metric("mos", {{"wav", (dir / "b.json").string()}}, "n3"), 1.0);
  EXPECT_DOUBLE_EQ(h.eval_metric("emotion", payload, "n4"), 1.0);  // sad
}

TEST(Metric, KneeSaturates) {
  testing::TempDir dir;
  auto a = reference_audio();
  a.quality = 0.9;
  write_virtual_audio(dir / "a.json", a);
  auto h = handshake(builtin_metric({{"knee", 0.8}}));
  EXPECT_DOUBLE_EQ(h.eval_metric("mos", {{"wav", (dir / "a.json").string()}}, "n"), 5.0);
}

TEST(Metric, Errors) {
  testing::TempDir dir;
  write_virtual_audio(dir / "a.json", reference_audio());
  auto h = handshake(builtin_metric({{"nonfinite_metric", "mos"}, {"capabilities", {"mos", "sim"}}}));
  auto code_of = [&](const std::string& name, const nlohmann::json& payload) {
    try {
      h.eval_metric(name, payload, "n");
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::parse;
  };
  EXPECT_EQ(code_of("dnsmos", {{"wav", (dir / "a.json").string()}}), ErrorCode::unsupported_metric);
  EXPECT_EQ(code_of("sim", {{"wav", (dir / "a.json").string()}}), ErrorCode::backend_error);  // no ref_wav
  EXPECT_EQ(code_of("sim", nlohmann::json::object()), ErrorCode::backend_error);
  EXPECT_EQ(code_of("mos", {{"wav", (dir / "a.json").string()}}), ErrorCode::non_finite);
  EXPECT_TRUE(h.healthy());
}

TEST(SimServer, InBandErrorsForBadInput) {
  SimServer s(BackendKind::metric);
  EXPECT_EQ(s.handle("{oops").line, R"({"v":1,"nonce":"unknown","ok":false,"error":"malformed JSON request"})");
  EXPECT_EQ(s.handle(R"({"v":1,"nonce":"q","op":"metric","name":"mos","payload":{}})").line,
            R"({"v":1,"nonce":"q","ok":false,"error":"hello required before metric"})");
  EXPECT_EQ(s.handle(R"({"v":3,"nonce":"q","op":"hello"})").line,
            R"({"v":1,"nonce":"q","ok":false,"error":"unsupported protocol version"})");
}

// Replays the frozen request/response transcript against both the in-process
// server and the executable. ${WORK} stands for the scratch directory.
TEST(GoldenTranscript, ReplaysByteIdentically) {
  const fs::path golden = fs::path(I2D_TEST_DIR) / "golden" / "sim_backend_transcript.jsonl";
  testing::TempDir dir;
  const std::string work = dir.path().string();
  auto ref = reference_audio();
  ref.emotion = Emotion::angry;
  write_virtual_audio(dir / "ref.json", ref);

  auto substitute = [&](std::string s, const std::string& from, const std::string& to) {
    for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) s.replace(pos, from.size(), to);
    return s;
  };

  if (std::getenv("I2D_WRITE_GOLDEN")) {
    // regenerate: record what the in-process server answers today
    const std::vector<std::pair<std::string, std::string>> requests{
        {"synthesizer", R"({"v":1,"op":"hello","config":{"params":{"degradation_rate":0.1,"noise_sd":0.02,"corruption_gain":2.0,"drift_rate":0.5},"work_dir":"${WORK}/out"}})"},
        {"synthesizer", R"({"v":1,"nonce":"s1","op":"synthesize","ref_wav":"${WORK}/ref.json","ref_text":"reference","text":"one two three four five six","seed":7})"},
        {"synthesizer", R"({"v":1,"nonce":"s2","op":"synthesize","ref_wav":"${WORK}/ref.json","ref_text":"reference","text":"你好世界","seed":8})"},
        {"synthesizer", R"({"v":1,"nonce":"s1b","op":"synthesize","ref_wav":"${WORK}/out/sim-dfd885e5e0282e9f.json","ref_text":"one two three four five six","text":"one two three four five six","seed":70})"},
        {"synthesizer", R"({"v":1,"nonce":"s1c","op":"synthesize","ref_wav":"${WORK}/out/sim-dfd885e5e0282e9f.json","ref_text":"one two three four five six","text":"one two three four five six","seed":71})"},
        {"synthesizer", R"({"v":1,"nonce":"s3","op":"synthesize","ref_wav":"${WORK}/missing.json","ref_text":"reference","text":"x","seed":9})"},
        {"synthesizer", R"({"v":1,"nonce":"s4","op":"synthesize","ref_text":"reference","text":"x","seed":9})"},
        {"synthesizer", R"({"v":1,"nonce":"s5","op":"transcribe"})"},
        {"synthesizer", R"({"v":1,"nonce":"s6","op":"metric","name":"mos","payload":{}})"},
        {"synthesizer", R"(not json at all)"},
        {"metric", R"({"v":1,"nonce":"early","op":"metric","name":"mos","payload":{"wav":"${WORK}/ref.json"}})"},
        {"metric", R"({"v":1,"op":"hello","config":{"noise_sd":0.1,"seed":3,"knee":0.9}})"},
        {"metric", R"({"v":1,"nonce":"m1","op":"metric","name":"mos","payload":{"wav":"${WORK}/ref.json"}})"},
        {"metric", R"({"v":1,"nonce":"m2","op":"metric","name":"sim","payload":{"wav":"${WORK}/ref.json","ref_wav":"${WORK}/ref.json"}})"},
        {"metric", R"({"v":1,"nonce":"m3","op":"metric","name":"emotion","payload":{"wav":"${WORK}/ref.json"}})"},
        {"metric", R"({"v":1,"nonce":"m4","op":"metric","name":"quality","payload":{"wav":"${WORK}/ref.json"}})"},
        {"metric", R"({"v":1,"nonce":"m5","op":"metric","name":"sim","payload":{"wav":"${WORK}/ref.json"}})"},
        {"metric", R"({"v":1,"nonce":"m5b","op":"metric","payload":{}})"},
        {"metric", R"({"v":1,"nonce":"m6","op":"metric","name":"mos","payload":{}})"},
        {"metric", R"({"v":2,"nonce":"m7","op":"metric","name":"mos","payload":{}})"},
    };
    SimServer synth(BackendKind::synthesizer), metric(BackendKind::metric);
    std::string out;
    for (const auto& [role, request] : requests) {
      auto& server = role == "synthesizer" ? synth : metric;
      const auto reply = server.handle(substitute(request, "${WORK}", work)).line;
      nlohmann::ordered_json e;
      e["role"] = role;
      e["request"] = request;
      e["reply"] = substitute(reply, work, "${WORK}");
      out += e.dump() + "\n";
    }
    write_file(golden, out);
  }

  const auto lines = split_lines(read_file(golden));
  ASSERT_FALSE(lines.empty());
  for (const std::string role : {"synthesizer", "metric"}) {
    SimServer server(role == "synthesizer" ? BackendKind::synthesizer : BackendKind::metric);
    SubprocessChannel proc({I2D_SIM_BACKEND, role});
    std::size_t replayed = 0;
    for (const auto& line : lines) {
      if (trim(line).empty()) continue;
      const auto entry = nlohmann::json::parse(line);
      if (entry.at("role") != role) continue;
      const std::string request = substitute(entry.at("request").get<std::string>(), "${WORK}", work);
      const std::string expected = entry.at("reply").get<std::string>();
      EXPECT_EQ(substitute(server.handle(request).line, work, "${WORK}"), expected) << request;
      EXPECT_EQ(substitute(proc.exchange(request, std::chrono::seconds(10)), work, "${WORK}"), expected) << request;
      ++replayed;
    }
    EXPECT_GT(replayed, 3u);
  }
}

TEST(Http, SameBodiesOverPost) {
  testing::TempDir dir;
  write_virtual_audio(dir / "ref.json", reference_audio());
  httplib::Server server;
  std::mutex mu;
  SimServer sim(BackendKind::synthesizer);
  server.Post("/rpc", [&](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(mu);
    const auto reply = sim.handle(req.body);
    if (reply.action == SimAction::hang) std::this_thread::sleep_for(std::chrono::milliseconds(1500));
    res.set_content(reply.line + "\n", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  auto d = builtin_synth(dir / "work");
  d.transport = TransportKind::http;
  d.launch = "http://127.0.0.1:" + std::to_string(port) + "/rpc";
  d.config["hang_after"] = 1;
  d.timeout_s = 0.5;
  {
    auto h = handshake(d);
    const auto r = h.synthesize({(dir / "ref.json").string(), "reference", "hello there", 5}, "h1");
    EXPECT_EQ(r.hyp_text, "hello there");
    EXPECT_TRUE(fs::exists(r.wav));
    try {
      h.synthesize({(dir / "ref.json").string(), "reference", "hello there", 5}, "h2");
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::timeout);
    }
  }
  server.stop();
  t.join();

  d.launch = "http://127.0.0.1:" + std::to_string(port) + "/rpc";
  try {
    handshake(d);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::spawn);
  }
}

TEST(Pool, ReplacesUnhealthyHandles) {
  testing::TempDir dir;
  write_virtual_audio(dir / "ref.json", reference_audio());
  auto d = builtin_synth(dir / "work");
  d.config["crash_after"] = 1;
  HandlePool pool(d, 1);
  const SynthesisRequest req{(dir / "ref.json").string(), "reference", "t", 1};
  {
    auto lease = pool.acquire();
    EXPECT_NO_THROW(lease->synthesize(req, "a"));
    EXPECT_THROW(lease->synthesize(req, "b"), Error);
  }
  auto fresh = pool.acquire();
  EXPECT_TRUE(fresh->healthy());
  EXPECT_NO_THROW(fresh->synthesize(req, "c"));
}

TEST(Pool, BoundedConcurrency) {
  testing::TempDir dir;
  HandlePool pool(builtin_synth(dir.path()), 2);
  std::atomic<int> inside{0}, peak{0};
  std::vector<std::thread> threads;
  for (int i = 0; i < 6; ++i)
    threads.emplace_back([&] {
      auto lease = pool.acquire();
      const int now = ++inside;
      int p = peak.load();
      while (now > p && !peak.compare_exchange_weak(p, now)) {
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
      --inside;
    });
  for (auto& t : threads) t.join();
  EXPECT_LE(peak.load(), 2);
}

}  // namespace
}  // namespace i2d
