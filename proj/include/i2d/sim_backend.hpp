#pragma once

// Protocol server for the simulated backends. The same object answers lines
// for the in-process "builtin" transport and for the i2d-sim-backend
// executable on stdin/stdout.
//
// Synthesizer hello config:
//   params        SimulatorParams fields (see simulator.hpp)
//   work_dir      directory receiving output virtual-audio files
//   crash_after   fault injection: the process dies on request n+1
//   hang_after    fault injection: request n+1 never answers
//   fail_after    fault injection: requests after n get in-band errors
//   version       protocol version to announce (tests of the version check)
//
// Metric hello config:
//   min_mos, max_mos  affine MOS range (defaults 1 and 5)
//   knee              quality above which "mos" saturates at max_mos (default 1)
//   noise_sd          evaluator noise added to "mos"
//   seed              evaluator noise seed
//   capabilities      announced capabilities (default mos, sim, emotion)
//   fail_metric       name of a metric that always fails in-band
//   nonfinite_metric  name of a metric that always reports a non-finite score

#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "i2d/error.hpp"
#include "i2d/metrics.hpp"
#include "i2d/protocol.hpp"
#include "i2d/simulator.hpp"
#include "i2d/util.hpp"

namespace i2d {

/// What the server wants its host to do besides writing the reply.
enum class SimAction { reply, crash, hang };

struct SimReply {
  SimAction action = SimAction::reply;
  std::string line;
};

class SimServer {
 public:
  explicit SimServer(BackendKind role) : role_(role) {}

  SimReply handle(std::string_view line) {
    nlohmann::json req;
    try {
      req = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      return {SimAction::reply, error_reply("unknown", "malformed JSON request")};
    }
    if (!req.is_object()) return {SimAction::reply, error_reply("unknown", "request is not an object")};
    const std::string nonce = req.contains("nonce") && req["nonce"].is_string() ? req["nonce"].get<std::string>() : "unknown";
    const std::string op = req.value("op", std::string{});
    if (req.value("v", 0) != kProtocolVersion) return {SimAction::reply, error_reply(nonce, "unsupported protocol version")};
    try {
      if (op == "hello") return {SimAction::reply, hello(req.value("config", nlohmann::json::object()))};
      if (!configured_) return {SimAction::reply, error_reply(nonce, "hello required before " + op)};
      if (op == "synthesize") return synthesize(req, nonce);
      if (op == "metric") return {SimAction::reply, metric(req, nonce)};
      return {SimAction::reply, error_reply(nonce, "unknown op '" + op + "'")};
    } catch (const Error& e) {
      return {SimAction::reply, error_reply(nonce, e.message())};
    } catch (const nlohmann::json::exception& e) {
      return {SimAction::reply, error_reply(nonce, e.what())};
    }
  }

  static std::string error_reply(std::string_view nonce, std::string_view message) {
    nlohmann::ordered_json j;
    j["v"] = kProtocolVersion;
    j["nonce"] = nonce;
    j["ok"] = false;
    j["error"] = message;
    return j.dump();
  }

 private:
  std::string hello(const nlohmann::json& config) {
    config_ = config;
    nlohmann::ordered_json j;
    j["v"] = config.contains("version") ? config["version"] : nlohmann::json(kProtocolVersion);
    j["kind"] = to_string(role_);
    if (role_ == BackendKind::synthesizer) {
      params_ = simulator_params_from_json(config.value("params", nlohmann::json::object()));
      work_dir_ = config.value("work_dir", (fs::temp_directory_path() / "i2d-sim").string());
      j["capabilities"] = nlohmann::json::array();
    } else {
      j["capabilities"] = config.value("capabilities", nlohmann::json::array({"emotion", "mos", "sim"}));
    }
    j["deterministic"] = true;
    configured_ = true;
    return j.dump();
  }

  SimReply synthesize(const nlohmann::json& req, const std::string& nonce) {
    if (role_ != BackendKind::synthesizer) return {SimAction::reply, error_reply(nonce, "not a synthesizer")};
    ++served_;
    if (auto n = config_.find("crash_after"); n != config_.end() && served_ > n->get<long>()) return {SimAction::crash, {}};
    if (auto n = config_.find("hang_after"); n != config_.end() && served_ > n->get<long>()) return {SimAction::hang, {}};
    if (auto n = config_.find("fail_after"); n != config_.end() && served_ > n->get<long>())
      return {SimAction::reply, error_reply(nonce, "injected synthesis failure")};

    for (const char* field : {"ref_wav", "ref_text", "text"}) {
      if (!req.contains(field) || !req[field].is_string())
        return {SimAction::reply, error_reply(nonce, std::string("request missing required field '") + field + "'")};
    }
    if (!req.contains("seed") || !req["seed"].is_number_unsigned())
      return {SimAction::reply, error_reply(nonce, "request missing required field 'seed'")};
    const std::string ref_wav = req["ref_wav"].get<std::string>();
    const std::string text = req["text"].get<std::string>();
    const std::uint64_t seed = req["seed"].get<std::uint64_t>();

    const auto ref_bytes = read_file(ref_wav);
    const auto state = virtual_audio_from_json(nlohmann::json::parse(ref_bytes));
    const auto out = sim_synthesize(state, text, params_, seed);
    const std::uint64_t tag = StableHasher{}.add(seed).add(text).add(ref_bytes).finish();
    char name[40];
    std::snprintf(name, sizeof name, "sim-%016llx.json", static_cast<unsigned long long>(tag));
    const fs::path out_path = fs::path(work_dir_) / name;
    write_virtual_audio(out_path, out);

    nlohmann::ordered_json j;
    j["v"] = kProtocolVersion;
    j["nonce"] = nonce;
    j["ok"] = true;
    j["wav"] = out_path.string();
    j["hyp_text"] = out.transcript;
    return {SimAction::reply, j.dump()};
  }

  std::string metric(const nlohmann::json& req, const std::string& nonce) {
    if (role_ != BackendKind::metric) return error_reply(nonce, "not a metric backend");
    if (!req.contains("name") || !req["name"].is_string()) return error_reply(nonce, "request missing required field 'name'");
    const std::string name = req["name"].get<std::string>();
    const auto caps = config_.value("capabilities", nlohmann::json::array({"emotion", "mos", "sim"}));
    if (std::find(caps.begin(), caps.end(), name) == caps.end()) return error_reply(nonce, "unsupported metric '" + name + "'");
    if (config_.value("fail_metric", std::string{}) == name) return error_reply(nonce, "injected metric failure");
    const auto payload = req.value("payload", nlohmann::json::object());
    if (!payload.is_object() || !payload.contains("wav")) return error_reply(nonce, "payload missing required field 'wav'");
    const auto audio = read_virtual_audio(payload["wav"].get<std::string>());

    nlohmann::ordered_json j;
    j["v"] = kProtocolVersion;
    j["nonce"] = nonce;
    j["ok"] = true;
    if (config_.value("nonfinite_metric", std::string{}) == name) {
      j["score"] = nullptr;
      return j.dump();
    }

    double score = 0.0;
    if (name == "mos") {
      const double lo = config_.value("min_mos", 1.0);
      const double hi = config_.value("max_mos", 5.0);
      const double knee = config_.value("knee", 1.0);
      const double noise_sd = config_.value("noise_sd", 0.0);
      StableHasher h;
      h.add(config_.value("seed", std::uint64_t{0})).add(std::string_view("mos"));
      for (auto s : audio.seed_trail) h.add(s);
      // the clip itself, so that two models' outputs for one sample get independent errors
      h.add(std::bit_cast<std::uint64_t>(audio.quality)).add(audio.transcript);
      Rng rng(h.finish());
      score = lo + (hi - lo) * std::min(1.0, audio.quality / knee) + noise_sd * rng.normal();
    } else if (name == "sim") {
      if (!payload.contains("ref_wav")) return error_reply(nonce, "payload missing required field 'ref_wav'");
      const auto ref = read_virtual_audio(payload["ref_wav"].get<std::string>());
      score = cosine_similarity(audio.speaker_embedding, ref.speaker_embedding);
    } else if (name == "emotion") {
      if (!audio.emotion) return error_reply(nonce, "audio carries no emotion");
      score = static_cast<double>(static_cast<int>(*audio.emotion));
    } else if (name == "quality") {
      score = audio.quality;
    } else {
      return error_reply(nonce, "unsupported metric '" + name + "'");
    }
    j["score"] = score;
    return j.dump();
  }

  BackendKind role_;
  bool configured_ = false;
  nlohmann::json config_ = nlohmann::json::object();
  SimulatorParams params_;
  std::string work_dir_;
  long served_ = 0;
};

}  // namespace i2d
