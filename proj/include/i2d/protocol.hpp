#pragma once

// Wire protocol between the harness and synthesizer / metric backends.
//
// One JSON object per line in each direction, strictly request/response.
//
//   hello      {"v":1,"op":"hello","config":{...}}
//           -> {"v":1,"kind":"synthesizer"|"metric","capabilities":[...],"deterministic":bool}
//   synthesize {"v":1,"nonce":s,"op":"synthesize","ref_wav":p,"ref_text":s,"text":s,"seed":u64}
//           -> {"v":1,"nonce":s,"ok":true,"wav":p,"hyp_text":s|null}
//   metric     {"v":1,"nonce":s,"op":"metric","name":s,"payload":{...}}
//           -> {"v":1,"nonce":s,"ok":true,"score":x}
//   failure -> {"ok":false,"error":s} (nonce echoed when known)

#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>

#include <json.hpp>

#include "i2d/error.hpp"

namespace i2d {

inline constexpr int kProtocolVersion = 1;

enum class BackendKind { synthesizer, metric };
enum class TransportKind { subprocess_stdio, http, builtin };

inline std::string_view to_string(BackendKind k) { return k == BackendKind::synthesizer ? "synthesizer" : "metric"; }

inline BackendKind parse_backend_kind(std::string_view s) {
  if (s == "synthesizer") return BackendKind::synthesizer;
  if (s == "metric") return BackendKind::metric;
  throw Error(ErrorCode::config, "unknown backend kind '" + std::string(s) + "'");
}

inline std::string_view to_string(TransportKind t) {
  switch (t) {
    case TransportKind::subprocess_stdio: return "subprocess-stdio";
    case TransportKind::http: return "http";
    case TransportKind::builtin: return "builtin";
  }
  return "?";
}

inline TransportKind parse_transport(std::string_view s) {
  if (s == "subprocess-stdio") return TransportKind::subprocess_stdio;
  if (s == "http") return TransportKind::http;
  if (s == "builtin") return TransportKind::builtin;
  throw Error(ErrorCode::config, "unknown transport '" + std::string(s) + "'");
}

/// How to reach a backend. `launch` is a command line (subprocess-stdio), a
/// URL (http) or the name of an in-process simulated backend (builtin).
struct BackendDescriptor {
  std::string backend_id;
  BackendKind kind = BackendKind::synthesizer;
  TransportKind transport = TransportKind::subprocess_stdio;
  std::string launch;
  std::set<std::string> capabilities;
  nlohmann::json config = nlohmann::json::object();
  double timeout_s = 300.0;
};

inline void validate(const BackendDescriptor& d) {
  if (d.backend_id.empty()) throw Error(ErrorCode::config, "backend descriptor without backend_id");
  if (d.launch.empty()) throw Error(ErrorCode::config, "backend '" + d.backend_id + "': empty launch");
  if (d.kind == BackendKind::metric && d.capabilities.empty())
    throw Error(ErrorCode::config, "metric backend '" + d.backend_id + "' declares no capabilities");
  if (!(d.timeout_s > 0.0)) throw Error(ErrorCode::config, "backend '" + d.backend_id + "': timeout must be positive");
}

inline BackendDescriptor backend_descriptor_from_json(const nlohmann::json& j) {
  try {
    BackendDescriptor d;
    d.backend_id = j.at("backend_id").get<std::string>();
    d.kind = parse_backend_kind(j.at("kind").get<std::string>());
    d.transport = parse_transport(j.value("transport", std::string("subprocess-stdio")));
    d.launch = j.at("launch").get<std::string>();
    if (auto it = j.find("capabilities"); it != j.end()) d.capabilities = it->get<std::set<std::string>>();
    if (auto it = j.find("config"); it != j.end()) d.config = *it;
    d.timeout_s = j.value("timeout_s", 300.0);
    validate(d);
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, std::string("backend descriptor: ") + e.what());
  }
}

inline nlohmann::ordered_json to_json(const BackendDescriptor& d) {
  nlohmann::ordered_json j;
  j["backend_id"] = d.backend_id;
  j["kind"] = to_string(d.kind);
  j["transport"] = to_string(d.transport);
  j["launch"] = d.launch;
  if (!d.capabilities.empty()) j["capabilities"] = d.capabilities;
  j["config"] = d.config;
  j["timeout_s"] = d.timeout_s;
  return j;
}

struct SynthesisRequest {
  std::string ref_wav;
  std::string ref_text;
  std::string text;
  std::uint64_t seed = 0;

  bool operator==(const SynthesisRequest&) const = default;
};

struct SynthesisResponse {
  std::string wav;
  std::optional<std::string> hyp_text;
  nlohmann::json diagnostics = nlohmann::json::object();
};

// ---------------------------------------------------------------------------
// Encoding

inline std::string encode_hello(const nlohmann::json& config) {
  nlohmann::ordered_json j;
  j["v"] = kProtocolVersion;
  j["op"] = "hello";
  j["config"] = config;
  return j.dump();
}

inline std::string encode_synthesize(std::string_view nonce, const SynthesisRequest& req) {
  nlohmann::ordered_json j;
  j["v"] = kProtocolVersion;
  j["nonce"] = nonce;
  j["op"] = "synthesize";
  j["ref_wav"] = req.ref_wav;
  j["ref_text"] = req.ref_text;
  j["text"] = req.text;
  j["seed"] = req.seed;
  return j.dump();
}

inline std::string encode_metric(std::string_view nonce, std::string_view name, const nlohmann::json& payload) {
  nlohmann::ordered_json j;
  j["v"] = kProtocolVersion;
  j["nonce"] = nonce;
  j["op"] = "metric";
  j["name"] = name;
  j["payload"] = payload;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Decoding

struct HelloReply {
  int version = 0;
  BackendKind kind = BackendKind::synthesizer;
  std::set<std::string> capabilities;
  bool deterministic = false;
};

namespace detail {

inline nlohmann::json parse_reply(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::protocol, std::string("malformed response: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::protocol, "response is not a JSON object");
  return j;
}

/// Checks version, nonce echo and the ok flag shared by synthesize/metric replies.
inline nlohmann::json check_reply(std::string_view line, std::string_view nonce) {
  auto j = parse_reply(line);
  auto ok = j.find("ok");
  if (ok == j.end() || !ok->is_boolean()) throw Error(ErrorCode::protocol, "response lacks boolean 'ok'");
  if (auto n = j.find("nonce"); n != j.end()) {
    if (!n->is_string() || n->get<std::string>() != nonce)
      throw Error(ErrorCode::protocol, "nonce mismatch: sent '" + std::string(nonce) + "', got " + n->dump());
  } else if (ok->get<bool>()) {
    throw Error(ErrorCode::protocol, "response does not echo nonce");
  }
  if (!ok->get<bool>()) {
    const auto err = j.value("error", std::string("unspecified backend error"));
    throw Error(ErrorCode::backend_error, err);
  }
  if (auto v = j.find("v"); v == j.end() || !v->is_number_integer() || v->get<int>() != kProtocolVersion)
    throw Error(ErrorCode::version_mismatch, "response protocol version is not 1");
  return j;
}

}  // namespace detail

inline HelloReply decode_hello(std::string_view line) {
  auto j = detail::parse_reply(line);
  HelloReply r;
  auto v = j.find("v");
  if (v == j.end()) throw Error(ErrorCode::protocol, "hello reply lacks 'v'");
  if (v->is_number_integer()) {
    r.version = v->get<int>();
  } else if (v->is_string()) {
    try {
      r.version = std::stoi(v->get<std::string>());
    } catch (...) {
      r.version = -1;
    }
  } else {
    throw Error(ErrorCode::protocol, "hello reply 'v' has wrong type");
  }
  if (r.version != kProtocolVersion)
    throw Error(ErrorCode::version_mismatch, "backend speaks protocol version " + v->dump() + ", harness speaks 1");
  try {
    r.kind = parse_backend_kind(j.at("kind").get<std::string>());
    if (auto c = j.find("capabilities"); c != j.end()) r.capabilities = c->get<std::set<std::string>>();
    r.deterministic = j.value("deterministic", false);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::protocol, std::string("hello reply: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::protocol, "hello reply: " + e.message());
  }
  return r;
}

inline SynthesisResponse decode_synthesize(std::string_view line, std::string_view nonce) {
  auto j = detail::check_reply(line, nonce);
  SynthesisResponse r;
  auto wav = j.find("wav");
  if (wav == j.end() || !wav->is_string() || wav->get<std::string>().empty())
    throw Error(ErrorCode::protocol, "synthesize reply lacks 'wav'");
  r.wav = wav->get<std::string>();
  if (auto h = j.find("hyp_text"); h != j.end() && !h->is_null()) {
    if (!h->is_string()) throw Error(ErrorCode::protocol, "hyp_text must be a string or null");
    r.hyp_text = h->get<std::string>();
  }
  if (auto d = j.find("diagnostics"); d != j.end() && d->is_object()) r.diagnostics = *d;
  return r;
}

inline double decode_metric(std::string_view line, std::string_view nonce) {
  auto j = detail::check_reply(line, nonce);
  auto s = j.find("score");
  if (s == j.end()) throw Error(ErrorCode::protocol, "metric reply lacks 'score'");
  if (s->is_null()) throw Error(ErrorCode::non_finite, "metric backend returned a non-finite score");
  if (!s->is_number()) throw Error(ErrorCode::protocol, "metric score is not a number");
  const double score = s->get<double>();
  if (!std::isfinite(score)) throw Error(ErrorCode::non_finite, "metric backend returned a non-finite score");
  return score;
}

// ---------------------------------------------------------------------------
// Channel and handle

/// A line-oriented duplex connection to one backend instance.
class Channel {
 public:
  virtual ~Channel() = default;
  /// Sends one line and waits for exactly one reply line.
  virtual std::string exchange(const std::string& line, std::chrono::milliseconds timeout) = 0;
};

/// A negotiated connection. Owned by one in-flight request at a time; movable
/// between threads, never shared.
class BackendHandle {
 public:
  BackendHandle(BackendDescriptor descriptor, std::unique_ptr<Channel> channel, HelloReply hello)
      : descriptor_(std::move(descriptor)), channel_(std::move(channel)), hello_(std::move(hello)) {}

  BackendHandle(BackendHandle&&) noexcept = default;
  BackendHandle& operator=(BackendHandle&&) noexcept = default;

  const BackendDescriptor& descriptor() const { return descriptor_; }
  BackendKind kind() const { return hello_.kind; }
  int version() const { return hello_.version; }
  bool deterministic() const { return hello_.deterministic; }
  const std::set<std::string>& capabilities() const { return hello_.capabilities; }

  /// False once a transport-level failure (crash, timeout, garbage) occurred.
  bool healthy() const { return healthy_; }

 private:
  // In-band errors keep the handle usable; broken framing does not.
  template <typename F>
  decltype(auto) guarded(F&& decode) {
    try {
      return decode();
    } catch (const Error& e) {
      if (e.code() != ErrorCode::backend_error && e.code() != ErrorCode::non_finite) healthy_ = false;
      throw;
    }
  }

 public:

  SynthesisResponse synthesize(const SynthesisRequest& req, std::string_view nonce) {
    if (kind() != BackendKind::synthesizer)
      throw Error(ErrorCode::precondition, "backend '" + descriptor_.backend_id + "' is not a synthesizer");
    const auto reply = exchange(encode_synthesize(nonce, req));
    return guarded([&] { return decode_synthesize(reply, nonce); });
  }

  SynthesisResponse synthesize(const SynthesisRequest& req) { return synthesize(req, next_nonce()); }

  double eval_metric(std::string_view metric, const nlohmann::json& payload, std::string_view nonce) {
    if (kind() != BackendKind::metric)
      throw Error(ErrorCode::precondition, "backend '" + descriptor_.backend_id + "' is not a metric backend");
    if (!capabilities().count(std::string(metric)))
      throw Error(ErrorCode::unsupported_metric,
                  "backend '" + descriptor_.backend_id + "' does not provide '" + std::string(metric) + "'");
    const auto reply = exchange(encode_metric(nonce, metric, payload));
    return guarded([&] { return decode_metric(reply, nonce); });
  }

  double eval_metric(std::string_view metric, const nlohmann::json& payload) {
    return eval_metric(metric, payload, next_nonce());
  }

 private:
  std::string next_nonce() { return descriptor_.backend_id + "-" + std::to_string(++counter_); }

  std::string exchange(const std::string& line) {
    if (!healthy_) throw Error(ErrorCode::backend_crash, "backend '" + descriptor_.backend_id + "' is no longer usable");
    const auto timeout = std::chrono::milliseconds(static_cast<std::int64_t>(descriptor_.timeout_s * 1000.0));
    try {
      return channel_->exchange(line, timeout);
    } catch (...) {
      healthy_ = false;
      throw;
    }
  }

  BackendDescriptor descriptor_;
  std::unique_ptr<Channel> channel_;
  HelloReply hello_;
  std::uint64_t counter_ = 0;
  bool healthy_ = true;
};

}  // namespace i2d
