#pragma once

// Deterministic stand-in for a speech synthesizer. Audio is represented by a
// small JSON document (VirtualAudio) carrying the latent properties that the
// real metrics would measure: a quality scalar, a transcript, a speaker
// embedding and an emotion label.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "i2d/error.hpp"
#include "i2d/manifest.hpp"
#include "i2d/metrics.hpp"
#include "i2d/util.hpp"

namespace i2d {

inline constexpr std::size_t kEmbeddingDim = 16;

/// Replacement token for corrupted transcript positions. A private-use code
/// point survives normalization as exactly one token in both languages.
inline const std::string kOovToken = "\xEE\x80\x80";  // U+E000

inline constexpr std::string_view kVirtualAudioFormat = "i2d-virtual-audio/1";

struct VirtualAudio {
  double quality = 1.0;
  std::string transcript;
  std::vector<double> speaker_embedding;
  std::optional<Emotion> emotion;
  double rms = 0.1;
  std::vector<std::uint64_t> seed_trail;

  bool operator==(const VirtualAudio&) const = default;
};

inline void validate(const VirtualAudio& a) {
  if (!(a.quality >= 0.0 && a.quality <= 1.0)) throw Error(ErrorCode::invariant, "virtual audio: quality outside [0,1]");
  if (a.speaker_embedding.size() != kEmbeddingDim)
    throw Error(ErrorCode::invariant, "virtual audio: speaker embedding must have dimension 16");
  double norm = 0.0;
  for (double x : a.speaker_embedding) {
    if (!std::isfinite(x)) throw Error(ErrorCode::invariant, "virtual audio: non-finite embedding");
    norm += x * x;
  }
  if (norm == 0.0) throw Error(ErrorCode::invariant, "virtual audio: zero speaker embedding");
  if (!(a.rms > 0.0) || !std::isfinite(a.rms)) throw Error(ErrorCode::invariant, "virtual audio: rms must be positive");
}

inline nlohmann::ordered_json to_json(const VirtualAudio& a) {
  nlohmann::ordered_json j;
  j["format"] = kVirtualAudioFormat;
  j["quality"] = a.quality;
  j["transcript"] = a.transcript;
  j["speaker_embedding"] = a.speaker_embedding;
  j["emotion"] = a.emotion ? nlohmann::ordered_json(to_string(*a.emotion)) : nlohmann::ordered_json(nullptr);
  j["rms"] = a.rms;
  j["seed_trail"] = a.seed_trail;
  return j;
}

inline VirtualAudio virtual_audio_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", std::string{}) != kVirtualAudioFormat)
      throw Error(ErrorCode::parse, "not a virtual audio document");
    VirtualAudio a;
    a.quality = j.at("quality").get<double>();
    a.transcript = j.at("transcript").get<std::string>();
    a.speaker_embedding = j.at("speaker_embedding").get<std::vector<double>>();
    if (auto it = j.find("emotion"); it != j.end() && !it->is_null()) a.emotion = parse_emotion(it->get<std::string>());
    a.rms = j.at("rms").get<double>();
    if (auto it = j.find("seed_trail"); it != j.end()) a.seed_trail = it->get<std::vector<std::uint64_t>>();
    validate(a);
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, std::string("virtual audio: ") + e.what());
  }
}

inline VirtualAudio read_virtual_audio(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::parse, path.string() + ": " + e.what());
  }
  return virtual_audio_from_json(j);
}

inline void write_virtual_audio(const fs::path& path, const VirtualAudio& a) {
  write_file(path, to_json(a).dump() + "\n");
}

/// Simulated energy normalization: scales the stored RMS by the gain.
inline VirtualAudio apply_energy_normalization(VirtualAudio a, double target_rms) {
  a.rms *= energy_normalize(a.rms, target_rms);
  return a;
}

struct SimulatorParams {
  double degradation_rate = 0.0;  // expected quality loss per synthesis
  double noise_sd = 0.0;          // sd of the per-synthesis quality perturbation
  double corruption_gain = 0.0;   // token corruption probability per unit of (1 - quality)
  double drift_rate = 0.0;        // speaker-embedding angular step per unit of (1 - quality)
  double floor = 0.0;             // quality never drops below this

  bool operator==(const SimulatorParams&) const = default;
};

inline void validate(const SimulatorParams& p) {
  auto check = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorCode::invariant, std::string("simulator: ") + name + " must be >= 0");
  };
  check(p.degradation_rate, "degradation_rate");
  check(p.noise_sd, "noise_sd");
  check(p.corruption_gain, "corruption_gain");
  check(p.drift_rate, "drift_rate");
  if (!(p.floor >= 0.0 && p.floor <= 1.0)) throw Error(ErrorCode::invariant, "simulator: floor must lie in [0,1]");
}

inline SimulatorParams simulator_params_from_json(const nlohmann::json& j) {
  SimulatorParams p;
  p.degradation_rate = j.value("degradation_rate", 0.0);
  p.noise_sd = j.value("noise_sd", 0.0);
  p.corruption_gain = j.value("corruption_gain", 0.0);
  p.drift_rate = j.value("drift_rate", 0.0);
  p.floor = j.value("floor", 0.0);
  validate(p);
  return p;
}

inline nlohmann::ordered_json to_json(const SimulatorParams& p) {
  nlohmann::ordered_json j;
  j["degradation_rate"] = p.degradation_rate;
  j["noise_sd"] = p.noise_sd;
  j["corruption_gain"] = p.corruption_gain;
  j["drift_rate"] = p.drift_rate;
  j["floor"] = p.floor;
  return j;
}

inline bool is_cjk(char32_t cp) {
  return (cp >= 0x3400 && cp <= 0x9FFF) || (cp >= 0xF900 && cp <= 0xFAFF) || (cp >= 0x20000 && cp <= 0x3134F);
}

/// The simulator only sees text, so the tokenization language is inferred:
/// any CJK ideograph means per-character tokens.
inline Language infer_language(std::string_view text) {
  for (char32_t cp : utf8_decode(text))
    if (is_cjk(cp)) return Language::zh;
  return Language::en;
}

/// One simulated synthesis conditioned on `state` (the reference audio).
///
/// Draw order from the seeded stream is fixed (quality noise, one uniform per
/// target token, two for emotion, then the drift direction) so that two
/// simulators with different rates see identical noise for the same seed.
inline VirtualAudio sim_synthesize(const VirtualAudio& state, std::string_view text, const SimulatorParams& params,
                                   std::uint64_t seed) {
  Rng rng(seed);
  VirtualAudio out = state;

  const double eps = params.noise_sd * rng.normal();
  out.quality = std::clamp(state.quality - params.degradation_rate + eps, params.floor, 1.0);

  const double p_corrupt = std::min(1.0, params.corruption_gain * (1.0 - state.quality));
  const Language lang = infer_language(text);
  auto tokens = normalize_text(text, lang);
  bool corrupted = false;
  for (auto& tok : tokens) {
    if (rng.uniform() < p_corrupt) {
      tok = kOovToken;
      corrupted = true;
    }
  }
  if (corrupted) {
    std::string joined;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i > 0 && lang == Language::en) joined += ' ';
      joined += tokens[i];
    }
    out.transcript = std::move(joined);
  } else {
    out.transcript = std::string(text);
  }

  const double flip = rng.uniform();
  const double pick = rng.uniform();
  if (state.emotion && flip < p_corrupt) {
    std::vector<Emotion> others;
    for (Emotion e : kEmotions)
      if (e != *state.emotion) others.push_back(e);
    out.emotion = others[pick < 0.5 ? 0 : 1];
  }

  std::array<double, kEmbeddingDim> dir{};
  for (double& d : dir) d = rng.normal();
  const double theta = params.drift_rate * (1.0 - out.quality);
  if (theta > 0.0) {
    const auto& e = state.speaker_embedding;
    double norm = 0.0;
    for (double x : e) norm += x * x;
    norm = std::sqrt(norm);
    std::vector<double> unit(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) unit[i] = e[i] / norm;
    double proj = 0.0;
    for (std::size_t i = 0; i < unit.size(); ++i) proj += dir[i] * unit[i];
    double wnorm = 0.0;
    std::vector<double> w(unit.size());
    for (std::size_t i = 0; i < unit.size(); ++i) {
      w[i] = dir[i] - proj * unit[i];
      wnorm += w[i] * w[i];
    }
    wnorm = std::sqrt(wnorm);
    for (std::size_t i = 0; i < unit.size(); ++i)
      out.speaker_embedding[i] = std::cos(theta) * unit[i] + (wnorm > 0.0 ? std::sin(theta) * w[i] / wnorm : 0.0);
  }

  out.seed_trail.push_back(seed);
  return out;
}

}  // namespace i2d
