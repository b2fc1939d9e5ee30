#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "i2d/error.hpp"
#include "i2d/util.hpp"

namespace i2d {

enum class Language { zh, en };
enum class Emotion { happy, sad, angry };

inline std::string_view to_string(Language lang) { return lang == Language::zh ? "zh" : "en"; }

inline Language parse_language(std::string_view s) {
  if (s == "zh") return Language::zh;
  if (s == "en") return Language::en;
  throw Error(ErrorCode::parse, "unknown language '" + std::string(s) + "'");
}

inline std::string_view to_string(Emotion e) {
  switch (e) {
    case Emotion::happy: return "happy";
    case Emotion::sad: return "sad";
    case Emotion::angry: return "angry";
  }
  return "?";
}

inline Emotion parse_emotion(std::string_view s) {
  if (s == "happy") return Emotion::happy;
  if (s == "sad") return Emotion::sad;
  if (s == "angry") return Emotion::angry;
  throw Error(ErrorCode::parse, "unknown emotion '" + std::string(s) + "'");
}

inline constexpr std::array<Emotion, 3> kEmotions{Emotion::happy, Emotion::sad, Emotion::angry};

/// One evaluation unit: reference audio, its transcript and the text to synthesize.
struct SampleTriplet {
  std::string sample_id;
  std::string speaker_id;
  Language language = Language::en;
  std::string ref_wav;
  std::string ref_text;
  std::string target_text;
  std::optional<Emotion> emotion;
  std::optional<double> duration_s;

  bool operator==(const SampleTriplet&) const = default;
};

enum class ManifestKind { standard, emotion };

struct DatasetManifest {
  std::string name;
  ManifestKind kind = ManifestKind::standard;
  std::vector<SampleTriplet> samples;
  std::string provenance;

  const SampleTriplet* find(std::string_view sample_id) const {
    for (const auto& s : samples)
      if (s.sample_id == sample_id) return &s;
    return nullptr;
  }

  bool operator==(const DatasetManifest&) const = default;
};

struct ManifestLoadOptions {
  bool lenient = false;                          // warn on unknown fields instead of failing
  std::vector<std::string>* warnings = nullptr;  // receives lenient-mode warnings
};

namespace detail {

inline const std::set<std::string, std::less<>> kManifestFields{
    "sample_id", "speaker_id", "language", "ref_wav", "ref_text", "target_text", "emotion", "duration_s"};

inline std::string required_string(const nlohmann::json& obj, const char* key, std::size_t line_no) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string())
    throw Error(ErrorCode::parse, "line " + std::to_string(line_no) + ": field '" + key + "' missing or not a string");
  return it->get<std::string>();
}

}  // namespace detail

/// Checks the manifest invariants and infers `kind`: a manifest is an emotion
/// manifest when any sample carries an emotion, and then every sample must.
inline void validate_manifest(DatasetManifest& manifest) {
  std::set<std::string, std::less<>> ids;
  bool any_emotion = false;
  for (const auto& s : manifest.samples) {
    if (s.sample_id.empty()) throw Error(ErrorCode::invariant, "empty sample_id");
    if (!ids.insert(s.sample_id).second) throw Error(ErrorCode::invariant, "duplicate sample_id '" + s.sample_id + "'");
    if (s.ref_text.empty()) throw Error(ErrorCode::invariant, "sample '" + s.sample_id + "': empty ref_text");
    if (s.target_text.empty()) throw Error(ErrorCode::invariant, "sample '" + s.sample_id + "': empty target_text");
    if (s.duration_s && !(*s.duration_s >= 0.0 && std::isfinite(*s.duration_s)))
      throw Error(ErrorCode::invariant, "sample '" + s.sample_id + "': invalid duration_s");
    any_emotion = any_emotion || s.emotion.has_value();
  }
  if (any_emotion) manifest.kind = ManifestKind::emotion;
  if (manifest.kind == ManifestKind::emotion) {
    for (const auto& s : manifest.samples)
      if (!s.emotion)
        throw Error(ErrorCode::invariant, "emotion manifest: sample '" + s.sample_id + "' has no emotion");
  }
}

inline DatasetManifest parse_manifest(std::string_view text, std::string name = "manifest",
                                      const ManifestLoadOptions& options = {}) {
  DatasetManifest manifest;
  manifest.name = std::move(name);
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    if (trim(lines[i]).empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::parse, "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!obj.is_object()) throw Error(ErrorCode::parse, "line " + std::to_string(line_no) + ": not a JSON object");
    for (const auto& [key, _] : obj.items()) {
      if (detail::kManifestFields.count(key)) continue;
      const std::string msg = "line " + std::to_string(line_no) + ": unknown field '" + key + "'";
      if (!options.lenient) throw Error(ErrorCode::parse, msg);
      if (options.warnings) options.warnings->push_back(msg);
    }
    SampleTriplet s;
    s.sample_id = detail::required_string(obj, "sample_id", line_no);
    s.speaker_id = detail::required_string(obj, "speaker_id", line_no);
    try {
      s.language = parse_language(detail::required_string(obj, "language", line_no));
      s.ref_wav = detail::required_string(obj, "ref_wav", line_no);
      s.ref_text = detail::required_string(obj, "ref_text", line_no);
      s.target_text = detail::required_string(obj, "target_text", line_no);
      if (auto it = obj.find("emotion"); it != obj.end() && !it->is_null()) {
        if (!it->is_string()) throw Error(ErrorCode::parse, "emotion must be a string");
        s.emotion = parse_emotion(it->get<std::string>());
      }
      if (auto it = obj.find("duration_s"); it != obj.end() && !it->is_null()) {
        if (!it->is_number()) throw Error(ErrorCode::parse, "duration_s must be a number");
        s.duration_s = it->get<double>();
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::parse || e.message().rfind("line ", 0) == 0) throw;
      throw Error(ErrorCode::parse, "line " + std::to_string(line_no) + ": " + e.message());
    }
    manifest.samples.push_back(std::move(s));
  }
  validate_manifest(manifest);
  return manifest;
}

inline DatasetManifest load_manifest(const fs::path& path, const ManifestLoadOptions& options = {}) {
  if (!fs::exists(path)) throw Error(ErrorCode::io, "manifest not found: " + path.string());
  auto manifest = parse_manifest(read_file(path), path.stem().string(), options);
  manifest.provenance = path.string();
  return manifest;
}

inline nlohmann::ordered_json to_json(const SampleTriplet& s) {
  nlohmann::ordered_json j;
  j["sample_id"] = s.sample_id;
  j["speaker_id"] = s.speaker_id;
  j["language"] = to_string(s.language);
  j["ref_wav"] = s.ref_wav;
  j["ref_text"] = s.ref_text;
  j["target_text"] = s.target_text;
  if (s.emotion) j["emotion"] = to_string(*s.emotion);
  if (s.duration_s) j["duration_s"] = *s.duration_s;
  return j;
}

inline std::string serialize_manifest(const DatasetManifest& manifest) {
  std::string out;
  for (const auto& s : manifest.samples) {
    out += to_json(s).dump();
    out += '\n';
  }
  return out;
}

inline void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  write_file(path, serialize_manifest(manifest));
}

/// Keeps samples with min_s <= duration_s <= max_s, in manifest order.
inline DatasetManifest filter_by_duration(const DatasetManifest& manifest, double min_s, double max_s) {
  if (!(min_s < max_s)) throw Error(ErrorCode::precondition, "filter_by_duration requires min_s < max_s");
  DatasetManifest out = manifest;
  out.samples.clear();
  for (const auto& s : manifest.samples) {
    if (!s.duration_s) throw Error(ErrorCode::precondition, "sample '" + s.sample_id + "' has no duration_s");
    if (*s.duration_s >= min_s && *s.duration_s <= max_s) out.samples.push_back(s);
  }
  return out;
}

/// Picks `n` samples with pairwise distinct speakers: the distinct speakers
/// (in first-appearance order) are shuffled with the seeded RNG, the first n
/// are kept, and each contributes its first sample in manifest order. The
/// result keeps manifest order.
inline DatasetManifest sample_human_subset(const DatasetManifest& manifest, std::size_t n, std::uint64_t seed) {
  std::vector<std::string> speakers;
  std::map<std::string, std::size_t, std::less<>> first_sample;
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    const auto& spk = manifest.samples[i].speaker_id;
    if (first_sample.emplace(spk, i).second) speakers.push_back(spk);
  }
  if (speakers.size() < n)
    throw Error(ErrorCode::precondition, "need " + std::to_string(n) + " distinct speakers, manifest has " +
                                             std::to_string(speakers.size()));
  Rng rng(seed);
  rng.shuffle(speakers);
  std::vector<std::size_t> picked;
  picked.reserve(n);
  for (std::size_t i = 0; i < n; ++i) picked.push_back(first_sample.at(speakers[i]));
  std::sort(picked.begin(), picked.end());
  DatasetManifest out = manifest;
  out.samples.clear();
  for (std::size_t idx : picked) out.samples.push_back(manifest.samples[idx]);
  return out;
}

}  // namespace i2d
