#pragma once

// Generated datasets for exercising the harness without real models. Each
// writer fills a directory with manifest.jsonl, refs/*.json (virtual
// audio), metrics.json, config.json and, where relevant, annotations.csv.
// Simulated backends run in-process unless a path to i2d-sim-backend is
// given, in which case they are spawned over stdio.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "i2d/error.hpp"
#include "i2d/manifest.hpp"
#include "i2d/pipeline.hpp"
#include "i2d/simulator.hpp"
#include "i2d/stats.hpp"
#include "i2d/util.hpp"

namespace i2d::fixtures {

struct FixtureOptions {
  std::uint64_t seed = 1;
  std::optional<fs::path> sim_backend;  // spawn this executable instead of the builtin simulator
  std::size_t parallelism = 1;
};

namespace detail {

inline const std::vector<std::string> kWords{
    "the",   "quiet", "river", "carries", "small",  "boats", "past",  "green", "fields", "under",
    "a",     "pale",  "sky",   "while",   "old",    "bells", "ring",  "over",  "wooden", "roofs",
    "every", "warm",  "night", "brings",  "gentle", "rain",  "and",   "soft",  "light",  "home"};

inline std::string sentence(Rng& rng, std::size_t words) {
  std::string out;
  for (std::size_t i = 0; i < words; ++i) {
    if (i) out += ' ';
    out += kWords[static_cast<std::size_t>(rng.below(kWords.size()))];
  }
  return out;
}

inline std::vector<double> unit_embedding(Rng& rng) {
  std::vector<double> e(kEmbeddingDim);
  double norm = 0.0;
  for (double& x : e) {
    x = rng.normal();
    norm += x * x;
  }
  for (double& x : e) x /= std::sqrt(norm);
  return e;
}

/// Reference clips are independent of the run seed so that a seed battery
/// varies only the synthesis and evaluator noise.
inline DatasetManifest write_references(const fs::path& dir, std::size_t n, const std::vector<std::optional<Emotion>>& emotions = {}) {
  Rng rng(0x5eed0f1c5ULL);
  DatasetManifest m;
  m.name = "manifest";
  for (std::size_t i = 0; i < n; ++i) {
    SampleTriplet s;
    s.sample_id = "s" + zero_pad(static_cast<int>(i + 1), 3);
    s.speaker_id = "spk" + zero_pad(static_cast<int>(i + 1), 3);
    s.language = Language::en;
    s.ref_text = sentence(rng, 6 + static_cast<std::size_t>(rng.below(5)));
    s.target_text = sentence(rng, 8 + static_cast<std::size_t>(rng.below(5)));
    s.duration_s = round_sig9(0.4 * static_cast<double>(split(s.target_text, ' ').size()));
    if (i < emotions.size()) s.emotion = emotions[i];
    s.ref_wav = "refs/" + s.sample_id + ".json";
    VirtualAudio a;
    a.quality = 1.0;
    a.transcript = s.ref_text;
    a.speaker_embedding = unit_embedding(rng);
    a.emotion = s.emotion;
    a.rms = 0.1;
    write_virtual_audio(dir / s.ref_wav, a);
    m.samples.push_back(std::move(s));
  }
  if (!emotions.empty()) m.kind = ManifestKind::emotion;
  write_manifest(dir / "manifest.jsonl", m);
  return m;
}

inline nlohmann::ordered_json sim_params(double rate, double noise_sd, double corruption_gain, double drift_rate,
                                         double floor = 0.0) {
  nlohmann::ordered_json p;
  p["degradation_rate"] = rate;
  p["noise_sd"] = noise_sd;
  p["corruption_gain"] = corruption_gain;
  p["drift_rate"] = drift_rate;
  p["floor"] = floor;
  return p;
}

inline nlohmann::ordered_json backend(const std::string& id, const std::string& kind, const FixtureOptions& opt,
                                      nlohmann::ordered_json config, const std::vector<std::string>& caps = {}) {
  nlohmann::ordered_json b;
  b["backend_id"] = id;
  b["kind"] = kind;
  if (opt.sim_backend) {
    b["transport"] = "subprocess-stdio";
    b["launch"] = "\"" + opt.sim_backend->string() + "\" " + kind;
  } else {
    b["transport"] = "builtin";
    b["launch"] = kind == "synthesizer" ? "sim-synthesizer" : "sim-metric";
  }
  if (!caps.empty()) b["capabilities"] = caps;
  b["config"] = std::move(config);
  b["timeout_s"] = 60;
  return b;
}

inline nlohmann::ordered_json synthesizer(const std::string& id, nlohmann::ordered_json params, const FixtureOptions& opt) {
  nlohmann::ordered_json c;
  c["params"] = std::move(params);
  return backend(id, "synthesizer", opt, std::move(c));
}

inline nlohmann::ordered_json metric(const std::string& name, const std::string& direction, const std::string& source,
                                     const std::string& pairing = "none") {
  nlohmann::ordered_json m;
  m["name"] = name;
  m["direction"] = direction;
  m["source"] = source;
  m["pairing"] = pairing;
  return m;
}

inline void write_json(const fs::path& path, const nlohmann::ordered_json& j) { write_file(path, j.dump(2) + "\n"); }

inline nlohmann::ordered_json base_config(const FixtureOptions& opt) {
  nlohmann::ordered_json c;
  c["manifest"] = "manifest.jsonl";
  c["out"] = "run";
  c["seed"] = opt.seed;
  c["max_iteration"] = 10;
  c["parallelism"] = opt.parallelism;
  c["methods"] = {"iter1", "mean", "lwa", "ewa", "auc"};
  c["truncation_policy"] = "pessimistic-fill";
  c["metrics_file"] = "metrics.json";
  return c;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Saturation: eleven models whose quality loss per iteration is spread over
// [0.01, 0.15]. A predictive-MOS evaluator saturates above quality 0.85, so
// single-pass scores barely separate the models while later iterations do.

inline constexpr std::size_t kSaturationModels = 11;
inline constexpr std::size_t kSaturationSamples = 50;

inline std::vector<double> saturation_rates() {
  std::vector<double> r;
  for (std::size_t i = 0; i < kSaturationModels; ++i)
    r.push_back(0.01 + 0.14 * static_cast<double>(i) / static_cast<double>(kSaturationModels - 1));
  return r;
}

inline std::string saturation_model_id(std::size_t i) { return "m" + zero_pad(static_cast<int>(i + 1), 2); }

inline void write_saturation_fixture(const fs::path& dir, const FixtureOptions& opt = {}) {
  const auto manifest = detail::write_references(dir, kSaturationSamples);
  const auto rates = saturation_rates();

  auto metrics = nlohmann::ordered_json::array();
  metrics.push_back(detail::metric("mos", "higher_better", "backend:evaluator", "naturalness"));
  metrics.push_back(detail::metric("quality", "higher_better", "local"));
  metrics.push_back(detail::metric("cer", "lower_better", "local", "content"));
  metrics.push_back(detail::metric("sim", "higher_better", "local", "speaker"));
  detail::write_json(dir / "metrics.json", metrics);

  auto backends = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < rates.size(); ++i)
    backends.push_back(detail::synthesizer(saturation_model_id(i), detail::sim_params(rates[i], 0.005, 0.5, 0.6), opt));
  nlohmann::ordered_json ev;
  ev["knee"] = 0.85;
  ev["noise_sd"] = 0.05;
  ev["seed"] = opt.seed;
  ev["capabilities"] = {"mos"};
  backends.push_back(detail::backend("evaluator", "metric", opt, ev, {"mos"}));

  auto config = detail::base_config(opt);
  config["backends"] = backends;
  config["annotations"] = "annotations.csv";
  config["correlate"] = {{"level", "both"}, {"human_iteration", 1}, {"sweep", {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}}};
  detail::write_json(dir / "config.json", config);

  // Human naturalness at iteration 1 follows the true order: model i gets
  // 10 - i of its ten rated clips at 5 and the rest at 4, from five raters.
  std::vector<AnnotationRecord> records;
  for (std::size_t i = 0; i < rates.size(); ++i)
    for (std::size_t s = 0; s < 10; ++s)
      for (int a = 1; a <= 5; ++a)
        records.push_back({manifest.samples[s].sample_id, saturation_model_id(i), 1, "r" + std::to_string(a),
                           Dimension::naturalness, s < 10 - i ? 5 : 4, 10.0});
  write_file(dir / "annotations.csv", serialize_annotations(records));
}

// ---------------------------------------------------------------------------
// Swap: a strong and a weak model, noise off. The strong model's floor keeps
// its quality from collapsing after it receives degraded references.

inline constexpr double kStrongRate = 0.02;
inline constexpr double kStrongFloor = 0.3;
inline constexpr double kWeakRate = 0.15;

inline void write_swap_fixture(const fs::path& dir, const FixtureOptions& opt = {}, int swap_iteration = 6) {
  detail::write_references(dir, 3);
  auto metrics = nlohmann::ordered_json::array();
  metrics.push_back(detail::metric("quality", "higher_better", "local"));
  metrics.push_back(detail::metric("cer", "lower_better", "local", "content"));
  detail::write_json(dir / "metrics.json", metrics);

  auto config = detail::base_config(opt);
  config["backends"] = {detail::synthesizer("strong", detail::sim_params(kStrongRate, 0.0, 0.5, 0.6, kStrongFloor), opt),
                        detail::synthesizer("weak", detail::sim_params(kWeakRate, 0.0, 0.5, 0.6), opt)};
  config["swap"] = {{"model_a", "strong"}, {"model_b", "weak"}, {"swap_iteration", swap_iteration}};
  detail::write_json(dir / "config.json", config);
}

// ---------------------------------------------------------------------------
// Emotion: thirty clips, ten per class, three models of increasing decay.

inline void write_emotion_fixture(const fs::path& dir, const FixtureOptions& opt = {}) {
  std::vector<std::optional<Emotion>> emotions;
  for (std::size_t i = 0; i < 30; ++i) emotions.push_back(kEmotions[i % 3]);
  detail::write_references(dir, emotions.size(), emotions);
  auto metrics = nlohmann::ordered_json::array();
  metrics.push_back(detail::metric("emo_f1", "higher_better", "local"));
  metrics.push_back(detail::metric("cer", "lower_better", "local", "content"));
  detail::write_json(dir / "metrics.json", metrics);

  auto config = detail::base_config(opt);
  config["backends"] = {detail::synthesizer("e1", detail::sim_params(0.02, 0.005, 0.8, 0.6), opt),
                        detail::synthesizer("e2", detail::sim_params(0.06, 0.005, 0.8, 0.6), opt),
                        detail::synthesizer("e3", detail::sim_params(0.12, 0.005, 0.8, 0.6), opt)};
  detail::write_json(dir / "config.json", config);
}

// ---------------------------------------------------------------------------
// Published comparison: predictive-MOS (zh, Mean aggregation) and human
// naturalness at iteration 1 for eleven systems.

struct PublishedPair {
  std::string model;
  double mos_mean;
  double naturalness;
};

inline const std::vector<PublishedPair>& published_pairs() {
  static const std::vector<PublishedPair> pairs{
      {"CosyVoice", 2.76, 3.93}, {"CosyVoice2", 3.22, 4.08},  {"CosyVoice3", 3.33, 4.04}, {"CosyVoice3-RL", 3.33, 4.07},
      {"F5-TTS", 2.92, 4.10},    {"FireRedTTS2", 3.10, 3.95}, {"GLM-TTS", 2.74, 4.07},    {"IndexTTS2", 3.22, 4.30},
      {"MaskGCT", 2.95, 3.81},   {"Qwen3-TTS", 3.68, 4.27},   {"VoxCPM1.5", 2.93, 4.11}};
  return pairs;
}

/// One rating per clip over 100 clips, so that each model's two-stage mean
/// equals its published naturalness exactly.
inline std::vector<AnnotationRecord> published_annotations() {
  std::vector<AnnotationRecord> out;
  for (const auto& p : published_pairs()) {
    const int base = static_cast<int>(std::floor(p.naturalness));
    const long high = std::lround((p.naturalness - base) * 100.0);
    for (int s = 0; s < 100; ++s)
      out.push_back({"c" + zero_pad(s + 1, 3), p.model, 1, "a1", Dimension::naturalness, s < high ? base + 1 : base, 10.0});
  }
  return out;
}

inline void write_table3_fixture(const fs::path& dir) {
  std::string csv(kModelScoresHeader);
  csv += "\n";
  for (const auto& p : published_pairs()) csv += p.model + ",utmosv2_zh:mean," + format_real(p.mos_mean) + "\n";
  write_file(dir / "model_scores.csv", csv);
  write_file(dir / "annotations.csv", serialize_annotations(published_annotations()));
}

// ---------------------------------------------------------------------------
// Annotation quality control: 1000 ratings with a known set of outliers.
//   194 items x 5 ratings, 3 items x 6, 4 items x 3
//   4 inconsistent ratings (a 1 among {4,5,5,4})
//   4 ratings submitted in 0.5 s
//   4 ratings far below the objective trend, in 3-rating items where the
//     consistency criterion does not apply

struct AnnotationQcFixture {
  std::vector<AnnotationRecord> records;
  std::map<std::pair<std::string, std::string>, double> objective;  // (model, sample)
  std::size_t expected_consistency = 0;
  std::size_t expected_duration = 0;
  std::size_t expected_discrepancy = 0;
  std::size_t expected_total() const { return expected_consistency + expected_duration + expected_discrepancy; }
};

inline AnnotationQcFixture annotation_qc_fixture() {
  AnnotationQcFixture f;
  const std::vector<std::string> models{"qa", "qb", "qc", "qd"};
  int item = 0;
  auto add_item = [&](const std::vector<int>& scores, int base, const std::vector<double>& durations) {
    const std::string sample = "q" + zero_pad(item / 4 + 1, 3);
    const std::string model = models[static_cast<std::size_t>(item % 4)];
    ++item;
    f.objective[{model, sample}] = base + 0.4;
    for (std::size_t a = 0; a < scores.size(); ++a)
      f.records.push_back({sample, model, 1, "a" + std::to_string(a + 1), Dimension::naturalness, scores[a],
                           durations.empty() ? 8.0 + static_cast<double>((item + static_cast<int>(a)) % 7) : durations[a]});
  };
  const std::vector<double> none;
  for (int i = 0; i < 194; ++i) {
    const int b = 1 + i % 4;
    if (i < 4) {
      add_item({1, 4, 5, 5, 4}, 4, none);
      ++f.expected_consistency;
    } else if (i < 8) {
      add_item({b, b, b + 1, b + 1, b}, b, {9.0, 0.5, 9.0, 9.0, 9.0});
      ++f.expected_duration;
    } else {
      add_item({b, b, b + 1, b + 1, b}, b, none);
    }
  }
  for (int i = 0; i < 3; ++i) {
    const int b = 2 + i;
    add_item({b, b, b + 1, b + 1, b, b + 1}, b, none);
  }
  for (int i = 0; i < 4; ++i) {
    add_item({4, 4, 1}, 4, none);
    ++f.expected_discrepancy;
  }
  return f;
}

inline void write_annotation_qc_fixture(const fs::path& dir) {
  const auto f = annotation_qc_fixture();
  write_file(dir / "annotations.csv", serialize_annotations(f.records));
  std::string csv = "model_id,sample_id,objective\n";
  for (const auto& [key, x] : f.objective) csv += key.first + "," + key.second + "," + format_real(x) + "\n";
  write_file(dir / "objective.csv", csv);
}

// ---------------------------------------------------------------------------

inline const std::vector<std::string>& fixture_kinds() {
  static const std::vector<std::string> kinds{"saturation", "swap", "emotion", "table3", "annotation-qc"};
  return kinds;
}

inline void write_fixture(std::string_view kind, const fs::path& dir, const FixtureOptions& opt = {}) {
  fs::create_directories(dir);
  if (kind == "saturation") return write_saturation_fixture(dir, opt);
  if (kind == "swap") return write_swap_fixture(dir, opt);
  if (kind == "emotion") return write_emotion_fixture(dir, opt);
  if (kind == "table3") return write_table3_fixture(dir);
  if (kind == "annotation-qc") return write_annotation_qc_fixture(dir);
  throw Error(ErrorCode::config, "unknown fixture kind '" + std::string(kind) + "'");
}

}  // namespace i2d::fixtures
