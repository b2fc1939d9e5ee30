#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "i2d/backend_pool.hpp"
#include "i2d/engine.hpp"
#include "i2d/error.hpp"
#include "i2d/manifest.hpp"
#include "i2d/metrics.hpp"
#include "i2d/simulator.hpp"
#include "i2d/stats.hpp"
#include "i2d/util.hpp"

namespace i2d {

// Metrics computed in-process. "cer"/"wer" use the synthesizer's hyp_text,
// "sim" compares speaker embeddings with the iteration-0 reference and
// "quality" reads the latent quality of simulated audio; the last two need
// virtual audio. "emo_f1" is a set-level metric built from per-clip
// predictions.
inline const std::set<std::string> kLocalMetrics{"cer", "wer", "sim", "quality", "emo_f1"};

inline constexpr std::string_view kEmotionMetric = "emo_f1";

/// Per-record score key holding an emotion prediction (class index).
inline std::string emotion_prediction_key(const std::string& metric) { return metric + ":pred"; }

inline Emotion emotion_from_index(double v) {
  const int i = static_cast<int>(std::lround(v));
  if (i < 0 || i > 2 || std::abs(v - i) > 1e-9) throw Error(ErrorCode::protocol, "emotion prediction must be 0, 1 or 2");
  return kEmotions[static_cast<std::size_t>(i)];
}

struct MetricSpec {
  std::string name;
  Direction direction = Direction::higher_better;
  std::optional<std::string> backend;  // empty: computed locally
  std::string remote_name;             // metric name sent to the backend (defaults to name)
  std::optional<Dimension> pairing;    // subjective dimension for correlation

  bool is_emotion() const { return name == kEmotionMetric; }
  bool operator==(const MetricSpec&) const = default;
};

inline MetricSpec metric_spec_from_json(const nlohmann::json& j) {
  try {
    MetricSpec m;
    m.name = j.at("name").get<std::string>();
    m.direction = parse_direction(j.value("direction", std::string("higher_better")));
    const std::string source = j.value("source", std::string("local"));
    if (source.rfind("backend:", 0) == 0) {
      m.backend = source.substr(8);
      if (m.backend->empty()) throw Error(ErrorCode::config, "metric '" + m.name + "': empty backend id");
    } else if (source != "local") {
      throw Error(ErrorCode::config, "metric '" + m.name + "': source must be 'local' or 'backend:<id>'");
    }
    m.remote_name = j.value("remote_name", m.name);
    const std::string pairing = j.value("pairing", std::string("none"));
    if (pairing != "none") {
      m.pairing = try_parse_dimension(pairing);
      if (!m.pairing) throw Error(ErrorCode::config, "metric '" + m.name + "': unknown pairing '" + pairing + "'");
    }
    if (!m.backend && !kLocalMetrics.count(m.name))
      throw Error(ErrorCode::config, "metric '" + m.name + "' has no local implementation; give it a backend source");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, std::string("metric spec: ") + e.what());
  }
}

inline nlohmann::ordered_json to_json(const MetricSpec& m) {
  nlohmann::ordered_json j;
  j["name"] = m.name;
  j["direction"] = to_string(m.direction);
  j["source"] = m.backend ? "backend:" + *m.backend : std::string("local");
  if (m.remote_name != m.name) j["remote_name"] = m.remote_name;
  j["pairing"] = m.pairing ? std::string(to_string(*m.pairing)) : std::string("none");
  return j;
}

/// Accepts a JSON array of specs or {"metrics": [...]}; names must be unique.
inline std::vector<MetricSpec> metric_specs_from_json(const nlohmann::json& j) {
  const auto& list = j.is_object() && j.contains("metrics") ? j["metrics"] : j;
  if (!list.is_array()) throw Error(ErrorCode::config, "metric specs must be a JSON array");
  std::vector<MetricSpec> specs;
  std::set<std::string> names;
  for (const auto& item : list) {
    specs.push_back(metric_spec_from_json(item));
    if (!names.insert(specs.back().name).second)
      throw Error(ErrorCode::config, "duplicate metric name '" + specs.back().name + "'");
  }
  return specs;
}

// ---------------------------------------------------------------------------
// Scoring traces

struct ScoringContext {
  const DatasetManifest* manifest = nullptr;
  fs::path run_dir;
  fs::path manifest_dir;
  std::map<std::string, HandlePool*> pools;  // metric backends by id
  std::size_t parallelism = 1;
};

struct MissingScore {
  std::string model_id;
  std::string sample_id;
  int iteration = 0;
  std::string metric;
  std::string reason;
};

namespace detail {

inline double local_metric(const MetricSpec& spec, const IterationRecord& rec, const SampleTriplet& triplet,
                           const ScoringContext& ctx) {
  if (spec.name == "cer" || spec.name == "wer") {
    if (!rec.hyp_text) throw Error(ErrorCode::precondition, "no hypothesis transcript for " + spec.name);
    return error_rate(triplet.target_text, *rec.hyp_text, triplet.language);
  }
  const auto audio = read_virtual_audio(ctx.run_dir / rec.wav);
  if (spec.name == "quality") return audio.quality;
  if (spec.name == "sim") {
    fs::path ref(triplet.ref_wav);
    if (!ref.is_absolute() && !ctx.manifest_dir.empty()) ref = ctx.manifest_dir / ref;
    const auto original = read_virtual_audio(ref);
    return cosine_similarity(audio.speaker_embedding, original.speaker_embedding);
  }
  if (spec.is_emotion()) {
    if (!audio.emotion) throw Error(ErrorCode::precondition, "simulated audio carries no emotion");
    return static_cast<double>(static_cast<int>(*audio.emotion));
  }
  throw Error(ErrorCode::config, "no local implementation of '" + spec.name + "'");
}

inline nlohmann::json metric_payload(const IterationRecord& rec, const SampleTriplet& triplet, const ScoringContext& ctx) {
  fs::path ref(triplet.ref_wav);
  if (!ref.is_absolute() && !ctx.manifest_dir.empty()) ref = ctx.manifest_dir / ref;
  nlohmann::json payload;
  payload["wav"] = (ctx.run_dir / rec.wav).string();
  payload["ref_wav"] = ref.string();
  payload["text"] = triplet.target_text;
  payload["language"] = to_string(triplet.language);
  return payload;
}

}  // namespace detail

/// Attaches one score per applicable spec to every ok record. Emotion specs
/// only apply to emotion manifests and store the per-clip prediction under
/// "<name>:pred". Failures leave the score absent and are listed in the result.
inline std::vector<MissingScore> score_traceset(TraceSet& traces, const std::vector<MetricSpec>& specs,
                                                const ScoringContext& ctx) {
  if (!ctx.manifest) throw Error(ErrorCode::precondition, "score_traceset: no manifest");
  for (const auto& spec : specs)
    if (spec.backend && !ctx.pools.count(*spec.backend))
      throw Error(ErrorCode::config, "metric '" + spec.name + "' refers to unknown backend '" + *spec.backend + "'");

  std::vector<std::vector<MissingScore>> missing(traces.traces.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next++; t < traces.traces.size(); t = next++) {
      auto& trace = traces.traces[t];
      const SampleTriplet* triplet = ctx.manifest->find(trace.sample_id);
      for (auto& rec : trace.records) {
        if (!rec.ok()) continue;
        rec.missing.clear();
        for (const auto& spec : specs) {
          if (spec.is_emotion() && ctx.manifest->kind != ManifestKind::emotion) continue;
          const std::string key = spec.is_emotion() ? emotion_prediction_key(spec.name) : spec.name;
          try {
            if (!triplet) throw Error(ErrorCode::precondition, "sample not in manifest");
            double value = 0.0;
            if (spec.backend) {
              auto lease = ctx.pools.at(*spec.backend)->acquire();
              const std::string nonce =
                  trace.model_id + "/" + trace.sample_id + "/" + std::to_string(rec.iteration) + "/" + spec.name;
              value = lease->eval_metric(spec.remote_name, detail::metric_payload(rec, *triplet, ctx), nonce);
            } else {
              value = detail::local_metric(spec, rec, *triplet, ctx);
            }
            if (!std::isfinite(value)) throw Error(ErrorCode::non_finite, "non-finite score");
            if (spec.is_emotion()) (void)emotion_from_index(value);
            rec.scores[key] = value;
          } catch (const std::exception& e) {
            rec.scores.erase(key);
            rec.missing.push_back(spec.name);
            missing[t].push_back({trace.model_id, trace.sample_id, rec.iteration, spec.name, e.what()});
          }
        }
      }
    }
  };
  const std::size_t threads = std::min(std::max<std::size_t>(ctx.parallelism, 1), std::max<std::size_t>(traces.traces.size(), 1));
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  std::vector<MissingScore> all;
  for (auto& m : missing) all.insert(all.end(), m.begin(), m.end());
  return all;
}

// ---------------------------------------------------------------------------
// Per-iteration series

enum class TruncationPolicy { none, pessimistic_fill, drop_sample };

inline std::string_view to_string(TruncationPolicy p) {
  switch (p) {
    case TruncationPolicy::none: return "none";
    case TruncationPolicy::pessimistic_fill: return "pessimistic-fill";
    case TruncationPolicy::drop_sample: return "drop-sample";
  }
  return "?";
}

inline TruncationPolicy parse_truncation_policy(std::string_view s) {
  if (s == "none") return TruncationPolicy::none;
  if (s == "pessimistic-fill") return TruncationPolicy::pessimistic_fill;
  if (s == "drop-sample") return TruncationPolicy::drop_sample;
  throw Error(ErrorCode::config, "unknown truncation policy '" + std::string(s) + "'");
}

struct SeriesPoint {
  double mean = 0.0;
  std::size_t n = 0;
  double sd = 0.0;  // across samples; 0 when n < 2, NaN for set-level metrics
};

/// Dataset-level trajectory of one metric for one model.
struct MetricSeries {
  std::string model_id;
  std::string metric;
  Direction direction = Direction::higher_better;
  std::vector<SeriesPoint> points;  // index j-1 for iteration j
  std::size_t filled = 0;           // cells filled by the truncation policy
  std::size_t dropped_samples = 0;

  std::vector<double> means() const {
    std::vector<double> m;
    for (const auto& p : points) m.push_back(p.mean);
    return m;
  }
  /// Means after orientation to higher-is-better.
  std::vector<double> oriented_means() const {
    std::vector<double> m;
    for (const auto& p : points) m.push_back(orient(p.mean, direction));
    return m;
  }
  bool complete() const {
    return std::all_of(points.begin(), points.end(), [](const auto& p) { return p.n > 0 && std::isfinite(p.mean); });
  }
};

using SeriesKey = std::pair<std::string, std::string>;  // (model_id, metric)

namespace detail {

inline SeriesPoint summarize(const std::vector<double>& values) {
  SeriesPoint p;
  p.n = values.size();
  if (values.empty()) {
    p.mean = std::numeric_limits<double>::quiet_NaN();
    return p;
  }
  double sum = 0.0;
  for (double v : values) sum += v;
  p.mean = sum / static_cast<double>(values.size());
  p.sd = values.size() >= 2 ? dispersion(values) : 0.0;
  return p;
}

}  // namespace detail

/// Per-iteration means for every (model, metric). With policy `none` a mean
/// covers the samples that have a score at that iteration; the other policies
/// first complete or discard truncated samples.
inline std::map<SeriesKey, MetricSeries> compute_series(const TraceSet& traces, const std::vector<MetricSpec>& specs,
                                                        const DatasetManifest& manifest,
                                                        TruncationPolicy policy = TruncationPolicy::none) {
  std::map<SeriesKey, MetricSeries> out;
  std::map<std::string, std::vector<const IterationTrace*>> by_model;
  for (const auto& t : traces.traces) by_model[t.model_id].push_back(&t);

  for (const auto& spec : specs) {
    if (spec.is_emotion()) {
      if (manifest.kind != ManifestKind::emotion) continue;
      const std::string key = emotion_prediction_key(spec.name);
      for (const auto& [model, list] : by_model) {
        int n_iter = 0;
        for (auto* t : list) n_iter = std::max(n_iter, t->max_iteration);
        MetricSeries weighted{model, spec.name, Direction::higher_better, {}, 0, 0};
        std::map<Emotion, MetricSeries> per_class;
        for (Emotion e : kEmotions)
          per_class[e] = MetricSeries{model, spec.name + "/" + std::string(to_string(e)), Direction::higher_better, {}, 0, 0};
        for (int j = 1; j <= n_iter; ++j) {
          std::vector<std::pair<Emotion, Emotion>> pairs;
          for (auto* t : list) {
            const auto* rec = t->at(j);
            const auto* triplet = manifest.find(t->sample_id);
            if (!rec || !triplet || !triplet->emotion) continue;
            auto it = rec->scores.find(key);
            if (it == rec->scores.end()) continue;
            pairs.emplace_back(*triplet->emotion, emotion_from_index(it->second));
          }
          const double nan = std::numeric_limits<double>::quiet_NaN();
          if (pairs.empty()) {
            weighted.points.push_back({nan, 0, nan});
            for (auto& [e, s] : per_class) s.points.push_back({nan, 0, nan});
            continue;
          }
          const auto f1 = emotion_f1(pairs);
          weighted.points.push_back({f1.weighted, pairs.size(), nan});
          for (auto& [e, s] : per_class) s.points.push_back({f1.per_class.at(e), pairs.size(), nan});
        }
        out[{model, weighted.metric}] = std::move(weighted);
        for (auto& [e, s] : per_class) out[{model, s.metric}] = std::move(s);
      }
      continue;
    }

    // worst observed value across the whole run, for pessimistic fill
    std::optional<double> worst;
    for (const auto& t : traces.traces)
      for (const auto& r : t.records) {
        if (!r.ok()) continue;
        auto it = r.scores.find(spec.name);
        if (it == r.scores.end()) continue;
        const double v = it->second;
        if (!worst) worst = v;
        else worst = spec.direction == Direction::higher_better ? std::min(*worst, v) : std::max(*worst, v);
      }

    for (const auto& [model, list] : by_model) {
      int n_iter = 0;
      for (auto* t : list) n_iter = std::max(n_iter, t->max_iteration);
      MetricSeries series{model, spec.name, spec.direction, {}, 0, 0};
      std::vector<std::vector<std::optional<double>>> cells;
      for (auto* t : list) {
        std::vector<std::optional<double>> row(static_cast<std::size_t>(n_iter));
        for (int j = 1; j <= n_iter; ++j) {
          if (const auto* rec = t->at(j)) {
            if (auto it = rec->scores.find(spec.name); it != rec->scores.end()) row[static_cast<std::size_t>(j - 1)] = it->second;
          }
        }
        const bool complete = std::all_of(row.begin(), row.end(), [](const auto& c) { return c.has_value(); });
        if (policy == TruncationPolicy::drop_sample && !complete) {
          ++series.dropped_samples;
          continue;
        }
        if (policy == TruncationPolicy::pessimistic_fill && worst) {
          for (auto& c : row)
            if (!c) {
              c = *worst;
              ++series.filled;
            }
        }
        cells.push_back(std::move(row));
      }
      for (int j = 0; j < n_iter; ++j) {
        std::vector<double> values;
        for (const auto& row : cells)
          if (row[static_cast<std::size_t>(j)]) values.push_back(*row[static_cast<std::size_t>(j)]);
        series.points.push_back(detail::summarize(values));
      }
      out[{model, spec.name}] = std::move(series);
    }
  }
  return out;
}

/// Specs as they appear in series output: emotion specs expand to the
/// weighted score plus one series per class.
inline std::vector<std::string> series_metric_names(const std::vector<MetricSpec>& specs, const DatasetManifest& manifest) {
  std::vector<std::string> names;
  for (const auto& s : specs) {
    if (s.is_emotion()) {
      if (manifest.kind != ManifestKind::emotion) continue;
      names.push_back(s.name);
      for (Emotion e : kEmotions) names.push_back(s.name + "/" + std::string(to_string(e)));
    } else {
      names.push_back(s.name);
    }
  }
  return names;
}

}  // namespace i2d
