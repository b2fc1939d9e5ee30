#pragma once

// Commands behind the CLI. Each one reads and writes a run directory:
//
//   run.json              settings of the run (no machine-specific values)
//   manifest.jsonl        the evaluated manifest
//   traces.jsonl          one line per (model, sample) chain, with scores
//   requests.jsonl        every synthesis request as issued
//   run_summary.json      failed chains and missing scores
//   series/<model>.csv    per-iteration means per metric
//   aggregates.json       aggregate
//   exclusion_report.json, human_means.csv, correlation_*.csv   correlate
//   swap/...              swap
//   report/...            report
//
// Every emitted real goes through format_real / round_sig9.

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "i2d/aggregation.hpp"
#include "i2d/backend_pool.hpp"
#include "i2d/config.hpp"
#include "i2d/correlation.hpp"
#include "i2d/engine.hpp"
#include "i2d/error.hpp"
#include "i2d/manifest.hpp"
#include "i2d/scoring.hpp"
#include "i2d/stats.hpp"
#include "i2d/util.hpp"

namespace i2d {

enum class LogLevel { debug, info, warn };
using LogSink = std::function<void(LogLevel, const std::string&)>;

inline constexpr std::string_view kRunFormat = "i2d-run/1";

/// Exit codes: 0 success, 1 configuration or input error, 2 partial failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitPartial = 2;

namespace detail {

inline void emit(const LogSink& log, LogLevel level, const std::string& msg) {
  if (log) log(level, msg);
}

inline std::string dump_json(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

/// Strips machine-specific directory prefixes from a message.
class PathScrubber {
 public:
  void add(const fs::path& dir, std::string replacement = {}) {
    if (dir.empty()) return;
    std::string prefix = dir.lexically_normal().string();
    while (prefix.size() > 1 && prefix.back() == '/') prefix.pop_back();
    subs_.emplace_back(prefix + "/", replacement);
    subs_.emplace_back(prefix, replacement.empty() ? "." : replacement);
  }
  std::string operator()(std::string s) const {
    for (const auto& [from, to] : subs_) {
      for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
        s.replace(pos, from.size(), to);
    }
    return s;
  }

 private:
  std::vector<std::pair<std::string, std::string>> subs_;
};

/// Simulated synthesizers write their outputs to a scratch directory; give
/// each one its own inside the run directory unless the config names one.
inline bool is_simulated(const BackendDescriptor& d) {
  if (d.transport == TransportKind::builtin) return true;
  if (d.transport != TransportKind::subprocess_stdio) return false;
  const auto args = split_command_line(d.launch);
  return !args.empty() && fs::path(args.front()).filename() == "i2d-sim-backend";
}

inline BackendDescriptor with_work_dir(BackendDescriptor d, const fs::path& work_root) {
  if (d.kind == BackendKind::synthesizer && is_simulated(d) && d.config.is_object() && !d.config.contains("work_dir"))
    d.config["work_dir"] = (work_root / d.backend_id).string();
  return d;
}

inline std::string join_names(const std::vector<AggregationMethod>& methods) {
  std::string out;
  for (const auto& m : methods) out += (out.empty() ? "" : ",") + m.name();
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Run directory contents

struct RunInfo {
  fs::path dir;
  std::uint64_t seed = 0;
  int max_iteration = 0;
  std::vector<std::string> models;
  std::vector<AggregationMethod> methods;
  TruncationPolicy truncation = TruncationPolicy::pessimistic_fill;
  std::vector<MetricSpec> metrics;
  DatasetManifest manifest;
  TraceSet traces;
};

inline RunInfo load_run(const fs::path& run_dir) {
  const fs::path meta = run_dir / "run.json";
  if (!fs::exists(meta)) throw Error(ErrorCode::io, "not a run directory (run.json missing): " + run_dir.string());
  RunInfo info;
  info.dir = run_dir;
  try {
    const auto j = nlohmann::json::parse(read_file(meta));
    if (j.value("format", std::string{}) != kRunFormat) throw Error(ErrorCode::parse, "run.json: unknown format");
    info.seed = j.at("seed").get<std::uint64_t>();
    info.max_iteration = j.at("max_iteration").get<int>();
    info.models = j.at("models").get<std::vector<std::string>>();
    info.methods = parse_methods(j.at("methods").get<std::vector<std::string>>());
    info.truncation = parse_truncation_policy(j.at("truncation_policy").get<std::string>());
    info.metrics = metric_specs_from_json(j.at("metrics"));
    info.manifest = parse_manifest(read_file(run_dir / "manifest.jsonl"), j.at("manifest").at("name").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, std::string("run.json: ") + e.what());
  }
  info.traces = parse_traces(read_file(run_dir / "traces.jsonl"));
  return info;
}

inline std::string series_csv(const std::map<SeriesKey, MetricSeries>& series, const std::string& model,
                              const std::vector<std::string>& metric_names) {
  std::string out = "metric,direction,iteration,mean,sd,n\n";
  for (const auto& name : metric_names) {
    auto it = series.find({model, name});
    if (it == series.end()) continue;
    const auto& s = it->second;
    for (std::size_t j = 0; j < s.points.size(); ++j) {
      const auto& p = s.points[j];
      out += name + "," + std::string(to_string(s.direction)) + "," + std::to_string(j + 1) + "," + format_real(p.mean) +
             "," + format_real(p.sd) + "," + std::to_string(p.n) + "\n";
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// run

struct RunOutcome {
  int exit_code = kExitOk;
  std::size_t chains = 0;
  std::size_t failed_chains = 0;
  std::size_t missing_scores = 0;
};

/// Runs every synthesizer over the manifest, scores the traces and writes
/// the run directory.
inline RunOutcome cmd_run(const RunConfig& config, const LogSink& log = {}) {
  validate(config);
  if (config.out.empty()) throw Error(ErrorCode::config, "no output directory (--out)");
  if (config.manifest.empty()) throw Error(ErrorCode::config, "no manifest (--manifest)");
  const auto synthesizers = config.synthesizers();
  if (synthesizers.empty()) throw Error(ErrorCode::config, "no synthesizer backend configured");

  std::vector<std::string> warnings;
  DatasetManifest manifest = load_manifest(config.manifest, {config.lenient, &warnings});
  for (const auto& w : warnings) detail::emit(log, LogLevel::warn, w);

  const fs::path out = fs::absolute(config.out).lexically_normal();
  const fs::path manifest_dir = fs::absolute(config.manifest).parent_path().lexically_normal();
  RunLock lock(out);

  // stale outputs of a previous run in the same directory would mix in
  for (const char* name : {"series", "work", "report", "swap"}) fs::remove_all(out / name);
  for (const auto* s : synthesizers) fs::remove_all(out / s->backend_id);
  for (const char* name : {"aggregates.json", "exclusion_report.json", "human_means.csv", "correlation_utterance.csv",
                           "correlation_system.csv", "correlation_sweep.csv"})
    fs::remove(out / name);

  const fs::path work_root = out / "work";
  std::map<std::string, std::unique_ptr<HandlePool>> metric_pools;
  std::map<std::string, std::set<std::string>> required;
  for (const auto& m : config.metrics)
    if (m.backend) required[*m.backend].insert(m.remote_name);
  for (const auto& [id, caps] : required) {
    auto pool = std::make_unique<HandlePool>(*config.backend(id), config.parallelism, caps);
    pool->warm_up();
    metric_pools[id] = std::move(pool);
  }

  DatasetRun all;
  for (const auto* s : synthesizers) {
    HandlePool pool(detail::with_work_dir(*s, work_root), config.parallelism);
    pool.warm_up();
    detail::emit(log, LogLevel::info, "synthesizing with " + s->backend_id + " (" + std::to_string(manifest.samples.size()) +
                                          " samples x " + std::to_string(config.max_iteration) + " iterations)");
    auto run = run_dataset(pool, manifest, config.max_iteration, config.seed, config.parallelism, out, manifest_dir);
    for (auto& t : run.traces.traces) all.traces.traces.push_back(std::move(t));
    all.requests.insert(all.requests.end(), run.requests.begin(), run.requests.end());
  }
  all.traces.sort();

  ScoringContext ctx{&manifest, out, manifest_dir, {}, config.parallelism};
  for (auto& [id, pool] : metric_pools) ctx.pools[id] = pool.get();
  detail::emit(log, LogLevel::info, "scoring " + std::to_string(all.traces.record_count()) + " records");
  auto missing = score_traceset(all.traces, config.metrics, ctx);
  metric_pools.clear();
  fs::remove_all(work_root);

  detail::PathScrubber scrub;
  scrub.add(out);
  scrub.add(manifest_dir);
  for (auto& t : all.traces.traces)
    for (auto& r : t.records)
      if (!r.ok()) r.error = scrub(r.error);
  for (auto& m : missing) m.reason = scrub(m.reason);

  std::vector<std::string> models;
  for (const auto* s : synthesizers) models.push_back(s->backend_id);

  nlohmann::ordered_json meta;
  meta["format"] = kRunFormat;
  meta["seed"] = config.seed;
  meta["max_iteration"] = config.max_iteration;
  meta["models"] = models;
  std::vector<std::string> method_names;
  for (const auto& m : config.methods) method_names.push_back(m.name());
  meta["methods"] = method_names;
  meta["truncation_policy"] = to_string(config.truncation);
  auto metrics = nlohmann::ordered_json::array();
  for (const auto& m : config.metrics) metrics.push_back(to_json(m));
  meta["metrics"] = metrics;
  meta["manifest"] = {{"name", manifest.name},
                      {"kind", manifest.kind == ManifestKind::emotion ? "emotion" : "standard"},
                      {"samples", manifest.samples.size()}};
  write_file(out / "run.json", detail::dump_json(meta));
  write_manifest(out / "manifest.jsonl", manifest);
  write_file(out / "traces.jsonl", serialize_traces(all.traces));
  write_file(out / "requests.jsonl", serialize_requests(all.requests));

  const auto series = compute_series(all.traces, config.metrics, manifest, TruncationPolicy::none);
  const auto names = series_metric_names(config.metrics, manifest);
  for (const auto& model : models) write_file(out / "series" / (model + ".csv"), series_csv(series, model, names));

  RunOutcome outcome;
  outcome.chains = all.traces.traces.size();
  outcome.failed_chains = all.traces.failed_chains();
  outcome.missing_scores = missing.size();

  nlohmann::ordered_json summary;
  summary["chains"] = outcome.chains;
  summary["records"] = all.traces.record_count();
  summary["failed_chains"] = outcome.failed_chains;
  auto failed = nlohmann::ordered_json::array();
  for (const auto& t : all.traces.traces) {
    if (!t.failed()) continue;
    failed.push_back({{"model_id", t.model_id},
                      {"sample_id", t.sample_id},
                      {"completed_iterations", t.ok_count()},
                      {"error", t.records.back().error}});
  }
  summary["failures"] = failed;
  summary["missing_scores"] = missing.size();
  auto miss = nlohmann::ordered_json::array();
  for (const auto& m : missing)
    miss.push_back({{"model_id", m.model_id},
                    {"sample_id", m.sample_id},
                    {"iteration", m.iteration},
                    {"metric", m.metric},
                    {"reason", m.reason}});
  summary["missing"] = miss;
  write_file(out / "run_summary.json", detail::dump_json(summary));

  if (outcome.failed_chains) {
    outcome.exit_code = kExitPartial;
    detail::emit(log, LogLevel::warn, std::to_string(outcome.failed_chains) + " of " + std::to_string(outcome.chains) +
                                          " chains failed; see run_summary.json");
  }
  if (!missing.empty())
    detail::emit(log, LogLevel::warn, std::to_string(missing.size()) + " scores could not be computed; see run_summary.json");
  return outcome;
}

// ---------------------------------------------------------------------------
// aggregate

struct AggregateOptions {
  std::optional<std::vector<AggregationMethod>> methods;  // default: from run.json
  std::optional<TruncationPolicy> truncation;              // default: from run.json
};

struct AggregateEntry {
  std::string model_id;
  std::string metric;
  AggregationMethod method;
  Direction direction = Direction::higher_better;
  double value = 0.0;     // aggregate of the raw means
  double oriented = 0.0;  // aggregate of the oriented means
  int n_used = 0;
  std::size_t filled = 0;
  std::size_t dropped = 0;
};

/// One entry per (model, metric, method), models and metrics in output order.
inline std::vector<AggregateEntry> aggregate_series(const std::map<SeriesKey, MetricSeries>& series,
                                                    const std::vector<std::string>& metric_names,
                                                    const std::vector<AggregationMethod>& methods) {
  std::vector<AggregateEntry> out;
  std::set<std::string> models;
  for (const auto& [key, _] : series) models.insert(key.first);
  for (const auto& model : models) {
    for (const auto& name : metric_names) {
      auto it = series.find({model, name});
      if (it == series.end()) continue;
      const auto& s = it->second;
      if (!s.complete())
        throw Error(ErrorCode::precondition, "series " + model + "/" + name +
                                                 " has iterations without scores; choose a truncation policy other than none");
      const auto raw = s.means();
      const auto oriented = s.oriented_means();
      for (const auto& m : methods) {
        if (m.kind == AggregationKind::iter_k && static_cast<std::size_t>(m.k) > raw.size())
          throw Error(ErrorCode::precondition, "method " + m.name() + " exceeds the " + std::to_string(raw.size()) + " iterations of the run");
        out.push_back({model, name, m, s.direction, aggregate(raw, m), aggregate(oriented, m),
                       static_cast<int>(raw.size()), s.filled, s.dropped_samples});
      }
    }
  }
  return out;
}

inline std::vector<AggregateEntry> aggregate_run(const RunInfo& run, const std::vector<AggregationMethod>& methods,
                                                 TruncationPolicy policy) {
  if (run.metrics.empty()) throw Error(ErrorCode::precondition, "run has no metrics; nothing to aggregate");
  const auto series = compute_series(run.traces, run.metrics, run.manifest, policy);
  return aggregate_series(series, series_metric_names(run.metrics, run.manifest), methods);
}

inline std::string serialize_aggregates(const std::vector<AggregateEntry>& entries,
                                        const std::vector<AggregationMethod>& methods, TruncationPolicy policy) {
  nlohmann::ordered_json j;
  j["format"] = "i2d-aggregates/1";
  j["truncation_policy"] = to_string(policy);
  std::vector<std::string> names;
  for (const auto& m : methods) names.push_back(m.name());
  j["methods"] = names;
  auto scores = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    nlohmann::ordered_json s;
    s["model_id"] = e.model_id;
    s["metric"] = e.metric;
    s["method"] = e.method.name();
    s["direction"] = to_string(e.direction);
    s["value"] = round_sig9(e.value);
    s["oriented"] = round_sig9(e.oriented);
    s["n_used"] = e.n_used;
    s["filled"] = e.filled;
    s["dropped"] = e.dropped;
    scores.push_back(std::move(s));
  }
  j["scores"] = scores;
  return detail::dump_json(j);
}

inline std::vector<AggregateEntry> parse_aggregates(std::string_view text) {
  std::vector<AggregateEntry> out;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& s : j.at("scores")) {
      AggregateEntry e;
      e.model_id = s.at("model_id").get<std::string>();
      e.metric = s.at("metric").get<std::string>();
      e.method = parse_method(s.at("method").get<std::string>());
      e.direction = parse_direction(s.at("direction").get<std::string>());
      e.value = s.at("value").get<double>();
      e.oriented = s.at("oriented").get<double>();
      e.n_used = s.at("n_used").get<int>();
      e.filled = s.at("filled").get<std::size_t>();
      e.dropped = s.at("dropped").get<std::size_t>();
      out.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, std::string("aggregates.json: ") + e.what());
  }
  return out;
}

inline int cmd_aggregate(const fs::path& run_dir, const AggregateOptions& options = {}, const LogSink& log = {}) {
  const RunInfo run = load_run(run_dir);
  RunLock lock(run_dir);
  const auto methods = options.methods ? *options.methods : run.methods;
  const auto policy = options.truncation ? *options.truncation : run.truncation;
  const auto entries = aggregate_run(run, methods, policy);
  write_file(run_dir / "aggregates.json", serialize_aggregates(entries, methods, policy));
  detail::emit(log, LogLevel::info, std::to_string(entries.size()) + " aggregate scores (" + detail::join_names(methods) + ")");
  return kExitOk;
}

/// Series given directly as CSV rows model_id,metric,iteration,value (higher
/// is better). Used to aggregate trajectories produced elsewhere.
inline std::map<SeriesKey, MetricSeries> parse_series_csv(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty() || trim(lines[0]) != "model_id,metric,iteration,value")
    throw Error(ErrorCode::parse, "row 1: series header must be 'model_id,metric,iteration,value'");
  std::map<SeriesKey, std::map<int, double>> cells;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const auto f = split(lines[i], ',');
    const std::size_t row = i + 1;
    if (f.size() != 4) throw Error(ErrorCode::parse, "row " + std::to_string(row) + ": expected 4 fields");
    const long it = detail::parse_long(f[2], "iteration", row);
    if (it < 1) throw Error(ErrorCode::parse, "row " + std::to_string(row) + ": iteration must be >= 1");
    if (!cells[{f[0], f[1]}].emplace(static_cast<int>(it), detail::parse_double(f[3], "value", row)).second)
      throw Error(ErrorCode::parse, "row " + std::to_string(row) + ": duplicate iteration");
  }
  std::map<SeriesKey, MetricSeries> out;
  for (const auto& [key, by_iter] : cells) {
    MetricSeries s{key.first, key.second, Direction::higher_better, {}, 0, 0};
    int expected = 1;
    for (const auto& [it, v] : by_iter) {
      if (it != expected++) throw Error(ErrorCode::parse, "series " + key.first + "/" + key.second + ": iterations must be 1..N");
      s.points.push_back({v, 1, 0.0});
    }
    out[key] = std::move(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// correlate

inline constexpr std::string_view kModelScoresHeader = "model_id,metric,value";

/// Reads model_id,metric,value rows for one metric.
inline std::map<std::string, double> parse_model_scores(std::string_view text, const std::string& metric) {
  const auto lines = split_lines(text);
  if (lines.empty() || trim(lines[0]) != kModelScoresHeader)
    throw Error(ErrorCode::parse, "row 1: header must be '" + std::string(kModelScoresHeader) + "'");
  std::map<std::string, double> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const auto f = split(lines[i], ',');
    if (f.size() != 3) throw Error(ErrorCode::parse, "row " + std::to_string(i + 1) + ": expected 3 fields");
    if (f[1] != metric) continue;
    if (!out.emplace(f[0], detail::parse_double(f[2], "value", i + 1)).second)
      throw Error(ErrorCode::parse, "row " + std::to_string(i + 1) + ": duplicate model '" + f[0] + "'");
  }
  if (out.empty()) throw Error(ErrorCode::precondition, "no scores for metric '" + metric + "'");
  return out;
}

struct CorrelateOptions {
  fs::path annotations;
  OutlierFilterConfig filter;
  CorrelationLevel level = CorrelationLevel::both;
  int human_iteration = 1;
  std::vector<int> sweep;
  std::optional<std::vector<AggregationMethod>> methods;
  std::optional<TruncationPolicy> truncation;
};

namespace detail {

inline std::string excluded_json_criteria(const std::vector<OutlierCriterion>& cs) {
  std::string out;
  for (auto c : cs) out += (out.empty() ? "" : "+") + std::string(to_string(c));
  return out;
}

inline const MetricSpec* paired_spec(const std::vector<MetricSpec>& specs, Dimension dim) {
  for (const auto& s : specs)
    if (!s.is_emotion() && s.pairing == dim) return &s;
  return nullptr;
}

}  // namespace detail

inline std::string serialize_exclusion_report(const ExclusionReport& report,
                                              std::span<const AnnotationRecord> all_records) {
  nlohmann::ordered_json j;
  j["total"] = report.total;
  j["excluded"] = report.excluded.size();
  j["fraction"] = round_sig9(report.fraction());
  nlohmann::ordered_json counts;
  for (auto c : {OutlierCriterion::consistency, OutlierCriterion::duration, OutlierCriterion::discrepancy}) {
    auto it = report.counts.find(c);
    counts[std::string(to_string(c))] = it == report.counts.end() ? 0 : it->second;
  }
  j["counts"] = counts;
  nlohmann::ordered_json hist = nlohmann::ordered_json::object();
  for (const auto& [ratings, items] : rating_count_histogram(all_records)) hist[std::to_string(ratings)] = items;
  j["ratings_per_item"] = hist;
  auto list = nlohmann::ordered_json::array();
  for (const auto& e : report.excluded) {
    nlohmann::ordered_json r;
    r["sample_id"] = e.record.sample_id;
    r["model_id"] = e.record.model_id;
    r["iteration"] = e.record.iteration;
    r["annotator_id"] = e.record.annotator_id;
    r["dimension"] = to_string(e.record.dimension);
    r["score"] = e.record.score;
    r["duration_s"] = round_sig9(e.record.duration_s);
    r["criteria"] = detail::excluded_json_criteria(e.criteria);
    r["statistic"] = round_sig9(e.statistic);
    list.push_back(std::move(r));
  }
  j["records"] = list;
  return detail::dump_json(j);
}

struct CorrelateOutcome {
  ExclusionReport report;
  std::size_t utterance_cells = 0;
  std::size_t system_cells = 0;
  std::size_t sweep_cells = 0;
};

inline CorrelateOutcome cmd_correlate(const fs::path& run_dir, const CorrelateOptions& options, const LogSink& log = {}) {
  const RunInfo run = load_run(run_dir);
  if (options.annotations.empty()) throw Error(ErrorCode::config, "no annotations given (--annotations)");
  const auto records = ingest_annotations(options.annotations);
  RunLock lock(run_dir);

  const TraceIndex index(run.traces);
  ObjectiveLookup objective = [&](const AnnotationRecord& r) -> std::optional<double> {
    const auto* spec = detail::paired_spec(run.metrics, r.dimension);
    if (!spec) return std::nullopt;
    return index.oriented(*spec, r.model_id, r.sample_id, r.iteration);
  };
  AudioDurationLookup duration = [&](const std::string& sample_id) -> std::optional<double> {
    const auto* s = run.manifest.find(sample_id);
    return s ? s->duration_s : std::nullopt;
  };
  auto filtered = filter_outliers(records, options.filter, objective, duration);
  write_file(run_dir / "exclusion_report.json", serialize_exclusion_report(filtered.report, records));
  detail::emit(log, LogLevel::info, "annotations: " + std::to_string(filtered.report.excluded.size()) + " of " +
                                        std::to_string(records.size()) + " excluded");
  if (const auto hint = options.filter.target_exclusion_hint;
      hint && std::abs(filtered.report.fraction() - *hint) > 0.5 * *hint)
    detail::emit(log, LogLevel::warn, "exclusion fraction " + format_real(filtered.report.fraction()) +
                                          " is far from the expected " + format_real(*hint));
  const auto& kept = filtered.kept;

  // human means per (model, dimension, iteration), with item counts
  {
    std::map<std::tuple<std::string, Dimension, int>, std::pair<double, std::size_t>> acc;
    for (const auto& [key, mean] : item_means(kept)) {
      const auto& [sample, model, it, dim] = key;
      auto& [sum, n] = acc[{model, dim, it}];
      sum += mean;
      ++n;
    }
    std::string csv = "model_id,dimension,iteration,mean,n_items\n";
    for (const auto& [key, v] : acc) {
      const auto& [model, dim, it] = key;
      csv += model + "," + std::string(to_string(dim)) + "," + std::to_string(it) + "," +
             format_real(v.first / static_cast<double>(v.second)) + "," + std::to_string(v.second) + "\n";
    }
    write_file(run_dir / "human_means.csv", csv);
  }

  CorrelateOutcome outcome;
  outcome.report = filtered.report;
  const std::vector<Dimension> dims{Dimension::content, Dimension::speaker, Dimension::naturalness};
  std::vector<const MetricSpec*> paired;
  for (const auto& s : run.metrics)
    if (s.pairing && !s.is_emotion()) paired.push_back(&s);
  if (paired.empty()) throw Error(ErrorCode::config, "no metric has a subjective pairing; nothing to correlate");

  if (options.level != CorrelationLevel::system) {
    std::set<int> iterations;
    for (const auto& r : kept) iterations.insert(r.iteration);
    std::string csv = "metric,dimension,iteration,srcc,n\n";
    for (const auto* spec : paired) {
      const bool rated = std::any_of(kept.begin(), kept.end(), [&](const auto& r) { return r.dimension == *spec->pairing; });
      if (!rated) continue;
      for (int it : iterations) {
        if (it > run.max_iteration) continue;
        try {
          const auto c = utterance_srcc(run.traces, kept, *spec, *spec->pairing, it);
          csv += spec->name + "," + std::string(to_string(*spec->pairing)) + "," + std::to_string(it) + "," +
                 format_real(c.srcc) + "," + std::to_string(c.n) + "\n";
          ++outcome.utterance_cells;
        } catch (const Error& e) {
          if (e.code() != ErrorCode::precondition) throw;
          detail::emit(log, LogLevel::warn, "utterance level skipped: " + e.message());
        }
      }
    }
    write_file(run_dir / "correlation_utterance.csv", csv);
  }

  if (options.level != CorrelationLevel::utterance) {
    const auto methods = options.methods ? *options.methods : run.methods;
    const auto policy = options.truncation ? *options.truncation : run.truncation;
    const auto series = compute_series(run.traces, run.metrics, run.manifest, policy);
    std::string csv = "metric,dimension,method,human_iteration,srcc,n\n";
    std::string sweep_csv = "metric,dimension,method,max_iteration,srcc,n\n";
    for (const auto* spec : paired) {
      const auto human = model_human_means(kept, options.human_iteration, *spec->pairing);
      if (human.empty()) {
        detail::emit(log, LogLevel::debug, "no " + std::string(to_string(*spec->pairing)) + " ratings at iteration " +
                                               std::to_string(options.human_iteration) + "; " + spec->name + " skipped");
        continue;
      }
      const auto by_model = oriented_series_by_model(series, spec->name);
      for (const auto& [model, s] : by_model)
        if (!series.at({model, spec->name}).complete())
          throw Error(ErrorCode::precondition, "series " + model + "/" + spec->name + " is incomplete under truncation policy none");
      const std::string dim(to_string(*spec->pairing));
      for (const auto& m : methods) {
        std::map<std::string, double> scores;
        for (const auto& [model, s] : by_model) scores[model] = aggregate(s, m);
        try {
          const auto c = system_correlation(scores, human);
          csv += spec->name + "," + dim + "," + m.name() + "," + std::to_string(options.human_iteration) + "," +
                 format_real(c.srcc) + "," + std::to_string(c.n) + "\n";
          ++outcome.system_cells;
        } catch (const Error& e) {
          if (e.code() != ErrorCode::precondition) throw;
          detail::emit(log, LogLevel::warn, "system level skipped for " + spec->name + "/" + m.name() + ": " + e.message());
        }
        if (options.sweep.empty()) continue;
        // N' values the method is undefined for (AUC over one point, iterK beyond N') are left out
        std::vector<int> usable;
        for (int np : options.sweep) {
          if (m.kind == AggregationKind::auc && np < 2) continue;
          if (m.kind == AggregationKind::iter_k && np < m.k) continue;
          usable.push_back(np);
        }
        for (const auto& [np, row] : max_iteration_sweep(by_model, m, usable)) {
          try {
            const auto c = system_correlation(row, human);
            sweep_csv += spec->name + "," + dim + "," + m.name() + "," + std::to_string(np) + "," + format_real(c.srcc) +
                         "," + std::to_string(c.n) + "\n";
            ++outcome.sweep_cells;
          } catch (const Error& e) {
            if (e.code() != ErrorCode::precondition) throw;
            detail::emit(log, LogLevel::warn, "sweep skipped at N'=" + std::to_string(np) + ": " + e.message());
          }
        }
      }
    }
    write_file(run_dir / "correlation_system.csv", csv);
    if (!options.sweep.empty()) write_file(run_dir / "correlation_sweep.csv", sweep_csv);
  }

  if (outcome.utterance_cells + outcome.system_cells == 0)
    throw Error(ErrorCode::precondition, "no correlation could be computed: too few matched pairs");
  return outcome;
}

/// System-level SRCC between per-model scores given in a file and human
/// means from an annotation file, for results produced outside a run.
struct ScoreFileOptions {
  fs::path scores;
  std::string metric;
  fs::path annotations;
  Dimension dimension = Dimension::naturalness;
  int human_iteration = 1;
  OutlierFilterConfig filter;
};

inline CorrelationResult cmd_correlate_scores(const ScoreFileOptions& options, const fs::path& out_dir,
                                              const LogSink& log = {}) {
  if (!fs::exists(options.scores)) throw Error(ErrorCode::io, "scores not found: " + options.scores.string());
  const auto scores = parse_model_scores(read_file(options.scores), options.metric);
  const auto records = ingest_annotations(options.annotations);
  const auto filtered = filter_outliers(records, options.filter);
  const auto human = model_human_means(filtered.kept, options.human_iteration, options.dimension);
  const auto c = system_correlation(scores, human);
  write_file(out_dir / "exclusion_report.json", serialize_exclusion_report(filtered.report, records));
  write_file(out_dir / "correlation_system.csv",
             "metric,dimension,method,human_iteration,srcc,n\n" + options.metric + "," +
                 std::string(to_string(options.dimension)) + ",given," + std::to_string(options.human_iteration) + "," +
                 format_real(c.srcc) + "," + std::to_string(c.n) + "\n");
  detail::emit(log, LogLevel::info, "system SRCC " + format_real(c.srcc) + " over " + std::to_string(c.n) + " models");
  return c;
}

// ---------------------------------------------------------------------------
// swap

struct SwapOutcome {
  int exit_code = kExitOk;
  std::vector<SwapExperiment> experiments;
};

inline std::string swap_csv(const std::map<SeriesKey, MetricSeries>& original,
                            const std::map<SeriesKey, MetricSeries>& swapped, const std::vector<std::string>& names) {
  std::string out = "model_id,variant,metric,iteration,mean,sd,n\n";
  std::set<std::string> models;
  for (const auto& [k, _] : original) models.insert(k.first);
  for (const auto& model : models) {
    for (const auto& [variant, series] : {std::pair{"original", &original}, std::pair{"swapped", &swapped}}) {
      for (const auto& name : names) {
        auto it = series->find({model, name});
        if (it == series->end()) continue;
        for (std::size_t j = 0; j < it->second.points.size(); ++j) {
          const auto& p = it->second.points[j];
          out += model + "," + variant + "," + name + "," + std::to_string(j + 1) + "," + format_real(p.mean) + "," +
                 format_real(p.sd) + "," + std::to_string(p.n) + "\n";
        }
      }
    }
  }
  return out;
}

/// Cross-model reference swap for every selected sample; writes out/swap/.
inline SwapOutcome cmd_swap(const RunConfig& config, const LogSink& log = {}) {
  validate(config);
  if (config.out.empty()) throw Error(ErrorCode::config, "no output directory (--out)");
  SwapSettings settings;
  if (config.swap) {
    settings = *config.swap;
  } else {
    const auto synth = config.synthesizers();
    if (synth.size() != 2)
      throw Error(ErrorCode::config, "swap needs exactly two synthesizers or an explicit swap.model_a/model_b");
    settings.model_a = synth[0]->backend_id;
    settings.model_b = synth[1]->backend_id;
  }
  if (settings.swap_iteration < 2 || settings.swap_iteration > config.max_iteration)
    throw Error(ErrorCode::config, "swap iteration " + std::to_string(settings.swap_iteration) +
                                       " must satisfy 2 <= k <= max_iteration (" + std::to_string(config.max_iteration) + ")");
  const auto* da = config.backend(settings.model_a);
  const auto* db = config.backend(settings.model_b);
  if (!da || !db) throw Error(ErrorCode::config, "swap models must be configured backends");

  std::vector<std::string> warnings;
  DatasetManifest manifest = load_manifest(config.manifest, {config.lenient, &warnings});
  for (const auto& w : warnings) detail::emit(log, LogLevel::warn, w);
  std::vector<const SampleTriplet*> samples;
  if (settings.samples.empty()) {
    for (const auto& s : manifest.samples) samples.push_back(&s);
  } else {
    for (const auto& id : settings.samples) {
      const auto* s = manifest.find(id);
      if (!s) throw Error(ErrorCode::config, "swap sample '" + id + "' is not in the manifest");
      samples.push_back(s);
    }
  }

  const fs::path out = fs::absolute(config.out).lexically_normal();
  const fs::path manifest_dir = fs::absolute(config.manifest).parent_path().lexically_normal();
  RunLock lock(out);
  fs::remove_all(out / "swap");
  const fs::path work_root = out / "swap" / "work";

  HandlePool pa(detail::with_work_dir(*da, work_root), 1), pb(detail::with_work_dir(*db, work_root), 1);
  pa.warm_up();
  pb.warm_up();
  std::map<std::string, std::unique_ptr<HandlePool>> metric_pools;
  std::map<std::string, std::set<std::string>> required;
  for (const auto& m : config.metrics)
    if (m.backend) required[*m.backend].insert(m.remote_name);
  for (const auto& [id, caps] : required) {
    auto pool = std::make_unique<HandlePool>(*config.backend(id), config.parallelism, caps);
    pool->warm_up();
    metric_pools[id] = std::move(pool);
  }

  SwapOutcome outcome;
  std::vector<RequestLogEntry> requests;
  TraceSet original, swapped;
  for (const auto* s : samples) {
    auto ex = run_swap(pa, pb, *s, settings.swap_iteration, config.max_iteration, config.seed, out, manifest_dir, &requests);
    original.traces.push_back(ex.a_original);
    original.traces.push_back(ex.b_original);
    swapped.traces.push_back(ex.a_swapped);
    swapped.traces.push_back(ex.b_swapped);
    outcome.experiments.push_back(std::move(ex));
  }
  original.sort();
  swapped.sort();

  ScoringContext ctx{&manifest, out, manifest_dir, {}, config.parallelism};
  for (auto& [id, pool] : metric_pools) ctx.pools[id] = pool.get();
  auto missing = score_traceset(original, config.metrics, ctx);
  auto missing2 = score_traceset(swapped, config.metrics, ctx);
  metric_pools.clear();
  fs::remove_all(work_root);

  detail::PathScrubber scrub;
  scrub.add(out);
  scrub.add(manifest_dir);
  for (auto* set : {&original, &swapped})
    for (auto& t : set->traces)
      for (auto& r : t.records)
        if (!r.ok()) r.error = scrub(r.error);

  write_file(out / "swap" / "original.jsonl", serialize_traces(original));
  write_file(out / "swap" / "swapped.jsonl", serialize_traces(swapped));
  write_file(out / "swap" / "requests.jsonl", serialize_requests(requests));
  const auto names = series_metric_names(config.metrics, manifest);
  write_file(out / "swap" / "swap.csv",
             swap_csv(compute_series(original, config.metrics, manifest), compute_series(swapped, config.metrics, manifest), names));

  if (original.failed_chains() + swapped.failed_chains()) {
    outcome.exit_code = kExitPartial;
    detail::emit(log, LogLevel::warn, "some swap chains failed; see swap/*.jsonl");
  }
  if (!missing.empty() || !missing2.empty())
    detail::emit(log, LogLevel::warn, std::to_string(missing.size() + missing2.size()) + " swap scores could not be computed");
  return outcome;
}

// ---------------------------------------------------------------------------
// report

namespace detail {

struct HumanMean {
  std::string model_id;
  std::string dimension;
  int iteration = 0;
  std::string mean;  // as written
};

inline std::vector<HumanMean> read_human_means(const fs::path& path) {
  std::vector<HumanMean> out;
  if (!fs::exists(path)) return out;
  const auto lines = split_lines(read_file(path));
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split(lines[i], ',');
    if (f.size() != 5) continue;
    out.push_back({f[0], f[1], std::stoi(f[2]), f[3]});
  }
  return out;
}

}  // namespace detail

/// Human-readable tables from an aggregated run; writes run_dir/report/.
inline int cmd_report(const fs::path& run_dir, const LogSink& log = {}) {
  const RunInfo run = load_run(run_dir);
  const fs::path agg_path = run_dir / "aggregates.json";
  if (!fs::exists(agg_path)) throw Error(ErrorCode::precondition, "run is not aggregated yet (aggregates.json missing)");
  const auto entries = parse_aggregates(read_file(agg_path));
  RunLock lock(run_dir);
  const fs::path dir = run_dir / "report";
  fs::remove_all(dir);

  std::vector<std::string> methods;
  {
    const auto j = nlohmann::json::parse(read_file(agg_path));
    methods = j.at("methods").get<std::vector<std::string>>();
  }
  const auto names = series_metric_names(run.metrics, run.manifest);
  std::vector<std::string> objective_metrics;  // emotion columns go to their own table
  for (const auto& n : names)
    if (n.find('/') == std::string::npos && n != kEmotionMetric) objective_metrics.push_back(n);

  std::map<std::tuple<std::string, std::string, std::string>, double> value;  // (model, metric, method)
  // models without any chain (empty manifest) get no rows
  const auto traced = run.traces.model_ids();
  const std::set<std::string> models(traced.begin(), traced.end());
  for (const auto& e : entries) value[{e.model_id, e.metric, e.method.name()}] = e.value;

  const auto human = detail::read_human_means(run_dir / "human_means.csv");
  std::set<std::pair<std::string, int>> human_cols;  // (dimension, iteration)
  for (const auto& h : human)
    if (models.count(h.model_id)) human_cols.insert({h.dimension, h.iteration});

  // models x (metric:method) with subjective columns when correlate has run
  {
    std::string csv = "model_id";
    for (const auto& m : objective_metrics)
      for (const auto& method : methods) csv += "," + m + ":" + method;
    for (const auto& [dim, it] : human_cols) csv += "," + dim + "@iter" + std::to_string(it);
    csv += "\n";
    for (const auto& model : models) {
      csv += model;
      for (const auto& m : objective_metrics)
        for (const auto& method : methods) {
          auto it = value.find({model, m, method});
          csv += "," + (it == value.end() ? std::string() : format_real(it->second));
        }
      for (const auto& col : human_cols) {
        std::string cell;
        for (const auto& h : human)
          if (h.model_id == model && h.dimension == col.first && h.iteration == col.second) cell = h.mean;
        csv += "," + cell;
      }
      csv += "\n";
    }
    write_file(dir / "table_objective.csv", csv);
  }

  // emotion F1 per class and weighted, one row per (model, method)
  const bool emotion = run.manifest.kind == ManifestKind::emotion &&
                       std::any_of(run.metrics.begin(), run.metrics.end(), [](const auto& s) { return s.is_emotion(); });
  if (emotion) {
    std::string csv = "model_id,method";
    for (Emotion e : kEmotions) csv += "," + std::string(to_string(e));
    csv += ",weighted\n";
    const std::string base(kEmotionMetric);
    for (const auto& model : models)
      for (const auto& method : methods) {
        csv += model + "," + method;
        std::vector<std::string> cols;
        for (Emotion e : kEmotions) cols.push_back(base + "/" + std::string(to_string(e)));
        cols.push_back(base);
        for (const auto& c : cols) {
          auto it = value.find({model, c, method});
          csv += "," + (it == value.end() ? std::string() : format_real(it->second));
        }
        csv += "\n";
      }
    write_file(dir / "table_emotion.csv", csv);
  }

  // spread across models of the oriented per-iteration means, and trajectories
  const auto filled = compute_series(run.traces, run.metrics, run.manifest, run.truncation);
  const auto raw = compute_series(run.traces, run.metrics, run.manifest, TruncationPolicy::none);
  {
    std::string csv = "metric,iteration,dispersion,n_models\n";
    for (const auto& name : names) {
      for (int j = 1; j <= run.max_iteration; ++j) {
        std::vector<double> xs;
        for (const auto& model : models) {
          auto it = filled.find({model, name});
          if (it == filled.end() || static_cast<int>(it->second.points.size()) < j) continue;
          const auto& p = it->second.points[static_cast<std::size_t>(j - 1)];
          if (p.n > 0 && std::isfinite(p.mean)) xs.push_back(orient(p.mean, it->second.direction));
        }
        if (xs.empty()) continue;
        csv += name + "," + std::to_string(j) + "," + format_real(xs.size() >= 2 ? dispersion(xs) : std::nan("")) + "," +
               std::to_string(xs.size()) + "\n";
      }
    }
    write_file(dir / "dispersion.csv", csv);
  }
  {
    std::string csv = "model_id,metric,iteration,mean,sd,n\n";
    for (const auto& model : models)
      for (const auto& name : names) {
        auto it = raw.find({model, name});
        if (it == raw.end()) continue;
        for (std::size_t j = 0; j < it->second.points.size(); ++j) {
          const auto& p = it->second.points[j];
          csv += model + "," + name + "," + std::to_string(j + 1) + "," + format_real(p.mean) + "," + format_real(p.sd) +
                 "," + std::to_string(p.n) + "\n";
        }
      }
    write_file(dir / "trajectories.csv", csv);
  }

  {
    std::string md = "# Run report\n\n";
    md += "- manifest: " + run.manifest.name + " (" + std::to_string(run.manifest.samples.size()) + " samples)\n";
    md += "- models: " + std::to_string(models.size()) + "\n";
    md += "- iterations: " + std::to_string(run.max_iteration) + "\n";
    md += "- seed: " + std::to_string(run.seed) + "\n";
    md += "- failed chains: " + std::to_string(run.traces.failed_chains()) + "\n\n";
    if (!objective_metrics.empty() && !models.empty()) {
      const std::string method = std::find(methods.begin(), methods.end(), "mean") != methods.end() ? "mean" : methods.front();
      md += "## Objective metrics (" + method + ")\n\n| model |";
      for (const auto& m : objective_metrics) md += " " + m + " |";
      md += "\n|---|";
      for (std::size_t i = 0; i < objective_metrics.size(); ++i) md += "---|";
      md += "\n";
      for (const auto& model : models) {
        md += "| " + model + " |";
        for (const auto& m : objective_metrics) {
          auto it = value.find({model, m, method});
          md += " " + (it == value.end() ? std::string("-") : format_real(it->second)) + " |";
        }
        md += "\n";
      }
    }
    write_file(dir / "summary.md", md);
  }
  detail::emit(log, LogLevel::info, "report written for " + std::to_string(models.size()) + " models");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// validate / pipeline

struct ValidateOptions {
  bool probe = false;  // also handshake with every backend
};

/// Lints a config and its manifest. Returns human-readable findings.
inline std::vector<std::string> cmd_validate(const RunConfig& config, const ValidateOptions& options = {}) {
  std::vector<std::string> notes;
  validate(config);
  if (config.manifest.empty()) throw Error(ErrorCode::config, "no manifest");
  std::vector<std::string> warnings;
  const auto manifest = load_manifest(config.manifest, {config.lenient, &warnings});
  notes.insert(notes.end(), warnings.begin(), warnings.end());
  notes.push_back("manifest " + manifest.name + ": " + std::to_string(manifest.samples.size()) + " samples (" +
                  (manifest.kind == ManifestKind::emotion ? "emotion" : "standard") + ")");
  notes.push_back(std::to_string(config.synthesizers().size()) + " synthesizers, " + std::to_string(config.metrics.size()) +
                  " metrics");
  if (config.annotations) {
    const auto records = ingest_annotations(*config.annotations);
    notes.push_back("annotations: " + std::to_string(records.size()) + " records");
  }
  if (options.probe) {
    for (const auto& b : config.backends) {
      std::set<std::string> caps;
      for (const auto& m : config.metrics)
        if (m.backend == b.backend_id) caps.insert(m.remote_name);
      const fs::path scratch = fs::temp_directory_path() / ("i2d-validate-" + std::to_string(::getpid()));
      {
        auto handle = handshake(detail::with_work_dir(b, scratch), caps);
        notes.push_back("backend " + b.backend_id + ": handshake ok");
      }
      fs::remove_all(scratch);
    }
  }
  return notes;
}

/// run + aggregate + correlate (when annotations are configured).
inline int cmd_pipeline(const RunConfig& config, const LogSink& log = {}) {
  const auto run = cmd_run(config, log);
  cmd_aggregate(config.out, {config.methods, config.truncation}, log);
  if (config.annotations) {
    CorrelateOptions c{*config.annotations, config.filter, config.level, config.human_iteration, config.sweep,
                       config.methods, config.truncation};
    cmd_correlate(config.out, c, log);
  }
  return run.exit_code;
}

}  // namespace i2d
