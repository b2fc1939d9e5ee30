#pragma once

// Run configuration: one JSON document. Relative paths inside it resolve
// against the directory holding the config file; command-line flags override
// individual keys afterwards.
//
//   {
//     "manifest": "manifest.jsonl",
//     "out": "runs/main",
//     "seed": 1, "max_iteration": 10, "parallelism": 4,
//     "methods": ["iter1", "mean", "lwa", "ewa", "auc"],
//     "truncation_policy": "pessimistic-fill",
//     "backends": [ <BackendDescriptor>, ... ],
//     "metrics": [ <MetricSpec>, ... ]  or  "metrics_file": "metrics.json",
//     "annotations": "annotations.csv",
//     "filter": { "consistency_z": 2.5, ... },
//     "correlate": { "level": "both", "human_iteration": 1, "sweep": [1, 2, ...] },
//     "swap": { "model_a": "strong", "model_b": "weak", "swap_iteration": 6, "samples": ["s01"] },
//     "lenient": false
//   }

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "i2d/aggregation.hpp"
#include "i2d/error.hpp"
#include "i2d/protocol.hpp"
#include "i2d/scoring.hpp"
#include "i2d/stats.hpp"
#include "i2d/util.hpp"

namespace i2d {

enum class CorrelationLevel { utterance, system, both };

inline CorrelationLevel parse_correlation_level(std::string_view s) {
  if (s == "utterance") return CorrelationLevel::utterance;
  if (s == "system") return CorrelationLevel::system;
  if (s == "both") return CorrelationLevel::both;
  throw Error(ErrorCode::config, "correlation level must be utterance, system or both");
}

struct SwapSettings {
  std::string model_a;
  std::string model_b;
  int swap_iteration = 6;
  std::vector<std::string> samples;  // empty: every sample of the manifest
};

struct RunConfig {
  fs::path manifest;
  fs::path out;
  std::uint64_t seed = 0;
  int max_iteration = 10;
  std::size_t parallelism = 1;
  std::vector<AggregationMethod> methods{AggregationMethod::iter(1), AggregationMethod::mean(), AggregationMethod::lwa(),
                                         AggregationMethod::ewa(), AggregationMethod::auc()};
  TruncationPolicy truncation = TruncationPolicy::pessimistic_fill;
  std::vector<BackendDescriptor> backends;
  std::vector<MetricSpec> metrics;
  std::optional<fs::path> annotations;
  OutlierFilterConfig filter;
  CorrelationLevel level = CorrelationLevel::both;
  int human_iteration = 1;
  std::vector<int> sweep;
  std::optional<SwapSettings> swap;
  bool lenient = false;

  const BackendDescriptor* backend(const std::string& id) const {
    for (const auto& b : backends)
      if (b.backend_id == id) return &b;
    return nullptr;
  }
  /// Synthesizer backends in id order; these are the evaluated models.
  std::vector<const BackendDescriptor*> synthesizers() const {
    std::vector<const BackendDescriptor*> out;
    for (const auto& b : backends)
      if (b.kind == BackendKind::synthesizer) out.push_back(&b);
    std::sort(out.begin(), out.end(), [](auto* a, auto* b) { return a->backend_id < b->backend_id; });
    return out;
  }
};

inline std::vector<AggregationMethod> parse_methods(const std::vector<std::string>& names) {
  std::vector<AggregationMethod> out;
  for (const auto& n : names) {
    auto m = parse_method(n);
    if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
  }
  // the single-pass baseline is always reported
  if (std::find(out.begin(), out.end(), AggregationMethod::iter(1)) == out.end())
    out.insert(out.begin(), AggregationMethod::iter(1));
  return out;
}

inline std::vector<int> parse_int_list(std::string_view text) {
  std::vector<int> out;
  for (const auto& part : split(text, ',')) try {
    const auto t = trim(part);
    if (t.empty()) continue;
    if (auto dash = t.find('-'); dash != std::string::npos && dash > 0) {
      const int lo = std::stoi(std::string(t.substr(0, dash)));
      const int hi = std::stoi(std::string(t.substr(dash + 1)));
      if (lo > hi) throw Error(ErrorCode::config, "bad range '" + std::string(t) + "'");
      for (int v = lo; v <= hi; ++v) out.push_back(v);
    } else {
      std::size_t used = 0;
      const int v = std::stoi(std::string(t), &used);
      if (used != t.size()) throw Error(ErrorCode::config, "bad integer '" + std::string(t) + "'");
      out.push_back(v);
    }
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::config, "bad integer list '" + std::string(text) + "'");
  }
  return out;
}

inline OutlierFilterConfig outlier_filter_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"consistency_z", "min_duration_s", "min_duration_fraction",
                                           "min_duration_floor_s", "discrepancy_z", "target_exclusion_hint"};
  for (const auto& [k, _] : j.items())
    if (!known.count(k)) throw Error(ErrorCode::config, "filter: unknown key '" + k + "'");
  OutlierFilterConfig c;
  c.consistency_z = j.value("consistency_z", c.consistency_z);
  if (j.contains("min_duration_s") && !j["min_duration_s"].is_null()) c.min_duration_s = j["min_duration_s"].get<double>();
  c.min_duration_fraction = j.value("min_duration_fraction", c.min_duration_fraction);
  c.min_duration_floor_s = j.value("min_duration_floor_s", c.min_duration_floor_s);
  c.discrepancy_z = j.value("discrepancy_z", c.discrepancy_z);
  if (j.contains("target_exclusion_hint") && !j["target_exclusion_hint"].is_null())
    c.target_exclusion_hint = j["target_exclusion_hint"].get<double>();
  validate(c);
  return c;
}

inline nlohmann::ordered_json to_json(const OutlierFilterConfig& c) {
  nlohmann::ordered_json j;
  j["consistency_z"] = c.consistency_z;
  j["min_duration_s"] = c.min_duration_s ? nlohmann::ordered_json(*c.min_duration_s) : nlohmann::ordered_json(nullptr);
  j["min_duration_fraction"] = c.min_duration_fraction;
  j["min_duration_floor_s"] = c.min_duration_floor_s;
  j["discrepancy_z"] = c.discrepancy_z;
  j["target_exclusion_hint"] =
      c.target_exclusion_hint ? nlohmann::ordered_json(*c.target_exclusion_hint) : nlohmann::ordered_json(nullptr);
  return j;
}

inline OutlierFilterConfig load_outlier_filter(const fs::path& path) {
  try {
    return outlier_filter_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, path.string() + ": " + e.what());
  }
}

namespace detail {

/// Ids end up in file names and CSV cells.
inline bool is_plain_id(std::string_view id) {
  if (id.empty() || id.front() == '.') return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-' || c == '.';
  });
}

inline fs::path resolve_against(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace detail

/// Checks cross-references: unique backend ids, metric sources, swap pair.
inline void validate(const RunConfig& c) {
  if (c.max_iteration < 1) throw Error(ErrorCode::config, "max_iteration must be >= 1");
  if (c.parallelism < 1) throw Error(ErrorCode::config, "parallelism must be >= 1");
  std::set<std::string> ids;
  for (const auto& b : c.backends) {
    validate(b);
    if (!detail::is_plain_id(b.backend_id))
      throw Error(ErrorCode::config, "backend_id '" + b.backend_id + "' may only use letters, digits, '_', '-' and '.'");
    if (b.backend_id == kGroundTruthModel) throw Error(ErrorCode::config, "backend_id 'ground_truth' is reserved");
    if (!ids.insert(b.backend_id).second) throw Error(ErrorCode::config, "duplicate backend_id '" + b.backend_id + "'");
  }
  std::set<std::string> names;
  for (const auto& m : c.metrics) {
    if (!names.insert(m.name).second) throw Error(ErrorCode::config, "duplicate metric name '" + m.name + "'");
    if (!detail::is_plain_id(m.name))
      throw Error(ErrorCode::config, "metric name '" + m.name + "' may only use letters, digits, '_', '-' and '.'");
    if (!m.backend) continue;
    const auto* b = c.backend(*m.backend);
    if (!b) throw Error(ErrorCode::config, "metric '" + m.name + "' refers to unknown backend '" + *m.backend + "'");
    if (b->kind != BackendKind::metric)
      throw Error(ErrorCode::config, "metric '" + m.name + "' refers to synthesizer '" + *m.backend + "'");
    if (!b->capabilities.count(m.remote_name))
      throw Error(ErrorCode::config, "backend '" + *m.backend + "' does not declare capability '" + m.remote_name + "'");
  }
  for (const auto& m : c.methods)
    if (m.kind == AggregationKind::iter_k && m.k > c.max_iteration)
      throw Error(ErrorCode::config, "method " + m.name() + " exceeds max_iteration " + std::to_string(c.max_iteration));
  for (int n : c.sweep)
    if (n < 1 || n > c.max_iteration) throw Error(ErrorCode::config, "sweep value " + std::to_string(n) + " outside 1..max_iteration");
  if (c.human_iteration < 1) throw Error(ErrorCode::config, "human_iteration must be >= 1");
  if (c.swap) {
    for (const auto& id : {c.swap->model_a, c.swap->model_b}) {
      const auto* b = c.backend(id);
      if (!b || b->kind != BackendKind::synthesizer)
        throw Error(ErrorCode::config, "swap model '" + id + "' is not a configured synthesizer");
    }
    if (c.swap->model_a == c.swap->model_b) throw Error(ErrorCode::config, "swap needs two distinct models");
    if (c.swap->swap_iteration < 2 || c.swap->swap_iteration > c.max_iteration)
      throw Error(ErrorCode::config, "swap_iteration must satisfy 2 <= k <= max_iteration");
  }
}

/// Parses a config document. `base` is the directory relative paths refer to.
inline RunConfig run_config_from_json(const nlohmann::json& j, const fs::path& base) {
  static const std::set<std::string> known{"manifest", "out",         "seed",      "max_iteration", "parallelism",
                                           "methods",  "truncation_policy", "backends", "metrics",  "metrics_file",
                                           "annotations", "filter",   "filter_file", "correlate",   "swap",
                                           "lenient"};
  if (!j.is_object()) throw Error(ErrorCode::config, "config must be a JSON object");
  for (const auto& [k, _] : j.items())
    if (!known.count(k)) throw Error(ErrorCode::config, "config: unknown key '" + k + "'");
  try {
    RunConfig c;
    if (j.contains("manifest")) c.manifest = detail::resolve_against(base, j["manifest"].get<std::string>());
    if (j.contains("out")) c.out = detail::resolve_against(base, j["out"].get<std::string>());
    c.seed = j.value("seed", std::uint64_t{0});
    c.max_iteration = j.value("max_iteration", 10);
    c.parallelism = j.value("parallelism", std::size_t{1});
    if (j.contains("methods")) c.methods = parse_methods(j["methods"].get<std::vector<std::string>>());
    if (j.contains("truncation_policy")) c.truncation = parse_truncation_policy(j["truncation_policy"].get<std::string>());
    for (const auto& b : j.value("backends", nlohmann::json::array())) c.backends.push_back(backend_descriptor_from_json(b));
    if (j.contains("metrics") && j.contains("metrics_file"))
      throw Error(ErrorCode::config, "give either metrics or metrics_file, not both");
    if (j.contains("metrics")) c.metrics = metric_specs_from_json(j["metrics"]);
    if (j.contains("metrics_file")) {
      const auto path = detail::resolve_against(base, j["metrics_file"].get<std::string>());
      c.metrics = metric_specs_from_json(nlohmann::json::parse(read_file(path)));
    }
    if (j.contains("annotations")) c.annotations = detail::resolve_against(base, j["annotations"].get<std::string>());
    if (j.contains("filter")) c.filter = outlier_filter_from_json(j["filter"]);
    if (j.contains("filter_file")) c.filter = load_outlier_filter(detail::resolve_against(base, j["filter_file"].get<std::string>()));
    if (j.contains("correlate")) {
      const auto& cj = j["correlate"];
      c.level = parse_correlation_level(cj.value("level", std::string("both")));
      c.human_iteration = cj.value("human_iteration", 1);
      c.sweep = cj.value("sweep", std::vector<int>{});
    }
    if (j.contains("swap")) {
      const auto& sj = j["swap"];
      SwapSettings s;
      s.model_a = sj.at("model_a").get<std::string>();
      s.model_b = sj.at("model_b").get<std::string>();
      s.swap_iteration = sj.value("swap_iteration", 6);
      s.samples = sj.value("samples", std::vector<std::string>{});
      c.swap = s;
    }
    c.lenient = j.value("lenient", false);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, std::string("config: ") + e.what());
  }
}

inline RunConfig load_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::config, "config not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::config, path.string() + ": " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

}  // namespace i2d
