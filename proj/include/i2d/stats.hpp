#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "i2d/error.hpp"
#include "i2d/util.hpp"

namespace i2d {

// ---------------------------------------------------------------------------
// Ranks and correlation

/// Ascending ranks starting at 1; tied values share the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    // positions i+1 .. j share their mean
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

inline std::vector<double> average_ranks(const std::vector<double>& values) {
  return average_ranks(std::span<const double>(values));
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::precondition, "pearson: length mismatch");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorCode::precondition, "correlation undefined for constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Spearman rank correlation: Pearson correlation of the average ranks.
/// Constant input is an error rather than 0.
inline double srcc(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw Error(ErrorCode::precondition, "srcc: length mismatch " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  if (x.size() < 3) throw Error(ErrorCode::precondition, "srcc: need at least 3 pairs, got " + std::to_string(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw Error(ErrorCode::non_finite, "srcc: non-finite input");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

inline double srcc(const std::vector<double>& x, const std::vector<double>& y) {
  return srcc(std::span<const double>(x), std::span<const double>(y));
}

/// Sample standard deviation (n - 1 denominator).
inline double dispersion(std::span<const double> values) {
  if (values.size() < 2) throw Error(ErrorCode::precondition, "dispersion needs at least two values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / (n - 1.0));
}

inline double dispersion(const std::vector<double>& values) { return dispersion(std::span<const double>(values)); }

/// Correlation of two per-model score maps over the same model set.
inline double system_srcc(const std::map<std::string, double>& model_scores,
                          const std::map<std::string, double>& model_human) {
  std::vector<double> x, y;
  for (const auto& [model, score] : model_scores) {
    auto it = model_human.find(model);
    if (it == model_human.end()) throw Error(ErrorCode::precondition, "system_srcc: no human score for model '" + model + "'");
    x.push_back(score);
    y.push_back(it->second);
  }
  if (model_human.size() != model_scores.size())
    throw Error(ErrorCode::precondition, "system_srcc: model sets differ");
  if (x.size() < 3) throw Error(ErrorCode::precondition, "system_srcc: need at least 3 models");
  return srcc(x, y);
}

// ---------------------------------------------------------------------------
// Annotations

enum class Dimension { content, speaker, naturalness };

inline std::string_view to_string(Dimension d) {
  switch (d) {
    case Dimension::content: return "content";
    case Dimension::speaker: return "speaker";
    case Dimension::naturalness: return "naturalness";
  }
  return "?";
}

inline std::optional<Dimension> try_parse_dimension(std::string_view s) {
  if (s == "content") return Dimension::content;
  if (s == "speaker") return Dimension::speaker;
  if (s == "naturalness") return Dimension::naturalness;
  return std::nullopt;
}

inline constexpr std::string_view kGroundTruthModel = "ground_truth";

struct AnnotationRecord {
  std::string sample_id;
  std::string model_id;
  int iteration = 1;
  std::string annotator_id;
  Dimension dimension = Dimension::naturalness;
  int score = 3;
  double duration_s = 0.0;
  bool operator==(const AnnotationRecord&) const = default;
};

/// One rated item: a clip (sample, model, iteration) in one dimension.
using ItemKey = std::tuple<std::string, std::string, int, Dimension>;

inline ItemKey item_key(const AnnotationRecord& r) { return {r.sample_id, r.model_id, r.iteration, r.dimension}; }

inline constexpr std::string_view kAnnotationHeader = "sample_id,model_id,iteration,annotator_id,dimension,score,duration_s";

namespace detail {

inline std::vector<std::string> split_csv_row(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline long parse_long(const std::string& s, const char* what, std::size_t row) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0') throw Error(ErrorCode::parse, "row " + std::to_string(row) + ": bad " + what + " '" + s + "'");
  return v;
}

inline double parse_double(const std::string& s, const char* what, std::size_t row) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0' || !std::isfinite(v))
    throw Error(ErrorCode::parse, "row " + std::to_string(row) + ": bad " + what + " '" + s + "'");
  return v;
}

}  // namespace detail

/// Parses the annotation CSV. Row numbers in errors count the header as row 1.
inline std::vector<AnnotationRecord> parse_annotations(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty() || trim(lines[0]) != kAnnotationHeader)
    throw Error(ErrorCode::parse, "row 1: annotation header must be '" + std::string(kAnnotationHeader) + "'");
  std::vector<AnnotationRecord> records;
  std::set<std::tuple<std::string, std::string, int, std::string, Dimension>> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t row = i + 1;
    if (trim(lines[i]).empty()) continue;
    const auto f = detail::split_csv_row(lines[i]);
    if (f.size() != 7) throw Error(ErrorCode::parse, "row " + std::to_string(row) + ": expected 7 fields, got " + std::to_string(f.size()));
    AnnotationRecord r;
    r.sample_id = f[0];
    r.model_id = f[1];
    r.annotator_id = f[3];
    if (r.sample_id.empty() || r.model_id.empty() || r.annotator_id.empty())
      throw Error(ErrorCode::parse, "row " + std::to_string(row) + ": empty identifier");
    const long iteration = detail::parse_long(f[2], "iteration", row);
    if (iteration < 1) throw Error(ErrorCode::parse, "row " + std::to_string(row) + ": iteration must be >= 1");
    r.iteration = static_cast<int>(iteration);
    auto dim = try_parse_dimension(f[4]);
    if (!dim) throw Error(ErrorCode::parse, "row " + std::to_string(row) + ": unknown dimension '" + f[4] + "'");
    r.dimension = *dim;
    const long score = detail::parse_long(f[5], "score", row);
    if (score < 1 || score > 5) throw Error(ErrorCode::parse, "row " + std::to_string(row) + ": score " + f[5] + " outside 1..5");
    r.score = static_cast<int>(score);
    r.duration_s = detail::parse_double(f[6], "duration_s", row);
    if (r.duration_s < 0.0) throw Error(ErrorCode::parse, "row " + std::to_string(row) + ": negative duration_s");
    if (!seen.emplace(r.sample_id, r.model_id, r.iteration, r.annotator_id, r.dimension).second)
      throw Error(ErrorCode::parse, "row " + std::to_string(row) + ": duplicate rating by '" + r.annotator_id + "'");
    records.push_back(std::move(r));
  }
  return records;
}

inline std::vector<AnnotationRecord> ingest_annotations(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::io, "annotations not found: " + path.string());
  return parse_annotations(read_file(path));
}

inline std::string serialize_annotations(std::span<const AnnotationRecord> records) {
  std::string out(kAnnotationHeader);
  out += '\n';
  for (const auto& r : records) {
    out += r.sample_id + "," + r.model_id + "," + std::to_string(r.iteration) + "," + r.annotator_id + "," +
           std::string(to_string(r.dimension)) + "," + std::to_string(r.score) + "," + format_real(r.duration_s) + "\n";
  }
  return out;
}

/// Histogram: number of ratings per item -> number of items.
inline std::map<std::size_t, std::size_t> rating_count_histogram(std::span<const AnnotationRecord> records) {
  std::map<ItemKey, std::size_t> per_item;
  for (const auto& r : records) ++per_item[item_key(r)];
  std::map<std::size_t, std::size_t> hist;
  for (const auto& [_, c] : per_item) ++hist[c];
  return hist;
}

// ---------------------------------------------------------------------------
// Outlier filtering

struct OutlierFilterConfig {
  double consistency_z = 2.5;         // max |z| against the mean of the other annotators of the item
  std::optional<double> min_duration_s;  // fixed threshold; otherwise derived from the audio duration
  double min_duration_fraction = 0.25;   // of the item's audio duration
  double min_duration_floor_s = 2.0;
  double discrepancy_z = 3.0;         // max |z| of the residual against the score-vs-objective fit
  std::optional<double> target_exclusion_hint;
};

inline void validate(const OutlierFilterConfig& c) {
  if (!(c.consistency_z > 0.0) || !(c.discrepancy_z > 0.0) || !(c.min_duration_fraction > 0.0) ||
      !(c.min_duration_floor_s > 0.0) || (c.min_duration_s && !(*c.min_duration_s > 0.0)))
    throw Error(ErrorCode::config, "outlier filter thresholds must be positive");
}

enum class OutlierCriterion { consistency, duration, discrepancy };

inline std::string_view to_string(OutlierCriterion c) {
  switch (c) {
    case OutlierCriterion::consistency: return "consistency";
    case OutlierCriterion::duration: return "duration";
    case OutlierCriterion::discrepancy: return "discrepancy";
  }
  return "?";
}

struct ExcludedRecord {
  AnnotationRecord record;
  std::vector<OutlierCriterion> criteria;
  double statistic = 0.0;  // z or duration of the first triggering criterion
};

struct ExclusionReport {
  std::size_t total = 0;
  std::vector<ExcludedRecord> excluded;
  std::map<OutlierCriterion, std::size_t> counts;  // a record counts once per criterion it triggers

  double fraction() const { return total ? static_cast<double>(excluded.size()) / static_cast<double>(total) : 0.0; }
};

struct FilterResult {
  std::vector<AnnotationRecord> kept;
  ExclusionReport report;
};

/// Oriented objective score for the clip an annotation rates, if known.
using ObjectiveLookup = std::function<std::optional<double>(const AnnotationRecord&)>;
/// Audio duration of a sample in seconds, if known.
using AudioDurationLookup = std::function<std::optional<double>(const std::string& sample_id)>;

/// Removes ratings that fail any criterion:
///  consistency  |score - peer mean| / peer sd > consistency_z, where peers are
///               the other ratings of the same item; needs >= 3 peers, sd > 0
///  duration     annotation time below the minimum (fixed, or the larger of
///               floor and fraction * audio duration)
///  discrepancy  |z| of the residual of a per-dimension least-squares fit of
///               score on objective score > discrepancy_z; the fit uses the
///               ratings that passed the first two criteria
inline FilterResult filter_outliers(std::span<const AnnotationRecord> records, const OutlierFilterConfig& config,
                                    const ObjectiveLookup& objective = {}, const AudioDurationLookup& audio_duration = {}) {
  validate(config);
  const std::size_t n = records.size();
  std::vector<std::vector<OutlierCriterion>> hits(n);
  std::vector<double> stat(n, 0.0);
  auto hit = [&](std::size_t i, OutlierCriterion c, double s) {
    if (hits[i].empty()) stat[i] = s;
    hits[i].push_back(c);
  };

  std::map<ItemKey, std::vector<std::size_t>> items;
  for (std::size_t i = 0; i < n; ++i) items[item_key(records[i])].push_back(i);

  for (const auto& [_, members] : items) {
    if (members.size() < 4) continue;  // fewer than 3 peers
    for (std::size_t i : members) {
      std::vector<double> peers;
      for (std::size_t p : members)
        if (p != i) peers.push_back(records[p].score);
      const double mean = std::accumulate(peers.begin(), peers.end(), 0.0) / static_cast<double>(peers.size());
      const double sd = dispersion(peers);
      if (sd <= 0.0) continue;
      const double z = std::abs(records[i].score - mean) / sd;
      if (z > config.consistency_z) hit(i, OutlierCriterion::consistency, z);
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    double threshold = config.min_duration_floor_s;
    if (config.min_duration_s) {
      threshold = *config.min_duration_s;
    } else if (audio_duration) {
      if (auto d = audio_duration(records[i].sample_id)) threshold = std::max(threshold, config.min_duration_fraction * *d);
    }
    if (records[i].duration_s < threshold) hit(i, OutlierCriterion::duration, records[i].duration_s);
  }

  if (objective) {
    for (Dimension dim : {Dimension::content, Dimension::speaker, Dimension::naturalness}) {
      std::vector<std::size_t> idx;
      std::vector<double> xs, ys;
      for (std::size_t i = 0; i < n; ++i) {
        if (records[i].dimension != dim || !hits[i].empty()) continue;
        auto x = objective(records[i]);
        if (!x || !std::isfinite(*x)) continue;
        idx.push_back(i);
        xs.push_back(*x);
        ys.push_back(records[i].score);
      }
      if (idx.size() < 3) continue;
      const double m = static_cast<double>(idx.size());
      const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / m;
      const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / m;
      double sxx = 0.0, sxy = 0.0;
      for (std::size_t k = 0; k < idx.size(); ++k) {
        sxx += (xs[k] - mx) * (xs[k] - mx);
        sxy += (xs[k] - mx) * (ys[k] - my);
      }
      const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
      const double intercept = my - slope * mx;
      std::vector<double> resid(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) resid[k] = ys[k] - (intercept + slope * xs[k]);
      const double rmean = std::accumulate(resid.begin(), resid.end(), 0.0) / m;
      const double rsd = dispersion(resid);
      if (rsd <= 0.0) continue;
      for (std::size_t k = 0; k < idx.size(); ++k) {
        const double z = std::abs(resid[k] - rmean) / rsd;
        if (z > config.discrepancy_z) hit(idx[k], OutlierCriterion::discrepancy, z);
      }
    }
  }

  FilterResult result;
  result.report.total = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (hits[i].empty()) {
      result.kept.push_back(records[i]);
      continue;
    }
    for (auto c : hits[i]) ++result.report.counts[c];
    result.report.excluded.push_back({records[i], hits[i], stat[i]});
  }
  return result;
}

// ---------------------------------------------------------------------------
// Human score summaries

/// Mean rating per item (over annotators).
inline std::map<ItemKey, double> item_means(std::span<const AnnotationRecord> records) {
  std::map<ItemKey, std::pair<double, int>> acc;
  for (const auto& r : records) {
    auto& [sum, count] = acc[item_key(r)];
    sum += r.score;
    ++count;
  }
  std::map<ItemKey, double> out;
  for (const auto& [k, v] : acc) out[k] = v.first / v.second;
  return out;
}

/// Per-model human score for one (iteration, dimension): mean over samples of
/// the per-sample annotator means, so items with more raters weigh the same.
inline std::map<std::string, double> model_human_means(std::span<const AnnotationRecord> records, int iteration,
                                                       Dimension dimension) {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& [key, mean] : item_means(records)) {
    const auto& [sample, model, it, dim] = key;
    if (it != iteration || dim != dimension) continue;
    auto& [sum, count] = acc[model];
    sum += mean;
    ++count;
  }
  std::map<std::string, double> out;
  for (const auto& [model, v] : acc) out[model] = v.first / v.second;
  return out;
}

}  // namespace i2d
