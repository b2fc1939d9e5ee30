#pragma once

// Pairing objective scores with human ratings.

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "i2d/aggregation.hpp"
#include "i2d/engine.hpp"
#include "i2d/error.hpp"
#include "i2d/scoring.hpp"
#include "i2d/stats.hpp"

namespace i2d {

struct CorrelationResult {
  double srcc = 0.0;
  std::size_t n = 0;
};

/// Index from (model, sample) to trace, for repeated lookups.
class TraceIndex {
 public:
  explicit TraceIndex(const TraceSet& traces) {
    for (const auto& t : traces.traces) index_[{t.model_id, t.sample_id}] = &t;
  }

  std::optional<double> oriented(const MetricSpec& spec, const std::string& model_id, const std::string& sample_id,
                                 int iteration) const {
    auto it = index_.find({model_id, sample_id});
    if (it == index_.end()) return std::nullopt;
    const auto* rec = it->second->at(iteration);
    if (!rec) return std::nullopt;
    auto s = rec->scores.find(spec.name);
    if (s == rec->scores.end()) return std::nullopt;
    return orient(s->second, spec.direction);
  }

 private:
  std::map<std::pair<std::string, std::string>, const IterationTrace*> index_;
};

/// SRCC over every (sample, model) clip at `iteration` that has both an
/// objective score and ratings in `dimension`; the human side is the mean
/// over annotators. Ground-truth ratings have no trace and never pair.
inline CorrelationResult utterance_srcc(const TraceSet& traces, std::span<const AnnotationRecord> annotations,
                                        const MetricSpec& spec, Dimension dimension, int iteration) {
  if (spec.is_emotion()) throw Error(ErrorCode::precondition, "emotion F1 is a set-level metric; no utterance pairing");
  const TraceIndex index(traces);
  std::vector<double> objective, human;
  for (const auto& [key, mean] : item_means(annotations)) {
    const auto& [sample, model, it, dim] = key;
    if (it != iteration || dim != dimension || model == kGroundTruthModel) continue;
    if (auto x = index.oriented(spec, model, sample, iteration)) {
      objective.push_back(*x);
      human.push_back(mean);
    }
  }
  if (objective.size() < 3)
    throw Error(ErrorCode::precondition, "utterance_srcc: only " + std::to_string(objective.size()) +
                                             " matched pairs for " + spec.name + "/" + std::string(to_string(dimension)) +
                                             " at iteration " + std::to_string(iteration));
  return {srcc(objective, human), objective.size()};
}

/// System-level SRCC over the models present on both sides.
inline CorrelationResult system_correlation(const std::map<std::string, double>& model_scores,
                                            const std::map<std::string, double>& model_human) {
  std::map<std::string, double> a, h;
  for (const auto& [model, v] : model_scores) {
    if (model == kGroundTruthModel) continue;
    if (auto it = model_human.find(model); it != model_human.end()) {
      a[model] = v;
      h[model] = it->second;
    }
  }
  return {system_srcc(a, h), a.size()};
}

/// Oriented per-iteration means for one metric, by model.
inline std::map<std::string, std::vector<double>> oriented_series_by_model(const std::map<SeriesKey, MetricSeries>& series,
                                                                          const std::string& metric) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [key, s] : series)
    if (key.second == metric) out[key.first] = s.oriented_means();
  return out;
}

}  // namespace i2d
