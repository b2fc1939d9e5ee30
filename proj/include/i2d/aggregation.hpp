#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "i2d/error.hpp"
#include "i2d/util.hpp"

namespace i2d {

enum class AggregationKind { iter_k, mean, lwa, ewa, auc };

/// How a per-iteration trajectory score_1..score_N collapses to one number.
struct AggregationMethod {
  AggregationKind kind = AggregationKind::mean;
  int k = 1;          // iter_k only
  double alpha = 0.9; // ewa only

  static AggregationMethod iter(int k) { return {AggregationKind::iter_k, k, 0.9}; }
  static AggregationMethod mean() { return {AggregationKind::mean, 1, 0.9}; }
  static AggregationMethod lwa() { return {AggregationKind::lwa, 1, 0.9}; }
  static AggregationMethod ewa(double alpha = 0.9) { return {AggregationKind::ewa, 1, alpha}; }
  static AggregationMethod auc() { return {AggregationKind::auc, 1, 0.9}; }

  std::string name() const {
    switch (kind) {
      case AggregationKind::iter_k: return "iter" + std::to_string(k);
      case AggregationKind::mean: return "mean";
      case AggregationKind::lwa: return "lwa";
      case AggregationKind::ewa: return alpha == 0.9 ? "ewa" : "ewa:" + format_real(alpha);
      case AggregationKind::auc: return "auc";
    }
    return "?";
  }

  bool operator==(const AggregationMethod&) const = default;
};

/// Parses "iter1" / "iter_1", "mean", "lwa", "ewa" / "ewa:0.8", "auc".
inline AggregationMethod parse_method(std::string_view s) {
  if (s == "mean") return AggregationMethod::mean();
  if (s == "lwa") return AggregationMethod::lwa();
  if (s == "auc") return AggregationMethod::auc();
  if (s == "ewa") return AggregationMethod::ewa();
  if (s.rfind("ewa:", 0) == 0) {
    const std::string num(s.substr(4));
    char* end = nullptr;
    const double alpha = std::strtod(num.c_str(), &end);
    if (end == num.c_str() || *end != '\0' || !(alpha > 0.0 && alpha < 1.0))
      throw Error(ErrorCode::config, "ewa alpha must lie in (0,1): " + std::string(s));
    return AggregationMethod::ewa(alpha);
  }
  if (s.rfind("iter", 0) == 0) {
    std::string num(s.substr(4));
    if (!num.empty() && num.front() == '_') num.erase(0, 1);
    char* end = nullptr;
    const long k = std::strtol(num.c_str(), &end, 10);
    if (!num.empty() && *end == '\0' && k >= 1) return AggregationMethod::iter(static_cast<int>(k));
  }
  throw Error(ErrorCode::config, "unknown aggregation method '" + std::string(s) + "'");
}

/// Collapses score_1..score_N.
///   mean   (1/N) sum score_i
///   lwa    sum i*score_i / sum i
///   ewa    sum a^i*score_i / sum a^i
///   auc    sum_{i<N} (score_i + score_{i+1}) / 2
///   iterK  score_K
/// EWA weights a^i shrink with i, so early iterations dominate; that is the
/// intended weighting, not a sign error.
inline double aggregate(std::span<const double> scores, const AggregationMethod& method) {
  const std::size_t n = scores.size();
  if (n == 0) throw Error(ErrorCode::precondition, "aggregate: empty series");
  for (double s : scores)
    if (!std::isfinite(s)) throw Error(ErrorCode::non_finite, "aggregate: non-finite score in series");
  switch (method.kind) {
    case AggregationKind::iter_k: {
      if (method.k < 1 || static_cast<std::size_t>(method.k) > n)
        throw Error(ErrorCode::precondition, "iter_k: k=" + std::to_string(method.k) + " outside 1.." + std::to_string(n));
      return scores[static_cast<std::size_t>(method.k - 1)];
    }
    case AggregationKind::mean: {
      double sum = 0.0;
      for (double s : scores) sum += s;
      return sum / static_cast<double>(n);
    }
    case AggregationKind::lwa: {
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double w = static_cast<double>(i + 1);
        num += w * scores[i];
        den += w;
      }
      return num / den;
    }
    case AggregationKind::ewa: {
      if (!(method.alpha > 0.0 && method.alpha < 1.0)) throw Error(ErrorCode::precondition, "ewa: alpha must lie in (0,1)");
      double num = 0.0, den = 0.0, w = 1.0;
      for (std::size_t i = 0; i < n; ++i) {
        w *= method.alpha;
        num += w * scores[i];
        den += w;
      }
      return num / den;
    }
    case AggregationKind::auc: {
      if (n < 2) throw Error(ErrorCode::precondition, "auc needs at least two iterations");
      double area = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) area += (scores[i] + scores[i + 1]) / 2.0;
      return area;
    }
  }
  throw Error(ErrorCode::precondition, "unknown aggregation kind");
}

inline double aggregate(const std::vector<double>& scores, const AggregationMethod& method) {
  return aggregate(std::span<const double>(scores), method);
}

struct AggregateScore {
  std::string model_id;
  std::string metric;
  AggregationMethod method;
  double value = 0.0;
  int n_used = 0;
};

/// Applies `method` to every model's per-iteration series. All series must
/// have the same length; truncated chains are resolved before this point.
inline std::map<std::string, AggregateScore> aggregate_system(const std::map<std::string, std::vector<double>>& series_by_model,
                                                              const std::string& metric, const AggregationMethod& method) {
  std::map<std::string, AggregateScore> out;
  std::size_t length = 0;
  for (const auto& [model, series] : series_by_model) {
    if (length == 0) length = series.size();
    if (series.size() != length)
      throw Error(ErrorCode::precondition, "aggregate_system: series lengths differ (" + std::to_string(length) + " vs " +
                                               std::to_string(series.size()) + " for '" + model +
                                               "'); choose a truncation policy");
  }
  for (const auto& [model, series] : series_by_model) {
    out[model] = AggregateScore{model, metric, method, aggregate(series, method), static_cast<int>(series.size())};
  }
  return out;
}

/// Aggregates each model using only iterations 1..N' for every N' requested.
inline std::vector<std::pair<int, std::map<std::string, double>>> max_iteration_sweep(
    const std::map<std::string, std::vector<double>>& series_by_model, const AggregationMethod& method,
    const std::vector<int>& n_values) {
  std::vector<std::pair<int, std::map<std::string, double>>> out;
  for (int np : n_values) {
    if (np < 1) throw Error(ErrorCode::precondition, "sweep: N' must be >= 1");
    std::map<std::string, double> row;
    for (const auto& [model, series] : series_by_model) {
      if (static_cast<std::size_t>(np) > series.size())
        throw Error(ErrorCode::precondition, "sweep: N'=" + std::to_string(np) + " exceeds the " +
                                                 std::to_string(series.size()) + " iterations of '" + model + "'");
      row[model] = aggregate(std::span<const double>(series).first(static_cast<std::size_t>(np)), method);
    }
    out.emplace_back(np, std::move(row));
  }
  return out;
}

}  // namespace i2d
