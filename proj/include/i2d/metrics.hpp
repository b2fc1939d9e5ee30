#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "i2d/detail/unicode_tables.hpp"
#include "i2d/error.hpp"
#include "i2d/manifest.hpp"
#include "i2d/util.hpp"

namespace i2d {

enum class Direction { higher_better, lower_better };

inline std::string_view to_string(Direction d) { return d == Direction::higher_better ? "higher_better" : "lower_better"; }

inline Direction parse_direction(std::string_view s) {
  if (s == "higher_better") return Direction::higher_better;
  if (s == "lower_better") return Direction::lower_better;
  throw Error(ErrorCode::parse, "unknown direction '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Text normalization

inline bool is_punct_or_symbol(char32_t cp) {
  const auto& ranges = detail::kPunctSymbolRanges;
  auto it = std::upper_bound(ranges.begin(), ranges.end(), cp,
                             [](char32_t value, const auto& range) { return value < range.first; });
  if (it == ranges.begin()) return false;
  --it;
  return cp <= it->second;
}

inline bool is_whitespace(char32_t cp) {
  return std::binary_search(detail::kWhitespace.begin(), detail::kWhitespace.end(), cp);
}

inline char32_t to_lower(char32_t cp) {
  const auto& table = detail::kLowercase;
  auto it = std::lower_bound(table.begin(), table.end(), cp,
                             [](const auto& entry, char32_t value) { return entry.first < value; });
  return (it != table.end() && it->first == cp) ? it->second : cp;
}

/// Tokens used for WER/CER. Punctuation and symbols are Unicode categories P*
/// and S*. English: lowercase, strip, split on whitespace. Chinese: strip
/// punctuation and whitespace, one token per code point.
inline std::vector<std::string> normalize_text(std::string_view text, Language language) {
  std::vector<std::string> tokens;
  const auto cps = utf8_decode(text);
  if (language == Language::zh) {
    for (char32_t cp : cps) {
      if (is_punct_or_symbol(cp) || is_whitespace(cp)) continue;
      tokens.push_back(utf8_encode(cp));
    }
    return tokens;
  }
  std::string current;
  for (char32_t cp : cps) {
    if (is_whitespace(cp)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else if (!is_punct_or_symbol(cp)) {
      utf8_append(current, to_lower(cp));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

// ---------------------------------------------------------------------------
// Edit distance

/// Levenshtein distance with unit insert/delete/substitute costs.
template <typename T>
std::size_t edit_distance(std::span<const T> a, std::span<const T> b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      const std::size_t sub = diag + (a[i - 1] == b[j - 1] ? 0 : 1);
      row[j] = std::min({up + 1, row[j - 1] + 1, sub});
      diag = up;
    }
  }
  return row[b.size()];
}

inline std::size_t edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  return edit_distance<std::string>(std::span<const std::string>(a), std::span<const std::string>(b));
}

/// WER (en) or CER (zh). Not clipped: can exceed 1 for long insertions.
inline double error_rate(std::string_view ref, std::string_view hyp, Language language) {
  const auto r = normalize_text(ref, language);
  if (r.empty()) throw Error(ErrorCode::precondition, "error_rate: reference is empty after normalization");
  const auto h = normalize_text(hyp, language);
  return static_cast<double>(edit_distance(r, h)) / static_cast<double>(r.size());
}

/// Maps a value to higher-is-better form (1 - x for lower-is-better metrics).
inline double orient(double value, Direction direction) {
  return direction == Direction::higher_better ? value : 1.0 - value;
}

// ---------------------------------------------------------------------------
// Vectors and energy

inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size())
    throw Error(ErrorCode::precondition, "cosine_similarity: dimension mismatch " + std::to_string(u.size()) +
                                             " vs " + std::to_string(v.size()));
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) throw Error(ErrorCode::precondition, "cosine_similarity: zero vector");
  return std::clamp(dot / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
}

/// Gain bringing a signal of RMS `rms_in` to `target_rms`.
inline double energy_normalize(double rms_in, double target_rms) {
  if (!(rms_in > 0.0) || !(target_rms > 0.0))
    throw Error(ErrorCode::precondition, "energy_normalize: rms values must be positive");
  return target_rms / rms_in;
}

// ---------------------------------------------------------------------------
// Emotion F1

struct EmotionF1 {
  std::map<Emotion, double> per_class;
  double weighted = 0.0;
};

/// Per-class F1 (0 when precision + recall is 0) and the support-weighted average.
inline EmotionF1 emotion_f1(std::span<const std::pair<Emotion, Emotion>> pairs) {
  if (pairs.empty()) throw Error(ErrorCode::precondition, "emotion_f1: no pairs");
  std::map<Emotion, std::size_t> tp, predicted, support;
  for (const auto& [truth, pred] : pairs) {
    ++support[truth];
    ++predicted[pred];
    if (truth == pred) ++tp[truth];
  }
  EmotionF1 out;
  for (Emotion e : kEmotions) {
    const double t = static_cast<double>(tp[e]);
    const double precision = predicted[e] ? t / static_cast<double>(predicted[e]) : 0.0;
    const double recall = support[e] ? t / static_cast<double>(support[e]) : 0.0;
    const double f1 = (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    out.per_class[e] = f1;
    out.weighted += f1 * static_cast<double>(support[e]) / static_cast<double>(pairs.size());
  }
  return out;
}

}  // namespace i2d
