#pragma once

// Independent reference implementations used only by tests. They follow the
// textbook definitions as literally as possible and share no code with the
// library.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace i2d::oracle {

/// Plain recursive Levenshtein distance (exponential; keep inputs short).
inline std::size_t levenshtein(const std::vector<std::string>& a, std::size_t i, const std::vector<std::string>& b,
                               std::size_t j) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  if (a[i] == b[j]) {
    // matching heads: taking the match is always optimal, but explore all
    // three moves anyway to stay a literal transcription of the recurrence
    return std::min({levenshtein(a, i + 1, b, j + 1), 1 + levenshtein(a, i + 1, b, j), 1 + levenshtein(a, i, b, j + 1)});
  }
  return 1 + std::min({levenshtein(a, i + 1, b, j + 1), levenshtein(a, i + 1, b, j), levenshtein(a, i, b, j + 1)});
}

inline std::size_t levenshtein(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  return levenshtein(a, 0, b, 0);
}

/// Same suffix recurrence, memoized top-down so exhaustive sweeps over all
/// short lists stay tractable. Inputs are at most 15 tokens.
inline std::size_t levenshtein_memo(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  constexpr std::size_t kUnset = static_cast<std::size_t>(-1);
  std::size_t memo[16][16];
  for (auto& row : memo)
    for (auto& cell : row) cell = kUnset;
  auto go = [&](auto&& self, std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    if (memo[i][j] != kUnset) return memo[i][j];
    const std::size_t sub = (a[i] == b[j] ? 0 : 1) + self(self, i + 1, j + 1);
    return memo[i][j] = std::min({sub, 1 + self(self, i + 1, j), 1 + self(self, i, j + 1)});
  };
  return go(go, 0, 0);
}

/// Rank of each value: 1 + number of strictly smaller values + half the
/// number of other equal values (quadratic counting, no sorting).
inline std::vector<double> ranks_by_counting(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (v[j] < v[i]) less += 1;
      if (j != i && v[j] == v[i]) equal += 1;
    }
    r[i] = 1 + less + equal / 2;
  }
  return r;
}

inline double pearson_textbook(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman_bruteforce(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson_textbook(ranks_by_counting(x), ranks_by_counting(y));
}

/// 1 - 6 sum d^2 / (n (n^2 - 1)); valid only without ties.
inline double spearman_closed_form(const std::vector<double>& x, const std::vector<double>& y) {
  const auto rx = ranks_by_counting(x), ry = ranks_by_counting(y);
  double d2 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  const double n = static_cast<double>(x.size());
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

// Aggregations written straight from their formulas, with pow() weights.
inline double mean(const std::vector<double>& s) {
  double t = 0;
  for (double v : s) t += v;
  return t / static_cast<double>(s.size());
}

inline double lwa(const std::vector<double>& s) {
  double num = 0, den = 0;
  for (std::size_t i = 1; i <= s.size(); ++i) {
    num += static_cast<double>(i) * s[i - 1];
    den += static_cast<double>(i);
  }
  return num / den;
}

inline double ewa(const std::vector<double>& s, double alpha) {
  double num = 0, den = 0;
  for (std::size_t i = 1; i <= s.size(); ++i) {
    num += std::pow(alpha, static_cast<double>(i)) * s[i - 1];
    den += std::pow(alpha, static_cast<double>(i));
  }
  return num / den;
}

inline double auc(const std::vector<double>& s) {
  double a = 0;
  for (std::size_t i = 1; i <= s.size() - 1; ++i) a += (s[i - 1] + s[i]) / 2.0;  // score_i, score_{i+1}
  return a;
}

inline double sample_sd(const std::vector<double>& v) {
  const double m = mean(v);
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace i2d::oracle
