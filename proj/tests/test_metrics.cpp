#include <gtest/gtest.h>

#include "i2d/metrics.hpp"
#include "oracles.hpp"

namespace i2d {
namespace {

using Tokens = std::vector<std::string>;

TEST(NormalizeText, English) {
  EXPECT_EQ(normalize_text("Hello, world!", Language::en), (Tokens{"hello", "world"}));
  EXPECT_EQ(normalize_text("  It's   A\tTEST.  ", Language::en), (Tokens{"its", "a", "test"}));
  EXPECT_EQ(normalize_text("Café — ÉTÉ", Language::en), (Tokens{"café", "été"}));
}

TEST(NormalizeText, Chinese) {
  EXPECT_EQ(normalize_text("你好，世界", Language::zh), (Tokens{"你", "好", "世", "界"}));
  EXPECT_EQ(normalize_text("你 好。「世界」！", Language::zh), (Tokens{"你", "好", "世", "界"}));
}

TEST(NormalizeText, Empty) {
  EXPECT_TRUE(normalize_text("", Language::en).empty());
  EXPECT_TRUE(normalize_text("", Language::zh).empty());
  EXPECT_TRUE(normalize_text("?!", Language::en).empty());
}

TEST(NormalizeText, SymbolsAreStripped) {
  // S* categories: currency, math, modifier symbols
  EXPECT_EQ(normalize_text("$5 + 3 = 8^", Language::en), (Tokens{"5", "3", "8"}));
}

TEST(EditDistance, Examples) {
  EXPECT_EQ(edit_distance(Tokens{"a", "b"}, Tokens{"a", "b"}), 0u);
  EXPECT_EQ(edit_distance(Tokens{"a", "b", "c"}, Tokens{"a", "x", "c"}), 1u);
  EXPECT_EQ(edit_distance(Tokens{"a", "b", "c"}, Tokens{}), 3u);
  EXPECT_EQ(edit_distance(Tokens{}, Tokens{"q"}), 1u);
  EXPECT_EQ(edit_distance(Tokens{"k", "i", "t", "t", "e", "n"}, Tokens{"s", "i", "t", "t", "i", "n", "g"}), 3u);
}

TEST(EditDistance, MatchesRecursiveOracleOnRandomLists) {
  Rng rng(3);
  const Tokens alphabet{"a", "b", "c", "d"};
  for (int trial = 0; trial < 300; ++trial) {
    Tokens a, b;
    for (auto n = rng.below(6); n > 0; --n) a.push_back(alphabet[rng.below(4)]);
    for (auto n = rng.below(6); n > 0; --n) b.push_back(alphabet[rng.below(4)]);
    EXPECT_EQ(edit_distance(a, b), oracle::levenshtein(a, b));
  }
}

TEST(ErrorRate, Examples) {
  EXPECT_DOUBLE_EQ(error_rate("the same words", "The same, words!", Language::en), 0.0);
  EXPECT_DOUBLE_EQ(error_rate("你好世界", "你好地界", Language::zh), 0.25);
  EXPECT_DOUBLE_EQ(error_rate("a b c", "", Language::en), 1.0);
  EXPECT_DOUBLE_EQ(error_rate("a", "a b c", Language::en), 2.0);  // not clipped
}

TEST(ErrorRate, EmptyReferenceIsError) {
  EXPECT_THROW(error_rate("...", "x", Language::en), Error);
  EXPECT_THROW(error_rate("", "x", Language::zh), Error);
}

TEST(ErrorRate, IdentityProperty) {
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    std::string s;
    for (auto n = 1 + rng.below(8); n > 0; --n) s += std::string(1, static_cast<char>('a' + rng.below(26))) + " ";
    EXPECT_EQ(error_rate(s, s, Language::en), 0.0);
  }
}

TEST(Orient, Examples) {
  EXPECT_DOUBLE_EQ(orient(0.05, Direction::lower_better), 0.95);
  EXPECT_DOUBLE_EQ(orient(0.95, Direction::higher_better), 0.95);
  EXPECT_DOUBLE_EQ(orient(1.3, Direction::lower_better), 1.0 - 1.3);
  EXPECT_NEAR(orient(1.3, Direction::lower_better), -0.3, 1e-15);
}

TEST(Orient, LowerBetterIsAnInvolution) {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const double x = rng.uniform() * 4 - 2;
    EXPECT_NEAR(orient(orient(x, Direction::lower_better), Direction::lower_better), x, 1e-15);
  }
}

TEST(Cosine, Examples) {
  const std::vector<double> u{1, 2, 3};
  EXPECT_NEAR(cosine_similarity(u, u), 1.0, 1e-15);
  EXPECT_NEAR(cosine_similarity(std::vector<double>{1, 0, 0}, std::vector<double>{0, 1, 0}), 0.0, 1e-15);
  EXPECT_NEAR(cosine_similarity(std::vector<double>{1, 1}, std::vector<double>{1, 0}), 0.70710678118654752, 1e-9);
}

TEST(Cosine, Errors) {
  EXPECT_THROW(cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{1, 0}), Error);
  EXPECT_THROW(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{1, 0, 0}), Error);
}

TEST(Cosine, ScaleInvariant) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> u(16), v(16);
    for (auto& x : u) x = rng.normal();
    for (auto& x : v) x = rng.normal();
    const double a = 0.01 + rng.uniform() * 100, b = 0.01 + rng.uniform() * 100;
    std::vector<double> su = u, sv = v;
    for (auto& x : su) x *= a;
    for (auto& x : sv) x *= b;
    EXPECT_NEAR(cosine_similarity(su, sv), cosine_similarity(u, v), 1e-12);
  }
}

TEST(EnergyNormalize, Examples) {
  EXPECT_DOUBLE_EQ(energy_normalize(0.2, 0.2), 1.0);
  EXPECT_DOUBLE_EQ(energy_normalize(0.1, 0.05), 0.5);
  const double rms = 0.37;
  const double normalized = rms * energy_normalize(rms, 0.05);
  EXPECT_NEAR(energy_normalize(normalized, 0.05), 1.0, 1e-15);
  EXPECT_THROW(energy_normalize(0.0, 0.05), Error);
  EXPECT_THROW(energy_normalize(-1.0, 0.05), Error);
}

TEST(EmotionF1, HandComputedConfusion) {
  const std::vector<std::pair<Emotion, Emotion>> pairs{
      {Emotion::angry, Emotion::angry}, {Emotion::angry, Emotion::happy}, {Emotion::happy, Emotion::happy}, {Emotion::sad, Emotion::sad}};
  const auto f1 = emotion_f1(pairs);
  EXPECT_NEAR(f1.per_class.at(Emotion::angry), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(f1.per_class.at(Emotion::happy), 2.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(f1.per_class.at(Emotion::sad), 1.0);
  EXPECT_NEAR(f1.weighted, 0.75, 1e-15);
}

TEST(EmotionF1, PerfectAndDegenerate) {
  const std::vector<std::pair<Emotion, Emotion>> perfect{{Emotion::happy, Emotion::happy}, {Emotion::sad, Emotion::sad}, {Emotion::angry, Emotion::angry}};
  const auto f = emotion_f1(perfect);
  for (auto e : kEmotions) EXPECT_DOUBLE_EQ(f.per_class.at(e), 1.0);
  EXPECT_DOUBLE_EQ(f.weighted, 1.0);

  // sad never true and never predicted
  const std::vector<std::pair<Emotion, Emotion>> degenerate{{Emotion::happy, Emotion::angry}, {Emotion::angry, Emotion::angry}};
  EXPECT_DOUBLE_EQ(emotion_f1(degenerate).per_class.at(Emotion::sad), 0.0);
  EXPECT_THROW(emotion_f1(std::vector<std::pair<Emotion, Emotion>>{}), Error);
}

TEST(EmotionF1, WeightedAverageWithinClassRange) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::pair<Emotion, Emotion>> pairs;
    for (auto n = 1 + rng.below(20); n > 0; --n) pairs.emplace_back(kEmotions[rng.below(3)], kEmotions[rng.below(3)]);
    const auto f = emotion_f1(pairs);
    double lo = 1, hi = 0;
    for (auto e : kEmotions) {
      // classes without support carry zero weight
      bool present = false;
      for (const auto& p : pairs) present = present || p.first == e;
      if (!present) continue;
      lo = std::min(lo, f.per_class.at(e));
      hi = std::max(hi, f.per_class.at(e));
    }
    EXPECT_GE(f.weighted, lo - 1e-12);
    EXPECT_LE(f.weighted, hi + 1e-12);
  }
}

}  // namespace
}  // namespace i2d
