#include <gtest/gtest.h>

#include "i2d/stats.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace i2d {
namespace {

std::vector<double> random_vector(Rng& rng, std::size_t n, bool ties) {
  std::vector<double> v(n);
  for (auto& x : v) x = ties ? static_cast<double>(rng.below(4)) : rng.uniform();
  return v;
}

bool is_constant(const std::vector<double>& v) { return std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) == v.end(); }

TEST(AverageRanks, Examples) {
  EXPECT_EQ(average_ranks(std::vector<double>{10, 20, 30}), (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(average_ranks(std::vector<double>{5, 5}), (std::vector<double>{1.5, 1.5}));
  EXPECT_EQ(average_ranks(std::vector<double>{1, 2, 2, 3}), (std::vector<double>{1, 2.5, 2.5, 4}));
  EXPECT_EQ(average_ranks(std::vector<double>{3, 1, 2}), (std::vector<double>{3, 1, 2}));
}

TEST(AverageRanks, MatchCountingOracleAndSumToTriangular) {
  Rng rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.below(15);
    const auto v = random_vector(rng, n, trial % 2 == 0);
    const auto r = average_ranks(v);
    EXPECT_EQ(r, oracle::ranks_by_counting(v));
    EXPECT_DOUBLE_EQ(std::accumulate(r.begin(), r.end(), 0.0), static_cast<double>(n * (n + 1)) / 2.0);
  }
}

TEST(Srcc, Examples) {
  EXPECT_NEAR(srcc({1, 2, 3}, {1, 4, 9}), 1.0, 1e-12);
  EXPECT_NEAR(srcc({1, 2, 3}, {3, 2, 1}), -1.0, 1e-12);
  // scipy.stats.spearmanr([1,2,2,3],[1,2,3,4])
  EXPECT_NEAR(srcc({1, 2, 2, 3}, {1, 2, 3, 4}), 0.9486832980505139, 1e-12);
}

TEST(Srcc, Errors) {
  EXPECT_THROW(srcc({1, 2, 3}, {1, 2}), Error);
  EXPECT_THROW(srcc({1, 2}, {1, 2}), Error);
  EXPECT_THROW(srcc({1, 1, 1}, {1, 2, 3}), Error);
  EXPECT_THROW(srcc({1, 2, 3}, {4, 4, 4}), Error);
  EXPECT_THROW(srcc({1, 2, NAN}, {1, 2, 3}), Error);
}

TEST(Srcc, MatchesBruteForceOracles) {
  Rng rng(2);
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 3 + rng.below(10);
    const bool ties = trial % 2 == 0;
    const auto x = random_vector(rng, n, ties), y = random_vector(rng, n, ties);
    if (is_constant(x) || is_constant(y)) continue;
    ++checked;
    const double s = srcc(x, y);
    EXPECT_NEAR(s, oracle::spearman_bruteforce(x, y), 1e-9);
    if (!ties) {
      EXPECT_NEAR(s, oracle::spearman_closed_form(x, y), 1e-9);
    }
  }
  EXPECT_GT(checked, 900);
}

TEST(Srcc, InvariantUnderMonotoneMaps) {
  Rng rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 3 + rng.below(10);
    const auto x = random_vector(rng, n, trial % 3 == 0), y = random_vector(rng, n, false);
    if (is_constant(x)) continue;
    // random increasing piecewise-linear map
    const double b1 = rng.uniform(), s1 = 0.1 + rng.uniform() * 5, s2 = 0.1 + rng.uniform() * 5;
    auto f = [&](double v) { return v < b1 ? s1 * v : s1 * b1 + s2 * (v - b1); };
    std::vector<double> fx(n), gy(n);
    for (std::size_t i = 0; i < n; ++i) {
      fx[i] = f(x[i]);
      gy[i] = std::exp(3 * y[i]) - 7;
    }
    EXPECT_NEAR(srcc(fx, gy), srcc(x, y), 1e-12);
    EXPECT_NEAR(srcc(x, x), 1.0, 1e-12);
    std::vector<double> neg(n);
    for (std::size_t i = 0; i < n; ++i) neg[i] = -x[i];
    EXPECT_NEAR(srcc(x, neg), -1.0, 1e-12);
  }
}

TEST(Dispersion, Examples) {
  EXPECT_EQ(dispersion({3, 3, 3}), 0.0);
  EXPECT_NEAR(dispersion({0, 2}), 1.414214, 1e-6);
  EXPECT_THROW(dispersion({1}), Error);
}

TEST(Dispersion, AffineProperties) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const auto x = random_vector(rng, 2 + rng.below(10), false);
    const double a = rng.uniform() * 6 - 3, b = rng.uniform() * 100 - 50;
    std::vector<double> t(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) t[i] = a * x[i] + b;
    EXPECT_NEAR(dispersion(t), std::abs(a) * dispersion(x), 1e-9);
    EXPECT_NEAR(dispersion(x), oracle::sample_sd(x), 1e-12);
  }
}

TEST(SystemSrcc, MonotoneTransformIsOne) {
  const std::map<std::string, double> a{{"m1", 0.1}, {"m2", 0.5}, {"m3", 0.3}, {"m4", 0.9}};
  std::map<std::string, double> h;
  for (const auto& [k, v] : a) h[k] = 1 + 4 * v * v;
  EXPECT_NEAR(system_srcc(a, h), 1.0, 1e-12);
}

TEST(SystemSrcc, ModelSetMismatch) {
  const std::map<std::string, double> a{{"m1", 1}, {"m2", 2}, {"m3", 3}};
  EXPECT_THROW(system_srcc(a, {{"m1", 1}, {"m2", 2}, {"mX", 3}}), Error);
  EXPECT_THROW(system_srcc(a, {{"m1", 1}, {"m2", 2}, {"m3", 3}, {"m4", 4}}), Error);
  EXPECT_THROW(system_srcc({{"m1", 1}, {"m2", 2}}, {{"m1", 1}, {"m2", 2}}), Error);
}

TEST(SystemSrcc, PublishedElevenModelPairs) {
  // UTMOSv2 (zh, Mean aggregation) and Naturalness at iteration 1 for the
  // eleven systems of the published comparison table.
  const std::vector<std::string> models{"CosyVoice", "CosyVoice2", "CosyVoice3", "CosyVoice3-RL", "F5-TTS", "FireRedTTS2",
                                        "GLM-TTS", "IndexTTS2", "MaskGCT", "Qwen3-TTS", "VoxCPM1.5"};
  const std::vector<double> utmos{2.76, 3.22, 3.33, 3.33, 2.92, 3.10, 2.74, 3.22, 2.95, 3.68, 2.93};
  const std::vector<double> natural{3.93, 4.08, 4.04, 4.07, 4.10, 3.95, 4.07, 4.30, 3.81, 4.27, 4.11};
  std::map<std::string, double> a, h;
  for (std::size_t i = 0; i < models.size(); ++i) {
    a[models[i]] = utmos[i];
    h[models[i]] = natural[i];
  }
  const double golden = 0.29061860987644683;  // scipy.stats.spearmanr on the same pairs
  EXPECT_NEAR(oracle::spearman_bruteforce(utmos, natural), golden, 1e-12);
  EXPECT_NEAR(system_srcc(a, h), golden, 1e-9);
}

constexpr const char* kTenRows =
    "sample_id,model_id,iteration,annotator_id,dimension,score,duration_s\n"
    "s1,m1,1,a1,naturalness,4,10.5\n"
    "s1,m1,1,a2,naturalness,5,8\n"
    "s1,m1,1,a3,naturalness,4,9\n"
    "s1,m1,10,a1,naturalness,2,11\n"
    "s1,ground_truth,1,a1,naturalness,5,7\n"
    "s2,m1,1,a1,content,3,6\n"
    "s2,m1,1,a2,content,3,6\n"
    "s2,m1,1,a1,speaker,1,6\n"
    "s2,m2,1,a1,speaker,2,6\n"
    "\"s3\",m2,1,a4,speaker,5,0\n";

TEST(Annotations, ValidTenRowFixture) {
  const auto recs = parse_annotations(kTenRows);
  ASSERT_EQ(recs.size(), 10u);
  EXPECT_EQ(recs[3].iteration, 10);
  EXPECT_EQ(recs[4].model_id, kGroundTruthModel);
  EXPECT_EQ(recs[9].sample_id, "s3");
  EXPECT_EQ(recs[7].dimension, Dimension::speaker);
  const auto hist = rating_count_histogram(recs);
  EXPECT_EQ(hist.at(3), 1u);
  EXPECT_EQ(hist.at(2), 1u);
  EXPECT_EQ(hist.at(1), 5u);
  EXPECT_EQ(parse_annotations(serialize_annotations(recs)), recs);
}

void expect_row_error(const std::string& text, const std::string& row) {
  try {
    parse_annotations(text);
    ADD_FAILURE() << "no error for " << text;
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(row), std::string::npos) << e.what();
  }
}

TEST(Annotations, SchemaErrorsNameTheRow) {
  const std::string head = std::string(kAnnotationHeader) + "\n";
  expect_row_error(head + "s1,m1,1,a1,naturalness,4,1\ns1,m1,1,a2,naturalness,6,1\n", "row 3");
  expect_row_error(head + "s1,m1,1,a1,naturalness,0,1\n", "row 2");
  expect_row_error(head + "s1,m1,1,a1,naturalness,4,1\ns1,m1,1,a1,naturalness,3,1\n", "row 3");
  expect_row_error(head + "s1,m1,1,a1,loudness,4,1\n", "row 2");
  expect_row_error(head + "s1,m1,1,a1,naturalness,4\n", "row 2");
  expect_row_error(head + "s1,m1,x,a1,naturalness,4,1\n", "row 2");
  expect_row_error(head + "s1,m1,1,a1,naturalness,4,-1\n", "row 2");
  expect_row_error("sample,model\n", "row 1");
}

TEST(Annotations, IngestFromFile) {
  testing::TempDir dir;
  write_file(dir / "a.csv", kTenRows);
  EXPECT_EQ(ingest_annotations(dir / "a.csv").size(), 10u);
  EXPECT_THROW(ingest_annotations(dir / "missing.csv"), Error);
}

AnnotationRecord rating(const std::string& sample, const std::string& annotator, int score, double duration = 30,
                        Dimension dim = Dimension::naturalness, const std::string& model = "m") {
  return {sample, model, 1, annotator, dim, score, duration};
}

TEST(Outliers, UnanimousRatingsKeepEverything) {
  std::vector<AnnotationRecord> recs;
  for (int s = 0; s < 5; ++s)
    for (int a = 0; a < 5; ++a) recs.push_back(rating("s" + std::to_string(s), "a" + std::to_string(a), 4));
  const auto r = filter_outliers(recs, {});
  EXPECT_EQ(r.kept.size(), recs.size());
  EXPECT_EQ(r.report.fraction(), 0.0);
}

TEST(Outliers, LoneLowRatingExcludedByConsistency) {
  // peers of the 1 are {5,5,5,5,4}: mean 4.8, sd 0.4472, z = 8.50
  std::vector<AnnotationRecord> recs{rating("s", "a1", 1), rating("s", "a2", 5), rating("s", "a3", 5),
                                     rating("s", "a4", 5), rating("s", "a5", 5), rating("s", "a6", 4)};
  const auto r = filter_outliers(recs, {});
  ASSERT_EQ(r.report.excluded.size(), 1u);
  EXPECT_EQ(r.report.excluded[0].record.annotator_id, "a1");
  EXPECT_EQ(r.report.excluded[0].criteria, std::vector<OutlierCriterion>{OutlierCriterion::consistency});
  EXPECT_NEAR(r.report.excluded[0].statistic, 3.8 / std::sqrt(0.2), 1e-12);
}

TEST(Outliers, ZeroPeerSpreadOrFewPeersNeverTriggerConsistency) {
  // peers all 5: sd = 0
  std::vector<AnnotationRecord> recs{rating("s", "a1", 1), rating("s", "a2", 5), rating("s", "a3", 5), rating("s", "a4", 5),
                                     rating("s", "a5", 5)};
  // only two peers
  recs.push_back(rating("t", "a1", 1));
  recs.push_back(rating("t", "a2", 5));
  recs.push_back(rating("t", "a3", 4));
  EXPECT_TRUE(filter_outliers(recs, {}).report.excluded.empty());
}

TEST(Outliers, FewPeerItemsNeverExcludedByConsistencyProperty) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<AnnotationRecord> recs;
    for (int s = 0; s < 10; ++s) {
      const int raters = 1 + static_cast<int>(rng.below(6));
      for (int a = 0; a < raters; ++a)
        recs.push_back(rating("s" + std::to_string(s), "a" + std::to_string(a), 1 + static_cast<int>(rng.below(5))));
    }
    std::map<ItemKey, std::size_t> per_item;
    for (const auto& r : recs) ++per_item[item_key(r)];
    for (const auto& ex : filter_outliers(recs, {}).report.excluded) {
      if (per_item[item_key(ex.record)] < 4) {
        EXPECT_EQ(std::count(ex.criteria.begin(), ex.criteria.end(), OutlierCriterion::consistency), 0);
      }
    }
  }
}

TEST(Outliers, DurationThresholds) {
  std::vector<AnnotationRecord> recs{rating("long", "a1", 4, 5.0), rating("long", "a2", 4, 4.0), rating("short", "a1", 4, 1.9),
                                     rating("short", "a2", 4, 2.0)};
  auto audio = [](const std::string& sample) -> std::optional<double> { return sample == "long" ? 18.0 : 3.0; };
  // long: max(2, 0.25 * 18) = 4.5; short: max(2, 0.75) = 2
  auto r = filter_outliers(recs, {}, {}, audio);
  ASSERT_EQ(r.report.excluded.size(), 2u);
  EXPECT_EQ(r.report.excluded[0].record.annotator_id, "a2");
  EXPECT_EQ(r.report.excluded[1].record.sample_id, "short");
  EXPECT_EQ(r.report.counts.at(OutlierCriterion::duration), 2u);

  OutlierFilterConfig fixed;
  fixed.min_duration_s = 4.5;
  EXPECT_EQ(filter_outliers(recs, fixed).report.excluded.size(), 3u);
}

TEST(Outliers, DiscrepancyAgainstObjectiveFit) {
  // score tracks the objective exactly except for one clip
  std::vector<AnnotationRecord> recs;
  std::map<std::string, double> obj;
  for (int s = 0; s < 40; ++s) {
    const std::string id = "s" + std::to_string(s);
    obj[id] = 0.2 * (s % 5);
    recs.push_back(rating(id, "a1", 1 + s % 5));
  }
  recs[17].score = 5;  // objective says 3
  recs[18].score = 3;  // nearly on the line
  auto lookup = [&](const AnnotationRecord& r) -> std::optional<double> { return obj.at(r.sample_id); };
  OutlierFilterConfig config;
  const auto r = filter_outliers(recs, config, lookup);
  ASSERT_EQ(r.report.excluded.size(), 1u);
  EXPECT_EQ(r.report.excluded[0].record.sample_id, "s17");
  EXPECT_EQ(r.report.excluded[0].criteria, std::vector<OutlierCriterion>{OutlierCriterion::discrepancy});
}

TEST(Outliers, InvalidThresholds) {
  OutlierFilterConfig c;
  c.consistency_z = 0;
  EXPECT_THROW(filter_outliers(std::vector<AnnotationRecord>{}, c), Error);
}

TEST(HumanMeans, TwoStageMean) {
  // m1: s1 has raters {5,5,5,5}, s2 has {1}; two-stage mean = (5 + 1) / 2
  std::vector<AnnotationRecord> recs;
  for (int a = 0; a < 4; ++a) recs.push_back(rating("s1", "a" + std::to_string(a), 5, 30, Dimension::naturalness, "m1"));
  recs.push_back(rating("s2", "a0", 1, 30, Dimension::naturalness, "m1"));
  recs.push_back(rating("s1", "a0", 2, 30, Dimension::content, "m1"));
  const auto means = model_human_means(recs, 1, Dimension::naturalness);
  EXPECT_DOUBLE_EQ(means.at("m1"), 3.0);
  EXPECT_DOUBLE_EQ(model_human_means(recs, 1, Dimension::content).at("m1"), 2.0);
  EXPECT_TRUE(model_human_means(recs, 10, Dimension::content).empty());
}

}  // namespace
}  // namespace i2d
