#include <gtest/gtest.h>

#include "i2d/fixtures.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace i2d {
namespace {

using Row = std::map<std::string, std::string>;

std::vector<Row> read_csv(const fs::path& path) {
  const auto lines = split_lines(read_file(path));
  std::vector<Row> rows;
  if (lines.empty()) return rows;
  const auto header = split(lines[0], ',');
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = split(lines[i], ',');
    Row r;
    for (std::size_t k = 0; k < header.size() && k < f.size(); ++k) r[header[k]] = f[k];
    rows.push_back(r);
  }
  return rows;
}

MetricSpec spec(const std::string& name, Direction d = Direction::higher_better) {
  MetricSpec s;
  s.name = name;
  s.remote_name = name;
  s.direction = d;
  return s;
}

/// Five models x four samples; the metric at iteration 1 is model + 0.1*sample.
TraceSet linked_traces(const std::string& metric, double sign) {
  TraceSet set;
  for (int m = 0; m < 5; ++m)
    for (int s = 0; s < 4; ++s) {
      IterationTrace t{"s" + std::to_string(s), "m" + std::to_string(m), 1, {}};
      IterationRecord r;
      r.scores[metric] = sign * (m + 0.1 * s);
      t.records.push_back(r);
      set.traces.push_back(t);
    }
  return set;
}

/// Ratings increase with the linked value: two raters per clip.
std::vector<AnnotationRecord> linked_ratings() {
  std::vector<AnnotationRecord> out;
  for (int m = 0; m < 5; ++m)
    for (int s = 0; s < 4; ++s)
      for (int a = 0; a < 2; ++a)
        out.push_back({"s" + std::to_string(s), "m" + std::to_string(m), 1, "a" + std::to_string(a), Dimension::naturalness,
                       1 + m, 10.0 + s + a});
  return out;
}

TEST(UtteranceSrcc, MonotoneLinkMatchesOracle) {
  const auto r = utterance_srcc(linked_traces("x", 1.0), linked_ratings(), spec("x"), Dimension::naturalness, 1);
  EXPECT_EQ(r.n, 20u);
  // ties in the ratings (four clips per model) keep it below 1
  const std::vector<double> x{0, 0.1, 0.2, 0.3, 1, 1.1, 1.2, 1.3, 2, 2.1, 2.2, 2.3, 3, 3.1, 3.2, 3.3, 4, 4.1, 4.2, 4.3};
  std::vector<double> h;
  for (int m = 0; m < 5; ++m)
    for (int s = 0; s < 4; ++s) h.push_back(1 + m);
  EXPECT_NEAR(r.srcc, oracle::spearman_bruteforce(x, h), 1e-12);
  EXPECT_GT(r.srcc, 0.95);
}

TEST(UtteranceSrcc, LowerBetterMetricsAreOriented) {
  const auto up = utterance_srcc(linked_traces("x", 1.0), linked_ratings(), spec("x"), Dimension::naturalness, 1);
  const auto down = utterance_srcc(linked_traces("cer", -1.0), linked_ratings(), spec("cer", Direction::lower_better),
                                   Dimension::naturalness, 1);
  EXPECT_DOUBLE_EQ(up.srcc, down.srcc);
}

TEST(UtteranceSrcc, GroundTruthAndOtherIterationsDoNotPair) {
  auto ratings = linked_ratings();
  const auto base = utterance_srcc(linked_traces("x", 1.0), ratings, spec("x"), Dimension::naturalness, 1);
  ratings.push_back({"s0", std::string(kGroundTruthModel), 1, "a0", Dimension::naturalness, 5, 10.0});
  ratings.push_back({"s0", "m0", 2, "a0", Dimension::naturalness, 5, 10.0});
  ratings.push_back({"s0", "m0", 1, "a0", Dimension::speaker, 5, 10.0});
  const auto with = utterance_srcc(linked_traces("x", 1.0), ratings, spec("x"), Dimension::naturalness, 1);
  EXPECT_EQ(with.n, base.n);
  EXPECT_EQ(with.srcc, base.srcc);
}

TEST(UtteranceSrcc, Errors) {
  const auto all = linked_ratings();
  const std::vector<AnnotationRecord> two(all.begin(), all.begin() + 4);
  EXPECT_THROW(utterance_srcc(linked_traces("x", 1.0), two, spec("x"), Dimension::naturalness, 1), Error);
  EXPECT_THROW(utterance_srcc(linked_traces("x", 1.0), linked_ratings(), spec("emo_f1"), Dimension::naturalness, 1), Error);
  EXPECT_THROW(utterance_srcc(linked_traces("x", 1.0), linked_ratings(), spec("x"), Dimension::content, 1), Error);
}

TEST(SystemCorrelation, GroundTruthExcludedAndModelsIntersected) {
  const std::map<std::string, double> scores{{"a", 1}, {"b", 2}, {"c", 3}, {"d", 4}, {"ground_truth", 9}};
  const std::map<std::string, double> human{{"a", 3.1}, {"b", 3.5}, {"c", 4.0}, {"e", 1.0}, {"ground_truth", 1.0}};
  const auto r = system_correlation(scores, human);
  EXPECT_EQ(r.n, 3u);
  EXPECT_DOUBLE_EQ(r.srcc, 1.0);
  EXPECT_THROW(system_correlation({{"a", 1}, {"b", 2}}, {{"a", 1}, {"b", 2}}), Error);
}

TEST(PublishedPairs, ScoreFileCorrelationMatchesOracle) {
  testing::TempDir dir;
  fixtures::write_table3_fixture(dir.path());
  std::vector<double> x, y;
  for (const auto& p : fixtures::published_pairs()) {
    x.push_back(p.mos_mean);
    y.push_back(p.naturalness);
  }
  const double oracle_srcc = oracle::spearman_bruteforce(x, y);
  EXPECT_NEAR(oracle_srcc, 0.29061860987644683, 1e-12);

  ScoreFileOptions o{dir / "model_scores.csv", "utmosv2_zh:mean", dir / "annotations.csv", Dimension::naturalness, 1, {}};
  const auto r = cmd_correlate_scores(o, dir / "out");
  EXPECT_EQ(r.n, 11u);
  EXPECT_NEAR(r.srcc, oracle_srcc, 1e-9);
  const auto rows = read_csv(dir / "out" / "correlation_system.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].at("method"), "given");
  EXPECT_NEAR(std::stod(rows[0].at("srcc")), oracle_srcc, 1e-8);

  o.metric = "absent";
  EXPECT_THROW(cmd_correlate_scores(o, dir / "out"), Error);
}

TEST(AnnotationQc, FilterFindsEveryPlantedOutlier) {
  const auto f = fixtures::annotation_qc_fixture();
  ASSERT_EQ(f.records.size(), 1000u);
  EXPECT_EQ(rating_count_histogram(f.records), (std::map<std::size_t, std::size_t>{{3, 4}, {5, 194}, {6, 3}}));
  ObjectiveLookup objective = [&](const AnnotationRecord& r) -> std::optional<double> {
    auto it = f.objective.find({r.model_id, r.sample_id});
    return it == f.objective.end() ? std::nullopt : std::optional<double>(it->second);
  };
  const auto res = filter_outliers(f.records, OutlierFilterConfig{}, objective);
  const auto count = [&](OutlierCriterion c) {
    auto it = res.report.counts.find(c);
    return it == res.report.counts.end() ? std::size_t{0} : it->second;
  };
  EXPECT_EQ(res.report.total, 1000u);
  EXPECT_EQ(res.report.excluded.size(), f.expected_total());
  EXPECT_EQ(count(OutlierCriterion::consistency), f.expected_consistency);
  EXPECT_EQ(count(OutlierCriterion::duration), f.expected_duration);
  EXPECT_EQ(count(OutlierCriterion::discrepancy), f.expected_discrepancy);
  EXPECT_EQ(f.expected_consistency, 4u);
  EXPECT_EQ(f.expected_duration, 4u);
  EXPECT_EQ(f.expected_discrepancy, 4u);
  EXPECT_NEAR(res.report.fraction(), 0.012, 1e-12);

  const auto hist = [&] {
    std::map<ItemKey, std::size_t> n;
    for (const auto& r : f.records) ++n[item_key(r)];
    return n;
  }();
  for (const auto& e : res.report.excluded) {
    const bool consistency = std::find(e.criteria.begin(), e.criteria.end(), OutlierCriterion::consistency) != e.criteria.end();
    if (consistency) {
      EXPECT_GE(hist.at(item_key(e.record)), 4u);
      EXPECT_EQ(e.record.score, 1);
    }
  }
  EXPECT_EQ(res.kept.size() + res.report.excluded.size(), 1000u);
}

// ---------------------------------------------------------------------------
// Saturation fixture, full pipeline

class SaturationPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::TempDir;
    fixtures::write_saturation_fixture(dir_->path());
    ASSERT_EQ(cmd_pipeline(load_run_config(dir_->path() / "config.json")), kExitOk);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path run() { return dir_->path() / "run"; }
  static testing::TempDir* dir_;
};
testing::TempDir* SaturationPipeline::dir_ = nullptr;

double system_cell(const std::vector<Row>& rows, const std::string& metric, const std::string& method) {
  for (const auto& r : rows)
    if (r.at("metric") == metric && r.at("dimension") == "naturalness" && r.at("method") == method)
      return std::stod(r.at("srcc"));
  ADD_FAILURE() << "no cell " << metric << "/" << method;
  return std::nan("");
}

TEST_F(SaturationPipeline, IterationOneIsBelowMultiIterationAggregates) {
  const auto rows = read_csv(run() / "correlation_system.csv");
  const double iter1 = system_cell(rows, "mos", "iter1");
  EXPECT_LT(iter1, 1.0);
  for (const char* m : {"mean", "lwa", "ewa", "auc"}) EXPECT_DOUBLE_EQ(system_cell(rows, "mos", m), 1.0) << m;
}

TEST_F(SaturationPipeline, SweepMatchesOracleFromSeries) {
  std::map<std::string, double> human;
  for (const auto& r : read_csv(run() / "human_means.csv"))
    if (r.at("dimension") == "naturalness" && r.at("iteration") == "1") human[r.at("model_id")] = std::stod(r.at("mean"));
  ASSERT_EQ(human.size(), 11u);

  std::map<std::string, std::vector<double>> mos;
  for (const auto& [model, _] : human)
    for (const auto& r : read_csv(run() / "series" / (model + ".csv")))
      if (r.at("metric") == "mos") mos[model].push_back(std::stod(r.at("mean")));

  std::map<int, double> sweep;
  for (const auto& r : read_csv(run() / "correlation_sweep.csv"))
    if (r.at("metric") == "mos" && r.at("dimension") == "naturalness" && r.at("method") == "mean")
      sweep[std::stoi(r.at("max_iteration"))] = std::stod(r.at("srcc"));
  ASSERT_EQ(sweep.size(), 10u);

  for (int np = 1; np <= 10; ++np) {
    std::vector<double> x, y;
    for (const auto& [model, h] : human) {
      const auto& s = mos.at(model);
      x.push_back(oracle::mean(std::vector<double>(s.begin(), s.begin() + np)));
      y.push_back(h);
    }
    EXPECT_NEAR(sweep.at(np), oracle::spearman_bruteforce(x, y), 1e-8) << np;
  }

  // frozen for seed 1; evaluator noise can still swap a pair at small N'
  const std::vector<double> frozen{-0.0818181818, 0.9, 1, 0.990909091, 1, 1, 1, 1, 1, 1};
  for (int np = 1; np <= 10; ++np) EXPECT_NEAR(sweep.at(np), frozen[static_cast<std::size_t>(np - 1)], 1e-9) << np;
  for (int np = 2; np <= 10; ++np) EXPECT_GT(sweep.at(np), sweep.at(1)) << np;
  for (int np = 5; np <= 10; ++np) EXPECT_DOUBLE_EQ(sweep.at(np), 1.0) << np;
}

TEST_F(SaturationPipeline, UtteranceLevelAtIterationOne) {
  const auto rows = read_csv(run() / "correlation_utterance.csv");
  bool found = false;
  for (const auto& r : rows)
    if (r.at("metric") == "mos" && r.at("dimension") == "naturalness" && r.at("iteration") == "1") {
      found = true;
      EXPECT_EQ(r.at("n"), "110");
      EXPECT_NEAR(std::stod(r.at("srcc")), -0.0443766892, 1e-9);
    }
  EXPECT_TRUE(found);
}

TEST_F(SaturationPipeline, NoRatingsExcluded) {
  const auto report = nlohmann::json::parse(read_file(run() / "exclusion_report.json"));
  EXPECT_EQ(report.at("total"), 550);
  EXPECT_EQ(report.at("excluded"), 0);
}

TEST_F(SaturationPipeline, DispersionGrowsWithIterations) {
  ASSERT_EQ(cmd_report(run()), kExitOk);
  std::map<int, double> d;
  for (const auto& r : read_csv(run() / "report" / "dispersion.csv"))
    if (r.at("metric") == "mos") d[std::stoi(r.at("iteration"))] = std::stod(r.at("dispersion"));
  ASSERT_EQ(d.size(), 10u);
  EXPECT_GE(d.at(10) / d.at(1), 5.0);
}

}  // namespace
}  // namespace i2d
