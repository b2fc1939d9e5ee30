#include <gtest/gtest.h>

#include "i2d/engine.hpp"
#include "i2d/fixtures.hpp"
#include "i2d/simulator.hpp"
#include "test_support.hpp"

namespace i2d {
namespace {

using testing::make_manifest;

BackendDescriptor sim(const std::string& id, const fs::path& work, nlohmann::json params, nlohmann::json extra = {}) {
  return testing::sim_synth(id, work, std::move(params), std::move(extra));
}

nlohmann::json rate(double r, double floor = 0.0) { return testing::sim_params(r, floor); }

std::vector<double> qualities(const IterationTrace& t, const fs::path& run_dir) {
  std::vector<double> q;
  for (const auto& r : t.records)
    if (r.ok()) q.push_back(read_virtual_audio(run_dir / r.wav).quality);
  return q;
}

TEST(Chain, QualityFollowsTheClosedForm) {
  testing::TempDir dir;
  const auto manifest = make_manifest(dir.path(), 1);
  const auto run = run_dataset(sim("m", dir / "work", rate(0.1)), manifest, 10, 7, 1, dir / "run", dir.path());
  ASSERT_EQ(run.traces.traces.size(), 1u);
  const auto q = qualities(run.traces.traces[0], dir / "run");
  ASSERT_EQ(q.size(), 10u);
  for (int j = 1; j <= 10; ++j) EXPECT_NEAR(q[static_cast<std::size_t>(j - 1)], std::max(0.0, 1.0 - 0.1 * j), 1e-12) << j;
}

TEST(Chain, EachOutputBecomesTheNextReference) {
  testing::TempDir dir;
  const auto manifest = make_manifest(dir.path(), 2);
  const auto run = run_dataset(sim("m", dir / "work", rate(0.05)), manifest, 4, 11, 1, dir / "run", dir.path());
  ASSERT_EQ(run.requests.size(), 8u);
  for (const auto& e : run.requests) {
    const auto* s = manifest.find(e.sample_id);
    ASSERT_NE(s, nullptr);
    EXPECT_EQ(e.request.text, s->target_text);
    EXPECT_EQ(e.request.seed, iteration_seed(11, e.sample_id, e.iteration));
    if (e.iteration == 1) {
      EXPECT_EQ(e.request.ref_wav, s->ref_wav);
      EXPECT_EQ(e.request.ref_text, s->ref_text);
    } else {
      EXPECT_EQ(e.request.ref_wav, "m/" + e.sample_id + "/iter0" + std::to_string(e.iteration - 1) + ".json");
      EXPECT_EQ(e.request.ref_text, s->target_text);
    }
  }
  for (const auto& t : run.traces.traces)
    for (const auto& r : t.records) EXPECT_TRUE(fs::exists(dir / "run" / r.wav)) << r.wav;
}

TEST(Dataset, RecordCountIsSamplesTimesIterations) {
  testing::TempDir dir;
  const auto manifest = make_manifest(dir.path(), 5);
  const auto run = run_dataset(sim("m", dir / "work", rate(0.05)), manifest, 10, 1, 2, dir / "run", dir.path());
  EXPECT_EQ(run.traces.traces.size(), 5u);
  EXPECT_EQ(run.traces.record_count(), 50u);
  EXPECT_EQ(run.traces.failed_chains(), 0u);
}

TEST(Dataset, EmptyManifestGivesEmptyTraces) {
  testing::TempDir dir;
  const auto run = run_dataset(sim("m", dir / "work", rate(0.05)), DatasetManifest{}, 10, 1, 4, dir / "run");
  EXPECT_TRUE(run.traces.traces.empty());
  EXPECT_TRUE(run.requests.empty());
}

TEST(Dataset, ParallelismDoesNotChangeResults) {
  testing::TempDir dir;
  const auto manifest = make_manifest(dir.path(), 12);
  auto params = rate(0.05);
  params["noise_sd"] = 0.02;
  const auto a = run_dataset(sim("m", dir / "w1", params), manifest, 6, 3, 1, dir / "r1", dir.path());
  const auto b = run_dataset(sim("m", dir / "w8", params), manifest, 6, 3, 8, dir / "r8", dir.path());
  EXPECT_EQ(a.traces, b.traces);
  EXPECT_EQ(a.requests, b.requests);
  EXPECT_EQ(serialize_traces(a.traces), serialize_traces(b.traces));
}

TEST(Dataset, SampleSeedsAreIsolated) {
  testing::TempDir dir;
  auto manifest = make_manifest(dir.path(), 4);
  auto params = rate(0.05);
  params["noise_sd"] = 0.05;
  const auto full = run_dataset(sim("m", dir / "w1", params), manifest, 5, 9, 1, dir / "r1", dir.path());
  manifest.samples.erase(manifest.samples.begin());
  const auto fewer = run_dataset(sim("m", dir / "w2", params), manifest, 5, 9, 1, dir / "r2", dir.path());
  for (const auto& t : fewer.traces.traces) {
    const auto it = std::find_if(full.traces.traces.begin(), full.traces.traces.end(),
                                 [&](const auto& f) { return f.sample_id == t.sample_id; });
    ASSERT_NE(it, full.traces.traces.end());
    EXPECT_EQ(qualities(t, dir / "r2"), qualities(*it, dir / "r1"));
  }
  const auto reseeded = run_dataset(sim("m", dir / "w3", params), manifest, 5, 10, 1, dir / "r3", dir.path());
  EXPECT_NE(qualities(reseeded.traces.traces[0], dir / "r3"), qualities(fewer.traces.traces[0], dir / "r2"));
}

TEST(Dataset, InBandFailureTruncatesTheChain) {
  testing::TempDir dir;
  const auto manifest = make_manifest(dir.path(), 2);
  const auto run = run_dataset(sim("m", dir / "work", rate(0.05), {{"fail_after", 3}}), manifest, 6, 1, 1, dir / "run",
                               dir.path());
  ASSERT_EQ(run.traces.traces.size(), 2u);
  const auto& first = run.traces.traces[0];
  ASSERT_EQ(first.records.size(), 4u);
  EXPECT_EQ(first.ok_count(), 3);
  EXPECT_TRUE(first.failed());
  EXPECT_NE(first.records.back().error.find("injected synthesis failure"), std::string::npos);
  EXPECT_EQ(run.traces.failed_chains(), 2u);
  EXPECT_EQ(first.at(4), nullptr);
  EXPECT_NE(first.at(3), nullptr);
}

TEST(Dataset, CrashedBackendIsReplacedForTheNextChain) {
  testing::TempDir dir;
  const auto manifest = make_manifest(dir.path(), 3);
  auto d = sim("m", dir / "work", rate(0.05), {{"crash_after", 2}});
  d.transport = TransportKind::subprocess_stdio;
  d.launch = std::string(I2D_SIM_BACKEND) + " synthesizer";
  const auto run = run_dataset(d, manifest, 5, 1, 1, dir / "run", dir.path());
  for (const auto& t : run.traces.traces) {
    EXPECT_TRUE(t.failed());
    EXPECT_EQ(t.ok_count(), 2) << t.sample_id;
  }
}

TEST(Swap, IdenticalModelsGiveOverlappingCurves) {
  testing::TempDir dir;
  const auto manifest = make_manifest(dir.path(), 1);
  const auto ex = run_swap(sim("a", dir / "work", rate(0.07)), sim("b", dir / "work", rate(0.07)), manifest.samples[0], 2,
                           6, 5, dir / "run", dir.path());
  EXPECT_EQ(qualities(ex.a_swapped, dir / "run"), qualities(ex.a_original, dir / "run"));
  EXPECT_EQ(qualities(ex.b_swapped, dir / "run"), qualities(ex.b_original, dir / "run"));
  EXPECT_EQ(ex.a_swapped.records[0], ex.a_original.records[0]);
}

TEST(Swap, StrongAndWeakFollowTheClosedForm) {
  using namespace fixtures;
  testing::TempDir dir;
  const auto manifest = make_manifest(dir.path(), 1);
  const int k = 6, n = 10;
  const auto ex = run_swap(sim("strong", dir / "work", rate(kStrongRate, kStrongFloor)), sim("weak", dir / "work", rate(kWeakRate)),
                           manifest.samples[0], k, n, 1, dir / "run", dir.path());
  const auto so = qualities(ex.a_original, dir / "run"), ss = qualities(ex.a_swapped, dir / "run");
  const auto wo = qualities(ex.b_original, dir / "run"), ws = qualities(ex.b_swapped, dir / "run");
  ASSERT_EQ(ss.size(), 10u);
  ASSERT_EQ(ws.size(), 10u);
  // before k the swapped traces are the originals
  for (int j = 0; j < k - 1; ++j) {
    EXPECT_EQ(ss[static_cast<std::size_t>(j)], so[static_cast<std::size_t>(j)]);
    EXPECT_EQ(ws[static_cast<std::size_t>(j)], wo[static_cast<std::size_t>(j)]);
  }
  // weak continues from strong's iteration-5 output: 1 - 5*0.02 - 0.15
  EXPECT_NEAR(ws[5], 0.75, 1e-12);
  EXPECT_NEAR(wo[5], 0.10, 1e-12);
  for (int j = 6; j < n; ++j) EXPECT_NEAR(ws[static_cast<std::size_t>(j)], 0.75 - 0.15 * (j - 5), 1e-12);
  // strong receives quality 0.25 and is held at its floor
  for (int j = 5; j < n; ++j) EXPECT_NEAR(ss[static_cast<std::size_t>(j)], kStrongFloor, 1e-12);
  EXPECT_NEAR(so[5], 0.88, 1e-12);
  EXPECT_NEAR(so[9], 0.80, 1e-12);
}

TEST(Swap, RejectsBadSwapIteration) {
  testing::TempDir dir;
  const auto manifest = make_manifest(dir.path(), 1);
  const auto a = sim("a", dir / "work", rate(0.1)), b = sim("b", dir / "work", rate(0.1));
  EXPECT_THROW(run_swap(a, b, manifest.samples[0], 1, 10, 1, dir / "run", dir.path()), Error);
  EXPECT_THROW(run_swap(a, b, manifest.samples[0], 11, 10, 1, dir / "run", dir.path()), Error);
  EXPECT_THROW(run_swap(a, a, manifest.samples[0], 3, 10, 1, dir / "run", dir.path()), Error);
}

TEST(Traces, JsonRoundTrip) {
  TraceSet set;
  IterationTrace t{"s1", "m1", 3, {}};
  IterationRecord r1;
  r1.iteration = 1;
  r1.wav = "m1/s1/iter01.json";
  r1.hyp_text = "hello there";
  r1.scores = {{"cer", 0.25}, {"sim", 0.5}};
  IterationRecord r2;
  r2.iteration = 2;
  r2.wav = "m1/s1/iter02.json";
  r2.scores = {{"cer", 0.5}};
  r2.missing = {"sim"};
  IterationRecord r3;
  r3.iteration = 3;
  r3.status = RecordStatus::failed;
  r3.error = "timeout: no reply";
  t.records = {r1, r2, r3};
  set.traces.push_back(t);
  const auto text = serialize_traces(set);
  EXPECT_EQ(parse_traces(text), set);
  EXPECT_EQ(serialize_traces(parse_traces(text)), text);
  EXPECT_THROW(parse_traces("{not json}\n"), Error);
}

TEST(RunLock, IsExclusive) {
  testing::TempDir dir;
  {
    RunLock lock(dir.path());
    EXPECT_THROW(RunLock second(dir.path()), Error);
  }
  EXPECT_NO_THROW(RunLock again(dir.path()));
}

}  // namespace
}  // namespace i2d
