// i2d: iterative synthesis evaluation harness.
//
//   i2d run        --config cfg.json [overrides]
//   i2d aggregate  --out RUN [--methods ...] [--truncation ...]
//   i2d correlate  --out RUN --annotations a.csv [--sweep 1-10]
//   i2d swap       --config cfg.json [--swap-at K]
//   i2d report     --out RUN
//   i2d pipeline   --config cfg.json          (run + aggregate + correlate)
//   i2d validate   --config cfg.json [--probe]
//   i2d gen-fixture KIND --out DIR
//
// Exit codes: 0 ok, 1 configuration/input error, 2 partial failure.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "i2d/i2d.hpp"

namespace {

struct Overrides {
  std::string config;
  std::string manifest;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> max_iter;
  std::optional<std::size_t> parallelism;
  std::string methods;
  std::optional<int> swap_at;
  std::string sweep;
  std::string annotations;
  std::string filter_config;
  std::string truncation;
  bool lenient = false;
};

void add_run_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "run configuration (JSON)");
  cmd->add_option("--manifest", o.manifest, "dataset manifest (JSONL)");
  cmd->add_option("--out", o.out, "run directory");
  cmd->add_option("--seed", o.seed, "run seed");
  cmd->add_option("--max-iter", o.max_iter, "number of iterations N");
  cmd->add_option("--parallelism", o.parallelism, "concurrent chains per model");
  cmd->add_option("--methods", o.methods, "aggregation methods, comma separated");
  cmd->add_option("--truncation", o.truncation, "none | pessimistic-fill | drop-sample");
  cmd->add_flag("--lenient", o.lenient, "warn on unknown manifest fields");
}

void add_correlate_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--annotations", o.annotations, "annotation CSV");
  cmd->add_option("--filter-config", o.filter_config, "outlier filter thresholds (JSON)");
  cmd->add_option("--sweep", o.sweep, "max-iteration values N' for the sweep, e.g. 1-10");
}

i2d::RunConfig build_config(const Overrides& o) {
  i2d::RunConfig c;
  if (!o.config.empty()) c = i2d::load_run_config(o.config);
  if (!o.manifest.empty()) c.manifest = o.manifest;
  if (!o.out.empty()) c.out = o.out;
  if (o.seed) c.seed = *o.seed;
  if (o.max_iter) c.max_iteration = *o.max_iter;
  if (o.parallelism) c.parallelism = *o.parallelism;
  if (!o.methods.empty()) c.methods = i2d::parse_methods(i2d::split(o.methods, ','));
  if (!o.truncation.empty()) c.truncation = i2d::parse_truncation_policy(o.truncation);
  if (o.swap_at) {
    if (!c.swap) c.swap = i2d::SwapSettings{};
    c.swap->swap_iteration = *o.swap_at;
  }
  if (!o.sweep.empty()) c.sweep = i2d::parse_int_list(o.sweep);
  if (!o.annotations.empty()) c.annotations = o.annotations;
  if (!o.filter_config.empty()) c.filter = i2d::load_outlier_filter(o.filter_config);
  if (o.lenient) c.lenient = true;
  return c;
}

/// swap settings without explicit models fall back to the two synthesizers
void complete_swap(i2d::RunConfig& c) {
  if (!c.swap || !c.swap->model_a.empty()) return;
  const auto synth = c.synthesizers();
  if (synth.size() == 2) {
    c.swap->model_a = synth[0]->backend_id;
    c.swap->model_b = synth[1]->backend_id;
  }
}

spdlog::level::level_enum log_level_from_env() {
  const char* v = std::getenv("I2D_LOG");
  if (!v || !*v) return spdlog::level::info;
  const auto level = spdlog::level::from_str(v);
  // from_str maps unknown names to off; only honour "off" when asked for
  return level == spdlog::level::off && std::string(v) != "off" ? spdlog::level::info : level;
}

i2d::LogSink make_sink() {
  return [](i2d::LogLevel level, const std::string& msg) {
    switch (level) {
      case i2d::LogLevel::debug: spdlog::debug(msg); break;
      case i2d::LogLevel::info: spdlog::info(msg); break;
      case i2d::LogLevel::warn: spdlog::warn(msg); break;
    }
  };
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("i2d");
  logger->set_pattern("i2d: %l: %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(log_level_from_env());
  const auto sink = make_sink();

  CLI::App app{"Iterative synthesis evaluation harness"};
  app.require_subcommand(1);
  Overrides o;

  auto* run = app.add_subcommand("run", "synthesize and score every chain");
  add_run_flags(run, o);

  auto* pipeline = app.add_subcommand("pipeline", "run, aggregate and correlate in one go");
  add_run_flags(pipeline, o);
  add_correlate_flags(pipeline, o);

  auto* aggregate = app.add_subcommand("aggregate", "collapse per-iteration series into aggregate scores");
  aggregate->add_option("--out", o.out, "run directory")->required();
  aggregate->add_option("--methods", o.methods, "aggregation methods, comma separated");
  aggregate->add_option("--truncation", o.truncation, "none | pessimistic-fill | drop-sample");
  std::string series_file;
  aggregate->add_option("--series", series_file, "aggregate a CSV of model_id,metric,iteration,value instead of a run");

  auto* correlate = app.add_subcommand("correlate", "correlate objective scores with human ratings");
  correlate->add_option("--config", o.config, "run configuration (JSON)");
  correlate->add_option("--out", o.out, "run directory (or output directory with --scores)");
  correlate->add_option("--methods", o.methods, "aggregation methods, comma separated");
  correlate->add_option("--truncation", o.truncation, "none | pessimistic-fill | drop-sample");
  add_correlate_flags(correlate, o);
  std::string level, scores_file, scores_metric, dimension = "naturalness";
  std::optional<int> human_iter;
  correlate->add_option("--level", level, "utterance | system | both");
  correlate->add_option("--human-iter", human_iter, "iteration whose human ratings are the system-level reference");
  correlate->add_option("--scores", scores_file, "per-model scores CSV (model_id,metric,value) instead of a run");
  correlate->add_option("--metric", scores_metric, "metric column to use with --scores");
  correlate->add_option("--dimension", dimension, "subjective dimension to use with --scores");

  auto* swap = app.add_subcommand("swap", "cross-model reference swap");
  add_run_flags(swap, o);
  swap->add_option("--swap-at", o.swap_at, "iteration k at which references are exchanged");

  auto* report = app.add_subcommand("report", "tables and plot-ready CSVs from an aggregated run");
  report->add_option("--out", o.out, "run directory")->required();

  auto* validate = app.add_subcommand("validate", "lint a config and its manifest");
  add_run_flags(validate, o);
  add_correlate_flags(validate, o);
  bool probe = false;
  validate->add_flag("--probe", probe, "also handshake with every backend");

  auto* gen = app.add_subcommand("gen-fixture", "write a simulated dataset");
  std::string kind;
  std::string sim_backend;
  std::uint64_t fixture_seed = 1;
  std::size_t fixture_parallelism = 1;
  gen->add_option("kind", kind, "saturation | swap | emotion | table3 | annotation-qc")->required();
  gen->add_option("--out", o.out, "directory to fill")->required();
  gen->add_option("--seed", fixture_seed, "seed written into the fixture config");
  gen->add_option("--parallelism", fixture_parallelism, "parallelism written into the fixture config");
  gen->add_option("--sim-backend", sim_backend, "path to i2d-sim-backend; default is the in-process simulator");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : i2d::kExitConfig;
  }

  try {
    if (*run) {
      const auto outcome = i2d::cmd_run(build_config(o), sink);
      spdlog::info("{} chains, {} failed", outcome.chains, outcome.failed_chains);
      return outcome.exit_code;
    }
    if (*pipeline) return i2d::cmd_pipeline(build_config(o), sink);
    if (*aggregate) {
      if (!series_file.empty()) {
        const auto series = i2d::parse_series_csv(i2d::read_file(series_file));
        std::vector<std::string> names;
        for (const auto& [key, _] : series)
          if (std::find(names.begin(), names.end(), key.second) == names.end()) names.push_back(key.second);
        std::sort(names.begin(), names.end());
        const auto methods = o.methods.empty() ? i2d::RunConfig{}.methods : i2d::parse_methods(i2d::split(o.methods, ','));
        const auto entries = i2d::aggregate_series(series, names, methods);
        i2d::write_file(i2d::fs::path(o.out) / "aggregates.json",
                        i2d::serialize_aggregates(entries, methods, i2d::TruncationPolicy::none));
        return i2d::kExitOk;
      }
      i2d::AggregateOptions opts;
      if (!o.methods.empty()) opts.methods = i2d::parse_methods(i2d::split(o.methods, ','));
      if (!o.truncation.empty()) opts.truncation = i2d::parse_truncation_policy(o.truncation);
      return i2d::cmd_aggregate(o.out, opts, sink);
    }
    if (*correlate) {
      const auto c = build_config(o);
      if (!scores_file.empty()) {
        if (o.out.empty()) throw i2d::Error(i2d::ErrorCode::config, "--out is required");
        if (!c.annotations) throw i2d::Error(i2d::ErrorCode::config, "--annotations is required");
        auto dim = i2d::try_parse_dimension(dimension);
        if (!dim) throw i2d::Error(i2d::ErrorCode::config, "unknown dimension '" + dimension + "'");
        i2d::ScoreFileOptions so{scores_file, scores_metric, *c.annotations, *dim, human_iter.value_or(1), c.filter};
        i2d::cmd_correlate_scores(so, o.out, sink);
        return i2d::kExitOk;
      }
      if (c.out.empty()) throw i2d::Error(i2d::ErrorCode::config, "--out is required");
      if (!c.annotations) throw i2d::Error(i2d::ErrorCode::config, "--annotations is required");
      i2d::CorrelateOptions co{*c.annotations, c.filter, level.empty() ? c.level : i2d::parse_correlation_level(level),
                               human_iter.value_or(c.human_iteration), c.sweep, std::nullopt, std::nullopt};
      if (!o.config.empty() || !o.methods.empty()) co.methods = c.methods;
      if (!o.config.empty() || !o.truncation.empty()) co.truncation = c.truncation;
      i2d::cmd_correlate(c.out, co, sink);
      return i2d::kExitOk;
    }
    if (*swap) {
      auto c = build_config(o);
      complete_swap(c);
      return i2d::cmd_swap(c, sink).exit_code;
    }
    if (*report) return i2d::cmd_report(o.out, sink);
    if (*validate) {
      for (const auto& note : i2d::cmd_validate(build_config(o), {probe})) std::cout << note << "\n";
      std::cout << "ok\n";
      return i2d::kExitOk;
    }
    if (*gen) {
      i2d::fixtures::FixtureOptions fo;
      fo.seed = fixture_seed;
      fo.parallelism = fixture_parallelism;
      if (!sim_backend.empty()) fo.sim_backend = i2d::fs::absolute(sim_backend);
      i2d::fixtures::write_fixture(kind, o.out, fo);
      return i2d::kExitOk;
    }
  } catch (const i2d::Error& e) {
    spdlog::error(e.what());
    return i2d::kExitConfig;
  } catch (const std::exception& e) {
    spdlog::error(e.what());
    return i2d::kExitConfig;
  }
  return i2d::kExitConfig;
}
