#pragma once

// Iterative synthesis: every output becomes the next reference while the
// target text stays fixed. Retained outputs live under
//   <run_dir>/<model_id>/<sample_id>/iterNN<ext>
// and swap experiments under
//   <run_dir>/swap/<model_id>/{original,swapped}/<sample_id>/iterNN<ext>

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "i2d/backend_pool.hpp"
#include "i2d/error.hpp"
#include "i2d/manifest.hpp"
#include "i2d/protocol.hpp"
#include "i2d/util.hpp"

namespace i2d {

enum class RecordStatus { ok, failed };

struct IterationRecord {
  int iteration = 1;
  std::string wav;  // relative to the run directory
  std::optional<std::string> hyp_text;
  std::map<std::string, double> scores;
  std::vector<std::string> missing;  // metrics that could not be computed
  RecordStatus status = RecordStatus::ok;
  std::string error;

  bool ok() const { return status == RecordStatus::ok; }
  bool operator==(const IterationRecord&) const = default;
};

struct IterationTrace {
  std::string sample_id;
  std::string model_id;
  int max_iteration = 0;
  std::vector<IterationRecord> records;

  bool failed() const { return !records.empty() && !records.back().ok(); }
  /// Number of successful iterations.
  int ok_count() const {
    return static_cast<int>(std::count_if(records.begin(), records.end(), [](const auto& r) { return r.ok(); }));
  }
  const IterationRecord* at(int iteration) const {
    if (iteration < 1 || iteration > static_cast<int>(records.size())) return nullptr;
    const auto& r = records[static_cast<std::size_t>(iteration - 1)];
    return r.ok() ? &r : nullptr;
  }
  bool operator==(const IterationTrace&) const = default;
};

struct TraceSet {
  std::vector<IterationTrace> traces;

  /// Canonical order: model_id, then sample_id.
  void sort() {
    std::stable_sort(traces.begin(), traces.end(), [](const auto& a, const auto& b) {
      return std::tie(a.model_id, a.sample_id) < std::tie(b.model_id, b.sample_id);
    });
  }
  std::vector<std::string> model_ids() const {
    std::vector<std::string> ids;
    for (const auto& t : traces)
      if (std::find(ids.begin(), ids.end(), t.model_id) == ids.end()) ids.push_back(t.model_id);
    std::sort(ids.begin(), ids.end());
    return ids;
  }
  std::size_t record_count() const {
    std::size_t n = 0;
    for (const auto& t : traces) n += t.records.size();
    return n;
  }
  std::size_t failed_chains() const {
    return static_cast<std::size_t>(std::count_if(traces.begin(), traces.end(), [](const auto& t) { return t.failed(); }));
  }
  bool operator==(const TraceSet&) const = default;
};

/// One synthesis call as issued, for the audit log.
struct RequestLogEntry {
  std::string model_id;
  std::string sample_id;
  int iteration = 0;
  std::string nonce;
  SynthesisRequest request;  // ref_wav as logged (run-relative or manifest string)
  bool operator==(const RequestLogEntry&) const = default;
};

/// Where a chain keeps its outputs and how it resolves manifest paths.
struct ChainStorage {
  fs::path run_dir;       // retained outputs go below this
  fs::path output_root;   // relative to run_dir, e.g. "m01" or "swap/m01/original"
  fs::path manifest_dir;  // base for relative ref_wav paths in the manifest

  fs::path resolve_manifest_path(const std::string& p) const {
    fs::path path(p);
    return path.is_absolute() || manifest_dir.empty() ? path : manifest_dir / path;
  }
  std::string relative_output(const std::string& sample_id, int iteration, const std::string& ext) const {
    return (output_root / sample_id / ("iter" + zero_pad(iteration, 2) + ext)).generic_string();
  }
};

namespace detail {

inline std::string chain_nonce(const std::string& root, const std::string& sample_id, int iteration) {
  return root + "/" + sample_id + "/" + std::to_string(iteration);
}

struct ChainState {
  fs::path ref_wav_abs;
  std::string ref_wav_logged;
  std::string ref_text;
};

/// Runs iterations [first, last] of one chain, appending to `trace`.
/// Returns false when the chain failed.
inline bool extend_chain(BackendHandle& handle, const SampleTriplet& triplet, int first, int last, std::uint64_t seed,
                         const ChainStorage& storage, ChainState state, IterationTrace& trace,
                         std::vector<RequestLogEntry>* log) {
  for (int j = first; j <= last; ++j) {
    IterationRecord record;
    record.iteration = j;
    SynthesisRequest req{state.ref_wav_abs.string(), state.ref_text, triplet.target_text,
                         iteration_seed(seed, triplet.sample_id, j)};
    const std::string nonce = chain_nonce(storage.output_root.generic_string(), triplet.sample_id, j);
    if (log) {
      SynthesisRequest logged = req;
      logged.ref_wav = state.ref_wav_logged;
      log->push_back({trace.model_id, triplet.sample_id, j, nonce, std::move(logged)});
    }
    try {
      auto resp = handle.synthesize(req, nonce);
      const fs::path produced(resp.wav);
      if (!fs::exists(produced)) throw Error(ErrorCode::protocol, "backend output not found: " + resp.wav);
      const std::string rel = storage.relative_output(triplet.sample_id, j, produced.extension().string());
      const fs::path retained = storage.run_dir / rel;
      fs::create_directories(retained.parent_path());
      fs::copy_file(produced, retained, fs::copy_options::overwrite_existing);
      record.wav = rel;
      record.hyp_text = resp.hyp_text;
      trace.records.push_back(std::move(record));
      state.ref_wav_abs = retained;
      state.ref_wav_logged = rel;
      state.ref_text = triplet.target_text;
    } catch (const std::exception& e) {
      record.status = RecordStatus::failed;
      record.error = e.what();
      trace.records.push_back(std::move(record));
      return false;
    }
  }
  return true;
}

}  // namespace detail

/// Iterative synthesis of one sample. Iteration 1 uses the manifest's
/// reference audio and transcript; every later iteration uses the previous
/// output as reference audio and the target text as its transcript. A backend
/// failure truncates the trace with a failed record; nothing is thrown.
inline IterationTrace run_chain(BackendHandle& handle, const SampleTriplet& triplet, int max_iteration,
                                std::uint64_t seed, const ChainStorage& storage,
                                std::vector<RequestLogEntry>* log = nullptr) {
  if (max_iteration < 1) throw Error(ErrorCode::precondition, "max_iteration must be >= 1");
  IterationTrace trace{triplet.sample_id, handle.descriptor().backend_id, max_iteration, {}};
  detail::ChainState state{storage.resolve_manifest_path(triplet.ref_wav), triplet.ref_wav, triplet.ref_text};
  detail::extend_chain(handle, triplet, 1, max_iteration, seed, storage, std::move(state), trace, log);
  return trace;
}

struct DatasetRun {
  TraceSet traces;
  std::vector<RequestLogEntry> requests;  // sample order, then iteration
};

/// Runs every chain of `manifest` against one synthesizer with up to
/// `parallelism` concurrent chains. Output order does not depend on
/// scheduling.
inline DatasetRun run_dataset(HandlePool& pool, const DatasetManifest& manifest, int max_iteration, std::uint64_t seed,
                              std::size_t parallelism, const fs::path& run_dir, const fs::path& manifest_dir = {}) {
  if (parallelism < 1) throw Error(ErrorCode::precondition, "parallelism must be >= 1");
  if (max_iteration < 1) throw Error(ErrorCode::precondition, "max_iteration must be >= 1");
  const std::string model_id = pool.descriptor().backend_id;
  const std::size_t n = manifest.samples.size();
  std::vector<IterationTrace> traces(n);
  std::vector<std::vector<RequestLogEntry>> logs(n);
  std::atomic<std::size_t> next{0};
  ChainStorage storage{run_dir, model_id, manifest_dir};

  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      const auto& triplet = manifest.samples[i];
      try {
        auto lease = pool.acquire();
        traces[i] = run_chain(*lease, triplet, max_iteration, seed, storage, &logs[i]);
      } catch (const std::exception& e) {
        IterationRecord failed;
        failed.status = RecordStatus::failed;
        failed.error = e.what();
        traces[i] = IterationTrace{triplet.sample_id, model_id, max_iteration, {failed}};
      }
    }
  };
  const std::size_t threads = std::min(parallelism, std::max<std::size_t>(n, 1));
  std::vector<std::thread> pool_threads;
  for (std::size_t t = 1; t < threads; ++t) pool_threads.emplace_back(worker);
  worker();
  for (auto& t : pool_threads) t.join();

  DatasetRun run;
  run.traces.traces = std::move(traces);
  for (auto& l : logs) run.requests.insert(run.requests.end(), l.begin(), l.end());
  run.traces.sort();
  return run;
}

inline DatasetRun run_dataset(const BackendDescriptor& model, const DatasetManifest& manifest, int max_iteration,
                              std::uint64_t seed, std::size_t parallelism, const fs::path& run_dir,
                              const fs::path& manifest_dir = {}) {
  HandlePool pool(model, parallelism);
  return run_dataset(pool, manifest, max_iteration, seed, parallelism, run_dir, manifest_dir);
}

// ---------------------------------------------------------------------------
// Cross-model reference swap

struct SwapExperiment {
  std::string model_a;
  std::string model_b;
  int swap_iteration = 0;
  IterationTrace a_original;
  IterationTrace b_original;
  IterationTrace a_swapped;
  IterationTrace b_swapped;
};

/// Runs both models normally, then reruns each from iteration k with the
/// other model's iteration k-1 output as reference audio. Records 1..k-1 of
/// the swapped traces are the original ones.
inline SwapExperiment run_swap(HandlePool& pool_a, HandlePool& pool_b, const SampleTriplet& triplet, int swap_iteration,
                               int max_iteration, std::uint64_t seed, const fs::path& run_dir,
                               const fs::path& manifest_dir = {}, std::vector<RequestLogEntry>* log = nullptr) {
  if (swap_iteration < 2 || swap_iteration > max_iteration)
    throw Error(ErrorCode::precondition, "swap iteration must satisfy 2 <= k <= max_iteration");
  const std::string a = pool_a.descriptor().backend_id;
  const std::string b = pool_b.descriptor().backend_id;
  if (a == b) throw Error(ErrorCode::precondition, "swap requires two distinct backends");

  auto storage_for = [&](const std::string& model, const char* variant) {
    return ChainStorage{run_dir, fs::path("swap") / model / variant, manifest_dir};
  };

  SwapExperiment ex{a, b, swap_iteration, {}, {}, {}, {}};
  {
    auto lease = pool_a.acquire();
    ex.a_original = run_chain(*lease, triplet, max_iteration, seed, storage_for(a, "original"), log);
  }
  {
    auto lease = pool_b.acquire();
    ex.b_original = run_chain(*lease, triplet, max_iteration, seed, storage_for(b, "original"), log);
  }

  auto swapped = [&](HandlePool& own_pool, const IterationTrace& own, const IterationTrace& other,
                     const std::string& model) {
    IterationTrace trace{triplet.sample_id, model, max_iteration, {}};
    const int prefix = swap_iteration - 1;
    for (int j = 1; j <= prefix && j <= static_cast<int>(own.records.size()); ++j) {
      trace.records.push_back(own.records[static_cast<std::size_t>(j - 1)]);
      if (!trace.records.back().ok()) return trace;
    }
    if (static_cast<int>(trace.records.size()) < prefix) return trace;
    const IterationRecord* source = other.at(prefix);
    if (!source) {
      IterationRecord failed;
      failed.iteration = swap_iteration;
      failed.status = RecordStatus::failed;
      failed.error = "swap source unavailable: other chain failed before iteration " + std::to_string(prefix);
      trace.records.push_back(std::move(failed));
      return trace;
    }
    auto lease = own_pool.acquire();
    detail::ChainState state{run_dir / source->wav, source->wav, triplet.target_text};
    detail::extend_chain(*lease, triplet, swap_iteration, max_iteration, seed, storage_for(model, "swapped"),
                         std::move(state), trace, log);
    return trace;
  };
  ex.a_swapped = swapped(pool_a, ex.a_original, ex.b_original, a);
  ex.b_swapped = swapped(pool_b, ex.b_original, ex.a_original, b);
  return ex;
}

inline SwapExperiment run_swap(const BackendDescriptor& model_a, const BackendDescriptor& model_b,
                               const SampleTriplet& triplet, int swap_iteration, int max_iteration, std::uint64_t seed,
                               const fs::path& run_dir, const fs::path& manifest_dir = {}) {
  HandlePool pa(model_a, 1), pb(model_b, 1);
  return run_swap(pa, pb, triplet, swap_iteration, max_iteration, seed, run_dir, manifest_dir);
}

// ---------------------------------------------------------------------------
// Run directory guard

/// Exclusive lock on a run directory for the lifetime of the object.
class RunLock {
 public:
  explicit RunLock(const fs::path& run_dir) : path_(run_dir / "run.lock") {
    fs::create_directories(run_dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY | O_CLOEXEC, 0644);
    if (fd_ < 0)
      throw Error(ErrorCode::io, "run directory is locked by another invocation (remove " + path_.string() +
                                     " if stale)");
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;
  ~RunLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }

 private:
  fs::path path_;
  int fd_ = -1;
};

// ---------------------------------------------------------------------------
// traces.jsonl / requests.jsonl

inline nlohmann::ordered_json to_json(const IterationRecord& r) {
  nlohmann::ordered_json j;
  j["iteration"] = r.iteration;
  j["status"] = r.ok() ? "ok" : "failed";
  if (r.ok()) {
    j["wav"] = r.wav;
    j["hyp_text"] = r.hyp_text ? nlohmann::ordered_json(*r.hyp_text) : nlohmann::ordered_json(nullptr);
    nlohmann::ordered_json scores = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.scores) scores[k] = round_sig9(v);
    j["scores"] = std::move(scores);
    if (!r.missing.empty()) j["missing"] = r.missing;
  } else {
    j["error"] = r.error;
  }
  return j;
}

inline nlohmann::ordered_json to_json(const IterationTrace& t) {
  nlohmann::ordered_json j;
  j["model_id"] = t.model_id;
  j["sample_id"] = t.sample_id;
  j["max_iteration"] = t.max_iteration;
  j["status"] = t.failed() ? "failed" : "ok";
  auto records = nlohmann::ordered_json::array();
  for (const auto& r : t.records) records.push_back(to_json(r));
  j["records"] = std::move(records);
  return j;
}

inline IterationTrace trace_from_json(const nlohmann::json& j) {
  IterationTrace t;
  t.model_id = j.at("model_id").get<std::string>();
  t.sample_id = j.at("sample_id").get<std::string>();
  t.max_iteration = j.at("max_iteration").get<int>();
  for (const auto& rj : j.at("records")) {
    IterationRecord r;
    r.iteration = rj.at("iteration").get<int>();
    r.status = rj.at("status").get<std::string>() == "ok" ? RecordStatus::ok : RecordStatus::failed;
    if (r.ok()) {
      r.wav = rj.at("wav").get<std::string>();
      if (auto h = rj.find("hyp_text"); h != rj.end() && !h->is_null()) r.hyp_text = h->get<std::string>();
      if (auto s = rj.find("scores"); s != rj.end()) r.scores = s->get<std::map<std::string, double>>();
      if (auto m = rj.find("missing"); m != rj.end()) r.missing = m->get<std::vector<std::string>>();
    } else {
      r.error = rj.value("error", std::string{});
    }
    t.records.push_back(std::move(r));
  }
  return t;
}

inline std::string serialize_traces(const TraceSet& set) {
  std::string out;
  for (const auto& t : set.traces) out += to_json(t).dump() + "\n";
  return out;
}

inline TraceSet parse_traces(std::string_view text) {
  TraceSet set;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    try {
      set.traces.push_back(trace_from_json(nlohmann::json::parse(lines[i])));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::parse, "traces line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return set;
}

inline std::string serialize_requests(const std::vector<RequestLogEntry>& log) {
  std::string out;
  for (const auto& e : log) {
    nlohmann::ordered_json j;
    j["model_id"] = e.model_id;
    j["sample_id"] = e.sample_id;
    j["iteration"] = e.iteration;
    j["nonce"] = e.nonce;
    j["ref_wav"] = e.request.ref_wav;
    j["ref_text"] = e.request.ref_text;
    j["text"] = e.request.text;
    j["seed"] = e.request.seed;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace i2d
