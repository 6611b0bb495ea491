#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "votrack/config.hpp"
#include "votrack/metrics.hpp"
#include "votrack/synth.hpp"
#include "votrack/tracker.hpp"

namespace votrack {

// ---- corpus specification ----

struct DataSpec {
  std::string kind = "synth";  // "synth" | "disk"
  SynthConfig synth;           // base; sequence i uses seed synth.seed + i
  int count = 8;               // synth only
  std::string dir;             // disk only: directory of sequence directories
};

inline Json to_json(const DataSpec& d) {
  return Json{{"kind", d.kind}, {"synth", to_json(d.synth)}, {"count", d.count}, {"dir", d.dir}};
}

inline DataSpec data_spec_from_json(const Json& j, const std::string& path = "data") {
  DataSpec d;
  StrictReader r(j, path);
  r.read("kind", d.kind);
  if (d.kind != "synth" && d.kind != "disk")
    throw data_error("config: " + r.at("kind") + " must be synth or disk");
  if (r.has("synth")) d.synth = synth_config_from_json(j.at("synth"), r.at("synth"));
  r.child("synth");
  r.read("count", d.count);
  r.read("dir", d.dir);
  r.finish();
  if (d.kind == "synth" && d.count < 1)
    throw data_error("config: " + r.at("count") + " must be >= 1");
  if (d.kind == "disk" && d.dir.empty())
    throw data_error("config: " + r.at("dir") + " required for disk data");
  return d;
}

struct NamedSequence {
  std::string name;
  Sequence seq;
};

inline std::vector<NamedSequence> build_corpus(const DataSpec& spec) {
  std::vector<NamedSequence> out;
  if (spec.kind == "synth") {
    for (int i = 0; i < spec.count; ++i) {
      SynthConfig c = spec.synth;
      c.seed = spec.synth.seed + static_cast<std::uint64_t>(i);
      char name[32];
      std::snprintf(name, sizeof(name), "synth_%03d", i);
      out.push_back({name, generate_synthetic(c)});
    }
    return out;
  }
  namespace fs = std::filesystem;
  if (!fs::is_directory(spec.dir)) throw data_error("data dir not found: " + spec.dir);
  std::vector<std::string> dirs;
  for (const auto& e : fs::directory_iterator(spec.dir))
    if (e.is_directory()) dirs.push_back(e.path().string());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw data_error("no sequence directories under " + spec.dir);
  for (const auto& d : dirs) out.push_back({fs::path(d).filename().string(), load_otb_sequence(d)});
  return out;
}

// Held-out evaluation set: appearance drift, a mid-sequence occlusion, and
// look-alike distractors, with geometry varied per sequence.
inline std::vector<NamedSequence> heldout_eval_set(int count, int frames, std::uint64_t base_seed) {
  std::vector<NamedSequence> out;
  for (int i = 0; i < count; ++i) {
    SynthConfig c;
    c.frames = frames;
    c.seed = base_seed + static_cast<std::uint64_t>(i);
    c.width = 200 + 16 * (i % 4);
    c.height = 160 + 12 * (i % 3);
    c.target_size = 30 + 3 * (i % 5);
    c.speed = 2.0 + 0.4 * (i % 4);
    c.drift_rate = 0.008;
    c.distractors = 5;
    c.distractor_similarity = 0.93;
    const int mid = frames / 2;
    c.occlusions = {{mid, mid + 5}};
    char name[32];
    std::snprintf(name, sizeof(name), "heldout_%03d", i);
    out.push_back({name, generate_synthetic(c)});
  }
  return out;
}

// ---- running the tracker over sequences ----

struct SequenceRun {
  std::string name;
  std::vector<BBox> boxes;    // one per frame; frame 0 is the given box
  std::vector<double> peaks;  // frame 0 reported as 1
  double seconds = 0;
  int faults = 0;
};

template <class S>
SequenceRun run_tracker_on(const ModelConfig& cfg, const ModelParamsT<S>& params,
                           const TrackerConfig& tcfg, const NamedSequence& ns) {
  validate_sequence(ns.seq);
  SequenceRun run;
  run.name = ns.name;
  const auto t0 = std::chrono::steady_clock::now();
  TrackerT<S> tracker(cfg, params, tcfg);
  tracker.init(ns.seq.frames[0], ns.seq.boxes[0]);
  run.boxes.push_back(ns.seq.boxes[0]);
  run.peaks.push_back(1.0);
  for (std::size_t f = 1; f < ns.seq.size(); ++f) {
    const TrackResult r = tracker.step(ns.seq.frames[f]);
    run.boxes.push_back(r.box);
    run.peaks.push_back(r.peak);
    if (r.faulted) ++run.faults;
  }
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

template <class Fn>
void parallel_for(int n, int workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  const int used = std::min(workers, n);
  pool.reserve(static_cast<std::size_t>(used));
  for (int t = 0; t < used; ++t)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& th : pool) th.join();
}

// Sequence-level parallelism; outputs are stored by index, so the result is
// independent of the worker count.
template <class S>
std::vector<SequenceRun> track_suite(const ModelConfig& cfg, const ModelParamsT<S>& params,
                                     const TrackerConfig& tcfg,
                                     const std::vector<NamedSequence>& seqs, int workers) {
  std::vector<SequenceRun> runs(seqs.size());
  std::exception_ptr fail;
  std::mutex fail_mu;
  parallel_for(static_cast<int>(seqs.size()), workers, [&](int i) {
    try {
      runs[static_cast<std::size_t>(i)] =
          run_tracker_on(cfg, params, tcfg, seqs[static_cast<std::size_t>(i)]);
    } catch (...) {
      std::lock_guard<std::mutex> lock(fail_mu);
      if (!fail) fail = std::current_exception();
    }
  });
  if (fail) std::rethrow_exception(fail);
  return runs;
}

inline EvalReport evaluate_runs(const std::vector<SequenceRun>& runs,
                                const std::vector<NamedSequence>& seqs) {
  require(runs.size() == seqs.size(), "evaluate_runs: run/sequence count mismatch");
  std::vector<SequenceEval> evals;
  for (std::size_t i = 0; i < runs.size(); ++i)
    evals.push_back(evaluate_sequence(runs[i].name, runs[i].boxes, seqs[i].seq.boxes));
  return make_report(std::move(evals));
}

inline double suite_fps(const std::vector<SequenceRun>& runs) {
  double frames = 0, seconds = 0;
  for (const auto& r : runs) {
    frames += static_cast<double>(r.boxes.size()) - 1;  // init frame costs no step
    seconds += r.seconds;
  }
  return seconds > 0 ? frames / seconds : 0.0;
}

// ---- prediction and ground-truth files ----

inline void write_predictions(const std::string& path, const SequenceRun& run) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write " + path);
  char line[192];
  for (std::size_t f = 0; f < run.boxes.size(); ++f) {
    const BBox& b = run.boxes[f];
    std::snprintf(line, sizeof(line), "%zu, %.6f, %.6f, %.6f, %.6f, %.6f\n", f, b.x0(), b.y0(),
                  b.w, b.h, run.peaks[f]);
    out << line;
  }
  if (!out) throw data_error("write failed: " + path);
}

inline SequenceRun read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open " + path);
  SequenceRun run;
  run.name = std::filesystem::path(path).stem().string();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    long f = 0;
    double x, y, w, h, s;
    if (std::sscanf(line.c_str(), "%ld , %lf , %lf , %lf , %lf , %lf", &f, &x, &y, &w, &h, &s) != 6)
      throw data_error(path + ":" + std::to_string(lineno) + ": bad prediction line");
    run.boxes.push_back(BBox::from_tlwh(x, y, w, h));
    run.peaks.push_back(s);
  }
  if (run.boxes.empty()) throw data_error(path + ": empty prediction file");
  return run;
}

inline void write_groundtruth(const std::string& path, const std::vector<BBox>& boxes) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write " + path);
  char line[160];
  for (const BBox& b : boxes) {
    std::snprintf(line, sizeof(line), "%.6f,%.6f,%.6f,%.6f\n", b.x0(), b.y0(), b.w, b.h);
    out << line;
  }
  if (!out) throw data_error("write failed: " + path);
}

inline std::vector<BBox> read_groundtruth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open " + path);
  std::vector<BBox> boxes;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    boxes.push_back(parse_otb_line(line, lineno, path));
  }
  if (boxes.empty()) throw data_error(path + ": empty ground-truth file");
  return boxes;
}

// ---- report emission ----

inline Json to_json(const Curve& c) {
  return Json{{"thresholds", c.thresholds}, {"values", c.values}};
}

inline Json to_json(const SequenceEval& e, bool curves) {
  Json j{{"name", e.name},          {"frames", e.frames}, {"success_auc", e.success_auc},
         {"precision20", e.precision20}, {"pnorm_auc", e.pnorm_auc}, {"ao", e.ao},
         {"sr50", e.sr50},          {"sr75", e.sr75}};
  if (curves) {
    j["success_curve"] = to_json(e.success);
    j["precision_curve"] = to_json(e.precision);
    j["pnorm_curve"] = to_json(e.pnorm);
  }
  return j;
}

inline Json to_json(const EvalReport& r, bool curves = true) {
  Json seqs = Json::array();
  for (const auto& e : r.sequences) seqs.push_back(to_json(e, curves));
  return Json{{"sequences", seqs}, {"mean", to_json(r.mean, curves)}};
}

}  // namespace votrack
