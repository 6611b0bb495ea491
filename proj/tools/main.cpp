#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "votrack/checkpoint.hpp"
#include "votrack/evalrun.hpp"
#include "votrack/trainer.hpp"

namespace fs = std::filesystem;
using namespace votrack;

// runtime scalar; tests exercise the same templates in double
using RS = float;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out = "out";
  int workers = 1;
};

void add_common(CLI::App* cmd, CommonOpts& c, bool with_workers = true) {
  cmd->add_option("-c,--config", c.config_path, "JSON config file");
  cmd->add_option("--set", c.sets, "override: dotted.key=value (repeatable)");
  cmd->add_option("-o,--out", c.out, "output directory");
  if (with_workers)
    cmd->add_option("-w,--workers", c.workers, "sequence-level worker threads")
        ->check(CLI::PositiveNumber);
}

Json load_run_config(const CommonOpts& c) {
  Json j = c.config_path.empty() ? Json::object() : load_json_file(c.config_path);
  if (!j.is_object()) throw data_error("config root must be an object");
  for (const auto& s : c.sets) apply_override(j, s);
  return j;
}

void deep_merge(Json& base, const Json& patch) {
  if (!patch.is_object() || !base.is_object()) {
    base = patch;
    return;
  }
  for (const auto& [key, value] : patch.items()) {
    if (base.contains(key) && base[key].is_object() && value.is_object())
      deep_merge(base[key], value);
    else
      base[key] = value;
  }
}

struct RunSpec {
  ModelConfig model;
  TrainConfig train;
  TrackerConfig tracker;
  DataSpec data;
};

RunSpec parse_run_spec(const Json& j) {
  RunSpec r;
  StrictReader top(j, "");
  if (top.has("model")) r.model = model_config_from_json(j.at("model"));
  top.child("model");
  if (top.has("train")) r.train = train_config_from_json(j.at("train"));
  top.child("train");
  if (top.has("tracker")) r.tracker = tracker_config_from_json(j.at("tracker"));
  top.child("tracker");
  if (top.has("data")) r.data = data_spec_from_json(j.at("data"));
  top.child("data");
  top.finish();
  return r;
}

Json echo_spec(const RunSpec& r, bool with_train) {
  Json j;
  j["model"] = to_json(r.model);
  if (with_train) j["train"] = to_json(r.train);
  j["tracker"] = to_json(r.tracker);
  j["data"] = to_json(r.data);
  return j;
}

std::vector<Sequence> strip_names(std::vector<NamedSequence> corpus) {
  std::vector<Sequence> seqs;
  seqs.reserve(corpus.size());
  for (auto& ns : corpus) seqs.push_back(std::move(ns.seq));
  return seqs;
}

// ---- train ----

int run_train(const CommonOpts& c, const std::string& resume) {
  const Json j = load_run_config(c);
  RunSpec spec = parse_run_spec(j);

  std::optional<LoadedCheckpoint<RS>> ck;
  if (!resume.empty()) {
    ck = load_checkpoint<RS>(resume);
    if (j.contains("model") && to_json(spec.model) != to_json(ck->cfg))
      throw data_error("resume: model section conflicts with the checkpoint; drop it or retrain");
    spec.model = ck->cfg;
  }

  TrainerT<RS> trainer(spec.model, spec.train, strip_names(build_corpus(spec.data)));
  if (ck)
    trainer.restore_state(std::move(ck->params), ck->iter, ck->lr_scale, std::move(ck->momentum));

  fs::create_directories(c.out);
  save_json_file(c.out + "/config.json", echo_spec(spec, true));
  std::ofstream log(c.out + "/train.log", std::ios::app);
  if (!log) throw data_error("cannot write " + c.out + "/train.log");

  const int every = std::max(1, spec.train.iterations / 50);
  while (trainer.iter() < spec.train.iterations) {
    const StepStats st = trainer.step();
    log << to_log_line(st) << "\n";
    if (st.iter % every == 0 || st.iter + 1 == spec.train.iterations)
      std::cout << to_log_line(st) << "\n" << std::flush;
  }
  log.flush();
  const std::string ckpt = c.out + "/model.ckpt";
  save_checkpoint(ckpt, trainer.model_config(), trainer.params(), trainer.iter(),
                  trainer.lr_scale(), trainer.momentum());
  std::cout << "saved " << ckpt << "\n";
  return 0;
}

// ---- track ----

int run_track(const CommonOpts& c, const std::string& ckpt_path) {
  const Json j = load_run_config(c);
  auto ck = load_checkpoint<RS>(ckpt_path);

  // the checkpoint provides the model; config may override eval-time knobs
  // (retrieval mode/K), never trained shapes
  Json mj = to_json(ck.cfg);
  if (j.contains("model")) deep_merge(mj, j.at("model"));
  Json merged = j;
  merged["model"] = mj;
  RunSpec spec = parse_run_spec(merged);
  spec.model.validate();

  const auto corpus = build_corpus(spec.data);
  const auto runs = track_suite(spec.model, ck.params, spec.tracker, corpus, c.workers);

  fs::create_directories(c.out + "/predictions");
  fs::create_directories(c.out + "/gt");
  for (std::size_t i = 0; i < runs.size(); ++i) {
    write_predictions(c.out + "/predictions/" + runs[i].name + ".txt", runs[i]);
    write_groundtruth(c.out + "/gt/" + runs[i].name + ".txt", corpus[i].seq.boxes);
  }
  save_json_file(c.out + "/config.json", echo_spec(spec, false));

  const EvalReport report = evaluate_runs(runs, corpus);
  std::printf("tracked %zu sequences | success AUC %.4f | precision@20 %.4f | %.1f fps\n",
              runs.size(), report.mean.success_auc, report.mean.precision20, suite_fps(runs));
  return 0;
}

// ---- eval ----

int run_eval(const CommonOpts& c, const std::string& pred_dir, const std::string& gt_dir,
             bool curves) {
  if (!fs::is_directory(pred_dir)) throw data_error("prediction dir not found: " + pred_dir);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(pred_dir))
    if (e.path().extension() == ".txt") files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw data_error("no .txt prediction files in " + pred_dir);

  std::vector<SequenceEval> evals;
  for (const auto& f : files) {
    const SequenceRun run = read_predictions(f);
    const auto gt = read_groundtruth(gt_dir + "/" + run.name + ".txt");
    if (gt.size() != run.boxes.size())
      throw data_error(run.name + ": prediction/ground-truth length mismatch");
    evals.push_back(evaluate_sequence(run.name, run.boxes, gt));
  }
  const EvalReport report = make_report(std::move(evals));

  fs::create_directories(c.out);
  save_json_file(c.out + "/report.json", to_json(report, curves));
  save_json_file(c.out + "/config.json", Json{{"pred", pred_dir}, {"gt", gt_dir}});
  for (const auto& e : report.sequences)
    std::printf("%-16s succ %.4f  prec@20 %.4f  pnorm %.4f  ao %.4f\n", e.name.c_str(),
                e.success_auc, e.precision20, e.pnorm_auc, e.ao);
  const auto& m = report.mean;
  std::printf("%-16s succ %.4f  prec@20 %.4f  pnorm %.4f  ao %.4f  sr50 %.4f  sr75 %.4f\n",
              "mean", m.success_auc, m.precision20, m.pnorm_auc, m.ao, m.sr50, m.sr75);
  return 0;
}

// ---- ablate ----

struct AblationRow {
  std::string mode;
  bool memory = true;
  int k = 0;
  double success_auc = 0, precision20 = 0, fps = 0;
};

Json to_json(const AblationRow& r) {
  return Json{{"mode", r.mode},
              {"memory", r.memory},
              {"k", r.k},
              {"success_auc", r.success_auc},
              {"precision20", r.precision20},
              {"fps", r.fps}};
}

int run_ablate(const CommonOpts& c, const std::vector<std::string>& ckpt_specs,
               std::vector<int> ks, int sequences, int frames, std::uint64_t eval_seed) {
  std::map<std::string, std::string> by_mode;
  for (const auto& s : ckpt_specs) {
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw data_error("--ckpt wants mode=path, got '" + s + "'");
    const std::string mode = s.substr(0, eq);
    parse_retrieval_mode(mode);  // validates the name
    if (!by_mode.emplace(mode, s.substr(eq + 1)).second)
      throw data_error("--ckpt: duplicate mode " + mode);
  }
  if (by_mode.empty()) throw data_error("ablate needs at least one --ckpt mode=path");
  std::sort(ks.begin(), ks.end());

  const Json j = load_run_config(c);
  RunSpec spec = parse_run_spec(j);  // tracker section applies to all rows

  const auto evalset = heldout_eval_set(sequences, frames, eval_seed);
  std::vector<AblationRow> rows;

  auto eval_one = [&](const ModelConfig& cfg, const ModelParamsT<RS>& params, bool memory,
                      const std::string& mode, int k) {
    TrackerConfig tc = spec.tracker;
    tc.memory = memory;
    const auto runs = track_suite(cfg, params, tc, evalset, c.workers);
    const EvalReport rep = evaluate_runs(runs, evalset);
    AblationRow row;
    row.mode = mode;
    row.memory = memory;
    row.k = k;
    row.success_auc = rep.mean.success_auc;
    row.precision20 = rep.mean.precision20;
    row.fps = suite_fps(runs);
    rows.push_back(row);
    std::printf("%-9s memory=%-3s K=%-3d succ %.4f  prec@20 %.4f  %.1f fps\n", mode.c_str(),
                memory ? "on" : "off", k, row.success_auc, row.precision20, row.fps);
    return row;
  };

  const char* canonical[] = {"voting", "topk_mlp", "softmax"};
  std::map<std::string, AblationRow> mem_on, mem_off;
  std::vector<AblationRow> sweep;
  for (const char* mode : canonical) {
    const auto it = by_mode.find(mode);
    if (it == by_mode.end()) continue;
    auto ck = load_checkpoint<RS>(it->second);
    ModelConfig cfg = ck.cfg;
    if (j.contains("model")) {  // eval-time knobs, same contract as track
      Json mj = to_json(cfg);
      deep_merge(mj, j.at("model"));
      cfg = model_config_from_json(mj);
      cfg.validate();
    }
    cfg.retrieval.mode = parse_retrieval_mode(mode);
    mem_on[mode] = eval_one(cfg, ck.params, true, mode, cfg.retrieval.k);
    mem_off[mode] = eval_one(cfg, ck.params, false, mode, cfg.retrieval.k);
    if (std::string(mode) == "voting")
      for (int k : ks) {
        ModelConfig kcfg = cfg;
        kcfg.retrieval.k = k;
        sweep.push_back(eval_one(kcfg, ck.params, true, mode, k));
      }
  }

  Json assertions = Json::array();
  auto assert_on = [&](const std::string& name, bool pass, const std::string& detail) {
    assertions.push_back(Json{{"name", name}, {"pass", pass}, {"detail", detail}});
    std::printf("[%s] %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  };

  char detail[160];
  for (const auto& [mode, on] : mem_on) {
    const auto& off = mem_off.at(mode);
    std::snprintf(detail, sizeof(detail), "AUC %.4f (on) vs %.4f (off)", on.success_auc,
                  off.success_auc);
    assert_on("memory_helps_" + mode, on.success_auc > off.success_auc, detail);
  }
  if (mem_on.count("voting") && mem_on.count("topk_mlp") && mem_on.count("softmax")) {
    const double v = mem_on["voting"].success_auc, t = mem_on["topk_mlp"].success_auc,
                 s = mem_on["softmax"].success_auc;
    std::snprintf(detail, sizeof(detail), "voting %.4f > topk_mlp %.4f > softmax %.4f", v, t, s);
    assert_on("mode_ordering", v > t && t > s, detail);
  }
  if (sweep.size() >= 2) {
    bool auc_ok = true, fps_ok = true;
    for (std::size_t i = 1; i < sweep.size(); ++i) {
      auc_ok = auc_ok && sweep[i].success_auc >= sweep[i - 1].success_auc;
      fps_ok = fps_ok && sweep[i].fps < sweep[i - 1].fps;
    }
    std::string ds = "AUC/fps by K:";
    for (const auto& r : sweep) {
      std::snprintf(detail, sizeof(detail), " K=%d %.4f/%.1f", r.k, r.success_auc, r.fps);
      ds += detail;
    }
    assert_on("k_sweep_auc_nondecreasing", auc_ok, ds);
    assert_on("k_sweep_fps_decreasing", fps_ok, ds);
  }

  fs::create_directories(c.out);
  Json out;
  out["rows"] = Json::array();
  for (const auto& r : rows) out["rows"].push_back(to_json(r));
  out["assertions"] = assertions;
  save_json_file(c.out + "/ablation.json", out);
  Json echo = echo_spec(spec, false);
  echo["ablate"] = Json{{"checkpoints", by_mode},
                        {"k_sweep", ks},
                        {"sequences", sequences},
                        {"frames", frames},
                        {"eval_seed", eval_seed}};
  save_json_file(c.out + "/config.json", echo);
  return 0;
}

// ---- bench ----

int run_bench(const CommonOpts& c, const std::string& ckpt_path, int frames) {
  auto ck = load_checkpoint<RS>(ckpt_path);
  SynthConfig sc;
  sc.frames = frames;
  sc.seed = 1234;
  const std::vector<NamedSequence> seqs{{"bench", generate_synthetic(sc)}};

  fs::create_directories(c.out);
  Json out = Json::array();
  for (const char* mode : {"voting", "topk_mlp", "softmax"}) {
    for (int k : {1, 4, 16}) {
      ModelConfig cfg = ck.cfg;
      cfg.retrieval.mode = parse_retrieval_mode(mode);
      cfg.retrieval.k = k;
      const auto runs = track_suite(cfg, ck.params, TrackerConfig{}, seqs, 1);
      const double fps = suite_fps(runs);
      std::printf("%-9s K=%-3d %.1f fps\n", mode, k, fps);
      out.push_back(Json{{"mode", mode}, {"k", k}, {"fps", fps}});
    }
  }
  save_json_file(c.out + "/bench.json", out);
  save_json_file(c.out + "/config.json",
                 Json{{"checkpoint", ckpt_path}, {"frames", frames}, {"seed", sc.seed}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"part-level memory tracker: train / track / eval / ablate / bench"};
  app.require_subcommand(1);

  CommonOpts train_c, track_c, eval_c, ablate_c, bench_c;
  std::string resume, track_ckpt, pred_dir, gt_dir, bench_ckpt;
  std::vector<std::string> ablate_ckpts;
  std::vector<int> ks{1, 4, 16};
  int sequences = 20, eval_frames = 60, bench_frames = 30;
  std::uint64_t eval_seed = 9000;
  bool no_curves = false;

  auto* train = app.add_subcommand("train", "train a model on synthetic or disk sequences");
  add_common(train, train_c, false);
  train->add_option("--resume", resume, "continue from a checkpoint");

  auto* track = app.add_subcommand("track", "run the tracker and write prediction files");
  add_common(track, track_c);
  track->add_option("--ckpt", track_ckpt, "model checkpoint")->required();

  auto* eval = app.add_subcommand("eval", "score prediction files against ground truth");
  add_common(eval, eval_c, false);
  eval->add_option("--pred", pred_dir, "directory of prediction .txt files")->required();
  eval->add_option("--gt", gt_dir, "directory of ground-truth .txt files")->required();
  eval->add_flag("--no-curves", no_curves, "omit curve samples from report.json");

  auto* ablate = app.add_subcommand("ablate", "compare modes, memory on/off, and K");
  add_common(ablate, ablate_c);
  ablate->add_option("--ckpt", ablate_ckpts, "mode=path (repeatable)")->required();
  ablate->add_option("--k", ks, "K values for the sweep");
  ablate->add_option("--sequences", sequences, "held-out sequence count");
  ablate->add_option("--frames", eval_frames, "frames per held-out sequence");
  ablate->add_option("--eval-seed", eval_seed, "held-out generator seed");

  auto* bench = app.add_subcommand("bench", "throughput per mode and K");
  add_common(bench, bench_c, false);
  bench->add_option("--ckpt", bench_ckpt, "model checkpoint")->required();
  bench->add_option("--frames", bench_frames, "benchmark sequence length");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage errors exit 1; --help exits 0
  }

  try {
    if (*train) return run_train(train_c, resume);
    if (*track) return run_track(track_c, track_ckpt);
    if (*eval) return run_eval(eval_c, pred_dir, gt_dir, !no_curves);
    if (*ablate)
      return run_ablate(ablate_c, ablate_ckpts, ks, sequences, eval_frames, eval_seed);
    if (*bench) return run_bench(bench_c, bench_ckpt, bench_frames);
  } catch (const numeric_fault& e) {
    std::cerr << "numeric fault: " << e.what() << "\n";
    return 3;
  } catch (const data_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const contract_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
