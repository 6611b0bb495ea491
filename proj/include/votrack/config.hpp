#pragma once

#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "votrack/model.hpp"
#include "votrack/synth.hpp"
#include "votrack/tracker.hpp"
#include "votrack/trainer.hpp"

namespace votrack {

using Json = nlohmann::json;

// Strict object reader: every key must be consumed by a get/child call,
// finish() rejects leftovers. Configs fail loudly on typos instead of
// silently running with defaults.
class StrictReader {
 public:
  StrictReader(const Json& j, std::string path) : j_(&j), path_(std::move(path)) {
    if (!j_->is_object())
      throw data_error("config: " + (path_.empty() ? std::string("root") : path_) +
                       " must be an object");
  }

  template <class T>
  T get(const std::string& key, const T& fallback) {
    seen_.insert(key);
    const auto it = j_->find(key);
    if (it == j_->end()) return fallback;
    try {
      return it->get<T>();
    } catch (const Json::exception& e) {
      throw data_error("config: bad value at " + at(key) + ": " + e.what());
    }
  }

  template <class T>
  void read(const std::string& key, T& out) {
    out = get<T>(key, out);
  }

  bool has(const std::string& key) const { return j_->contains(key); }

  StrictReader child(const std::string& key) {
    seen_.insert(key);
    static const Json empty = Json::object();
    const auto it = j_->find(key);
    return StrictReader(it == j_->end() ? empty : *it, at(key));
  }

  void finish() const {
    std::string unknown;
    for (const auto& [key, value] : j_->items()) {
      (void)value;
      if (!seen_.count(key)) unknown += (unknown.empty() ? "" : ", ") + at(key);
    }
    if (!unknown.empty()) throw data_error("config: unknown key(s): " + unknown);
  }

  std::string at(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const Json* j_;
  std::string path_;
  std::set<std::string> seen_;
};

// ---- model ----

inline Json to_json(const ModelConfig& c) {
  Json j;
  j["input_size"] = c.backbone.input_size;
  j["widths"] = c.backbone.widths;
  j["ck"] = c.backbone.ck;
  j["anchors"] = {{"stride", c.anchors.stride},
                  {"base_frac", c.anchors.base_frac},
                  {"ratios", c.anchors.ratios}};
  j["retrieval"] = {{"mode", to_string(c.retrieval.mode)},
                    {"k", c.retrieval.k},
                    {"heads", c.retrieval.heads},
                    {"attn_width", c.retrieval.attn_width}};
  j["norm"] = {{"mean", c.norm.mean}, {"stdev", c.norm.stdev}};
  j["policy"] = {{"capacity", c.policy.capacity},
                 {"min_interval", c.policy.min_interval},
                 {"write_threshold", c.policy.write_threshold}};
  j["head_width"] = c.head_width;
  j["lambda"] = c.lambda;
  j["pos_thr"] = c.pos_thr;
  j["neg_thr"] = c.neg_thr;
  j["context_factor"] = c.context_factor;
  return j;
}

inline ModelConfig model_config_from_json(const Json& j, const std::string& path = "model") {
  ModelConfig c;
  StrictReader r(j, path);
  r.read("input_size", c.backbone.input_size);
  {
    std::vector<int> widths(c.backbone.widths.begin(), c.backbone.widths.end());
    r.read("widths", widths);
    if (widths.size() != c.backbone.widths.size())
      throw data_error("config: " + r.at("widths") + " must have " +
                       std::to_string(c.backbone.widths.size()) + " entries");
    std::copy(widths.begin(), widths.end(), c.backbone.widths.begin());
  }
  r.read("ck", c.backbone.ck);

  StrictReader ra = r.child("anchors");
  ra.read("stride", c.anchors.stride);
  ra.read("base_frac", c.anchors.base_frac);
  ra.read("ratios", c.anchors.ratios);
  ra.finish();
  c.anchors.input_size = c.backbone.input_size;

  StrictReader rr = r.child("retrieval");
  {
    std::string mode = to_string(c.retrieval.mode);
    rr.read("mode", mode);
    try {
      c.retrieval.mode = parse_retrieval_mode(mode);
    } catch (const contract_error& e) {
      throw data_error("config: " + rr.at("mode") + ": " + e.what());
    }
  }
  rr.read("k", c.retrieval.k);
  rr.read("heads", c.retrieval.heads);
  rr.read("attn_width", c.retrieval.attn_width);
  rr.finish();

  StrictReader rn = r.child("norm");
  {
    std::vector<double> mean(c.norm.mean.begin(), c.norm.mean.end());
    std::vector<double> stdev(c.norm.stdev.begin(), c.norm.stdev.end());
    rn.read("mean", mean);
    rn.read("stdev", stdev);
    if (mean.size() != 3 || stdev.size() != 3)
      throw data_error("config: " + rn.at("mean") + "/stdev must have 3 entries");
    std::copy(mean.begin(), mean.end(), c.norm.mean.begin());
    std::copy(stdev.begin(), stdev.end(), c.norm.stdev.begin());
  }
  rn.finish();

  StrictReader rp = r.child("policy");
  rp.read("capacity", c.policy.capacity);
  rp.read("min_interval", c.policy.min_interval);
  rp.read("write_threshold", c.policy.write_threshold);
  rp.finish();

  r.read("head_width", c.head_width);
  r.read("lambda", c.lambda);
  r.read("pos_thr", c.pos_thr);
  r.read("neg_thr", c.neg_thr);
  r.read("context_factor", c.context_factor);
  r.finish();
  return c;
}

// ---- training ----

inline Json to_json(const TrainConfig& c) {
  return Json{{"iterations", c.iterations},
              {"batch", c.batch},
              {"lr", c.lr},
              {"lr_decay", c.lr_decay},
              {"steps_per_decay", c.steps_per_decay},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"n_start", c.n_start},
              {"n_end", c.n_end},
              {"max_skip", c.max_skip},
              {"augment", c.augment},
              {"jitter_center", c.jitter_center},
              {"jitter_scale", c.jitter_scale},
              {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const Json& j, const std::string& path = "train") {
  TrainConfig c;
  StrictReader r(j, path);
  r.read("iterations", c.iterations);
  r.read("batch", c.batch);
  r.read("lr", c.lr);
  r.read("lr_decay", c.lr_decay);
  r.read("steps_per_decay", c.steps_per_decay);
  r.read("momentum", c.momentum);
  r.read("weight_decay", c.weight_decay);
  r.read("n_start", c.n_start);
  r.read("n_end", c.n_end);
  r.read("max_skip", c.max_skip);
  r.read("augment", c.augment);
  r.read("jitter_center", c.jitter_center);
  r.read("jitter_scale", c.jitter_scale);
  r.read("seed", c.seed);
  r.finish();
  return c;
}

// ---- synthetic data ----

inline Json to_json(const SynthConfig& c) {
  Json occ = Json::array();
  for (const auto& [a, b] : c.occlusions) occ.push_back(Json::array({a, b}));
  return Json{{"width", c.width},
              {"height", c.height},
              {"frames", c.frames},
              {"seed", c.seed},
              {"target_size", c.target_size},
              {"speed", c.speed},
              {"size_pulse", c.size_pulse},
              {"drift_rate", c.drift_rate},
              {"distractors", c.distractors},
              {"distractor_similarity", c.distractor_similarity},
              {"occlusions", occ},
              {"occlusion_cover", c.occlusion_cover},
              {"noise_sigma", c.noise_sigma}};
}

inline SynthConfig synth_config_from_json(const Json& j, const std::string& path = "synth") {
  SynthConfig c;
  StrictReader r(j, path);
  r.read("width", c.width);
  r.read("height", c.height);
  r.read("frames", c.frames);
  r.read("seed", c.seed);
  r.read("target_size", c.target_size);
  r.read("speed", c.speed);
  r.read("size_pulse", c.size_pulse);
  r.read("drift_rate", c.drift_rate);
  r.read("distractors", c.distractors);
  r.read("distractor_similarity", c.distractor_similarity);
  if (r.has("occlusions")) {
    const auto occ = r.get<std::vector<std::vector<int>>>("occlusions", {});
    c.occlusions.clear();
    for (const auto& pair : occ) {
      if (pair.size() != 2)
        throw data_error("config: " + r.at("occlusions") + " entries must be [first, last]");
      c.occlusions.emplace_back(pair[0], pair[1]);
    }
  }
  r.read("occlusion_cover", c.occlusion_cover);
  r.read("noise_sigma", c.noise_sigma);
  r.finish();
  return c;
}

// ---- tracker ----

inline Json to_json(const TrackerConfig& c) {
  return Json{{"window_weight", c.window_weight}, {"memory", c.memory}};
}

inline TrackerConfig tracker_config_from_json(const Json& j, const std::string& path = "tracker") {
  TrackerConfig c;
  StrictReader r(j, path);
  r.read("window_weight", c.window_weight);
  r.read("memory", c.memory);
  r.finish();
  return c;
}

// ---- files and overrides ----

inline Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw data_error("cannot parse " + path + ": " + e.what());
  }
}

inline void save_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write " + path);
  out << j.dump(2) << "\n";
  if (!out) throw data_error("write failed: " + path);
}

// "a.b.c=value" — value parsed as JSON when possible, else taken as a string.
// Creates intermediate objects so overrides work on sparse configs.
inline void apply_override(Json& root, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0)
    throw data_error("override '" + spec + "' must look like key.path=value");
  const std::string path = spec.substr(0, eq);
  const std::string raw = spec.substr(eq + 1);

  Json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw data_error("override '" + spec + "' has an empty path segment");
    if (dot == std::string::npos) {
      Json value = Json::parse(raw, nullptr, false);
      (*node)[key] = value.is_discarded() ? Json(raw) : value;
      return;
    }
    if (!node->contains(key)) (*node)[key] = Json::object();
    node = &(*node)[key];
    if (!node->is_object())
      throw data_error("override '" + spec + "': '" + key + "' is not an object");
    start = dot + 1;
  }
}

}  // namespace votrack
