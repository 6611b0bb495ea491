#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <unordered_map>
#include <vector>

#include "votrack/data.hpp"
#include "votrack/model.hpp"

namespace votrack {

struct TrainConfig {
  int iterations = 2000;
  int batch = 4;
  double lr = 1e-3;
  double lr_decay = 0.05;    // multiplied in smoothly over each decay span
  int steps_per_decay = 0;   // 0: iterations / 5
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int n_start = 2, n_end = 5;  // curriculum clip lengths
  int max_skip = 100;
  bool augment = true;
  double jitter_center = 0.08, jitter_scale = 0.12;
  std::uint64_t seed = 1;

  void validate() const {
    require(iterations >= 1 && batch >= 1, "train: iterations and batch must be positive");
    require(lr >= 0 && lr_decay > 0 && lr_decay <= 1, "train: bad learning-rate schedule");
    require(momentum >= 0 && momentum < 1, "train: momentum must be in [0,1)");
    require(weight_decay >= 0, "train: weight decay must be non-negative");
    require(n_start >= 2 && n_end >= n_start, "train: curriculum must start at N >= 2");
    require(max_skip >= 1, "train: max skip must be positive");
  }

  int decay_steps() const {
    return steps_per_decay > 0 ? steps_per_decay : std::max(1, iterations / 5);
  }
  double lr_at(int k) const {
    return lr * std::pow(lr_decay, static_cast<double>(k) / decay_steps());
  }
  // clip length grows one frame per fifth of the run and then saturates
  int curriculum_n(int k) const {
    const int phase = std::max(1, iterations / 5);
    return std::min(n_start + k / phase, n_end);
  }
};

struct StepStats {
  int iter = 0;
  int n = 0;  // clip length used
  double lr = 0;
  double loss = 0;
  double lc = 0, lb = 0;  // per-frame means over the batch
  std::size_t pos = 0;    // positive anchors over the batch
  bool aborted = false;
};

// one machine-readable line per iteration
inline std::string to_log_line(const StepStats& st) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "{\"iter\":%d,\"n\":%d,\"lr\":%.10g,\"loss\":%.10g,\"lc\":%.10g,"
                "\"lb\":%.10g,\"pos\":%zu,\"aborted\":%s}",
                st.iter, st.n, st.lr, st.loss, st.lc, st.lb, st.pos,
                st.aborted ? "true" : "false");
  return buf;
}

template <class S>
class TrainerT {
 public:
  using Params = ModelParamsT<S>;
  using Data = typename TensorT<S>::Data;

  TrainerT(const ModelConfig& mcfg, const TrainConfig& tcfg, std::vector<Sequence> corpus)
      : mcfg_(mcfg), tcfg_(tcfg), grid_(mcfg.anchors), corpus_(std::move(corpus)) {
    mcfg_.validate();
    tcfg_.validate();
    require(!corpus_.empty(), "trainer: empty training corpus");
    for (const auto& seq : corpus_) validate_sequence(seq);
    Rng rng(tcfg_.seed);
    params_ = init_model<S>(mcfg_, rng);
  }

  const ModelConfig& model_config() const { return mcfg_; }
  const TrainConfig& train_config() const { return tcfg_; }
  Params& params() { return params_; }
  int iter() const { return iter_; }
  double lr_scale() const { return lr_scale_; }
  const std::unordered_map<std::string, Data>& momentum() const { return momentum_; }

  void restore_state(Params params, int iter, double lr_scale,
                     std::unordered_map<std::string, Data> momentum) {
    params_ = std::move(params);
    iter_ = iter;
    lr_scale_ = lr_scale;
    momentum_ = std::move(momentum);
  }

  // Forward pass over one clip: ground-truth initial slot, then per instance
  // frame retrieve/predict/compare and an unconditional memory write of the
  // prediction, so later frames train against self-produced memories.
  TensorT<S> rollout(const std::vector<ClipFrame>& clip, LossReport* report = nullptr) {
    require(clip.size() >= 2, "rollout: clip needs an initial and an instance frame");
    auto feat0 = extract(to_tensor<S>(clip[0].crop), params_.backbone, mcfg_.backbone, mcfg_.norm);
    std::vector<MemorySlotT<S>> slots{encode_initial(clip[0].box, feat0, grid_, params_.value,
                                                     mcfg_.pos_thr, mcfg_.neg_thr)};
    std::vector<FrameLossT<S>> frames;
    for (std::size_t n = 1; n < clip.size(); ++n) {
      auto fwd = forward_frame(to_tensor<S>(clip[n].crop), slots, params_, mcfg_);
      frames.push_back(frame_loss(fwd.pred, clip[n].labels, grid_, mcfg_.lambda));
      MemorySlotT<S> slot;
      slot.key = fwd.features;
      slot.value = encode_value(fwd.features, fwd.pred.scores, fwd.pred.regs, params_.value);
      slot.frame_index = clip[n].frame_index;
      slot.peak_score = peak_of(fwd.pred.scores);
      slots.push_back(std::move(slot));
    }
    return total_loss(frames, mcfg_.lambda, report);
  }

  // Deterministic per-iteration stream: step k is a pure function of
  // (seed, k), so a restored checkpoint continues the exact run.
  Rng iteration_rng(int k) const {
    return Rng(tcfg_.seed ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(k) + 1)));
  }

  std::vector<ClipFrame> sample_clip(int n, Rng& rng) {
    SampleConfig scfg;
    scfg.out_size = mcfg_.backbone.input_size;
    scfg.context_factor = mcfg_.context_factor;
    scfg.max_skip = tcfg_.max_skip;
    scfg.pos_thr = mcfg_.pos_thr;
    scfg.neg_thr = mcfg_.neg_thr;
    scfg.jitter_center = tcfg_.jitter_center;
    scfg.jitter_scale = tcfg_.jitter_scale;
    scfg.augment_frames = tcfg_.augment;
    for (int attempt = 0; attempt < 100; ++attempt) {
      const auto& seq = corpus_[rng.uniform_int(static_cast<int>(corpus_.size()))];
      if (auto clip = sample_training_clip(seq, n, grid_, scfg, rng)) return std::move(*clip);
    }
    throw contract_error("trainer: no sequence admits a clip of length " + std::to_string(n));
  }

  StepStats step() {
    const int k = iter_;
    StepStats st;
    st.iter = k;
    st.n = tcfg_.curriculum_n(k);
    st.lr = tcfg_.lr_at(k) * lr_scale_;
    Rng rng = iteration_rng(k);

    std::vector<LossReport> reports;
    try {
      TensorT<S> batch = TensorT<S>::zeros({1});
      for (int b = 0; b < tcfg_.batch; ++b) {
        LossReport rep;
        batch = add(batch, rollout(sample_clip(st.n, rng), &rep));
        reports.push_back(std::move(rep));
      }
      auto gm = backward(batch);
      check_grads_finite(gm);
      st.loss = batch.value();
      apply_update(gm, st.lr);
    } catch (const numeric_fault& e) {
      lr_scale_ *= 0.5;
      log_warn("step " + std::to_string(k) + " aborted (" + e.what() +
               "); halving lr scale to " + std::to_string(lr_scale_));
      st.aborted = true;
      ++iter_;
      return st;
    }

    int frames = 0;
    for (const auto& rep : reports) {
      for (double v : rep.lc) st.lc += v;
      for (double v : rep.lb) st.lb += v;
      for (std::size_t p : rep.num_pos) st.pos += p;
      frames += static_cast<int>(rep.lc.size());
    }
    if (frames > 0) {
      st.lc /= frames;
      st.lb /= frames;
    }
    ++iter_;
    return st;
  }

  // momentum SGD with uniform weight decay; parameters outside the graph
  // (inactive retrieval branches) are left untouched
  void apply_update(GradMapT<S>& gm, double lr) {
    params_.for_each_param([&](const std::string& name, TensorT<S>& p) {
      const Data* g = gm.find(p);
      if (!g) return;
      auto& buf = momentum_[name];
      if (buf.empty()) buf.assign(static_cast<std::size_t>(p.numel()), S(0));
      auto& data = p.node()->data;
      const S mu = static_cast<S>(tcfg_.momentum), wd = static_cast<S>(tcfg_.weight_decay);
      for (std::size_t i = 0; i < data.size(); ++i) {
        buf[i] = mu * buf[i] + (*g)[i] + wd * data[i];
        data[i] -= static_cast<S>(lr) * buf[i];
      }
    });
  }

 private:
  static double peak_of(const TensorT<S>& scores) {
    double peak = 0;
    for (const S v : scores.data()) peak = std::max(peak, static_cast<double>(v));
    return peak;
  }

  void check_grads_finite(GradMapT<S>& gm) {
    params_.for_each_param([&](const std::string& name, TensorT<S>& p) {
      const Data* g = gm.find(p);
      if (!g) return;
      for (const S v : *g)
        if (!std::isfinite(static_cast<double>(v)))
          throw numeric_fault("non-finite gradient in " + name);
    });
  }

  ModelConfig mcfg_;
  TrainConfig tcfg_;
  AnchorGrid grid_;
  std::vector<Sequence> corpus_;
  Params params_;
  std::unordered_map<std::string, Data> momentum_;
  int iter_ = 0;
  double lr_scale_ = 1.0;
};

}  // namespace votrack
