#pragma once

#include <string>
#include <vector>

#include "votrack/anchors.hpp"
#include "votrack/backbone.hpp"
#include "votrack/ops.hpp"

namespace votrack {

// Value encoder: the whole map (foreground and background alike) becomes the
// slot value from [key || scores || regressions].
template <class S>
struct ValueEncoderParamsT {
  using T = TensorT<S>;
  T w1, b1;  // 3x3
  T w2, b2;  // 3x3

  template <class Fn>
  void for_each(Fn&& fn) {
    fn("value.w1", w1);
    fn("value.b1", b1);
    fn("value.w2", w2);
    fn("value.b2", b2);
  }
};

template <class S>
ValueEncoderParamsT<S> init_value_encoder(int ck, int num_anchors, int cv, Rng& rng) {
  using namespace init_detail;
  ValueEncoderParamsT<S> p;
  const int cin = ck + 5 * num_anchors;  // key + scores + 4-vector regressions
  p.w1 = he_conv<S>(rng, cv, cin, 3);
  p.b1 = zero_bias<S>(cv);
  p.w2 = he_conv<S>(rng, cv, cv, 3);
  p.b2 = zero_bias<S>(cv);
  return p;
}

// Channel layout of the encoder input is [key || scores || regs]; the
// regression block is anchor-major, 4 components per anchor. Scores below 0.5
// are zeroed before encoding.
template <class S>
TensorT<S> encode_value(const TensorT<S>& key, const TensorT<S>& scores, const TensorT<S>& regs,
                        const ValueEncoderParamsT<S>& p) {
  require(key.rank() == 3 && scores.rank() == 3 && regs.rank() == 3, "encode_value: bad ranks");
  require(key.dim(1) == scores.dim(1) && key.dim(2) == scores.dim(2) &&
              key.dim(1) == regs.dim(1) && key.dim(2) == regs.dim(2),
          "encode_value: spatial mismatch key" + shape_str(key.shape()) + " scores" +
              shape_str(scores.shape()) + " regs" + shape_str(regs.shape()));
  require(regs.dim(0) == 4 * scores.dim(0),
          "encode_value: regression channels must be 4x score channels");
  require(key.dim(0) + scores.dim(0) + regs.dim(0) == p.w1.dim(1),
          "encode_value: channel mismatch against encoder parameters");
  for (const S v : scores.data())
    require(v >= S(0) && v <= S(1), "encode_value: scores must lie in [0,1]");

  auto gated = threshold_keep(scores, S(0.5));
  auto x = concat(std::vector<TensorT<S>>{key, gated, regs}, 0);
  return conv2d(relu(conv2d(x, p.w1, p.b1, 1, 1)), p.w2, p.b2, 1, 1);
}

// ---- memory proper ----

template <class S>
struct MemorySlotT {
  TensorT<S> key;    // [ck, G, G]
  TensorT<S> value;  // [cv, G, G]
  int frame_index = 0;
  double peak_score = 0;
};

struct MemoryPolicy {
  int capacity = 32;
  int min_interval = 30;
  double write_threshold = 0.7;
};

enum class WriteDecision { written, written_with_eviction, skipped_score, skipped_interval };

inline const char* to_string(WriteDecision d) {
  switch (d) {
    case WriteDecision::written: return "written";
    case WriteDecision::written_with_eviction: return "written_with_eviction";
    case WriteDecision::skipped_score: return "skipped_score";
    case WriteDecision::skipped_interval: return "skipped_interval";
  }
  return "?";
}

// Slot 0 is the ground-truth initial frame and is pinned: it is written once
// at init and never evicted.
template <class S>
class TrackMemoryT {
 public:
  explicit TrackMemoryT(MemoryPolicy policy = {}) : policy_(policy) {
    require(policy.capacity >= 1, "memory: capacity must be >= 1");
    require(policy.min_interval >= 1, "memory: interval must be >= 1");
  }

  void init(TensorT<S> key, TensorT<S> value) {
    slots_.clear();
    slots_.push_back({std::move(key), std::move(value), 0, 1.0});
    last_frame_ = 0;
    last_written_ = 0;
  }

  bool initialized() const { return !slots_.empty(); }
  const std::vector<MemorySlotT<S>>& slots() const { return slots_; }
  const MemoryPolicy& policy() const { return policy_; }
  int last_written() const { return last_written_; }

  // The policy decision alone, with no tensor work.
  WriteDecision decide(int frame_index, double peak_score) const {
    require(initialized(), "memory: not initialized");
    require(frame_index > last_frame_, "memory: frame index must increase (got " +
                                           std::to_string(frame_index) + " after " +
                                           std::to_string(last_frame_) + ")");
    if (peak_score < policy_.write_threshold) return WriteDecision::skipped_score;
    if (frame_index - last_written_ < policy_.min_interval)
      return WriteDecision::skipped_interval;
    return static_cast<std::size_t>(policy_.capacity) == slots_.size()
               ? WriteDecision::written_with_eviction
               : WriteDecision::written;
  }

  // Lazy maker avoids encoding the value when the policy skips the write.
  template <class MakeValue>
  WriteDecision maybe_write(int frame_index, double peak_score, const TensorT<S>& key,
                            MakeValue&& make_value) {
    const WriteDecision d = decide(frame_index, peak_score);
    last_frame_ = frame_index;
    if (d == WriteDecision::skipped_score || d == WriteDecision::skipped_interval) return d;
    if (d == WriteDecision::written_with_eviction)
      slots_.erase(slots_.begin() + 1);  // oldest non-initial
    slots_.push_back({key, make_value(), frame_index, peak_score});
    last_written_ = frame_index;
    return d;
  }

  // Training-time variant: curriculum rollouts store every predicted frame
  // regardless of score or spacing (config switch), still capacity-bound.
  void write_unconditional(int frame_index, TensorT<S> key, TensorT<S> value, double peak_score) {
    require(initialized(), "memory: not initialized");
    require(frame_index > last_frame_, "memory: frame index must increase");
    if (static_cast<std::size_t>(policy_.capacity) == slots_.size())
      slots_.erase(slots_.begin() + 1);
    slots_.push_back({std::move(key), std::move(value), frame_index, peak_score});
    last_frame_ = frame_index;
    last_written_ = frame_index;
  }

 private:
  MemoryPolicy policy_;
  std::vector<MemorySlotT<S>> slots_;
  int last_frame_ = -1;
  int last_written_ = -1;
};

// Initial slot: the hard annotation as a soft map — one-hot scores at the
// assigned positives with their exact displacements.
template <class S>
MemorySlotT<S> encode_initial(const BBox& gt, const TensorT<S>& key, const AnchorGrid& grid,
                              const ValueEncoderParamsT<S>& p, double pos_thr, double neg_thr) {
  const int G = grid.grid();
  require(key.rank() == 3 && key.dim(1) == G && key.dim(2) == G,
          "encode_initial: key/grid mismatch");
  const Labels labels = assign_labels(gt, grid, pos_thr, neg_thr);
  const int A = grid.num_ratios();
  typename TensorT<S>::Data sc(static_cast<std::size_t>(A) * G * G, S(0));
  typename TensorT<S>::Data rg(static_cast<std::size_t>(4 * A) * G * G, S(0));
  for (std::int64_t i = 0; i < grid.total(); ++i) {
    if (labels.cls[static_cast<std::size_t>(i)] != 1) continue;
    sc[static_cast<std::size_t>(i)] = S(1);
    const int a = static_cast<int>(i / (G * G));
    const std::int64_t cell = i % (G * G);
    for (int k = 0; k < 4; ++k)
      rg[static_cast<std::size_t>((std::int64_t(a) * 4 + k) * G * G + cell)] =
          static_cast<S>(labels.reg[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]);
  }
  MemorySlotT<S> slot;
  slot.key = key;
  slot.value = encode_value(key, TensorT<S>({A, G, G}, std::move(sc)),
                            TensorT<S>({4 * A, G, G}, std::move(rg)), p);
  slot.frame_index = 0;
  slot.peak_score = 1.0;
  return slot;
}

}  // namespace votrack
