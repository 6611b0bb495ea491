#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "votrack/data.hpp"
#include "votrack/memory.hpp"
#include "votrack/model.hpp"

namespace votrack {

struct TrackerConfig {
  double window_weight = 0.3;  // 0: pure argmax over the score map
  bool memory = true;          // false: initial slot only, no writes

  void validate() const {
    require(window_weight >= 0 && window_weight <= 1, "tracker: window weight must be in [0,1]");
  }
};

struct TrackResult {
  BBox box;
  double peak = 0;  // best raw classification score, pre-window
  std::optional<WriteDecision> write;  // empty when no write was attempted
  bool faulted = false;
};

// Raised-cosine spatial prior, 1 at the grid centre and 0 at the edges.
inline std::vector<double> hann2d(int g) {
  require(g >= 1, "hann2d: empty grid");
  constexpr double two_pi = 6.283185307179586;
  std::vector<double> axis(static_cast<std::size_t>(g), 1.0);
  if (g > 1)
    for (int i = 0; i < g; ++i)
      axis[static_cast<std::size_t>(i)] = 0.5 * (1.0 - std::cos(two_pi * i / (g - 1)));
  std::vector<double> w(static_cast<std::size_t>(g) * g);
  for (int iy = 0; iy < g; ++iy)
    for (int ix = 0; ix < g; ++ix)
      w[static_cast<std::size_t>(iy) * g + ix] =
          axis[static_cast<std::size_t>(iy)] * axis[static_cast<std::size_t>(ix)];
  return w;
}

template <class S>
class TrackerT {
 public:
  TrackerT(const ModelConfig& mcfg, const ModelParamsT<S>& params, TrackerConfig tcfg = {})
      : mcfg_(mcfg), tcfg_(tcfg), grid_(mcfg.anchors), params_(&params), mem_(mcfg.policy) {
    mcfg_.validate();
    tcfg_.validate();
    hann_ = hann2d(grid_.grid());
  }

  void init(const Image& frame, const BBox& gt) {
    validate_box(gt, "tracker init");
    require(gt.x1() > 0 && gt.y1() > 0 && gt.x0() < frame.w && gt.y0() < frame.h,
            "tracker init: ground-truth box outside the frame");
    Crop crop = crop_search_region(frame, gt, mcfg_.backbone.input_size, mcfg_.context_factor);
    auto key = extract(to_tensor<S>(crop.image), params_->backbone, mcfg_.backbone, mcfg_.norm);
    auto slot = encode_initial(crop.tf.box_to_crop(gt), key, grid_, params_->value, mcfg_.pos_thr,
                               mcfg_.neg_thr);
    mem_.init(slot.key.detached(), slot.value.detached());
    box_ = gt;
    frame_index_ = 0;
    initialized_ = true;
  }

  TrackResult step(const Image& frame) {
    require(initialized_, "tracker step: init first");
    const int fi = ++frame_index_;
    TrackResult out;
    out.box = box_;
    Crop crop = crop_search_region(frame, box_, mcfg_.backbone.input_size, mcfg_.context_factor);
    try {
      auto fwd = forward_frame(to_tensor<S>(crop.image), mem_.slots(), *params_, mcfg_);
      const auto& sc = fwd.pred.scores.data();
      const auto& rg = fwd.pred.regs.data();
      const int g = grid_.grid(), a = grid_.num_ratios();
      for (const S v : sc) out.peak = std::max(out.peak, static_cast<double>(v));

      // argmax of score * blended window; scan order breaks ties toward the
      // lower flat index
      const double w = tcfg_.window_weight;
      int best = 0;
      double best_v = -1.0;
      for (int ai = 0; ai < a; ++ai)
        for (int iy = 0; iy < g; ++iy)
          for (int ix = 0; ix < g; ++ix) {
            const int flat = grid_.index(ai, iy, ix);
            const double v = static_cast<double>(sc[static_cast<std::size_t>(flat)]) *
                             ((1.0 - w) + w * hann_[static_cast<std::size_t>(iy) * g + ix]);
            if (v > best_v) {
              best_v = v;
              best = flat;
            }
          }

      const int cell = best % (g * g);
      const int ai = best / (g * g);
      std::array<double, 4> t;
      for (int k = 0; k < 4; ++k)
        t[static_cast<std::size_t>(k)] = static_cast<double>(
            rg[static_cast<std::size_t>(ai * 4 + k) * g * g + static_cast<std::size_t>(cell)]);
      out.box = crop.tf.box_to_image(decode(t, grid_.at_flat(best)));

      if (tcfg_.memory) {
        out.write = mem_.maybe_write(fi, out.peak, fwd.features.detached(), [&] {
          return encode_value(fwd.features, fwd.pred.scores, fwd.pred.regs, params_->value)
              .detached();
        });
      }
      box_ = out.box;
    } catch (const numeric_fault& e) {
      // fail-safe: hold the previous estimate and leave memory untouched
      log_warn("tracker frame " + std::to_string(fi) + ": " + e.what() +
               "; keeping previous estimate");
      out.box = box_;
      out.peak = 0;
      out.write.reset();
      out.faulted = true;
    }
    return out;
  }

  const BBox& box() const { return box_; }
  int frame_index() const { return frame_index_; }
  const TrackMemoryT<S>& memory() const { return mem_; }

 private:
  ModelConfig mcfg_;
  TrackerConfig tcfg_;
  AnchorGrid grid_;
  const ModelParamsT<S>* params_;
  TrackMemoryT<S> mem_;
  std::vector<double> hann_;
  BBox box_{};
  int frame_index_ = 0;
  bool initialized_ = false;
};

}  // namespace votrack
