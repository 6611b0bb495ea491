#pragma once

#include <cstdint>
#include <string>

#include "votrack/anchors.hpp"
#include "votrack/backbone.hpp"
#include "votrack/head.hpp"
#include "votrack/loss.hpp"
#include "votrack/memory.hpp"
#include "votrack/retrieval.hpp"

namespace votrack {

// The value channel count C_v is tied to the key width C_k: voting tokens are
// [value || query] so this keeps the token split symmetric, and head input is
// [query || retrieved] = 2*C_k either way.
struct ModelConfig {
  BackboneConfig backbone;
  AnchorConfig anchors;
  RetrievalConfig retrieval;
  NormStats norm;
  MemoryPolicy policy;
  int head_width = 64;
  double lambda = 1.0;
  double pos_thr = 0.6;
  double neg_thr = 0.3;
  double context_factor = 2.0;  // search-region inflation; shared by training crops and tracking

  int cv() const { return backbone.ck; }

  void validate() const {
    backbone.validate();
    retrieval.validate();
    require(anchors.input_size == backbone.input_size,
            "model: anchor/backbone input size mismatch");
    require(anchors.stride == BackboneConfig::stride, "model: anchor/backbone stride mismatch");
    require(head_width >= 1, "model: head width must be positive");
    require(lambda >= 0, "model: lambda must be non-negative");
    require(neg_thr >= 0 && neg_thr < pos_thr && pos_thr <= 1, "model: bad label thresholds");
    require(context_factor > 0, "model: context factor must be positive");
  }
};

template <class S>
struct ModelParamsT {
  BackboneParamsT<S> backbone;
  ValueEncoderParamsT<S> value;
  RetrievalParamsT<S> retrieval;
  HeadParamsT<S> head;

  template <class Fn>
  void for_each_param(Fn&& fn) {
    backbone.for_each(fn);
    value.for_each(fn);
    retrieval.for_each(fn);
    head.for_each(fn);
  }

  std::int64_t param_count() {
    std::int64_t n = 0;
    for_each_param([&](const std::string&, TensorT<S>& t) { n += t.numel(); });
    return n;
  }
};

template <class S>
ModelParamsT<S> init_model(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  const AnchorGrid grid(cfg.anchors);
  ModelParamsT<S> p;
  p.backbone = init_backbone<S>(cfg.backbone, rng);
  p.value = init_value_encoder<S>(cfg.backbone.ck, grid.num_ratios(), cfg.cv(), rng);
  p.retrieval = init_retrieval<S>(cfg.backbone.ck, cfg.cv(), cfg.retrieval, rng);
  p.head = init_head<S>(cfg.backbone.ck + cfg.cv(), cfg.head_width, grid.num_ratios(), rng);
  return p;
}

template <class S>
struct FrameForwardT {
  TensorT<S> features;  // [ck, G, G]; query for this frame, key if written
  PredictionT<S> pred;
};

template <class S>
FrameForwardT<S> forward_frame(const TensorT<S>& crop, const std::vector<MemorySlotT<S>>& slots,
                               const ModelParamsT<S>& params, const ModelConfig& cfg) {
  FrameForwardT<S> out;
  out.features = extract(crop, params.backbone, cfg.backbone, cfg.norm);
  auto retrieved = retrieve(out.features, slots, params.retrieval, cfg.retrieval);
  out.pred = predict(out.features, retrieved, params.head);
  return out;
}

}  // namespace votrack
