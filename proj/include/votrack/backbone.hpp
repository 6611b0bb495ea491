#pragma once

#include <array>
#include <string>
#include <vector>

#include "votrack/ops.hpp"

namespace votrack {

// Four stride-2 stages -> output stride 16. The last two stages are projected
// through 1x1 bottlenecks (the shallower one with stride, the deeper without)
// and concatenated into the shared query/key embedding.
struct BackboneConfig {
  int input_size = 256;
  std::array<int, 4> widths = {16, 32, 48, 64};
  int ck = 64;  // embedding channels; split evenly across the two bottlenecks

  static constexpr int stride = 16;
  int grid() const { return input_size / stride; }

  void validate() const {
    require(input_size > 0 && input_size % stride == 0,
            "backbone: input size must be a positive multiple of " + std::to_string(stride));
    require(ck > 0 && ck % 2 == 0, "backbone: ck must be positive and even");
    for (int w : widths) require(w > 0, "backbone: non-positive stage width");
  }
};

// Per-channel input normalization, measured on the training corpus and stored
// with the checkpoint.
struct NormStats {
  std::array<double, 3> mean = {0.45, 0.45, 0.45};
  std::array<double, 3> stdev = {0.25, 0.25, 0.25};
};

template <class S>
struct BackboneParamsT {
  using T = TensorT<S>;
  struct Stage {
    T down_w, down_b;  // 3x3 stride 2
    T res_w, res_b;    // 3x3 stride 1, residual
  };
  std::array<Stage, 4> stages;
  T bn3_w, bn3_b;  // 1x1 stride 2 from stage 3
  T bn4_w, bn4_b;  // 1x1 stride 1 from stage 4

  template <class Fn>
  void for_each(Fn&& fn) {
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const std::string p = "backbone.stage" + std::to_string(i + 1);
      fn(p + ".down_w", stages[i].down_w);
      fn(p + ".down_b", stages[i].down_b);
      fn(p + ".res_w", stages[i].res_w);
      fn(p + ".res_b", stages[i].res_b);
    }
    fn("backbone.bn3_w", bn3_w);
    fn("backbone.bn3_b", bn3_b);
    fn("backbone.bn4_w", bn4_w);
    fn("backbone.bn4_b", bn4_b);
  }
};

namespace init_detail {

template <class S>
TensorT<S> he_conv(Rng& rng, int cout, int cin, int k) {
  const double std = std::sqrt(2.0 / (cin * k * k));
  auto t = TensorT<S>::randn({cout, cin, k, k}, rng, static_cast<S>(std));
  t.node()->requires_grad = true;
  return t;
}

template <class S>
TensorT<S> he_linear(Rng& rng, int dout, int din) {
  const double std = std::sqrt(2.0 / din);
  auto t = TensorT<S>::randn({dout, din}, rng, static_cast<S>(std));
  t.node()->requires_grad = true;
  return t;
}

template <class S>
TensorT<S> zero_bias(int n) {
  auto t = TensorT<S>::zeros({n});
  t.node()->requires_grad = true;
  return t;
}

// Final prediction projections start near zero so the first updates are driven
// by the targets, not by He-scale noise amplified through the loss sum.
template <class S>
TensorT<S> out_conv(Rng& rng, int cout, int cin, int k) {
  auto t = TensorT<S>::randn({cout, cin, k, k}, rng, static_cast<S>(0.01));
  t.node()->requires_grad = true;
  return t;
}

}  // namespace init_detail

template <class S>
BackboneParamsT<S> init_backbone(const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  using namespace init_detail;
  BackboneParamsT<S> p;
  int prev = 3;
  for (std::size_t i = 0; i < 4; ++i) {
    const int w = cfg.widths[i];
    p.stages[i].down_w = he_conv<S>(rng, w, prev, 3);
    p.stages[i].down_b = zero_bias<S>(w);
    p.stages[i].res_w = he_conv<S>(rng, w, w, 3);
    p.stages[i].res_b = zero_bias<S>(w);
    prev = w;
  }
  p.bn3_w = he_conv<S>(rng, cfg.ck / 2, cfg.widths[2], 1);
  p.bn3_b = zero_bias<S>(cfg.ck / 2);
  p.bn4_w = he_conv<S>(rng, cfg.ck / 2, cfg.widths[3], 1);
  p.bn4_b = zero_bias<S>(cfg.ck / 2);
  return p;
}

// frame: [3, input, input] in [0,1] -> [ck, grid, grid]
template <class S>
TensorT<S> extract(const TensorT<S>& frame, const BackboneParamsT<S>& p,
                   const BackboneConfig& cfg, const NormStats& norm) {
  require(frame.rank() == 3 && frame.dim(0) == 3 && frame.dim(1) == cfg.input_size &&
              frame.dim(2) == cfg.input_size,
          "extract: expected [3," + std::to_string(cfg.input_size) + "," +
              std::to_string(cfg.input_size) + "], got " + shape_str(frame.shape()));

  typename TensorT<S>::Data mean(3), inv(3);
  for (int c = 0; c < 3; ++c) {
    mean[static_cast<std::size_t>(c)] = static_cast<S>(norm.mean[static_cast<std::size_t>(c)]);
    require(norm.stdev[static_cast<std::size_t>(c)] > 0, "extract: non-positive norm stdev");
    inv[static_cast<std::size_t>(c)] = static_cast<S>(1.0 / norm.stdev[static_cast<std::size_t>(c)]);
  }
  const Shape is = frame.shape();
  auto x = mul(sub(frame, broadcast_to(TensorT<S>({3}, mean), is)),
               broadcast_to(TensorT<S>({3}, inv), is));

  TensorT<S> s3;  // stage-3 output, tapped for the strided bottleneck
  for (std::size_t i = 0; i < 4; ++i) {
    x = relu(conv2d(x, p.stages[i].down_w, p.stages[i].down_b, 2, 1));
    x = relu(add(x, conv2d(x, p.stages[i].res_w, p.stages[i].res_b, 1, 1)));
    if (i == 2) s3 = x;
  }
  auto a = conv2d(s3, p.bn3_w, p.bn3_b, 2, 0);  // with stride
  auto b = conv2d(x, p.bn4_w, p.bn4_b, 1, 0);   // without stride
  return concat(std::vector<TensorT<S>>{a, b}, 0);
}

}  // namespace votrack
