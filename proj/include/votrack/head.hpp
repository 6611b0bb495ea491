#pragma once

#include <cmath>

#include "votrack/backbone.hpp"
#include "votrack/ops.hpp"

namespace votrack {

template <class S>
struct PredictionT {
  TensorT<S> scores;  // [A, G, G], sigmoid output
  TensorT<S> regs;    // [4A, G, G], anchor-major (a*4 + component)
};

// Two independent branches over [query || retrieved]: 3x3 -> relu -> 3x3 ->
// relu -> 1x1.  The score projection's bias starts at -log((1-pi)/pi) with
// pi=0.01 so the sigmoid begins near the background rate instead of 0.5.
template <class S>
struct HeadParamsT {
  using T = TensorT<S>;
  T c1_w, c1_b, c2_w, c2_b, c3_w, c3_b;  // center/score branch
  T r1_w, r1_b, r2_w, r2_b, r3_w, r3_b;  // regression branch

  template <class Fn>
  void for_each(Fn&& fn) {
    fn("head.c1_w", c1_w);
    fn("head.c1_b", c1_b);
    fn("head.c2_w", c2_w);
    fn("head.c2_b", c2_b);
    fn("head.c3_w", c3_w);
    fn("head.c3_b", c3_b);
    fn("head.r1_w", r1_w);
    fn("head.r1_b", r1_b);
    fn("head.r2_w", r2_w);
    fn("head.r2_b", r2_b);
    fn("head.r3_w", r3_w);
    fn("head.r3_b", r3_b);
  }
};

template <class S>
HeadParamsT<S> init_head(int cin, int width, int num_anchors, Rng& rng) {
  require(cin >= 1 && width >= 1 && num_anchors >= 1, "head: bad dimensions");
  using namespace init_detail;
  HeadParamsT<S> p;
  p.c1_w = he_conv<S>(rng, width, cin, 3);
  p.c1_b = zero_bias<S>(width);
  p.c2_w = he_conv<S>(rng, width, width, 3);
  p.c2_b = zero_bias<S>(width);
  p.c3_w = out_conv<S>(rng, num_anchors, width, 1);
  p.c3_b = zero_bias<S>(num_anchors);
  const S prior = S(-std::log((1.0 - 0.01) / 0.01));
  for (auto& v : p.c3_b.node()->data) v = prior;
  p.r1_w = he_conv<S>(rng, width, cin, 3);
  p.r1_b = zero_bias<S>(width);
  p.r2_w = he_conv<S>(rng, width, width, 3);
  p.r2_b = zero_bias<S>(width);
  p.r3_w = out_conv<S>(rng, 4 * num_anchors, width, 1);
  p.r3_b = zero_bias<S>(4 * num_anchors);
  return p;
}

template <class S>
PredictionT<S> predict(const TensorT<S>& query, const TensorT<S>& retrieved,
                       const HeadParamsT<S>& p) {
  require(query.rank() == 3 && retrieved.rank() == 3, "predict: want rank-3 maps");
  require(query.dim(1) == retrieved.dim(1) && query.dim(2) == retrieved.dim(2),
          "predict: spatial mismatch " + shape_str(query.shape()) + " vs " +
              shape_str(retrieved.shape()));
  auto x = concat(std::vector<TensorT<S>>{query, retrieved}, 0);
  require(x.dim(0) == p.c1_w.dim(1), "predict: channel mismatch against head parameters");
  PredictionT<S> out;
  auto c = relu(conv2d(x, p.c1_w, p.c1_b, 1, 1));
  c = relu(conv2d(c, p.c2_w, p.c2_b, 1, 1));
  out.scores = sigmoid(conv2d(c, p.c3_w, p.c3_b, 1, 0));
  auto r = relu(conv2d(x, p.r1_w, p.r1_b, 1, 1));
  r = relu(conv2d(r, p.r2_w, p.r2_b, 1, 1));
  out.regs = conv2d(r, p.r3_w, p.r3_b, 1, 0);
  return out;
}

}  // namespace votrack
