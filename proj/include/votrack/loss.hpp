#pragma once

#include <cstdint>
#include <vector>

#include "votrack/anchors.hpp"
#include "votrack/head.hpp"
#include "votrack/ops.hpp"
#include "votrack/retrieval.hpp"

namespace votrack {

struct AnchorSets {
  std::vector<std::int64_t> pos;
  std::vector<std::int64_t> neg;  // hard negatives, |neg| == |pos|
};

// S_pos = labeled positives; S_neg = the |S_pos| highest-scoring anchors among
// labeled negatives (hard negatives).  Ignore-labeled anchors join neither.
template <class S>
AnchorSets build_sets(const Labels& labels, const typename TensorT<S>::Data& scores) {
  require(scores.size() == labels.cls.size(), "build_sets: score/label size mismatch");
  AnchorSets sets;
  std::vector<std::int64_t> neg_pool;
  for (std::size_t i = 0; i < labels.cls.size(); ++i) {
    if (labels.cls[i] == 1) sets.pos.push_back(static_cast<std::int64_t>(i));
    else if (labels.cls[i] == 0) neg_pool.push_back(static_cast<std::int64_t>(i));
  }
  require(!sets.pos.empty(), "build_sets: no positive anchors (all-ignore label map?)");
  std::vector<S> neg_scores(neg_pool.size());
  for (std::size_t j = 0; j < neg_pool.size(); ++j)
    neg_scores[j] = scores[static_cast<std::size_t>(neg_pool[j])];
  const int want = static_cast<int>(std::min(sets.pos.size(), neg_pool.size()));
  if (want > 0)
    for (std::int64_t j : select_topk(neg_scores, want))
      sets.neg.push_back(neg_pool[static_cast<std::size_t>(j)]);
  return sets;
}

// Focal center loss, sign-flipped so perfect predictions give 0:
//   L_c = -[ sum_pos (1-x)^2 log x + sum_neg x^2 log(1-x) ]
template <class S>
TensorT<S> center_loss(const TensorT<S>& scores, const std::vector<std::int64_t>& pos,
                       const std::vector<std::int64_t>& neg) {
  const S eps = S(1e-7);
  auto x = clamp(reshape(scores, {static_cast<int>(scores.numel())}), eps, S(1) - eps);
  auto acc = TensorT<S>::zeros({1});
  if (!pos.empty()) {
    auto xp = take(x, pos);
    auto one_minus = scale(add_scalar(xp, S(-1)), S(-1));
    acc = add(acc, sum(mul(mul(one_minus, one_minus), votrack::log(xp))));
  }
  if (!neg.empty()) {
    auto xn = take(x, neg);
    auto one_minus = scale(add_scalar(xn, S(-1)), S(-1));
    acc = add(acc, sum(mul(mul(xn, xn), votrack::log(one_minus))));
  }
  return scale(acc, S(-1));
}

// Smooth-L1 over the 4 encoded components of every positive anchor.  The
// regression map is anchor-major: channel a*4+k.
template <class S>
TensorT<S> regression_loss(const TensorT<S>& regs, const Labels& labels,
                           const std::vector<std::int64_t>& pos, const AnchorGrid& grid) {
  require(!pos.empty(), "regression_loss: empty positive set");
  const int g2 = grid.grid() * grid.grid();
  require(static_cast<std::int64_t>(regs.numel()) == 4 * grid.total(),
          "regression_loss: map size mismatch");
  std::vector<std::int64_t> idx;
  typename TensorT<S>::Data target;
  idx.reserve(pos.size() * 4);
  target.reserve(pos.size() * 4);
  for (std::int64_t i : pos) {
    const std::int64_t a = i / g2, cell = i % g2;
    for (int k = 0; k < 4; ++k) {
      idx.push_back((a * 4 + k) * g2 + cell);
      target.push_back(
          static_cast<S>(labels.reg[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]));
    }
  }
  auto flat = reshape(regs, {static_cast<int>(regs.numel())});
  const int m = static_cast<int>(target.size());
  auto diff = sub(take(flat, idx), TensorT<S>({m}, std::move(target)));
  return sum(smooth_l1(diff));
}

template <class S>
struct FrameLossT {
  TensorT<S> loss;  // L_c + lambda * L_b, scalar graph node
  double lc = 0, lb = 0;
  std::size_t num_pos = 0, num_neg = 0;
};

template <class S>
FrameLossT<S> frame_loss(const PredictionT<S>& pred, const Labels& labels,
                         const AnchorGrid& grid, double lambda) {
  const auto sets = build_sets<S>(labels, pred.scores.data());
  FrameLossT<S> out;
  auto lc = center_loss(pred.scores, sets.pos, sets.neg);
  auto lb = regression_loss(pred.regs, labels, sets.pos, grid);
  out.lc = lc.value();
  out.lb = lb.value();
  out.num_pos = sets.pos.size();
  out.num_neg = sets.neg.size();
  out.loss = add(lc, scale(lb, static_cast<S>(lambda)));
  return out;
}

// Instance frame n of M gets weight n / mean(1..M) = 2n/(M+1): linear in the
// distance from the initial frame, normalized to mean 1.
inline std::vector<double> temporal_weights(int m) {
  require(m >= 1, "temporal_weights: need at least one instance frame");
  std::vector<double> w(static_cast<std::size_t>(m));
  for (int n = 1; n <= m; ++n) w[static_cast<std::size_t>(n - 1)] = 2.0 * n / (m + 1);
  return w;
}

struct LossReport {
  double total = 0;
  double lambda = 1.0;
  std::vector<double> lc, lb, weights;
  std::vector<std::size_t> num_pos, num_neg;
};

template <class S>
TensorT<S> total_loss(const std::vector<FrameLossT<S>>& frames, double lambda,
                      LossReport* report = nullptr) {
  require(!frames.empty(), "total_loss: need at least one instance frame");
  const auto w = temporal_weights(static_cast<int>(frames.size()));
  auto total = TensorT<S>::zeros({1});
  for (std::size_t n = 0; n < frames.size(); ++n)
    total = add(total, scale(frames[n].loss, static_cast<S>(w[n])));
  if (report) {
    report->total = total.value();
    report->lambda = lambda;
    report->weights = w;
    for (const auto& f : frames) {
      report->lc.push_back(f.lc);
      report->lb.push_back(f.lb);
      report->num_pos.push_back(f.num_pos);
      report->num_neg.push_back(f.num_neg);
    }
  }
  return total;
}

}  // namespace votrack
