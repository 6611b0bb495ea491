#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "votrack/geometry.hpp"

namespace votrack {

// Evaluation conventions, fixed for determinism:
//   success(t)   = fraction of frames with IoU >= t, t in {0, 0.05, ..., 1.0}
//   precision(d) = fraction of frames with centre error <= d px, d in {0..50}
//   pnorm(t)     = like precision with the error normalized per frame by the
//                  ground-truth (w, h), t in {0, 0.01, ..., 0.5}
//   AO           = mean IoU; SR_t = fraction of frames with IoU > t
// An invalid prediction box counts as IoU 0 / infinite centre error.

namespace metric_detail {

inline double safe_iou(const BBox& p, const BBox& g) { return p.valid() ? iou(p, g) : 0.0; }

inline double center_error(const BBox& p, const BBox& g) {
  if (!p.valid()) return std::numeric_limits<double>::infinity();
  return std::hypot(p.cx - g.cx, p.cy - g.cy);
}

inline double normalized_error(const BBox& p, const BBox& g) {
  if (!p.valid()) return std::numeric_limits<double>::infinity();
  return std::hypot((p.cx - g.cx) / g.w, (p.cy - g.cy) / g.h);
}

inline void check_pair(const std::vector<BBox>& pred, const std::vector<BBox>& gt,
                       const char* where) {
  require(pred.size() == gt.size(), std::string(where) + ": length mismatch");
  require(!gt.empty(), std::string(where) + ": empty sequence");
  for (const BBox& g : gt) validate_box(g, where);
}

}  // namespace metric_detail

struct Curve {
  std::vector<double> thresholds;
  std::vector<double> values;

  double auc() const {
    double s = 0;
    for (double v : values) s += v;
    return values.empty() ? 0.0 : s / static_cast<double>(values.size());
  }
  // value at an exact grid threshold
  double at(double t) const {
    for (std::size_t i = 0; i < thresholds.size(); ++i)
      if (std::abs(thresholds[i] - t) < 1e-12) return values[i];
    throw contract_error("curve: threshold " + std::to_string(t) + " not on the grid");
  }
};

inline Curve success_curve(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
  metric_detail::check_pair(pred, gt, "success_curve");
  Curve c;
  for (int i = 0; i <= 20; ++i) c.thresholds.push_back(0.05 * i);
  for (double t : c.thresholds) {
    int hits = 0;
    for (std::size_t f = 0; f < gt.size(); ++f)
      if (metric_detail::safe_iou(pred[f], gt[f]) >= t - 1e-12) ++hits;
    c.values.push_back(static_cast<double>(hits) / static_cast<double>(gt.size()));
  }
  return c;
}

inline Curve precision_curve(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
  metric_detail::check_pair(pred, gt, "precision_curve");
  Curve c;
  for (int i = 0; i <= 50; ++i) c.thresholds.push_back(static_cast<double>(i));
  for (double d : c.thresholds) {
    int hits = 0;
    for (std::size_t f = 0; f < gt.size(); ++f)
      if (metric_detail::center_error(pred[f], gt[f]) <= d + 1e-12) ++hits;
    c.values.push_back(static_cast<double>(hits) / static_cast<double>(gt.size()));
  }
  return c;
}

inline Curve pnorm_curve(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
  metric_detail::check_pair(pred, gt, "pnorm_curve");
  Curve c;
  for (int i = 0; i <= 50; ++i) c.thresholds.push_back(0.01 * i);
  for (double t : c.thresholds) {
    int hits = 0;
    for (std::size_t f = 0; f < gt.size(); ++f)
      if (metric_detail::normalized_error(pred[f], gt[f]) <= t + 1e-12) ++hits;
    c.values.push_back(static_cast<double>(hits) / static_cast<double>(gt.size()));
  }
  return c;
}

struct AoSr {
  double ao = 0, sr50 = 0, sr75 = 0;
};

inline AoSr ao_sr(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
  metric_detail::check_pair(pred, gt, "ao_sr");
  AoSr r;
  for (std::size_t f = 0; f < gt.size(); ++f) {
    const double v = metric_detail::safe_iou(pred[f], gt[f]);
    r.ao += v;
    if (v > 0.50) r.sr50 += 1;
    if (v > 0.75) r.sr75 += 1;
  }
  const auto n = static_cast<double>(gt.size());
  r.ao /= n;
  r.sr50 /= n;
  r.sr75 /= n;
  return r;
}

struct SequenceEval {
  std::string name;
  std::size_t frames = 0;
  double success_auc = 0, precision20 = 0, pnorm_auc = 0;
  double ao = 0, sr50 = 0, sr75 = 0;
  Curve success, precision, pnorm;
};

inline SequenceEval evaluate_sequence(std::string name, const std::vector<BBox>& pred,
                                      const std::vector<BBox>& gt) {
  SequenceEval e;
  e.name = std::move(name);
  e.frames = gt.size();
  e.success = success_curve(pred, gt);
  e.precision = precision_curve(pred, gt);
  e.pnorm = pnorm_curve(pred, gt);
  e.success_auc = e.success.auc();
  e.precision20 = e.precision.at(20.0);
  e.pnorm_auc = e.pnorm.auc();
  const AoSr a = ao_sr(pred, gt);
  e.ao = a.ao;
  e.sr50 = a.sr50;
  e.sr75 = a.sr75;
  return e;
}

struct EvalReport {
  std::vector<SequenceEval> sequences;
  SequenceEval mean;  // unweighted over sequences, curves averaged pointwise
};

inline EvalReport make_report(std::vector<SequenceEval> seqs) {
  require(!seqs.empty(), "make_report: no sequences");
  EvalReport r;
  r.mean.name = "mean";
  r.mean.success.thresholds = seqs[0].success.thresholds;
  r.mean.precision.thresholds = seqs[0].precision.thresholds;
  r.mean.pnorm.thresholds = seqs[0].pnorm.thresholds;
  r.mean.success.values.assign(r.mean.success.thresholds.size(), 0.0);
  r.mean.precision.values.assign(r.mean.precision.thresholds.size(), 0.0);
  r.mean.pnorm.values.assign(r.mean.pnorm.thresholds.size(), 0.0);
  const auto n = static_cast<double>(seqs.size());
  for (const auto& e : seqs) {
    r.mean.frames += e.frames;
    r.mean.success_auc += e.success_auc / n;
    r.mean.precision20 += e.precision20 / n;
    r.mean.pnorm_auc += e.pnorm_auc / n;
    r.mean.ao += e.ao / n;
    r.mean.sr50 += e.sr50 / n;
    r.mean.sr75 += e.sr75 / n;
    for (std::size_t i = 0; i < e.success.values.size(); ++i)
      r.mean.success.values[i] += e.success.values[i] / n;
    for (std::size_t i = 0; i < e.precision.values.size(); ++i)
      r.mean.precision.values[i] += e.precision.values[i] / n;
    for (std::size_t i = 0; i < e.pnorm.values.size(); ++i)
      r.mean.pnorm.values[i] += e.pnorm.values[i] / n;
  }
  r.sequences = std::move(seqs);
  return r;
}

}  // namespace votrack
