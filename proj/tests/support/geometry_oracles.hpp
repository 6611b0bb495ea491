#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "votrack/anchors.hpp"
#include "votrack/geometry.hpp"
#include "votrack/rng.hpp"

// Brute-force references for the geometry layer. These recompute everything
// from first principles (raster counting, corner arithmetic) so they share no
// code path with the implementations they judge.

namespace oracles {

// Monte-Carlo-free raster IoU: count sample-cell centers inside each box over
// the joint bounding region. Error ~ O(1/res).
inline double raster_iou(const votrack::BBox& a, const votrack::BBox& b, int res = 600) {
  const double lx = std::min(a.x0(), b.x0()), hx = std::max(a.x1(), b.x1());
  const double ly = std::min(a.y0(), b.y0()), hy = std::max(a.y1(), b.y1());
  const double dx = (hx - lx) / res, dy = (hy - ly) / res;
  std::int64_t in_a = 0, in_b = 0, in_both = 0;
  for (int iy = 0; iy < res; ++iy) {
    const double y = ly + (iy + 0.5) * dy;
    const bool ya = y >= a.y0() && y <= a.y1();
    const bool yb = y >= b.y0() && y <= b.y1();
    if (!ya && !yb) continue;
    for (int ix = 0; ix < res; ++ix) {
      const double x = lx + (ix + 0.5) * dx;
      const bool ia = ya && x >= a.x0() && x <= a.x1();
      const bool ib = yb && x >= b.x0() && x <= b.x1();
      in_a += ia;
      in_b += ib;
      in_both += ia && ib;
    }
  }
  return double(in_both) / double(in_a + in_b - in_both);
}

// Corner-arithmetic IoU, written independently of votrack::iou.
inline double corner_iou(const votrack::BBox& a, const votrack::BBox& b) {
  const double ax0 = a.cx - a.w / 2, ax1 = a.cx + a.w / 2;
  const double ay0 = a.cy - a.h / 2, ay1 = a.cy + a.h / 2;
  const double bx0 = b.cx - b.w / 2, bx1 = b.cx + b.w / 2;
  const double by0 = b.cy - b.h / 2, by1 = b.cy + b.h / 2;
  const double w = std::min(ax1, bx1) - std::max(ax0, bx0);
  const double h = std::min(ay1, by1) - std::max(ay0, by0);
  if (w <= 0 || h <= 0) return 0.0;
  const double inter = w * h;
  const double uni = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
  return inter / uni;
}

struct OracleLabels {
  std::vector<int> cls;
  std::vector<std::array<double, 4>> reg;
};

// Exhaustive label assignment: per-anchor IoU thresholding plus the single
// forced positive, all recomputed locally.
inline OracleLabels oracle_assign(const votrack::BBox& gt, const votrack::AnchorGrid& grid,
                                  double pos_thr, double neg_thr) {
  const std::int64_t n = grid.total();
  OracleLabels out;
  out.cls.assign(static_cast<std::size_t>(n), -1);
  out.reg.assign(static_cast<std::size_t>(n), {0, 0, 0, 0});
  std::vector<double> ious(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    ious[static_cast<std::size_t>(i)] = corner_iou(gt, grid.at_flat(i));
  bool any_pos = false;
  for (std::int64_t i = 0; i < n; ++i) {
    const double v = ious[static_cast<std::size_t>(i)];
    if (v >= pos_thr) {
      out.cls[static_cast<std::size_t>(i)] = 1;
      any_pos = true;
    } else if (v <= neg_thr) {
      out.cls[static_cast<std::size_t>(i)] = 0;
    }
  }
  if (!any_pos) {
    double best = -1.0;
    for (std::int64_t i = 0; i < n; ++i)
      best = std::max(best, ious[static_cast<std::size_t>(i)]);
    for (std::int64_t i = 0; i < n; ++i) {
      if (ious[static_cast<std::size_t>(i)] >= best - 1e-9) {
        out.cls[static_cast<std::size_t>(i)] = 1;
        break;
      }
    }
  }
  for (std::int64_t i = 0; i < n; ++i) {
    if (out.cls[static_cast<std::size_t>(i)] != 1) continue;
    const votrack::BBox a = grid.at_flat(i);
    out.reg[static_cast<std::size_t>(i)] = {(gt.cx - a.cx) / a.w, (gt.cy - a.cy) / a.h,
                                            std::log(gt.w / a.w), std::log(gt.h / a.h)};
  }
  return out;
}

inline votrack::BBox random_box(votrack::Rng& rng, double span = 256.0) {
  return {rng.uniform(0.1 * span, 0.9 * span), rng.uniform(0.1 * span, 0.9 * span),
          rng.uniform(4.0, 0.6 * span), rng.uniform(4.0, 0.6 * span)};
}

}  // namespace oracles
