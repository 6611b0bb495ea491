#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "votrack/common.hpp"

namespace votrack {

// Axis-aligned box, center convention, pixel units.
struct BBox {
  double cx = 0, cy = 0, w = 0, h = 0;

  static BBox from_tlwh(double x, double y, double w, double h) {
    return {x + w / 2, y + h / 2, w, h};
  }
  double x0() const { return cx - w / 2; }
  double y0() const { return cy - h / 2; }
  double x1() const { return cx + w / 2; }
  double y1() const { return cy + h / 2; }
  bool valid() const {
    return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) && std::isfinite(h) &&
           w > 0 && h > 0;
  }
};

inline void validate_box(const BBox& b, const char* where) {
  if (!b.valid())
    throw contract_error(std::string(where) + ": invalid box (cx=" + std::to_string(b.cx) +
                         " cy=" + std::to_string(b.cy) + " w=" + std::to_string(b.w) +
                         " h=" + std::to_string(b.h) + ")");
}

inline double iou(const BBox& a, const BBox& b) {
  validate_box(a, "iou");
  validate_box(b, "iou");
  const double ix = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
  const double iy = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
  const double inter = ix * iy;
  return inter / (a.w * a.h + b.w * b.h - inter);
}

// Anchor displacement coding: tx=(x-xa)/wa, ty=(y-ya)/ha, tw=log(w/wa), th=log(h/ha).
inline std::array<double, 4> encode(const BBox& gt, const BBox& anchor) {
  validate_box(gt, "encode");
  validate_box(anchor, "encode");
  return {(gt.cx - anchor.cx) / anchor.w, (gt.cy - anchor.cy) / anchor.h,
          std::log(gt.w / anchor.w), std::log(gt.h / anchor.h)};
}

inline BBox decode(const std::array<double, 4>& t, const BBox& anchor) {
  validate_box(anchor, "decode");
  return {anchor.cx + t[0] * anchor.w, anchor.cy + t[1] * anchor.h, anchor.w * std::exp(t[2]),
          anchor.h * std::exp(t[3])};
}

}  // namespace votrack
