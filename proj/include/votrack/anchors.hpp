#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "votrack/geometry.hpp"

namespace votrack {

// One scale, several aspect ratios, centers on the feature-stride lattice.
struct AnchorConfig {
  int input_size = 256;
  int stride = 16;
  double base_frac = 0.25;  // anchor side = base_frac * input_size (area = side^2)
  std::vector<double> ratios = {1.0 / 3.0, 0.5, 1.0, 2.0, 3.0};  // height/width
};

class AnchorGrid {
 public:
  explicit AnchorGrid(const AnchorConfig& cfg) : cfg_(cfg) {
    require(!cfg.ratios.empty(), "anchor grid: empty ratio set");
    require(cfg.stride > 0 && cfg.input_size > 0, "anchor grid: non-positive geometry");
    require(cfg.input_size % cfg.stride == 0, "anchor grid: stride must divide input size");
    grid_ = cfg.input_size / cfg.stride;
    const double base = cfg.base_frac * cfg.input_size;
    for (const double r : cfg.ratios) {
      require(r > 0, "anchor grid: ratio must be positive");
      // area stays base^2; r is height/width
      priors_.push_back({base / std::sqrt(r), base * std::sqrt(r)});
    }
  }

  int grid() const { return grid_; }
  int num_ratios() const { return static_cast<int>(priors_.size()); }
  std::int64_t total() const { return std::int64_t(num_ratios()) * grid_ * grid_; }
  int stride() const { return cfg_.stride; }
  int input_size() const { return cfg_.input_size; }

  // Layout [A][H][W]: matches the head's channel-major output maps.
  std::int64_t index(int a, int iy, int ix) const {
    return (std::int64_t(a) * grid_ + iy) * grid_ + ix;
  }

  BBox at(int a, int iy, int ix) const {
    require(a >= 0 && a < num_ratios() && iy >= 0 && iy < grid_ && ix >= 0 && ix < grid_,
            "anchor grid: index out of range");
    const auto& [w, h] = priors_[static_cast<std::size_t>(a)];
    return {(ix + 0.5) * cfg_.stride, (iy + 0.5) * cfg_.stride, w, h};
  }

  BBox at_flat(std::int64_t i) const {
    require(i >= 0 && i < total(), "anchor grid: flat index out of range");
    const int ix = static_cast<int>(i % grid_);
    const int iy = static_cast<int>((i / grid_) % grid_);
    const int a = static_cast<int>(i / (std::int64_t(grid_) * grid_));
    return at(a, iy, ix);
  }

 private:
  AnchorConfig cfg_;
  int grid_ = 0;
  std::vector<std::pair<double, double>> priors_;
};

// Classification target per anchor (1 pos / 0 neg / -1 ignore) plus the
// regression target at positives.
struct Labels {
  std::vector<int> cls;
  std::vector<std::array<double, 4>> reg;  // meaningful where cls == 1
  int num_pos = 0;
};

inline Labels assign_labels(const BBox& gt, const AnchorGrid& grid, double pos_thr,
                            double neg_thr) {
  validate_box(gt, "assign_labels");
  require(0.0 <= neg_thr && neg_thr < pos_thr && pos_thr <= 1.0,
          "assign_labels: need 0 <= neg_thr < pos_thr <= 1");
  const std::int64_t n = grid.total();
  Labels out;
  out.cls.assign(static_cast<std::size_t>(n), -1);
  out.reg.assign(static_cast<std::size_t>(n), {0, 0, 0, 0});

  std::vector<double> ious(static_cast<std::size_t>(n));
  double best_iou = -1.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double v = iou(gt, grid.at_flat(i));
    ious[static_cast<std::size_t>(i)] = v;
    best_iou = std::max(best_iou, v);
    if (v >= pos_thr) {
      out.cls[static_cast<std::size_t>(i)] = 1;
      ++out.num_pos;
    } else if (v <= neg_thr) {
      out.cls[static_cast<std::size_t>(i)] = 0;
    }
  }
  if (out.num_pos == 0) {
    // Degenerate frame: promote one best-overlap anchor so the positive set
    // is never empty. Exact IoU ties are common (several anchors containing
    // the target), so "best" means first within a hair of the maximum —
    // deterministic under floating-point noise.
    for (std::int64_t i = 0; i < n; ++i) {
      if (ious[static_cast<std::size_t>(i)] >= best_iou - 1e-9) {
        out.cls[static_cast<std::size_t>(i)] = 1;
        out.num_pos = 1;
        break;
      }
    }
  }
  for (std::int64_t i = 0; i < n; ++i)
    if (out.cls[static_cast<std::size_t>(i)] == 1)
      out.reg[static_cast<std::size_t>(i)] = encode(gt, grid.at_flat(i));
  return out;
}

}  // namespace votrack
