#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "votrack/anchors.hpp"
#include "votrack/geometry.hpp"
#include "votrack/image.hpp"
#include "votrack/rng.hpp"

namespace votrack {

struct Sequence {
  std::vector<Image> frames;
  std::vector<BBox> boxes;  // absolute image coords
  std::string source;       // "synthetic" | "disk"

  std::size_t size() const { return frames.size(); }
};

inline void validate_sequence(const Sequence& seq) {
  require(seq.frames.size() >= 2, "sequence: needs at least 2 frames");
  require(seq.frames.size() == seq.boxes.size(), "sequence: frame/box count mismatch");
  for (const auto& b : seq.boxes) validate_box(b, "sequence");
}

// Similarity map between crop pixels and image pixels:
//   crop = (image - origin) * s,    image = crop / s + origin
struct CropTransform {
  double ox = 0, oy = 0, s = 1;

  std::pair<double, double> to_crop(double x, double y) const {
    return {(x - ox) * s, (y - oy) * s};
  }
  std::pair<double, double> to_image(double x, double y) const {
    return {x / s + ox, y / s + oy};
  }
  BBox box_to_crop(const BBox& b) const {
    auto [cx, cy] = to_crop(b.cx, b.cy);
    return {cx, cy, b.w * s, b.h * s};
  }
  BBox box_to_image(const BBox& b) const {
    auto [cx, cy] = to_image(b.cx, b.cy);
    return {cx, cy, b.w / s, b.h / s};
  }
};

struct Crop {
  Image image;
  CropTransform tf;
};

// Context rule: pad each side by the mean dimension, take the geometric mean,
// scale by context_factor. The crop is square, centered on the prior box,
// resampled to out_size with channel-mean padding outside the frame.
inline double search_region_side(const BBox& prior, double context_factor) {
  const double p = (prior.w + prior.h) / 2;
  return context_factor * std::sqrt((prior.w + p) * (prior.h + p));
}

inline Crop crop_search_region(const Image& frame, const BBox& prior, int out_size,
                               double context_factor = 2.0) {
  validate_box(prior, "crop_search_region");
  require(out_size > 0, "crop_search_region: non-positive output size");
  const double side = search_region_side(prior, context_factor);
  const double s = out_size / side;
  Crop crop;
  crop.tf = {prior.cx - side / 2, prior.cy - side / 2, s};
  crop.image = Image(out_size, out_size);
  const auto pad = channel_means(frame);
  for (int y = 0; y < out_size; ++y) {
    for (int x = 0; x < out_size; ++x) {
      auto [ix, iy] = crop.tf.to_image(x + 0.5, y + 0.5);
      // pixel centers; -0.5 shifts into sample space
      const auto rgb = sample_bilinear(frame, ix - 0.5, iy - 0.5, pad);
      for (int c = 0; c < 3; ++c)
        crop.image.at(x, y)[c] =
            static_cast<std::uint8_t>(std::clamp(rgb[static_cast<std::size_t>(c)], 0.0, 255.0) + 0.5);
    }
  }
  return crop;
}

// ---- augmentation ----

struct AugmentConfig {
  double p_stretch = 0.4;
  double stretch_lo = 0.85, stretch_hi = 1.15;
  double p_blur = 0.2;
  int blur_max_radius = 2;
  double p_gray = 0.15;
  double p_flip = 0.5;
};

struct Augmented {
  Image image;
  BBox box;
};

// Stretch resamples about the crop center; the box scales the same way.
inline Augmented stretch_about_center(const Image& img, const BBox& box, double sx, double sy) {
  Augmented out{Image(img.w, img.h), box};
  const auto pad = channel_means(img);
  const double cx = img.w / 2.0, cy = img.h / 2.0;
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      const double srcx = cx + (x + 0.5 - cx) / sx - 0.5;
      const double srcy = cy + (y + 0.5 - cy) / sy - 0.5;
      const auto rgb = sample_bilinear(img, srcx, srcy, pad);
      for (int c = 0; c < 3; ++c)
        out.image.at(x, y)[c] =
            static_cast<std::uint8_t>(std::clamp(rgb[static_cast<std::size_t>(c)], 0.0, 255.0) + 0.5);
    }
  }
  out.box = {cx + (box.cx - cx) * sx, cy + (box.cy - cy) * sy, box.w * sx, box.h * sy};
  return out;
}

inline Augmented augment(const Image& crop, const BBox& box, Rng& rng,
                         const AugmentConfig& cfg = {}) {
  Augmented cur{crop, box};
  if (rng.bernoulli(cfg.p_stretch)) {
    const double sx = rng.uniform(cfg.stretch_lo, cfg.stretch_hi);
    const double sy = rng.uniform(cfg.stretch_lo, cfg.stretch_hi);
    cur = stretch_about_center(cur.image, cur.box, sx, sy);
  }
  if (rng.bernoulli(cfg.p_blur))
    cur.image = box_blur(cur.image, 1 + static_cast<int>(rng.uniform_int(cfg.blur_max_radius)));
  if (rng.bernoulli(cfg.p_gray)) cur.image = to_gray(cur.image);
  if (rng.bernoulli(cfg.p_flip)) {
    cur.image = flip_horizontal(cur.image);
    cur.box.cx = crop.w - cur.box.cx;
  }
  return cur;
}

// ---- training clip sampling ----

struct ClipFrame {
  Image crop;
  BBox box;  // ground truth in crop coords
  Labels labels;
  int frame_index = 0;
};

struct SampleConfig {
  int out_size = 256;
  double context_factor = 2.0;
  int max_skip = 100;
  double pos_thr = 0.6, neg_thr = 0.3;
  // prior-box jitter applied to instance frames (never the initial frame):
  // decorrelates the crop from the exact ground truth like tracking drift does
  double jitter_center = 0.08;  // fraction of box size
  double jitter_scale = 0.12;
  bool augment_frames = true;
  AugmentConfig aug;
};

inline std::vector<int> sample_frame_indices(std::size_t length, int n, int max_skip, Rng& rng) {
  require(n >= 2, "sample_frame_indices: clip length must be >= 2");
  require(length >= static_cast<std::size_t>(n), "sample_frame_indices: sequence too short");
  const int last = static_cast<int>(length) - 1;
  std::vector<int> idx(static_cast<std::size_t>(n));
  idx[0] = static_cast<int>(rng.uniform_int(last - (n - 1) + 1));
  for (int k = 1; k < n; ++k) {
    const int room = last - idx[static_cast<std::size_t>(k - 1)] - (n - 1 - k);
    const int gmax = std::min(max_skip, room);
    idx[static_cast<std::size_t>(k)] =
        idx[static_cast<std::size_t>(k - 1)] + 1 + static_cast<int>(rng.uniform_int(gmax));
  }
  return idx;
}

inline std::optional<std::vector<ClipFrame>> sample_training_clip(const Sequence& seq, int n,
                                                                  const AnchorGrid& grid,
                                                                  const SampleConfig& cfg,
                                                                  Rng& rng) {
  if (seq.size() < static_cast<std::size_t>(n)) {
    log_warn("sequence too short for clip of " + std::to_string(n) + ", skipping");
    return std::nullopt;
  }
  const auto idx = sample_frame_indices(seq.size(), n, cfg.max_skip, rng);
  std::vector<ClipFrame> out;
  out.reserve(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const int fi = idx[k];
    const BBox gt = seq.boxes[static_cast<std::size_t>(fi)];
    BBox prior = gt;
    if (k > 0) {
      prior.cx += rng.uniform(-cfg.jitter_center, cfg.jitter_center) * gt.w;
      prior.cy += rng.uniform(-cfg.jitter_center, cfg.jitter_center) * gt.h;
      prior.w *= 1.0 + rng.uniform(-cfg.jitter_scale, cfg.jitter_scale);
      prior.h *= 1.0 + rng.uniform(-cfg.jitter_scale, cfg.jitter_scale);
    }
    Crop crop = crop_search_region(seq.frames[static_cast<std::size_t>(fi)], prior, cfg.out_size,
                                   cfg.context_factor);
    BBox box = crop.tf.box_to_crop(gt);
    Image img = std::move(crop.image);
    if (cfg.augment_frames && k > 0) {
      Augmented aug = augment(img, box, rng, cfg.aug);
      img = std::move(aug.image);
      box = aug.box;
    }
    ClipFrame cf;
    cf.crop = std::move(img);
    cf.box = box;
    cf.labels = assign_labels(box, grid, cfg.pos_thr, cfg.neg_thr);
    cf.frame_index = fi;
    out.push_back(std::move(cf));
  }
  return out;
}

// ---- disk ingestion ----
// Layout: <dir>/img/*.ppm (sorted) + <dir>/groundtruth_rect.txt (or
// groundtruth.txt), one "x,y,w,h" top-left line per frame.

inline BBox parse_otb_line(const std::string& line, int lineno, const std::string& file) {
  std::string s = line;
  std::replace(s.begin(), s.end(), ',', ' ');
  std::replace(s.begin(), s.end(), '\t', ' ');
  std::istringstream is(s);
  double x, y, w, h;
  if (!(is >> x >> y >> w >> h))
    throw data_error(file + ":" + std::to_string(lineno) + ": malformed box line: '" + line + "'");
  std::string extra;
  if (is >> extra)
    throw data_error(file + ":" + std::to_string(lineno) + ": trailing tokens: '" + line + "'");
  const BBox b = BBox::from_tlwh(x, y, w, h);
  if (!b.valid())
    throw data_error(file + ":" + std::to_string(lineno) + ": degenerate box: '" + line + "'");
  return b;
}

inline Sequence load_otb_sequence(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw data_error("not a directory: " + dir);

  fs::path gt = root / "groundtruth_rect.txt";
  if (!fs::exists(gt)) gt = root / "groundtruth.txt";
  if (!fs::exists(gt)) throw data_error("no groundtruth file in " + dir);

  const fs::path imgdir = fs::is_directory(root / "img") ? root / "img" : root;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(imgdir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw data_error("no .ppm frames in " + imgdir.string());

  Sequence seq;
  seq.source = "disk";
  std::ifstream f(gt);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line.find_first_not_of(" \r\n\t") == std::string::npos) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    seq.boxes.push_back(parse_otb_line(line, lineno, gt.string()));
  }
  if (seq.boxes.size() != files.size())
    throw data_error(dir + ": " + std::to_string(files.size()) + " frames but " +
                     std::to_string(seq.boxes.size()) + " ground-truth lines");
  seq.frames.reserve(files.size());
  for (const auto& p : files) seq.frames.push_back(read_ppm(p.string()));
  validate_sequence(seq);
  return seq;
}

}  // namespace votrack
