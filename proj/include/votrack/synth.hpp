#pragma once

#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "votrack/data.hpp"
#include "votrack/image.hpp"
#include "votrack/rng.hpp"

// Synthetic tracking scenes: a part-structured target wandering over a
// textured background among distractors that copy the target's *initial*
// palette, while the target's own appearance drifts away from it. Scheduled
// occluders cover the target for whole frame ranges. Everything is a pure
// function of the seed.

namespace votrack {

struct SynthConfig {
  int width = 256, height = 192;
  int frames = 60;
  std::uint64_t seed = 1;

  double target_size = 36;  // nominal sqrt(w*h), pixels
  double speed = 3.0;       // px/frame
  double size_pulse = 0.12; // relative w/h oscillation
  double drift_rate = 0.004;  // hue revolutions per frame

  int distractors = 3;
  double distractor_similarity = 0.85;  // 1 = same palette as initial target

  std::vector<std::pair<int, int>> occlusions;  // inclusive frame intervals
  double occlusion_cover = 1.15;  // occluder size relative to target box

  double noise_sigma = 3.0;  // additive pixel noise, 0..255 scale
};

// Per-frame truth captured during rendering; used by tests as a z-order
// oracle and by dataset analysis.
struct SynthDebug {
  std::vector<std::vector<std::uint8_t>> target_mask;  // 1 where target is topmost
};

namespace synth_detail {

struct Rgb {
  std::uint8_t r, g, b;
};

inline Rgb hsv(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = v - c;
  auto q = [&](double u) { return static_cast<std::uint8_t>(std::clamp((u + m) * 255.0, 0.0, 255.0)); };
  return {q(r), q(g), q(b)};
}

inline void fill_ellipse(Image& img, double cx, double cy, double rx, double ry, Rgb col,
                         std::vector<std::uint8_t>* mask, std::uint8_t mask_value) {
  const int x0 = std::max(0, static_cast<int>(cx - rx)), x1 = std::min(img.w - 1, static_cast<int>(cx + rx) + 1);
  const int y0 = std::max(0, static_cast<int>(cy - ry)), y1 = std::min(img.h - 1, static_cast<int>(cy + ry) + 1);
  for (int y = y0; y <= y1; ++y) {
    const double dy = (y + 0.5 - cy) / ry;
    for (int x = x0; x <= x1; ++x) {
      const double dx = (x + 0.5 - cx) / rx;
      if (dx * dx + dy * dy > 1.0) continue;
      auto* p = img.at(x, y);
      p[0] = col.r;
      p[1] = col.g;
      p[2] = col.b;
      if (mask) (*mask)[std::size_t(y) * img.w + x] = mask_value;
    }
  }
}

struct Palette {
  double hue, sat, val;
};

// A target-like object: body ellipse plus three part blobs that give it
// internal structure.
inline void draw_object(Image& img, double cx, double cy, double w, double h, const Palette& pal,
                        std::vector<std::uint8_t>* mask, std::uint8_t mask_value) {
  fill_ellipse(img, cx, cy, w / 2, h / 2, hsv(pal.hue, pal.sat, pal.val), mask, mask_value);
  const double pr = 0.2 * std::min(w, h);
  const std::array<std::array<double, 2>, 3> off = {{{-0.22, -0.18}, {0.25, 0.08}, {-0.02, 0.26}}};
  const std::array<double, 3> dh = {0.07, -0.07, 0.14};
  for (int i = 0; i < 3; ++i) {
    fill_ellipse(img, cx + off[static_cast<std::size_t>(i)][0] * w, cy + off[static_cast<std::size_t>(i)][1] * h, pr, pr,
                 hsv(pal.hue + dh[static_cast<std::size_t>(i)], std::min(1.0, pal.sat + 0.1), pal.val * 0.85), mask,
                 mask_value);
  }
}

struct Mover {
  double x, y, vx, vy;

  void step(Rng& rng, double speed, double margin, double W, double H) {
    x += vx;
    y += vy;
    if (x < margin) { x = margin; vx = std::abs(vx); }
    if (x > W - margin) { x = W - margin; vx = -std::abs(vx); }
    if (y < margin) { y = margin; vy = std::abs(vy); }
    if (y > H - margin) { y = H - margin; vy = -std::abs(vy); }
    vx += rng.normal() * 0.08 * speed;
    vy += rng.normal() * 0.08 * speed;
    const double sp = std::hypot(vx, vy);
    const double lim_hi = 1.5 * speed, lim_lo = 0.4 * speed;
    if (sp > lim_hi) { vx *= lim_hi / sp; vy *= lim_hi / sp; }
    if (sp > 0 && sp < lim_lo) { vx *= lim_lo / sp; vy *= lim_lo / sp; }
  }
};

}  // namespace synth_detail

inline Sequence generate_synthetic(const SynthConfig& cfg, SynthDebug* dbg = nullptr) {
  using namespace synth_detail;
  require(cfg.frames >= 2, "synth: need at least 2 frames");
  require(cfg.width >= 32 && cfg.height >= 32, "synth: canvas too small");
  require(cfg.target_size >= 6, "synth: target too small");

  // Fixed stream order regardless of distractor/occlusion counts, so the
  // target's trajectory is invariant to those knobs (tests rely on it).
  Rng master(cfg.seed);
  Rng layout = master.split();
  Rng target_stream = master.split();
  Rng distractor_master = master.split();
  Rng occluder_stream = master.split();
  Rng noise_master = master.split();

  const double W = cfg.width, H = cfg.height;

  // background: Four corner colors, low saturation, plus static texture blobs.
  std::array<Rgb, 4> corners;
  const double bg_hue = layout.uniform();
  for (auto& c : corners)
    c = hsv(bg_hue + layout.uniform(-0.08, 0.08), layout.uniform(0.05, 0.2),
            layout.uniform(0.3, 0.55));
  Image base(cfg.width, cfg.height);
  for (int y = 0; y < cfg.height; ++y) {
    const double fy = y / (H - 1);
    for (int x = 0; x < cfg.width; ++x) {
      const double fx = x / (W - 1);
      auto* p = base.at(x, y);
      auto chan = [](const Rgb& c, int i) {
        return static_cast<double>(i == 0 ? c.r : i == 1 ? c.g : c.b);
      };
      for (int c = 0; c < 3; ++c) {
        p[c] = static_cast<std::uint8_t>(
            (1 - fx) * (1 - fy) * chan(corners[0], c) + fx * (1 - fy) * chan(corners[1], c) +
            (1 - fx) * fy * chan(corners[2], c) + fx * fy * chan(corners[3], c));
      }
    }
  }
  const int n_blobs = 4 + static_cast<int>(layout.uniform_int(4));
  for (int i = 0; i < n_blobs; ++i) {
    fill_ellipse(base, layout.uniform(0, W), layout.uniform(0, H), layout.uniform(8, 30),
                 layout.uniform(8, 30),
                 hsv(bg_hue + layout.uniform(-0.12, 0.12), layout.uniform(0.1, 0.3),
                     layout.uniform(0.25, 0.6)),
                 nullptr, 0);
  }

  // target setup
  const double h0 = target_stream.uniform();  // initial hue, drifts over time
  Palette tpal{h0, target_stream.uniform(0.65, 0.9), target_stream.uniform(0.7, 0.95)};
  const double aspect = target_stream.uniform(0.8, 1.25);
  const double tw0 = cfg.target_size / std::sqrt(aspect);
  const double th0 = cfg.target_size * std::sqrt(aspect);
  const double phase_w = target_stream.uniform(0, 6.283), phase_h = target_stream.uniform(0, 6.283);
  const double margin = std::max(tw0, th0) * 0.75 + 2;
  Mover target;
  target.x = target_stream.uniform(margin, W - margin);
  target.y = target_stream.uniform(margin, H - margin);
  {
    const double ang = target_stream.uniform(0, 6.283);
    const double sp = cfg.speed * target_stream.uniform(0.7, 1.3);
    target.vx = sp * std::cos(ang);
    target.vy = sp * std::sin(ang);
  }

  // distractors: palettes centered on the target's *initial* hue
  struct Distractor {
    Mover m;
    Palette pal;
    double w, h;
    Rng rng;
  };
  std::vector<Distractor> ds;
  for (int i = 0; i < cfg.distractors; ++i) {
    Rng drng = distractor_master.split();
    Distractor d{{}, {}, 0, 0, drng.split()};
    const double spread = 0.04 + 0.4 * (1.0 - cfg.distractor_similarity);
    d.pal = {h0 + drng.uniform(-spread, spread), drng.uniform(0.6, 0.9), drng.uniform(0.65, 0.95)};
    const double sz = cfg.target_size * drng.uniform(0.85, 1.15);
    const double asp = drng.uniform(0.8, 1.25);
    d.w = sz / std::sqrt(asp);
    d.h = sz * std::sqrt(asp);
    d.m.x = drng.uniform(margin, W - margin);
    d.m.y = drng.uniform(margin, H - margin);
    const double ang = drng.uniform(0, 6.283);
    const double sp = cfg.speed * drng.uniform(0.6, 1.2);
    d.m.vx = sp * std::cos(ang);
    d.m.vy = sp * std::sin(ang);
    ds.push_back(std::move(d));
  }

  const Palette opal{occluder_stream.uniform(), occluder_stream.uniform(0.2, 0.45),
                     occluder_stream.uniform(0.35, 0.6)};

  auto occluded_at = [&cfg](int f) {
    for (const auto& [a, b] : cfg.occlusions)
      if (f >= a && f <= b) return true;
    return false;
  };

  Sequence seq;
  seq.source = "synthetic";
  if (dbg) dbg->target_mask.clear();

  for (int f = 0; f < cfg.frames; ++f) {
    Image frame = base;
    std::vector<std::uint8_t> mask;
    if (dbg) mask.assign(std::size_t(cfg.width) * cfg.height, 0);

    for (auto& d : ds) {
      draw_object(frame, d.m.x, d.m.y, d.w, d.h, d.pal, dbg ? &mask : nullptr, 0);
      d.m.step(d.rng, cfg.speed, std::max(d.w, d.h) * 0.6 + 2, W, H);
    }

    const double tw = tw0 * (1.0 + cfg.size_pulse * std::sin(6.283 * f / 41.0 + phase_w));
    const double th = th0 * (1.0 + cfg.size_pulse * std::sin(6.283 * f / 53.0 + phase_h));
    Palette cur = tpal;
    cur.hue = h0 + cfg.drift_rate * f;
    draw_object(frame, target.x, target.y, tw, th, cur, dbg ? &mask : nullptr, 1);

    if (occluded_at(f)) {
      const double jx = occluder_stream.uniform(-2, 2), jy = occluder_stream.uniform(-2, 2);
      fill_ellipse(frame, target.x + jx, target.y + jy, cfg.occlusion_cover * tw / 2 + 2,
                   cfg.occlusion_cover * th / 2 + 2, hsv(opal.hue, opal.sat, opal.val),
                   dbg ? &mask : nullptr, 0);
    }

    if (cfg.noise_sigma > 0) {
      Rng nrng = noise_master.split();
      for (auto& v : frame.px) {
        const double nv = v + nrng.normal() * cfg.noise_sigma;
        v = static_cast<std::uint8_t>(std::clamp(nv, 0.0, 255.0));
      }
    }

    seq.boxes.push_back({target.x, target.y, tw, th});
    seq.frames.push_back(std::move(frame));
    if (dbg) dbg->target_mask.push_back(std::move(mask));
    target.step(target_stream, cfg.speed, margin, W, H);
  }
  validate_sequence(seq);
  return seq;
}

}  // namespace votrack
