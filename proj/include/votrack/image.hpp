#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "votrack/common.hpp"
#include "votrack/tensor.hpp"

namespace votrack {

// Interleaved 8-bit RGB.
struct Image {
  int w = 0, h = 0;
  std::vector<std::uint8_t> px;  // 3*w*h, row-major, r g b

  Image() = default;
  Image(int w_, int h_) : w(w_), h(h_), px(static_cast<std::size_t>(3) * w_ * h_, 0) {
    require(w_ > 0 && h_ > 0, "image: non-positive size");
  }

  std::uint8_t* at(int x, int y) { return px.data() + 3 * (std::size_t(y) * w + x); }
  const std::uint8_t* at(int x, int y) const { return px.data() + 3 * (std::size_t(y) * w + x); }

  bool operator==(const Image& o) const { return w == o.w && h == o.h && px == o.px; }
};

// ---- PPM I/O (P6 color, P5 gray promoted to RGB) ----

inline void write_ppm(const Image& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot open for write: " + path);
  f << "P6\n" << img.w << " " << img.h << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
  if (!f) throw data_error("short write: " + path);
}

namespace detail {
inline int ppm_token(std::istream& s, const std::string& path) {
  // whitespace- and comment-tolerant integer scan
  int c = s.get();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#')
      while (c != EOF && c != '\n') c = s.get();
    c = s.get();
  }
  if (c == EOF || !std::isdigit(c)) throw data_error("malformed ppm header: " + path);
  int v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    c = s.get();
  }
  return v;
}
}  // namespace detail

inline Image read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot open: " + path);
  char m0 = 0, m1 = 0;
  f.get(m0);
  f.get(m1);
  const bool color = m0 == 'P' && m1 == '6';
  const bool gray = m0 == 'P' && m1 == '5';
  if (!color && !gray) throw data_error("not a P5/P6 ppm: " + path);
  const int w = detail::ppm_token(f, path);
  const int h = detail::ppm_token(f, path);
  const int maxv = detail::ppm_token(f, path);
  if (w <= 0 || h <= 0 || maxv != 255) throw data_error("unsupported ppm geometry: " + path);
  Image img(w, h);
  if (color) {
    f.read(reinterpret_cast<char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
    if (f.gcount() != static_cast<std::streamsize>(img.px.size()))
      throw data_error("truncated ppm payload: " + path);
  } else {
    std::vector<std::uint8_t> g(static_cast<std::size_t>(w) * h);
    f.read(reinterpret_cast<char*>(g.data()), static_cast<std::streamsize>(g.size()));
    if (f.gcount() != static_cast<std::streamsize>(g.size()))
      throw data_error("truncated ppm payload: " + path);
    for (std::size_t i = 0; i < g.size(); ++i)
      img.px[3 * i] = img.px[3 * i + 1] = img.px[3 * i + 2] = g[i];
  }
  return img;
}

// ---- pixel-space transforms ----

inline std::array<double, 3> channel_means(const Image& img) {
  std::array<double, 3> m{0, 0, 0};
  const std::size_t n = std::size_t(img.w) * img.h;
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) m[static_cast<std::size_t>(c)] += img.px[3 * i + c];
  for (auto& v : m) v /= static_cast<double>(n);
  return m;
}

// Bilinear sample with a constant pad color outside the frame.
inline std::array<double, 3> sample_bilinear(const Image& img, double x, double y,
                                             const std::array<double, 3>& pad) {
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  std::array<double, 3> out{0, 0, 0};
  for (int dy = 0; dy < 2; ++dy) {
    for (int dx = 0; dx < 2; ++dx) {
      const int xi = x0 + dx, yi = y0 + dy;
      const double wgt = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy);
      if (wgt == 0) continue;
      if (xi < 0 || xi >= img.w || yi < 0 || yi >= img.h) {
        for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(c)] += wgt * pad[static_cast<std::size_t>(c)];
      } else {
        const std::uint8_t* p = img.at(xi, yi);
        for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(c)] += wgt * p[c];
      }
    }
  }
  return out;
}

inline Image flip_horizontal(const Image& img) {
  Image out(img.w, img.h);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y)[c] = img.at(img.w - 1 - x, y)[c];
  return out;
}

inline Image to_gray(const Image& img) {
  Image out(img.w, img.h);
  const std::size_t n = std::size_t(img.w) * img.h;
  for (std::size_t i = 0; i < n; ++i) {
    const double lum =
        0.299 * img.px[3 * i] + 0.587 * img.px[3 * i + 1] + 0.114 * img.px[3 * i + 2];
    const auto v = static_cast<std::uint8_t>(lum + 0.5);
    out.px[3 * i] = out.px[3 * i + 1] = out.px[3 * i + 2] = v;
  }
  return out;
}

// Separable box blur; radius 0 is identity.
inline Image box_blur(const Image& img, int radius) {
  require(radius >= 0, "box_blur: negative radius");
  if (radius == 0) return img;
  Image tmp(img.w, img.h), out(img.w, img.h);
  const int k = 2 * radius + 1;
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      int acc[3] = {0, 0, 0};
      for (int d = -radius; d <= radius; ++d) {
        const int xi = std::clamp(x + d, 0, img.w - 1);
        for (int c = 0; c < 3; ++c) acc[c] += img.at(xi, y)[c];
      }
      for (int c = 0; c < 3; ++c) tmp.at(x, y)[c] = static_cast<std::uint8_t>(acc[c] / k);
    }
  }
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      int acc[3] = {0, 0, 0};
      for (int d = -radius; d <= radius; ++d) {
        const int yi = std::clamp(y + d, 0, img.h - 1);
        for (int c = 0; c < 3; ++c) acc[c] += tmp.at(x, yi)[c];
      }
      for (int c = 0; c < 3; ++c) out.at(x, y)[c] = static_cast<std::uint8_t>(acc[c] / k);
    }
  }
  return out;
}

// Planar [3,H,W] tensor in [0,1].
template <class S>
TensorT<S> to_tensor(const Image& img) {
  typename TensorT<S>::Data d(static_cast<std::size_t>(3) * img.w * img.h);
  const std::size_t hw = std::size_t(img.w) * img.h;
  for (std::size_t i = 0; i < hw; ++i)
    for (int c = 0; c < 3; ++c)
      d[static_cast<std::size_t>(c) * hw + i] = static_cast<S>(img.px[3 * i + c] / 255.0);
  return TensorT<S>({3, img.h, img.w}, std::move(d));
}

}  // namespace votrack
