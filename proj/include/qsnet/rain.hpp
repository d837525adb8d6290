#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "qsnet/filter_bank.hpp"
#include "qsnet/image.hpp"
#include "qsnet/rng.hpp"

namespace qsnet {

// Rain pixels are those whose stored rain value exceeds this threshold
// (~10/255); it suppresses faint blur halos around streaks.
constexpr float kRainLocThreshold = 0.04f;

struct RainParams {
  // Streaks per 1000 pixels of image area. Sized together with the length,
  // width and intensity ranges so rain covers roughly 5-15% of the frame.
  double streak_count_per_kpx = 3.0;
  double angle_min_deg = -30.0;
  double angle_max_deg = 30.0;  // one angle per layer, drawn from this range
  int length_min_px = 8;
  int length_max_px = 24;
  int width_min_px = 1;
  int width_max_px = 3;
  double intensity_min = 0.15;
  double intensity_max = 0.6;
  double blur_sigma = 0.7;
  uint64_t seed = 0;

  void validate() const {
    if (streak_count_per_kpx < 0) throw std::invalid_argument("RainParams: negative density");
    if (angle_min_deg > angle_max_deg || length_min_px > length_max_px ||
        width_min_px > width_max_px || intensity_min > intensity_max)
      throw std::invalid_argument("RainParams: empty range");
    if (length_min_px < 1 || width_min_px < 1)
      throw std::invalid_argument("RainParams: degenerate streak size");
    if (intensity_min <= 0 || intensity_max > 1.0)
      throw std::invalid_argument("RainParams: intensity must lie in (0, 1]");
    if (blur_sigma < 0) throw std::invalid_argument("RainParams: negative blur");
  }
};

namespace detail {

inline void gaussian_blur_plane(std::vector<float>& plane, int64_t h, int64_t w, double sigma) {
  if (sigma <= 0) return;
  const int r = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<float> kernel(size_t(2 * r + 1));
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    kernel[size_t(i + r)] = float(std::exp(-0.5 * i * i / (sigma * sigma)));
    sum += kernel[size_t(i + r)];
  }
  for (auto& k : kernel) k = float(k / sum);

  std::vector<float> tmp(plane.size());
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int i = -r; i <= r; ++i)
        acc += kernel[size_t(i + r)] * plane[size_t(y * w + reflect_index(x + i, w))];
      tmp[size_t(y * w + x)] = acc;
    }
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int i = -r; i <= r; ++i)
        acc += kernel[size_t(i + r)] * tmp[size_t(reflect_index(y + i, h) * w + x)];
      plane[size_t(y * w + x)] = acc;
    }
}

}  // namespace detail

// Single-channel rain layer plus its binary location map. Streaks are
// oriented segments sharing one fall angle per layer; stamping uses
// max-blending so crossings do not overshoot, then a small Gaussian blur
// softens the edges.
inline std::pair<Image, Image> synthesize_rain_layer(int64_t h, int64_t w,
                                                     const RainParams& params) {
  params.validate();
  if (h <= 0 || w <= 0) throw std::invalid_argument("synthesize_rain_layer: zero-area shape");
  Image rain(h, w, 1, 0.0f);
  Image loc(h, w, 1, 0.0f);
  Rng rng(params.seed);

  const int64_t n_streaks = std::llround(params.streak_count_per_kpx * double(h * w) / 1000.0);
  const double angle =
      rng.uniform(params.angle_min_deg, params.angle_max_deg) * 3.14159265358979323846 / 180.0;
  const double dy = std::cos(angle), dx = std::sin(angle);   // fall direction
  const double py = -dx, px = dy;                            // perpendicular

  for (int64_t s = 0; s < n_streaks; ++s) {
    const double cy = rng.uniform(0.0, double(h));
    const double cx = rng.uniform(0.0, double(w));
    const int len = int(rng.uniform_int(params.length_min_px, params.length_max_px));
    const int wid = int(rng.uniform_int(params.width_min_px, params.width_max_px));
    const float ity = float(rng.uniform(params.intensity_min, params.intensity_max));
    for (double t = -0.5 * len; t <= 0.5 * len; t += 0.5) {
      for (double o = -0.5 * (wid - 1); o <= 0.5 * (wid - 1) + 1e-9; o += 0.5) {
        const int64_t yy = std::llround(cy + t * dy + o * py);
        const int64_t xx = std::llround(cx + t * dx + o * px);
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        float& v = rain.at(0, yy, xx);
        v = std::max(v, ity);
      }
    }
  }

  detail::gaussian_blur_plane(rain.px, h, w, params.blur_sigma);
  rain.clamp01();
  for (int64_t i = 0; i < h * w; ++i)
    loc.px[size_t(i)] = rain.px[size_t(i)] > kRainLocThreshold ? 1.0f : 0.0f;
  return {std::move(rain), std::move(loc)};
}

struct RainySample {
  std::string id;
  Image rainy;       // I
  Image background;  // B
  Image rain;        // R, single channel
  Image location;    // L, binary single channel
};

// Builds a sample on the 8-bit grid so the additive identity
// rainy = background + rain survives PNG round-trips exactly. Where
// background + rain would clip, the stored rain is reduced to keep
// rainy - background = rain.
inline RainySample make_sample(const Image& background, const RainParams& params) {
  if (background.c != 3) throw std::invalid_argument("make_sample: background must be RGB");
  auto [rain_raw, loc_unused] = synthesize_rain_layer(background.h, background.w, params);
  (void)loc_unused;

  RainySample s;
  s.background = background;
  quantize8(s.background);
  s.rainy = Image(background.h, background.w, 3);
  s.rain = Image(background.h, background.w, 1, 0.0f);
  s.location = Image(background.h, background.w, 1, 0.0f);

  const int64_t hw = background.h * background.w;
  for (int64_t i = 0; i < hw; ++i) {
    const int kr_raw = int(std::lround(std::clamp(rain_raw.px[size_t(i)], 0.0f, 1.0f) * 255.0f));
    int kr_min = kr_raw;  // the channel clipping hardest limits the shared rain value
    int kb[3];
    for (int64_t ch = 0; ch < 3; ++ch) {
      kb[ch] = int(std::lround(s.background.px[size_t(ch * hw + i)] * 255.0f));
      kr_min = std::min(kr_min, 255 - kb[ch]);
    }
    // Derive rainy from the stored (possibly reduced) rain so all three
    // channels honor the identity with a single-channel rain layer.
    for (int64_t ch = 0; ch < 3; ++ch)
      s.rainy.px[size_t(ch * hw + i)] = float(kb[ch] + kr_min) / 255.0f;
    s.rain.px[size_t(i)] = float(kr_min) / 255.0f;
    s.location.px[size_t(i)] = kr_min >= 11 ? 1.0f : 0.0f;  // k/255 > 0.04 <=> k >= 11
  }
  return s;
}

// Procedural backgrounds in three piecewise-smooth families: a gradient
// scattered with solid shapes, a random-color mosaic, and terraced (posterized)
// low-pass noise. All three are built from flat or slowly-varying regions
// separated by steps of assorted heights, so their derivative statistics are
// heavy-tailed like natural photographs' -- a property the analysis side of
// the toolkit depends on.
inline Image procedural_background(int64_t h, int64_t w, uint64_t seed) {
  Rng rng(seed);
  Image img(h, w, 3);
  const int kind = int(seed % 3);
  if (kind == 0) {  // gradient base with random rectangles and discs on top
    float c0[3], c1[3];
    for (int ch = 0; ch < 3; ++ch) {
      c0[ch] = float(rng.uniform(0.1, 0.9));
      c1[ch] = float(rng.uniform(0.1, 0.9));
    }
    const double theta = rng.uniform(0.0, 3.14159265358979323846);
    const double gy = std::sin(theta), gx = std::cos(theta);
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const double t = 0.5 + 0.5 * ((y - h / 2.0) * gy + (x - w / 2.0) * gx) /
                                   (0.5 * std::hypot(double(h), double(w)));
        const double tc = std::clamp(t, 0.0, 1.0);
        for (int64_t ch = 0; ch < 3; ++ch)
          img.at(ch, y, x) = float((1 - tc) * c0[ch] + tc * c1[ch]);
      }
    const int n_shapes = int(rng.uniform_int(6, 14));
    for (int s = 0; s < n_shapes; ++s) {
      float col[3];
      for (int ch = 0; ch < 3; ++ch) col[ch] = float(rng.uniform(0.05, 0.95));
      const double cy = rng.uniform(0.0, double(h)), cx = rng.uniform(0.0, double(w));
      const double ry = rng.uniform(0.04, 0.22) * double(h);
      const double rx = rng.uniform(0.04, 0.22) * double(w);
      const bool disc = rng.uniform() < 0.5;
      const int64_t y0 = std::max<int64_t>(0, int64_t(cy - ry));
      const int64_t y1 = std::min<int64_t>(h - 1, int64_t(cy + ry));
      const int64_t x0 = std::max<int64_t>(0, int64_t(cx - rx));
      const int64_t x1 = std::min<int64_t>(w - 1, int64_t(cx + rx));
      for (int64_t y = y0; y <= y1; ++y)
        for (int64_t x = x0; x <= x1; ++x) {
          if (disc) {
            const double dy = (double(y) - cy) / ry, dx = (double(x) - cx) / rx;
            if (dy * dy + dx * dx > 1.0) continue;
          }
          for (int64_t ch = 0; ch < 3; ++ch) img.at(ch, y, x) = col[ch];
        }
    }
  } else if (kind == 1) {  // mosaic of independently colored grid cells
    const int cell = int(rng.uniform_int(8, 24));
    const int64_t ny = (h + cell - 1) / cell, nx = (w + cell - 1) / cell;
    std::vector<float> colors(size_t(ny * nx * 3));
    for (auto& c : colors) c = float(rng.uniform(0.08, 0.92));
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const int64_t cidx = (y / cell) * nx + (x / cell);
        for (int64_t ch = 0; ch < 3; ++ch) img.at(ch, y, x) = colors[size_t(cidx * 3 + ch)];
      }
  } else {  // Voronoi mosaic: irregular flat cells with independent colors
    const int n_sites = int(rng.uniform_int(12, 40));
    std::vector<double> sy(size_t(n_sites), 0.0), sx(size_t(n_sites), 0.0);
    std::vector<float> colors(size_t(n_sites) * 3);
    for (int s = 0; s < n_sites; ++s) {
      sy[size_t(s)] = rng.uniform(0.0, double(h));
      sx[size_t(s)] = rng.uniform(0.0, double(w));
      for (int ch = 0; ch < 3; ++ch) colors[size_t(s * 3 + ch)] = float(rng.uniform(0.08, 0.92));
    }
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        int best = 0;
        double best_d = std::numeric_limits<double>::max();
        for (int s = 0; s < n_sites; ++s) {
          const double dy = double(y) - sy[size_t(s)], dx = double(x) - sx[size_t(s)];
          const double d = dy * dy + dx * dx;
          if (d < best_d) {
            best_d = d;
            best = s;
          }
        }
        for (int64_t ch = 0; ch < 3; ++ch) img.at(ch, y, x) = colors[size_t(best * 3 + ch)];
      }
  }
  quantize8(img);
  return img;
}

}  // namespace qsnet
