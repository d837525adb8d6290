#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "qsnet/image.hpp"

namespace qsnet {

constexpr double kPsnrCapDb = 100.0;

// PSNR in dB over all channels, data range [0,1]. Identical images are
// reported as the cap rather than infinity.
inline double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
  double se = 0.0;
  for (size_t i = 0; i < a.px.size(); ++i) {
    const double d = double(a.px[i]) - double(b.px[i]);
    se += d * d;
  }
  const double mse = se / double(a.numel());
  if (mse <= 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

// PSNR computed per channel and averaged; each channel is capped separately.
inline double psnr_channel_mean(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("psnr_channel_mean: shape mismatch");
  const int64_t plane = a.h * a.w;
  double acc = 0.0;
  for (int64_t ch = 0; ch < a.c; ++ch) {
    double se = 0.0;
    for (int64_t i = 0; i < plane; ++i) {
      const double d = double(a.px[size_t(ch * plane + i)]) - double(b.px[size_t(ch * plane + i)]);
      se += d * d;
    }
    const double mse = se / double(plane);
    acc += mse <= 0.0 ? kPsnrCapDb : std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
  }
  return acc / double(a.c);
}

// PSNR over the luma plane only.
inline double psnr_luma(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("psnr_luma: shape mismatch");
  const auto la = a.luma(), lb = b.luma();
  double se = 0.0;
  for (size_t i = 0; i < la.size(); ++i) {
    const double d = double(la[i]) - double(lb[i]);
    se += d * d;
  }
  const double mse = se / double(la.size());
  if (mse <= 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

namespace detail {

inline std::vector<double> gaussian_window11() {
  std::vector<double> w(11);
  const double sigma = 1.5;
  double sum = 0.0;
  for (int i = 0; i < 11; ++i) {
    const double d = i - 5;
    w[size_t(i)] = std::exp(-d * d / (2 * sigma * sigma));
    sum += w[size_t(i)];
  }
  for (auto& v : w) v /= sum;
  return w;
}

// Separable valid-mode filtering with an 11-tap window. Output is
// (h-10) x (w-10).
inline std::vector<double> window_filter(const std::vector<double>& src, int64_t h, int64_t w) {
  static const std::vector<double> win = gaussian_window11();
  const int64_t wo = w - 10, ho = h - 10;
  std::vector<double> rows(size_t(h * wo)), out(size_t(ho * wo));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < wo; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 11; ++k) acc += win[size_t(k)] * src[size_t(y * w + x + k)];
      rows[size_t(y * wo + x)] = acc;
    }
  for (int64_t y = 0; y < ho; ++y)
    for (int64_t x = 0; x < wo; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 11; ++k) acc += win[size_t(k)] * rows[size_t((y + k) * wo + x)];
      out[size_t(y * wo + x)] = acc;
    }
  return out;
}

}  // namespace detail

// Mean structural similarity over the luma plane: 11x11 Gaussian window
// (sigma 1.5), valid mode, stabilizers C1=(0.01)^2 and C2=(0.03)^2 for unit
// data range.
inline double ssim(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
  if (a.h < 11 || a.w < 11) throw std::invalid_argument("ssim: image smaller than window");
  const auto la = a.luma(), lb = b.luma();
  const int64_t h = a.h, w = a.w;
  std::vector<double> xa(la.begin(), la.end()), xb(lb.begin(), lb.end());
  std::vector<double> xaa(xa.size()), xbb(xa.size()), xab(xa.size());
  for (size_t i = 0; i < xa.size(); ++i) {
    xaa[i] = xa[i] * xa[i];
    xbb[i] = xb[i] * xb[i];
    xab[i] = xa[i] * xb[i];
  }
  const auto mu_a = detail::window_filter(xa, h, w);
  const auto mu_b = detail::window_filter(xb, h, w);
  const auto m_aa = detail::window_filter(xaa, h, w);
  const auto m_bb = detail::window_filter(xbb, h, w);
  const auto m_ab = detail::window_filter(xab, h, w);

  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double acc = 0.0;
  for (size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = m_aa[i] - ma * ma;
    const double vb = m_bb[i] - mb * mb;
    const double cov = m_ab[i] - ma * mb;
    acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return acc / double(mu_a.size());
}

}  // namespace qsnet
