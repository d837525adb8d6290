#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "qsnet/tensor.hpp"

namespace qsnet {

// Planar float image, values nominally in [0,1]. Plane-major layout matches
// the tensor code: px[(c*h + y)*w + x].
struct Image {
  int64_t h = 0, w = 0, c = 0;
  std::vector<float> px;

  Image() = default;
  Image(int64_t h_, int64_t w_, int64_t c_, float fill = 0.0f)
      : h(h_), w(w_), c(c_), px(size_t(h_ * w_ * c_), fill) {}

  int64_t numel() const { return h * w * c; }
  float& at(int64_t ch, int64_t y, int64_t x) { return px[size_t((ch * h + y) * w + x)]; }
  float at(int64_t ch, int64_t y, int64_t x) const { return px[size_t((ch * h + y) * w + x)]; }
  float* plane(int64_t ch) { return px.data() + ch * h * w; }
  const float* plane(int64_t ch) const { return px.data() + ch * h * w; }

  bool same_shape(const Image& o) const { return h == o.h && w == o.w && c == o.c; }

  Image crop(int64_t y0, int64_t x0, int64_t ch_, int64_t cw_) const {
    if (y0 < 0 || x0 < 0 || y0 + ch_ > h || x0 + cw_ > w)
      throw std::out_of_range("Image::crop: window outside image");
    Image out(ch_, cw_, c);
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < ch_; ++y)
        std::copy(plane(ch) + (y0 + y) * w + x0, plane(ch) + (y0 + y) * w + x0 + cw_,
                  out.plane(ch) + y * cw_);
    return out;
  }

  void clamp01() {
    for (auto& v : px) v = std::clamp(v, 0.0f, 1.0f);
  }

  // BT.601 luma; single-channel images pass through.
  std::vector<float> luma() const {
    std::vector<float> out(size_t(h * w));
    if (c == 1) {
      std::copy(px.begin(), px.end(), out.begin());
      return out;
    }
    if (c != 3) throw std::invalid_argument("Image::luma: need 1 or 3 channels");
    for (int64_t i = 0; i < h * w; ++i)
      out[size_t(i)] = 0.299f * px[size_t(i)] + 0.587f * px[size_t(h * w + i)] +
                       0.114f * px[size_t(2 * h * w + i)];
    return out;
  }

  Tensor to_tensor() const {
    Tensor t({1, c, h, w});
    std::copy(px.begin(), px.end(), t.data.begin());
    return t;
  }

  static Image from_tensor(const Tensor& t, int64_t batch_index = 0) {
    if (t.ndim() != 4) throw std::invalid_argument("Image::from_tensor: need NCHW");
    Image out(t.size(2), t.size(3), t.size(1));
    const int64_t per = t.size(1) * t.size(2) * t.size(3);
    std::copy(t.data.begin() + batch_index * per, t.data.begin() + (batch_index + 1) * per,
              out.px.begin());
    return out;
  }
};

// Snap to the 8-bit grid used by the PNG files so in-memory pixels and their
// serialized form agree exactly.
inline float quantize8(float v) {
  const float q = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f);
  return q / 255.0f;
}

inline void quantize8(Image& img) {
  for (auto& v : img.px) v = quantize8(v);
}

}  // namespace qsnet
