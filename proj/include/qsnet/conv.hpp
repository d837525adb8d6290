#pragma once

#include <cblas.h>

#include <stdexcept>
#include <vector>

#include "qsnet/tensor.hpp"

namespace qsnet::nn {

// Stride-1 grouped 2-D convolution with zero padding chosen to preserve the
// spatial size (pad = dilation*(k-1)/2, odd kernels). Forward and backward are
// lowered to a single sgemm per group over the whole batch.
//
//   x: [N, IC, H, W]   w: [OC, IC/g, kh, kw]   b: [OC] or empty
//
// Layout of the im2col buffer: row r = (ic_local*kh + u)*kw + v, column
// j = (n*H + y)*W + x.

namespace detail {

inline void check_conv_args(const Tensor& x, const Tensor& w, const Tensor& b, int groups,
                            int dilation) {
  if (x.ndim() != 4 || w.ndim() != 4) throw std::invalid_argument("conv2d: need 4-D tensors");
  const int64_t ic = x.size(1), oc = w.size(0), kh = w.size(2), kw = w.size(3);
  if (groups < 1 || ic % groups || oc % groups)
    throw std::invalid_argument("conv2d: channels not divisible by groups");
  if (w.size(1) != ic / groups) throw std::invalid_argument("conv2d: weight in-channel mismatch");
  if (kh % 2 == 0 || kw % 2 == 0) throw std::invalid_argument("conv2d: kernels must be odd");
  if (dilation < 1) throw std::invalid_argument("conv2d: bad dilation");
  if (b.numel() != 0 && b.numel() != oc) throw std::invalid_argument("conv2d: bad bias size");
}

inline void im2col_group(const Tensor& x, int group, int icg, int kh, int kw, int dilation,
                         float* col) {
  const int64_t n_batch = x.size(0), ic = x.size(1), h = x.size(2), w = x.size(3);
  const int64_t hw = h * w, nhw = n_batch * hw;
  const int pad_h = dilation * (kh - 1) / 2, pad_w = dilation * (kw - 1) / 2;
  for (int c = 0; c < icg; ++c) {
    const float* src_chan = x.data.data() + (int64_t(group) * icg + c) * hw;
    for (int u = 0; u < kh; ++u) {
      for (int v = 0; v < kw; ++v) {
        float* row = col + ((int64_t(c) * kh + u) * kw + v) * nhw;
        const int dy = u * dilation - pad_h, dx = v * dilation - pad_w;
        for (int64_t n = 0; n < n_batch; ++n) {
          const float* src = src_chan + n * ic * hw;
          float* dst = row + n * hw;
          for (int64_t y = 0; y < h; ++y) {
            const int64_t sy = y + dy;
            float* drow = dst + y * w;
            if (sy < 0 || sy >= h) {
              std::fill(drow, drow + w, 0.0f);
              continue;
            }
            const float* srow = src + sy * w;
            // Clip the x range touched by this tap.
            int64_t x0 = std::max<int64_t>(0, -dx), x1 = std::min<int64_t>(w, w - dx);
            if (x0 > 0) std::fill(drow, drow + x0, 0.0f);
            if (x1 < w) std::fill(drow + std::max<int64_t>(x0, x1), drow + w, 0.0f);
            for (int64_t xx = x0; xx < x1; ++xx) drow[xx] = srow[xx + dx];
          }
        }
      }
    }
  }
}

// Adjoint of im2col_group: accumulates the column-space gradient back into gx.
inline void col2im_group(const float* col, int group, int icg, int kh, int kw, int dilation,
                         Tensor& gx) {
  const int64_t n_batch = gx.size(0), ic = gx.size(1), h = gx.size(2), w = gx.size(3);
  const int64_t hw = h * w, nhw = n_batch * hw;
  const int pad_h = dilation * (kh - 1) / 2, pad_w = dilation * (kw - 1) / 2;
  for (int c = 0; c < icg; ++c) {
    float* dst_chan = gx.data.data() + (int64_t(group) * icg + c) * hw;
    for (int u = 0; u < kh; ++u) {
      for (int v = 0; v < kw; ++v) {
        const float* row = col + ((int64_t(c) * kh + u) * kw + v) * nhw;
        const int dy = u * dilation - pad_h, dx = v * dilation - pad_w;
        for (int64_t n = 0; n < n_batch; ++n) {
          const float* src = row + n * hw;
          float* dst = dst_chan + n * ic * hw;
          for (int64_t y = 0; y < h; ++y) {
            const int64_t sy = y + dy;
            if (sy < 0 || sy >= h) continue;
            const float* srow = src + y * w;
            float* drow = dst + sy * w;
            int64_t x0 = std::max<int64_t>(0, -dx), x1 = std::min<int64_t>(w, w - dx);
            for (int64_t xx = x0; xx < x1; ++xx) drow[xx + dx] += srow[xx];
          }
        }
      }
    }
  }
}

// Gather gy's channels for one group into a contiguous [OCg, N*H*W] matrix.
inline void gather_group(const Tensor& t, int group, int ocg, std::vector<float>& buf) {
  const int64_t n_batch = t.size(0), c_all = t.size(1), hw = t.size(2) * t.size(3);
  buf.resize(size_t(ocg * n_batch * hw));
  for (int oc = 0; oc < ocg; ++oc)
    for (int64_t n = 0; n < n_batch; ++n) {
      const float* src = t.data.data() + (n * c_all + group * ocg + oc) * hw;
      std::copy(src, src + hw, buf.data() + (int64_t(oc) * n_batch + n) * hw);
    }
}

inline void scatter_group(const std::vector<float>& buf, int group, int ocg, const Tensor& bias,
                          Tensor& y) {
  const int64_t n_batch = y.size(0), c_all = y.size(1), hw = y.size(2) * y.size(3);
  for (int oc = 0; oc < ocg; ++oc) {
    const float bv = bias.numel() ? bias.data[size_t(group * ocg + oc)] : 0.0f;
    for (int64_t n = 0; n < n_batch; ++n) {
      const float* src = buf.data() + (int64_t(oc) * n_batch + n) * hw;
      float* dst = y.data.data() + (n * c_all + group * ocg + oc) * hw;
      for (int64_t i = 0; i < hw; ++i) dst[i] = src[i] + bv;
    }
  }
}

// As scatter_group, but the gemm produced [N*HW, OCg] (pixel-major).
inline void scatter_group_t(const std::vector<float>& buf, int group, int ocg, const Tensor& bias,
                            Tensor& y) {
  const int64_t n_batch = y.size(0), c_all = y.size(1), hw = y.size(2) * y.size(3);
  for (int oc = 0; oc < ocg; ++oc) {
    const float bv = bias.numel() ? bias.data[size_t(group * ocg + oc)] : 0.0f;
    for (int64_t n = 0; n < n_batch; ++n) {
      const float* src = buf.data() + n * hw * ocg + oc;
      float* dst = y.data.data() + (n * c_all + group * ocg + oc) * hw;
      for (int64_t i = 0; i < hw; ++i) dst[i] = src[i * ocg] + bv;
    }
  }
}

}  // namespace detail

inline Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int groups,
                             int dilation) {
  detail::check_conv_args(x, w, b, groups, dilation);
  const int64_t n = x.size(0), h = x.size(2), wd = x.size(3);
  const int icg = int(w.size(1)), oc = int(w.size(0)), ocg = oc / groups;
  const int kh = int(w.size(2)), kw = int(w.size(3));
  const int64_t k = int64_t(icg) * kh * kw, nhw = n * h * wd;

  Tensor y({n, oc, h, wd});
  std::vector<float> col(size_t(k * nhw));
  std::vector<float> ybuf(size_t(ocg * nhw));
  // With very few output channels (the 3-channel prediction heads) the
  // natural [OCg x NHW] gemm degenerates; orient it [NHW x OCg] instead.
  const bool tall = ocg < 8 && nhw >= 1024;
  for (int g = 0; g < groups; ++g) {
    detail::im2col_group(x, g, icg, kh, kw, dilation, col.data());
    if (tall) {
      cblas_sgemm(CblasRowMajor, CblasTrans, CblasTrans, int(nhw), ocg, int(k), 1.0f, col.data(),
                  int(nhw), w.data.data() + int64_t(g) * ocg * k, int(k), 0.0f, ybuf.data(), ocg);
      detail::scatter_group_t(ybuf, g, ocg, b, y);
    } else {
      cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, ocg, int(nhw), int(k), 1.0f,
                  w.data.data() + int64_t(g) * ocg * k, int(k), col.data(), int(nhw), 0.0f,
                  ybuf.data(), int(nhw));
      detail::scatter_group(ybuf, g, ocg, b, y);
    }
  }
  return y;
}

// Accumulates into gx/gw/gb when non-null; they must be pre-sized (zeroed or
// carrying prior gradient).
inline void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gy, int groups,
                            int dilation, Tensor* gx, Tensor* gw, Tensor* gb) {
  const int64_t n = x.size(0), h = x.size(2), wd = x.size(3);
  const int icg = int(w.size(1)), oc = int(w.size(0)), ocg = oc / groups;
  const int kh = int(w.size(2)), kw = int(w.size(3));
  const int64_t k = int64_t(icg) * kh * kw, nhw = n * h * wd;

  std::vector<float> col, gybuf, gcol;
  if (gw || gx) col.resize(size_t(k * nhw));
  if (gx) gcol.resize(size_t(k * nhw));
  for (int g = 0; g < groups; ++g) {
    detail::gather_group(gy, g, ocg, gybuf);
    if (gb) {
      for (int o = 0; o < ocg; ++o) {
        double acc = 0.0;
        const float* row = gybuf.data() + int64_t(o) * nhw;
        for (int64_t i = 0; i < nhw; ++i) acc += row[i];
        gb->data[size_t(g * ocg + o)] += float(acc);
      }
    }
    if (gw || gx) detail::im2col_group(x, g, icg, kh, kw, dilation, col.data());
    if (gw) {
      cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, ocg, int(k), int(nhw), 1.0f,
                  gybuf.data(), int(nhw), col.data(), int(nhw), 1.0f,
                  gw->data.data() + int64_t(g) * ocg * k, int(k));
    }
    if (gx) {
      cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, int(k), int(nhw), ocg, 1.0f,
                  w.data.data() + int64_t(g) * ocg * k, int(k), gybuf.data(), int(nhw), 0.0f,
                  gcol.data(), int(nhw));
      detail::col2im_group(gcol.data(), g, icg, kh, kw, dilation, *gx);
    }
  }
}

// Depthwise 3x3, stride 1, pad=dilation. Direct loops; the M=1 gemm the
// generic path would produce is slower than this.
inline Tensor depthwise3x3_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                                   int dilation = 1) {
  if (w.size(0) != x.size(1) || w.size(1) != 1 || w.size(2) != 3 || w.size(3) != 3)
    throw std::invalid_argument("depthwise3x3: weight must be [C,1,3,3]");
  const int64_t n = x.size(0), c = x.size(1), h = x.size(2), wd = x.size(3);
  const int64_t hw = h * wd;
  const int d = dilation;
  Tensor y({n, c, h, wd});
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const int64_t ch = nc % c;
    const float* src = x.data.data() + nc * hw;
    const float* kw9 = w.data.data() + ch * 9;
    const float bv = b.numel() ? b.data[size_t(ch)] : 0.0f;
    float* dst = y.data.data() + nc * hw;
    for (int64_t y0 = 0; y0 < h; ++y0) {
      for (int64_t x0 = 0; x0 < wd; ++x0) {
        float acc = bv;
        for (int u = 0; u < 3; ++u) {
          const int64_t sy = y0 + int64_t(u - 1) * d;
          if (sy < 0 || sy >= h) continue;
          for (int v = 0; v < 3; ++v) {
            const int64_t sx = x0 + int64_t(v - 1) * d;
            if (sx < 0 || sx >= wd) continue;
            acc += kw9[u * 3 + v] * src[sy * wd + sx];
          }
        }
        dst[y0 * wd + x0] = acc;
      }
    }
  }
  return y;
}

inline void depthwise3x3_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                                  int dilation, Tensor* gx, Tensor* gw, Tensor* gb) {
  const int64_t n = x.size(0), c = x.size(1), h = x.size(2), wd = x.size(3);
  const int64_t hw = h * wd;
  const int d = dilation;
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const int64_t ch = nc % c;
    const float* src = x.data.data() + nc * hw;
    const float* g = gy.data.data() + nc * hw;
    const float* kw9 = w.data.data() + ch * 9;
    float* gxp = gx ? gx->data.data() + nc * hw : nullptr;
    float* gwp = gw ? gw->data.data() + ch * 9 : nullptr;
    if (gb) {
      double acc = 0.0;
      for (int64_t i = 0; i < hw; ++i) acc += g[i];
      gb->data[size_t(ch)] += float(acc);
    }
    for (int64_t y0 = 0; y0 < h; ++y0) {
      for (int64_t x0 = 0; x0 < wd; ++x0) {
        const float gval = g[y0 * wd + x0];
        if (gval == 0.0f) continue;
        for (int u = 0; u < 3; ++u) {
          const int64_t sy = y0 + int64_t(u - 1) * d;
          if (sy < 0 || sy >= h) continue;
          for (int v = 0; v < 3; ++v) {
            const int64_t sx = x0 + int64_t(v - 1) * d;
            if (sx < 0 || sx >= wd) continue;
            if (gwp) gwp[u * 3 + v] += gval * src[sy * wd + sx];
            if (gxp) gxp[sy * wd + sx] += gval * kw9[u * 3 + v];
          }
        }
      }
    }
  }
}

}  // namespace qsnet::nn
