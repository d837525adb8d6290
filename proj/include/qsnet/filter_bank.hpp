#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace qsnet {

// Bank of four small derivative filters: first and second differences along
// x and y. Responses of natural images under these filters are the signals
// whose sparsity the toolkit measures, and their L1 norm is the
// quasi-sparsity training penalty.
struct FilterTap {
  int dy, dx;
  float coeff;
};

inline const std::array<std::vector<FilterTap>, 4>& derivative_filters() {
  static const std::array<std::vector<FilterTap>, 4> bank = {{
      {{0, 0, -1.0f}, {0, 1, 1.0f}},                  // d/dx
      {{0, 0, -1.0f}, {1, 0, 1.0f}},                  // d/dy
      {{0, -1, 1.0f}, {0, 0, -2.0f}, {0, 1, 1.0f}},   // d2/dx2
      {{-1, 0, 1.0f}, {0, 0, -2.0f}, {1, 0, 1.0f}},   // d2/dy2
  }};
  return bank;
}

constexpr int kNumFilters = 4;

// Symmetric boundary handling (edge pixel mirrored including itself); for the
// one-pixel overhang these filters need it coincides with edge replication,
// so first differences vanish at the border instead of inventing a jump.
inline int64_t reflect_index(int64_t i, int64_t n) {
  if (i < 0) return -i - 1;
  if (i >= n) return 2 * n - 1 - i;
  return i;
}

inline void apply_filter_plane(const float* src, int64_t h, int64_t w,
                               const std::vector<FilterTap>& taps, float* dst) {
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (const auto& t : taps)
        acc += t.coeff * src[reflect_index(y + t.dy, h) * w + reflect_index(x + t.dx, w)];
      dst[y * w + x] = acc;
    }
}

// Adjoint of apply_filter_plane: scatter-adds g through the same index map.
inline void apply_filter_plane_adjoint(const float* g, int64_t h, int64_t w,
                                       const std::vector<FilterTap>& taps, float* dst) {
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const float gv = g[y * w + x];
      if (gv == 0.0f) continue;
      for (const auto& t : taps)
        dst[reflect_index(y + t.dy, h) * w + reflect_index(x + t.dx, w)] += t.coeff * gv;
    }
}

// All four filters over every channel of a planar image. Output plane order
// is filter-major: plane f*channels + c holds filter f applied to channel c.
inline std::vector<float> filter_bank_planes(const float* src, int64_t channels, int64_t h,
                                             int64_t w) {
  std::vector<float> out(size_t(kNumFilters * channels * h * w));
  const auto& bank = derivative_filters();
  for (int f = 0; f < kNumFilters; ++f)
    for (int64_t c = 0; c < channels; ++c)
      apply_filter_plane(src + c * h * w, h, w, bank[size_t(f)],
                         out.data() + (int64_t(f) * channels + c) * h * w);
  return out;
}

}  // namespace qsnet
