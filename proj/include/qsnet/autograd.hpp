#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "qsnet/conv.hpp"
#include "qsnet/filter_bank.hpp"
#include "qsnet/tensor.hpp"

// Define-by-run reverse-mode autodiff. Ops append a backward closure to a
// Tape while computing the forward value; Tape::backward walks the closures
// in reverse. Passing tape == nullptr runs any op forward-only.

namespace qsnet::ag {

struct Variable {
  Tensor val;
  Tensor grad;  // allocated lazily; empty means "no gradient reached this node yet"
  bool requires_grad = false;
  // Scalar reductions keep their double-precision value here so that loss
  // accounting is not limited to float resolution.
  double scalar_hi = 0.0;
  bool has_scalar_hi = false;

  Variable(Tensor v, bool rg) : val(std::move(v)), requires_grad(rg) {}

  void ensure_grad() {
    if (grad.numel() == 0) grad = Tensor(val.shape, 0.0f);
  }
  void zero_grad() {
    if (grad.numel()) grad.fill(0.0f);
  }
};

using Var = std::shared_ptr<Variable>;

inline Var make_var(Tensor t, bool requires_grad = false) {
  return std::make_shared<Variable>(std::move(t), requires_grad);
}

inline Var make_scalar(double v, bool requires_grad) {
  Var out = make_var(Tensor({1}, float(v)), requires_grad);
  out->scalar_hi = v;
  out->has_scalar_hi = true;
  return out;
}

inline double scalar_value(const Var& v) {
  if (v->val.numel() != 1) throw std::invalid_argument("scalar_value: not a scalar");
  return v->has_scalar_hi ? v->scalar_hi : double(v->val.data[0]);
}

class Tape {
 public:
  void record(std::function<void()> f) { ops_.push_back(std::move(f)); }

  void backward(const Var& root) {
    if (root->val.numel() != 1)
      throw std::invalid_argument("Tape::backward: root must be a scalar");
    root->ensure_grad();
    root->grad.data[0] = 1.0f;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  size_t size() const { return ops_.size(); }

 private:
  std::vector<std::function<void()>> ops_;
};

namespace detail {
// A node propagates iff some input wants a gradient. Closures bail out when
// no gradient ever reached their output, which prunes dead subgraphs.
inline bool track(Tape* tape, std::initializer_list<const Var*> ins) {
  if (!tape) return false;
  for (const Var* v : ins)
    if (*v && (*v)->requires_grad) return true;
  return false;
}
inline bool pending(const Var& out) { return out->grad.numel() != 0; }
}  // namespace detail

// ---- elementwise ----

inline Var relu(Tape* tape, const Var& x) {
  Tensor y = x->val;
  for (auto& v : y.data) v = v > 0.0f ? v : 0.0f;
  Var out = make_var(std::move(y), detail::track(tape, {&x}));
  if (out->requires_grad)
    tape->record([x, out] {
      if (!detail::pending(out)) return;
      x->ensure_grad();
      const size_t n = x->val.data.size();
      for (size_t i = 0; i < n; ++i)
        if (x->val.data[i] > 0.0f) x->grad.data[i] += out->grad.data[i];
    });
  return out;
}

inline Var add(Tape* tape, const Var& a, const Var& b) {
  check_same_shape(a->val, b->val, "add");
  Tensor y = a->val;
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += b->val.data[i];
  Var out = make_var(std::move(y), detail::track(tape, {&a, &b}));
  if (out->requires_grad)
    tape->record([a, b, out] {
      if (!detail::pending(out)) return;
      const size_t n = out->grad.data.size();
      if (a->requires_grad) {
        a->ensure_grad();
        for (size_t i = 0; i < n; ++i) a->grad.data[i] += out->grad.data[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (size_t i = 0; i < n; ++i) b->grad.data[i] += out->grad.data[i];
      }
    });
  return out;
}

inline Var sub(Tape* tape, const Var& a, const Var& b) {
  check_same_shape(a->val, b->val, "sub");
  Tensor y = a->val;
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] -= b->val.data[i];
  Var out = make_var(std::move(y), detail::track(tape, {&a, &b}));
  if (out->requires_grad)
    tape->record([a, b, out] {
      if (!detail::pending(out)) return;
      const size_t n = out->grad.data.size();
      if (a->requires_grad) {
        a->ensure_grad();
        for (size_t i = 0; i < n; ++i) a->grad.data[i] += out->grad.data[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (size_t i = 0; i < n; ++i) b->grad.data[i] -= out->grad.data[i];
      }
    });
  return out;
}

inline Var scale(Tape* tape, const Var& x, float k) {
  Tensor y = x->val;
  for (auto& v : y.data) v *= k;
  Var out = make_var(std::move(y), detail::track(tape, {&x}));
  if (x->has_scalar_hi) {
    out->scalar_hi = double(k) * x->scalar_hi;
    out->has_scalar_hi = true;
  }
  if (out->requires_grad)
    tape->record([x, out, k] {
      if (!detail::pending(out)) return;
      x->ensure_grad();
      for (size_t i = 0; i < x->grad.data.size(); ++i) x->grad.data[i] += k * out->grad.data[i];
    });
  return out;
}

// Elementwise product with a constant mask of shape [N,1,H,W] (broadcast over
// channels) or the full shape of x.
inline Var mul_mask(Tape* tape, const Var& x, const std::shared_ptr<Tensor>& mask) {
  const bool bcast = mask->ndim() == 4 && mask->size(1) == 1 && x->val.size(1) != 1;
  if (!bcast) check_same_shape(x->val, *mask, "mul_mask");
  const int64_t n = x->val.size(0), c = x->val.size(1);
  const int64_t hw = x->val.size(2) * x->val.size(3);
  auto mask_at = [&](int64_t i) {
    if (!bcast) return mask->data[size_t(i)];
    const int64_t img = i / (c * hw), px = i % hw;
    return mask->data[size_t(img * hw + px)];
  };
  Tensor y = x->val;
  for (int64_t i = 0; i < n * c * hw; ++i) y.data[size_t(i)] *= mask_at(i);
  Var out = make_var(std::move(y), detail::track(tape, {&x}));
  if (out->requires_grad)
    tape->record([x, out, mask, bcast, c, hw] {
      if (!detail::pending(out)) return;
      x->ensure_grad();
      for (size_t i = 0; i < x->grad.data.size(); ++i) {
        const float m = bcast ? mask->data[size_t((int64_t(i) / (c * hw)) * hw + int64_t(i) % hw)]
                              : mask->data[i];
        x->grad.data[i] += m * out->grad.data[i];
      }
    });
  return out;
}

// ---- reductions (double accumulation, scalar output) ----

inline Var mean_all(Tape* tape, const Var& x) {
  double acc = 0.0;
  for (float v : x->val.data) acc += double(v);
  const double inv_n = 1.0 / double(x->val.numel());
  Var out = make_scalar(acc * inv_n, detail::track(tape, {&x}));
  if (out->requires_grad)
    tape->record([x, out, inv_n] {
      if (!detail::pending(out)) return;
      x->ensure_grad();
      const float g = out->grad.data[0] * float(inv_n);
      for (size_t i = 0; i < x->grad.data.size(); ++i) x->grad.data[i] += g;
    });
  return out;
}

inline Var mean_abs(Tape* tape, const Var& x) {
  double acc = 0.0;
  for (float v : x->val.data) acc += std::abs(double(v));
  const double inv_n = 1.0 / double(x->val.numel());
  Var out = make_scalar(acc * inv_n, detail::track(tape, {&x}));
  if (out->requires_grad)
    tape->record([x, out, inv_n] {
      if (!detail::pending(out)) return;
      x->ensure_grad();
      const float g = out->grad.data[0] * float(inv_n);
      for (size_t i = 0; i < x->val.data.size(); ++i) {
        const float v = x->val.data[i];
        if (v > 0.0f)
          x->grad.data[i] += g;
        else if (v < 0.0f)
          x->grad.data[i] -= g;  // subgradient 0 at the kink
      }
    });
  return out;
}

inline Var mean_sq(Tape* tape, const Var& x) {
  double acc = 0.0;
  for (float v : x->val.data) acc += double(v) * double(v);
  const double inv_n = 1.0 / double(x->val.numel());
  Var out = make_scalar(acc * inv_n, detail::track(tape, {&x}));
  if (out->requires_grad)
    tape->record([x, out, inv_n] {
      if (!detail::pending(out)) return;
      x->ensure_grad();
      const float g = out->grad.data[0] * float(2.0 * inv_n);
      for (size_t i = 0; i < x->val.data.size(); ++i) x->grad.data[i] += g * x->val.data[i];
    });
  return out;
}

// total = sum_i coeff_i * scalar_i
inline Var weighted_sum(Tape* tape, const std::vector<std::pair<float, Var>>& terms) {
  double acc = 0.0;
  bool rg = false;
  for (const auto& [k, v] : terms) {
    if (v->val.numel() != 1) throw std::invalid_argument("weighted_sum: terms must be scalars");
    acc += double(k) * scalar_value(v);
    rg = rg || (tape && v->requires_grad);
  }
  Var out = make_scalar(acc, rg);
  if (out->requires_grad)
    tape->record([terms, out] {
      if (!detail::pending(out)) return;
      for (const auto& [k, v] : terms)
        if (v->requires_grad) {
          v->ensure_grad();
          v->grad.data[0] += k * out->grad.data[0];
        }
    });
  return out;
}

// ---- structural ----

inline Var channel_shuffle(Tape* tape, const Var& x, int groups) {
  const int64_t n = x->val.size(0), c = x->val.size(1);
  const int64_t hw = x->val.size(2) * x->val.size(3);
  if (c % groups) throw std::invalid_argument("channel_shuffle: channels not divisible");
  const int64_t cg = c / groups;
  Tensor y(x->val.shape);
  for (int64_t img = 0; img < n; ++img)
    for (int64_t g = 0; g < groups; ++g)
      for (int64_t j = 0; j < cg; ++j) {
        const float* src = x->val.data.data() + ((img * c) + g * cg + j) * hw;
        float* dst = y.data.data() + ((img * c) + j * groups + g) * hw;
        std::copy(src, src + hw, dst);
      }
  Var out = make_var(std::move(y), detail::track(tape, {&x}));
  if (out->requires_grad)
    tape->record([x, out, groups, n, c, cg, hw] {
      if (!detail::pending(out)) return;
      x->ensure_grad();
      for (int64_t img = 0; img < n; ++img)
        for (int64_t g = 0; g < groups; ++g)
          for (int64_t j = 0; j < cg; ++j) {
            const float* src = out->grad.data.data() + ((img * c) + j * groups + g) * hw;
            float* dst = x->grad.data.data() + ((img * c) + g * cg + j) * hw;
            for (int64_t i = 0; i < hw; ++i) dst[i] += src[i];
          }
    });
  return out;
}

inline Var concat_channels(Tape* tape, const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: empty input");
  const int64_t n = xs[0]->val.size(0), h = xs[0]->val.size(2), w = xs[0]->val.size(3);
  int64_t c_total = 0;
  bool rg = false;
  for (const auto& x : xs) {
    if (x->val.size(0) != n || x->val.size(2) != h || x->val.size(3) != w)
      throw std::invalid_argument("concat_channels: shape mismatch");
    c_total += x->val.size(1);
    rg = rg || (tape && x->requires_grad);
  }
  const int64_t hw = h * w;
  Tensor y({n, c_total, h, w});
  int64_t c_off = 0;
  for (const auto& x : xs) {
    const int64_t c = x->val.size(1);
    for (int64_t img = 0; img < n; ++img)
      std::copy(x->val.data.data() + img * c * hw, x->val.data.data() + (img + 1) * c * hw,
                y.data.data() + (img * c_total + c_off) * hw);
    c_off += c;
  }
  Var out = make_var(std::move(y), rg);
  if (out->requires_grad)
    tape->record([xs, out, n, c_total, hw] {
      if (!detail::pending(out)) return;
      int64_t c_off = 0;
      for (const auto& x : xs) {
        const int64_t c = x->val.size(1);
        if (x->requires_grad) {
          x->ensure_grad();
          for (int64_t img = 0; img < n; ++img) {
            const float* src = out->grad.data.data() + (img * c_total + c_off) * hw;
            float* dst = x->grad.data.data() + img * c * hw;
            for (int64_t i = 0; i < c * hw; ++i) dst[i] += src[i];
          }
        }
        c_off += c;
      }
    });
  return out;
}

// ---- convolution ----

inline Var conv2d(Tape* tape, const Var& x, const Var& w, const Var& b, int groups,
                  int dilation = 1) {
  Tensor y = nn::conv2d_forward(x->val, w->val, b ? b->val : Tensor{}, groups, dilation);
  const bool rg = b ? detail::track(tape, {&x, &w, &b}) : detail::track(tape, {&x, &w});
  Var out = make_var(std::move(y), rg);
  if (out->requires_grad)
    tape->record([x, w, b, out, groups, dilation] {
      if (!detail::pending(out)) return;
      Tensor* gx = nullptr;
      Tensor* gw = nullptr;
      Tensor* gb = nullptr;
      if (x->requires_grad) {
        x->ensure_grad();
        gx = &x->grad;
      }
      if (w->requires_grad) {
        w->ensure_grad();
        gw = &w->grad;
      }
      if (b && b->requires_grad) {
        b->ensure_grad();
        gb = &b->grad;
      }
      nn::conv2d_backward(x->val, w->val, out->grad, groups, dilation, gx, gw, gb);
    });
  return out;
}

inline Var depthwise3x3(Tape* tape, const Var& x, const Var& w, const Var& b, int dilation = 1) {
  Tensor y = nn::depthwise3x3_forward(x->val, w->val, b ? b->val : Tensor{}, dilation);
  const bool rg = b ? detail::track(tape, {&x, &w, &b}) : detail::track(tape, {&x, &w});
  Var out = make_var(std::move(y), rg);
  if (out->requires_grad)
    tape->record([x, w, b, out, dilation] {
      if (!detail::pending(out)) return;
      Tensor* gx = nullptr;
      Tensor* gw = nullptr;
      Tensor* gb = nullptr;
      if (x->requires_grad) {
        x->ensure_grad();
        gx = &x->grad;
      }
      if (w->requires_grad) {
        w->ensure_grad();
        gw = &w->grad;
      }
      if (b && b->requires_grad) {
        b->ensure_grad();
        gb = &b->grad;
      }
      nn::depthwise3x3_backward(x->val, w->val, out->grad, dilation, gx, gw, gb);
    });
  return out;
}

// Responses of the fixed derivative filter bank, applied per channel with
// symmetric borders. Output is [N, 4*C, H, W], filter-major.
inline Var filter_bank(Tape* tape, const Var& x) {
  const int64_t n = x->val.size(0), c = x->val.size(1), h = x->val.size(2), w = x->val.size(3);
  const int64_t hw = h * w;
  const auto& bank = derivative_filters();
  Tensor y({n, kNumFilters * c, h, w});
  for (int64_t img = 0; img < n; ++img)
    for (int f = 0; f < kNumFilters; ++f)
      for (int64_t ch = 0; ch < c; ++ch)
        apply_filter_plane(x->val.data.data() + (img * c + ch) * hw, h, w, bank[size_t(f)],
                           y.data.data() + ((img * kNumFilters + f) * c + ch) * hw);
  Var out = make_var(std::move(y), detail::track(tape, {&x}));
  if (out->requires_grad)
    tape->record([x, out, n, c, h, w, hw, &bank] {
      if (!detail::pending(out)) return;
      x->ensure_grad();
      for (int64_t img = 0; img < n; ++img)
        for (int f = 0; f < kNumFilters; ++f)
          for (int64_t ch = 0; ch < c; ++ch)
            apply_filter_plane_adjoint(
                out->grad.data.data() + ((img * kNumFilters + f) * c + ch) * hw, h, w,
                bank[size_t(f)], x->grad.data.data() + (img * c + ch) * hw);
    });
  return out;
}

}  // namespace qsnet::ag
