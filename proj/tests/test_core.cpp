#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "qsnet/autograd.hpp"
#include "qsnet/conv.hpp"
#include "qsnet/rng.hpp"
#include "qsnet/tensor.hpp"

using namespace qsnet;

namespace {

// Reference convolution: plain nested loops, zero padding, stride 1.
Tensor conv_naive(const Tensor& x, const Tensor& w, const Tensor& b, int groups, int dilation) {
  const int64_t n = x.size(0), ic = x.size(1), h = x.size(2), wd = x.size(3);
  const int64_t oc = w.size(0), icg = w.size(1), kh = w.size(2), kw = w.size(3);
  const int64_t ocg = oc / groups;
  const int64_t ph = dilation * (kh - 1) / 2, pw = dilation * (kw - 1) / 2;
  Tensor y({n, oc, h, wd});
  for (int64_t img = 0; img < n; ++img)
    for (int64_t o = 0; o < oc; ++o) {
      const int64_t g = o / ocg;
      for (int64_t yy = 0; yy < h; ++yy)
        for (int64_t xx = 0; xx < wd; ++xx) {
          double acc = b.numel() ? b.data[size_t(o)] : 0.0;
          for (int64_t c = 0; c < icg; ++c)
            for (int64_t u = 0; u < kh; ++u)
              for (int64_t v = 0; v < kw; ++v) {
                const int64_t sy = yy + u * dilation - ph, sx = xx + v * dilation - pw;
                if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
                acc += double(w.at(o, c, u, v)) * double(x.at(img, g * icg + c, sy, sx));
              }
          y.at(img, o, yy, xx) = float(acc);
        }
    }
  return y;
}

double max_rel_err(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = std::abs(double(a.data[i]) - double(b.data[i]));
    const double scale = std::max({std::abs(double(a.data[i])), std::abs(double(b.data[i])), 1e-6});
    worst = std::max(worst, d / scale);
  }
  return worst;
}

// Mixed tolerance for float32 kernels checked against a double oracle: the
// accumulation order differs, so near-zero outputs carry absolute noise.
void expect_close(const Tensor& got, const Tensor& want, double atol, double rtol,
                  const char* what) {
  ASSERT_EQ(got.numel(), want.numel()) << what;
  for (size_t i = 0; i < got.data.size(); ++i) {
    const double d = std::abs(double(got.data[i]) - double(want.data[i]));
    ASSERT_LE(d, atol + rtol * std::abs(double(want.data[i]))) << what << " at " << i;
  }
}

double dot(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) acc += double(a.data[i]) * double(b.data[i]);
  return acc;
}

// inner(x, m) as an autograd scalar: numel * mean(x .* m)
ag::Var inner_with(ag::Tape* tape, const ag::Var& x, const std::shared_ptr<Tensor>& m) {
  auto prod = ag::mul_mask(tape, x, m);
  return ag::scale(tape, ag::mean_all(tape, prod), float(x->val.numel()));
}

struct ConvCase {
  int64_t n, ic, oc, h, w;
  int k, groups, dilation;
  bool bias;
};

}  // namespace

TEST(Rng, DeterministicAndBounded) {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng r(7);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    const int64_t k = r.uniform_int(3, 9);
    EXPECT_GE(k, 3);
    EXPECT_LE(k, 9);
  }
}

TEST(Rng, MomentsRoughlyCorrect) {
  Rng r(123);
  double sn = 0, sn2 = 0, sl = 0, sl_abs = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    sn += z;
    sn2 += z * z;
    const double l = r.laplace(0.25);
    sl += l;
    sl_abs += std::abs(l);
  }
  EXPECT_NEAR(sn / n, 0.0, 0.02);
  EXPECT_NEAR(sn2 / n, 1.0, 0.03);
  EXPECT_NEAR(sl / n, 0.0, 0.02);
  EXPECT_NEAR(sl_abs / n, 0.25, 0.01);  // E|x| = s for Laplace(s)
}

TEST(Rng, ForkGivesDistinctStreams) {
  Rng r(99);
  Rng f1 = r.fork(1), f2 = r.fork(2);
  int same = 0;
  for (int i = 0; i < 100; ++i) same += (f1.next_u64() == f2.next_u64());
  EXPECT_EQ(same, 0);
}

TEST(Conv, ForwardMatchesNaive) {
  const ConvCase cases[] = {
      {2, 3, 8, 9, 11, 3, 1, 1, true},  {1, 8, 8, 6, 6, 3, 4, 1, true},
      {2, 8, 4, 5, 7, 1, 1, 1, false},  {1, 8, 8, 12, 12, 3, 2, 4, true},
      {2, 4, 6, 10, 8, 3, 2, 2, false}, {1, 6, 6, 16, 16, 3, 1, 6, true},
      {3, 4, 8, 8, 8, 5, 2, 1, true},
  };
  Rng rng(5);
  for (const auto& cc : cases) {
    Tensor x = Tensor::uniform({cc.n, cc.ic, cc.h, cc.w}, rng, -1.0f, 1.0f);
    Tensor w = Tensor::uniform({cc.oc, cc.ic / cc.groups, cc.k, cc.k}, rng, -0.5f, 0.5f);
    Tensor b = cc.bias ? Tensor::uniform({cc.oc}, rng, -0.2f, 0.2f) : Tensor{};
    Tensor got = nn::conv2d_forward(x, w, b, cc.groups, cc.dilation);
    Tensor want = conv_naive(x, w, b, cc.groups, cc.dilation);
    expect_close(got, want, 1e-5, 1e-4, "conv forward");
  }
}

TEST(Conv, DepthwiseMatchesGenericGroupedPath) {
  Rng rng(6);
  for (int dilation : {1, 2}) {
    Tensor x = Tensor::uniform({2, 8, 10, 9}, rng, -1.0f, 1.0f);
    Tensor w = Tensor::uniform({8, 1, 3, 3}, rng, -0.5f, 0.5f);
    Tensor b = Tensor::uniform({8}, rng, -0.2f, 0.2f);
    Tensor got = nn::depthwise3x3_forward(x, w, b, dilation);
    Tensor want = nn::conv2d_forward(x, w, b, 8, dilation);
    expect_close(got, want, 1e-5, 1e-4, "depthwise forward");
  }
}

// Backward of a linear map must be its adjoint: <gy, F(x)> == <F^T(gy), x>.
TEST(Conv, BackwardIsAdjointOfForward) {
  Rng rng(7);
  const ConvCase cases[] = {
      {2, 4, 6, 7, 8, 3, 2, 1, false},
      {1, 8, 8, 6, 6, 3, 4, 2, false},
      {2, 5, 4, 6, 5, 1, 1, 1, false},
  };
  for (const auto& cc : cases) {
    Tensor x = Tensor::uniform({cc.n, cc.ic, cc.h, cc.w}, rng, -1.0f, 1.0f);
    Tensor w = Tensor::uniform({cc.oc, cc.ic / cc.groups, cc.k, cc.k}, rng, -0.5f, 0.5f);
    Tensor gy = Tensor::uniform({cc.n, cc.oc, cc.h, cc.w}, rng, -1.0f, 1.0f);

    Tensor y = nn::conv2d_forward(x, w, Tensor{}, cc.groups, cc.dilation);
    Tensor gx = Tensor::zeros(x.shape), gw = Tensor::zeros(w.shape);
    nn::conv2d_backward(x, w, gy, cc.groups, cc.dilation, &gx, &gw, nullptr);

    // x-path and w-path adjoints share the same identity.
    EXPECT_NEAR(dot(gy, y), dot(gx, x) + 0.0, 1e-3 * std::abs(dot(gy, y)) + 1e-4);
    EXPECT_NEAR(dot(gy, y), dot(gw, w) + 0.0, 1e-3 * std::abs(dot(gy, y)) + 1e-4);
  }
}

TEST(Conv, DepthwiseBackwardIsAdjoint) {
  Rng rng(8);
  Tensor x = Tensor::uniform({2, 6, 8, 7}, rng, -1.0f, 1.0f);
  Tensor w = Tensor::uniform({6, 1, 3, 3}, rng, -0.5f, 0.5f);
  Tensor gy = Tensor::uniform({2, 6, 8, 7}, rng, -1.0f, 1.0f);
  Tensor y = nn::depthwise3x3_forward(x, w, Tensor{}, 1);
  Tensor gx = Tensor::zeros(x.shape), gw = Tensor::zeros(w.shape);
  nn::depthwise3x3_backward(x, w, gy, 1, &gx, &gw, nullptr);
  EXPECT_NEAR(dot(gy, y), dot(gx, x), 1e-3 * std::abs(dot(gy, y)) + 1e-4);
  EXPECT_NEAR(dot(gy, y), dot(gw, w), 1e-3 * std::abs(dot(gy, y)) + 1e-4);
}

TEST(Conv, BiasGradientSumsOutputGrad) {
  Rng rng(9);
  Tensor x = Tensor::uniform({2, 4, 5, 5}, rng, -1.0f, 1.0f);
  Tensor w = Tensor::uniform({6, 2, 3, 3}, rng, -0.5f, 0.5f);
  Tensor gy = Tensor::uniform({2, 6, 5, 5}, rng, -1.0f, 1.0f);
  Tensor gb = Tensor::zeros({6});
  nn::conv2d_backward(x, w, gy, 2, 1, nullptr, nullptr, &gb);
  for (int64_t o = 0; o < 6; ++o) {
    double want = 0.0;
    for (int64_t n = 0; n < 2; ++n)
      for (int64_t yy = 0; yy < 5; ++yy)
        for (int64_t xx = 0; xx < 5; ++xx) want += double(gy.at(n, o, yy, xx));
    EXPECT_NEAR(double(gb.data[size_t(o)]), want, 1e-4);
  }
}

TEST(Autograd, AdjointDotTestsForLinearOps) {
  Rng rng(11);
  auto x = ag::make_var(Tensor::uniform({2, 8, 6, 5}, rng, -1.0f, 1.0f), true);

  // channel_shuffle
  {
    ag::Tape t;
    auto xv = ag::make_var(x->val, true);
    auto y = ag::channel_shuffle(&t, xv, 4);
    auto gy = std::make_shared<Tensor>(Tensor::uniform(y->val.shape, rng, -1.0f, 1.0f));
    auto root = inner_with(&t, y, gy);
    t.backward(root);
    EXPECT_NEAR(dot(*gy, y->val), dot(xv->grad, xv->val), 1e-3 * std::abs(dot(*gy, y->val)) + 1e-4);
  }
  // filter_bank
  {
    ag::Tape t;
    auto xv = ag::make_var(x->val, true);
    auto y = ag::filter_bank(&t, xv);
    auto gy = std::make_shared<Tensor>(Tensor::uniform(y->val.shape, rng, -1.0f, 1.0f));
    auto root = inner_with(&t, y, gy);
    t.backward(root);
    EXPECT_NEAR(dot(*gy, y->val), dot(xv->grad, xv->val), 1e-3 * std::abs(dot(*gy, y->val)) + 1e-4);
  }
  // concat_channels
  {
    ag::Tape t;
    auto a = ag::make_var(Tensor::uniform({2, 3, 4, 4}, rng, -1.0f, 1.0f), true);
    auto b = ag::make_var(Tensor::uniform({2, 5, 4, 4}, rng, -1.0f, 1.0f), true);
    auto y = ag::concat_channels(&t, {a, b});
    auto gy = std::make_shared<Tensor>(Tensor::uniform(y->val.shape, rng, -1.0f, 1.0f));
    auto root = inner_with(&t, y, gy);
    t.backward(root);
    EXPECT_NEAR(dot(*gy, y->val), dot(a->grad, a->val) + dot(b->grad, b->val),
                1e-3 * std::abs(dot(*gy, y->val)) + 1e-4);
  }
}

TEST(Autograd, ChannelShuffleIsInvertedByComplementaryGroups) {
  Rng rng(12);
  auto x = ag::make_var(Tensor::uniform({1, 12, 3, 3}, rng, -1.0f, 1.0f), false);
  auto once = ag::channel_shuffle(nullptr, x, 4);
  auto back = ag::channel_shuffle(nullptr, once, 3);  // groups' = C/groups
  EXPECT_LT(max_rel_err(back->val, x->val), 1e-7);
}

TEST(Autograd, ChannelShufflePermutationExplicit) {
  // C=4, g=2: channels (0,1,2,3) -> (0,2,1,3)
  Tensor x({1, 4, 1, 1});
  for (int c = 0; c < 4; ++c) x.data[size_t(c)] = float(c);
  auto y = ag::channel_shuffle(nullptr, ag::make_var(x), 2);
  EXPECT_FLOAT_EQ(y->val.data[0], 0.0f);
  EXPECT_FLOAT_EQ(y->val.data[1], 2.0f);
  EXPECT_FLOAT_EQ(y->val.data[2], 1.0f);
  EXPECT_FLOAT_EQ(y->val.data[3], 3.0f);
}

TEST(Autograd, NumericGradOfCompositeGraph) {
  // conv -> relu -> shuffle -> depthwise -> mean_sq, checked by central
  // differences on every parameter of a tiny instance.
  Rng rng(13);
  Tensor x0 = Tensor::uniform({1, 4, 5, 5}, rng, -1.0f, 1.0f);
  Tensor w0 = Tensor::uniform({4, 2, 3, 3}, rng, -0.6f, 0.6f);
  Tensor b0 = Tensor::uniform({4}, rng, -0.2f, 0.2f);
  Tensor dw0 = Tensor::uniform({4, 1, 3, 3}, rng, -0.6f, 0.6f);

  auto eval = [&](const Tensor& xx, const Tensor& ww, const Tensor& bb, const Tensor& dd,
                  ag::Tape* tape, ag::Var* gx, ag::Var* gw, ag::Var* gb, ag::Var* gd) {
    auto vx = ag::make_var(xx, true), vw = ag::make_var(ww, true), vb = ag::make_var(bb, true);
    auto vd = ag::make_var(dd, true);
    auto h1 = ag::conv2d(tape, vx, vw, vb, 2, 1);
    auto h2 = ag::relu(tape, h1);
    auto h3 = ag::channel_shuffle(tape, h2, 2);
    auto h4 = ag::depthwise3x3(tape, h3, vd, nullptr, 1);
    auto loss = ag::mean_sq(tape, h4);
    if (gx) *gx = vx;
    if (gw) *gw = vw;
    if (gb) *gb = vb;
    if (gd) *gd = vd;
    return loss;
  };

  ag::Tape tape;
  ag::Var vx, vw, vb, vd;
  auto loss = eval(x0, w0, b0, dw0, &tape, &vx, &vw, &vb, &vd);
  tape.backward(loss);

  const double h = 1e-2;
  auto check_param = [&](Tensor& base, const Tensor& grad, const char* name) {
    Rng pick(101);
    int checked = 0;
    for (int trial = 0; trial < 200 && checked < 12; ++trial) {
      const size_t i = size_t(pick.uniform_int(0, int64_t(base.data.size()) - 1));
      const float keep = base.data[i];
      base.data[i] = keep + float(h);
      const double fp = double(eval(x0, w0, b0, dw0, nullptr, 0, 0, 0, 0)->val.data[0]);
      base.data[i] = keep - float(h);
      const double fm = double(eval(x0, w0, b0, dw0, nullptr, 0, 0, 0, 0)->val.data[0]);
      base.data[i] = keep;
      const double num = (fp - fm) / (2 * h);
      const double ana = double(grad.data[i]);
      if (std::abs(num) < 1e-4 && std::abs(ana) < 1e-4) continue;  // relu kink zone
      EXPECT_NEAR(ana, num, 2e-2 * std::max({std::abs(num), std::abs(ana), 1e-2}))
          << name << " index " << i;
      ++checked;
    }
    EXPECT_GE(checked, 5) << name;
  };
  check_param(x0, vx->grad, "x");
  check_param(w0, vw->grad, "w");
  check_param(b0, vb->grad, "b");
  check_param(dw0, vd->grad, "dw");
}

TEST(Autograd, ReductionGradients) {
  Rng rng(14);
  // mean_abs: gradient is sign/n away from zero
  {
    ag::Tape t;
    Tensor x0({1, 1, 2, 3});
    const float vals[] = {0.5f, -1.5f, 2.0f, -0.25f, 0.75f, -3.0f};
    std::copy(std::begin(vals), std::end(vals), x0.data.begin());
    auto x = ag::make_var(x0, true);
    auto l = ag::mean_abs(&t, x);
    t.backward(l);
    for (size_t i = 0; i < 6; ++i)
      EXPECT_FLOAT_EQ(x->grad.data[i], (vals[i] > 0 ? 1.0f : -1.0f) / 6.0f);
    EXPECT_FLOAT_EQ(l->val.data[0], (0.5f + 1.5f + 2.0f + 0.25f + 0.75f + 3.0f) / 6.0f);
  }
  // mean_sq: gradient 2x/n
  {
    ag::Tape t;
    auto x = ag::make_var(Tensor::uniform({2, 3, 4, 4}, rng, -1.0f, 1.0f), true);
    auto l = ag::mean_sq(&t, x);
    t.backward(l);
    for (size_t i = 0; i < x->val.data.size(); ++i)
      EXPECT_NEAR(x->grad.data[i], 2.0f * x->val.data[i] / float(x->val.numel()), 1e-6);
  }
  // weighted_sum chains coefficients
  {
    ag::Tape t;
    auto x = ag::make_var(Tensor::uniform({1, 1, 3, 3}, rng, -1.0f, 1.0f), true);
    auto a = ag::mean_sq(&t, x);
    auto b = ag::mean_abs(&t, x);
    auto total = ag::weighted_sum(&t, {{0.3f, a}, {2.0f, b}});
    EXPECT_NEAR(total->val.data[0], 0.3f * a->val.data[0] + 2.0f * b->val.data[0], 1e-6);
    t.backward(total);
    for (size_t i = 0; i < x->val.data.size(); ++i) {
      const float v = x->val.data[i];
      const float want =
          0.3f * 2.0f * v / 9.0f + 2.0f * (v > 0 ? 1.0f : (v < 0 ? -1.0f : 0.0f)) / 9.0f;
      EXPECT_NEAR(x->grad.data[i], want, 1e-6);
    }
  }
}

TEST(Autograd, MulMaskBroadcastsOverChannels) {
  Rng rng(15);
  auto x = ag::make_var(Tensor::uniform({2, 3, 4, 5}, rng, -1.0f, 1.0f), true);
  auto m = std::make_shared<Tensor>(Tensor::uniform({2, 1, 4, 5}, rng, 0.0f, 1.0f));
  ag::Tape t;
  auto y = ag::mul_mask(&t, x, m);
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t yy = 0; yy < 4; ++yy)
        for (int64_t xx = 0; xx < 5; ++xx)
          EXPECT_FLOAT_EQ(y->val.at(n, c, yy, xx), x->val.at(n, c, yy, xx) * m->at(n, 0, yy, xx));
  auto l = ag::mean_all(&t, y);
  t.backward(l);
  const float inv = 1.0f / float(x->val.numel());
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t yy = 0; yy < 4; ++yy)
        for (int64_t xx = 0; xx < 5; ++xx)
          EXPECT_NEAR(x->grad.at(n, c, yy, xx), m->at(n, 0, yy, xx) * inv, 1e-7);
}

TEST(Autograd, DeadBranchesReceiveNoGradient) {
  Rng rng(16);
  ag::Tape t;
  auto x = ag::make_var(Tensor::uniform({1, 2, 3, 3}, rng, -1.0f, 1.0f), true);
  auto used = ag::mean_sq(&t, x);
  auto dead = ag::relu(&t, x);  // recorded but not connected to the root
  t.backward(used);
  EXPECT_EQ(dead->grad.numel(), 0);
  EXPECT_NE(x->grad.numel(), 0);
}

TEST(Autograd, FilterBankRespondsToEdgesNotConstants) {
  Tensor flat({1, 1, 8, 8}, 0.37f);
  auto y = ag::filter_bank(nullptr, ag::make_var(flat));
  EXPECT_EQ(y->val.size(1), 4);
  for (float v : y->val.data) EXPECT_NEAR(v, 0.0f, 1e-6);

  // vertical step edge: d/dx responds on the step column, d/dy stays zero
  Tensor step({1, 1, 8, 8});
  for (int64_t yy = 0; yy < 8; ++yy)
    for (int64_t xx = 0; xx < 8; ++xx) step.at(0, 0, yy, xx) = xx < 4 ? 0.0f : 1.0f;
  auto r = ag::filter_bank(nullptr, ag::make_var(step));
  double dx_energy = 0, dy_energy = 0;
  for (int64_t yy = 0; yy < 8; ++yy)
    for (int64_t xx = 0; xx < 8; ++xx) {
      dx_energy += std::abs(double(r->val.at(0, 0, yy, xx)));
      dy_energy += std::abs(double(r->val.at(0, 1, yy, xx)));
    }
  EXPECT_GT(dx_energy, 1.0);
  EXPECT_NEAR(dy_energy, 0.0, 1e-6);
}

TEST(Tensor, Basics) {
  Tensor t({2, 3, 4, 5});
  EXPECT_EQ(t.numel(), 120);
  t.at(1, 2, 3, 4) = 7.0f;
  EXPECT_FLOAT_EQ(t.data[119], 7.0f);
  EXPECT_TRUE(t.all_finite());
  t.data[3] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
}
