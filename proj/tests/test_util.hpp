#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "qsnet/autograd.hpp"
#include "qsnet/rng.hpp"
#include "qsnet/tensor.hpp"

// Helpers shared between the unit tests and the acceptance checks.
namespace qtest {

using qsnet::Rng;
using qsnet::Tensor;
namespace ag = qsnet::ag;

struct GradCheckResult {
  int checked = 0;
  int skipped = 0;
  double max_rel = 0.0;
  size_t worst_index = 0;
};

// Central-difference check of d(loss)/dx at randomly probed coordinates.
//
// loss_fn builds the scalar loss from the variable under test (tape may be
// null for the forward-only probes). guard(i) returns false when probing
// coordinate i would step across an absolute-value kink, which makes the
// secant slope meaningless; such coordinates are skipped and counted.
inline GradCheckResult gradcheck(
    Tensor x, const std::function<ag::Var(ag::Tape*, const ag::Var&)>& loss_fn,
    const std::function<bool(const Tensor&, size_t)>& guard, int target_checked, double h,
    uint64_t seed) {
  GradCheckResult res;

  ag::Tape tape;
  auto vx = ag::make_var(x, true);
  auto loss = loss_fn(&tape, vx);
  tape.backward(loss);
  const Tensor analytic = vx->grad;

  Rng pick(seed);
  const int max_attempts = target_checked * 50;
  for (int attempt = 0; attempt < max_attempts && res.checked < target_checked; ++attempt) {
    const size_t i = size_t(pick.uniform_int(0, int64_t(x.data.size()) - 1));
    if (!guard(x, i)) {
      ++res.skipped;
      continue;
    }
    const float keep = x.data[i];
    x.data[i] = keep + float(h);
    const double fp = ag::scalar_value(loss_fn(nullptr, ag::make_var(x)));
    x.data[i] = keep - float(h);
    const double fm = ag::scalar_value(loss_fn(nullptr, ag::make_var(x)));
    x.data[i] = keep;
    const double num = (fp - fm) / (2.0 * h);
    const double ana = double(analytic.data[i]);
    // The denominator floor keeps exact-cancellation points (true derivative
    // zero on both sides, finite-difference noise ~1e-8) from reading as
    // spurious 100% errors; real gradients here are orders above 1e-4.
    const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-4});
    if (rel > res.max_rel) {
      res.max_rel = rel;
      res.worst_index = i;
    }
    ++res.checked;
  }
  return res;
}

// True when every filter-bank response that coordinate i feeds into sits far
// enough from zero that a +-h probe cannot cross the kink of |.|. Checks a
// neighborhood of both banks (rain and background), which also covers the
// reflected border taps.
inline bool filter_responses_clear_of_kinks(const Tensor& input, const Tensor& rain, size_t idx,
                                            double h) {
  const int64_t c = rain.size(1), ht = rain.size(2), w = rain.size(3);
  const int64_t hw = ht * w;
  const int64_t img = int64_t(idx) / (c * hw);
  const int64_t ch = (int64_t(idx) / hw) % c;
  const int64_t y = (int64_t(idx) % hw) / w, x = int64_t(idx) % w;

  Tensor bg = input;
  for (size_t i = 0; i < bg.data.size(); ++i) bg.data[i] -= rain.data[i];
  // A unit change of one pixel moves any single response by at most the sum
  // of absolute tap coefficients (4, for the second-difference filters, where
  // border reflection can hit one response twice).
  const double margin = 4.0 * h + 1e-4;
  const Tensor* layers[] = {&rain, &bg};
  for (const Tensor* t : layers) {
    auto bank = ag::filter_bank(nullptr, ag::make_var(*t));
    for (int64_t f = 0; f < 4; ++f)
      for (int64_t dy = -2; dy <= 2; ++dy)
        for (int64_t dx = -2; dx <= 2; ++dx) {
          const int64_t yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= ht || xx < 0 || xx >= w) continue;
          const float r = bank->val.at(img, f * c + ch, yy, xx);
          if (std::abs(double(r)) < margin) return false;
        }
  }
  return true;
}

}  // namespace qtest
