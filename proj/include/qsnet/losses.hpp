#pragma once

#include <memory>
#include <stdexcept>
#include <vector>

#include "qsnet/autograd.hpp"
#include "qsnet/tensor.hpp"

namespace qsnet {

// Weights of the four training objectives. Terms are per-element means (the
// reference formulation sums over the dataset; means keep the weights
// independent of batch size and resolution).
struct LossWeights {
  float lambda_q = 1e-3f;  // quasi-sparsity of rain and background layers
  float lambda_c = 1.0f;   // content: predicted background vs ground truth
  float lambda_a = 0.01f;  // auxiliary decoders
  float lambda_d = 1e-4f;  // detail: rain prediction outside rain locations
};

struct LossBreakdown {
  double quasi_sparsity = 0.0;
  double content = 0.0;
  double detail = 0.0;
  double auxiliary = 0.0;
  double total = 0.0;
};

// Mean over the filter-bank responses of |w*R| + |w*(I-R)|: both the rain
// layer and the implied background are pushed toward borderline sparsity.
inline ag::Var quasi_sparsity_loss(ag::Tape* tape, const ag::Var& input, const ag::Var& rain) {
  check_same_shape(input->val, rain->val, "quasi_sparsity_loss");
  auto background = ag::sub(tape, input, rain);
  auto lr = ag::mean_abs(tape, ag::filter_bank(tape, rain));
  auto lb = ag::mean_abs(tape, ag::filter_bank(tape, background));
  return ag::weighted_sum(tape, {{1.0f, lr}, {1.0f, lb}});
}

// MAE between the predicted background I - R and the ground-truth background.
inline ag::Var content_loss(ag::Tape* tape, const ag::Var& input, const ag::Var& rain,
                            const ag::Var& bg_truth) {
  check_same_shape(input->val, rain->val, "content_loss");
  check_same_shape(input->val, bg_truth->val, "content_loss");
  auto residual = ag::sub(tape, ag::sub(tape, input, rain), bg_truth);
  return ag::mean_abs(tape, residual);
}

// MAE of the rain prediction masked to non-rain locations. The location map
// is [N,1,H,W] (broadcast over channels) or the full shape, strictly binary.
inline ag::Var detail_loss(ag::Tape* tape, const ag::Var& rain,
                           const std::shared_ptr<Tensor>& rain_loc) {
  for (float v : rain_loc->data)
    if (v != 0.0f && v != 1.0f)
      throw std::invalid_argument("detail_loss: location map must be binary");
  auto off_rain = std::make_shared<Tensor>(*rain_loc);
  for (auto& v : off_rain->data) v = 1.0f - v;
  return ag::mean_abs(tape, ag::mul_mask(tape, rain, off_rain));
}

// Mean over the five auxiliary decoders of the MSE between each decoder's
// implied background I - A_i and the ground truth.
inline ag::Var auxiliary_loss(ag::Tape* tape, const ag::Var& input,
                              const std::vector<ag::Var>& aux_rains, const ag::Var& bg_truth) {
  if (aux_rains.size() != 5)
    throw std::invalid_argument("auxiliary_loss: expected 5 auxiliary predictions");
  std::vector<std::pair<float, ag::Var>> terms;
  terms.reserve(5);
  for (const auto& aux : aux_rains) {
    auto residual = ag::sub(tape, ag::sub(tape, input, aux), bg_truth);
    terms.emplace_back(0.2f, ag::mean_sq(tape, residual));
  }
  return ag::weighted_sum(tape, terms);
}

struct TotalLoss {
  ag::Var total;
  LossBreakdown breakdown;
};

// All four terms are always evaluated and recorded; the weights only control
// how they enter the optimized total, so zeroing a weight reproduces the
// gradients of a run without that term.
inline TotalLoss total_loss(ag::Tape* tape, const ag::Var& input, const ag::Var& rain,
                            const std::vector<ag::Var>& aux_rains, const ag::Var& bg_truth,
                            const std::shared_ptr<Tensor>& rain_loc, const LossWeights& w) {
  if (w.lambda_q < 0 || w.lambda_c < 0 || w.lambda_a < 0 || w.lambda_d < 0)
    throw std::invalid_argument("total_loss: weights must be nonnegative");
  TotalLoss out;
  auto lq = quasi_sparsity_loss(tape, input, rain);
  auto lc = content_loss(tape, input, rain, bg_truth);
  auto ld = detail_loss(tape, rain, rain_loc);
  auto la = auxiliary_loss(tape, input, aux_rains, bg_truth);
  out.total = ag::weighted_sum(
      tape, {{w.lambda_q, lq}, {w.lambda_c, lc}, {w.lambda_a, la}, {w.lambda_d, ld}});
  out.breakdown.quasi_sparsity = ag::scalar_value(lq);
  out.breakdown.content = ag::scalar_value(lc);
  out.breakdown.detail = ag::scalar_value(ld);
  out.breakdown.auxiliary = ag::scalar_value(la);
  out.breakdown.total = ag::scalar_value(out.total);
  return out;
}

// Forward-only conveniences for analysis and tests.
inline double quasi_sparsity_loss(const Tensor& input, const Tensor& rain) {
  return ag::scalar_value(quasi_sparsity_loss(nullptr, ag::make_var(input), ag::make_var(rain)));
}
inline double content_loss(const Tensor& input, const Tensor& rain, const Tensor& bg_truth) {
  return ag::scalar_value(
      content_loss(nullptr, ag::make_var(input), ag::make_var(rain), ag::make_var(bg_truth)));
}
inline double detail_loss(const Tensor& rain, const Tensor& rain_loc) {
  return ag::scalar_value(
      detail_loss(nullptr, ag::make_var(rain), std::make_shared<Tensor>(rain_loc)));
}
inline double auxiliary_loss(const Tensor& input, const std::vector<Tensor>& aux_rains,
                             const Tensor& bg_truth) {
  std::vector<ag::Var> aux;
  aux.reserve(aux_rains.size());
  for (const auto& a : aux_rains) aux.push_back(ag::make_var(a));
  return ag::scalar_value(auxiliary_loss(nullptr, ag::make_var(input), aux, ag::make_var(bg_truth)));
}

}  // namespace qsnet
