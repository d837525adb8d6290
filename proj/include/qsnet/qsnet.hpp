#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "qsnet/autograd.hpp"
#include "qsnet/rng.hpp"
#include "qsnet/tensor.hpp"

namespace qsnet {

struct QSNetConfig {
  int channels = 64;
  int groups = 4;
  int n_units = 12;
  std::vector<int> atrous_rates = {1, 2, 4, 6};
  int n_aux = 5;
  bool feature_sharing = true;
  // Zero-initialize the rain prediction heads so the untrained network
  // starts at R ~ 0 (derained output = input).
  bool identity_start = true;

  void validate() const {
    if (channels <= 0 || groups <= 0 || n_units <= 0 || n_aux <= 0)
      throw std::invalid_argument("QSNetConfig: counts must be positive");
    if (channels % groups != 0)
      throw std::invalid_argument("QSNetConfig: channels must divide by groups");
    if (n_aux != 1 + int(atrous_rates.size()))
      throw std::invalid_argument("QSNetConfig: n_aux must be 1 + |atrous_rates|");
    for (int r : atrous_rates)
      if (r < 1) throw std::invalid_argument("QSNetConfig: atrous rates must be >= 1");
  }
};

struct Param {
  std::string name;
  ag::Var var;
};

// Single-image deraining network. The encoder is a stack of stride-1
// shuffle units; multi-scale features come from one pointwise and four
// atrous branches; five light decoders predict per-scale rain layers whose
// concatenation (after a cross-scale channel exchange) drives the main rain
// prediction R, with the derained output B = I - R.
class QSNet {
 public:
  struct Output {
    ag::Var rain;
    std::vector<ag::Var> aux_rains;
    std::vector<ag::Var> features;
  };

  QSNet(QSNetConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int c = cfg_.channels, g = cfg_.groups;
    stem_w_ = conv_param("stem.w", {c, 3, 3, 3}, rng);
    stem_b_ = zero_param("stem.b", {c});
    for (int u = 0; u < cfg_.n_units; ++u) {
      const std::string p = "enc.u" + std::to_string(u) + ".";
      units_.push_back(Unit{
          conv_param(p + "pw1.w", {c, c / g, 1, 1}, rng), zero_param(p + "pw1.b", {c}),
          conv_param(p + "dw.w", {c, 1, 3, 3}, rng), zero_param(p + "dw.b", {c}),
          conv_param(p + "pw2.w", {c, c / g, 1, 1}, rng), zero_param(p + "pw2.b", {c})});
    }
    ms_point_w_ = conv_param("ms.point.w", {c, c, 1, 1}, rng);
    ms_point_b_ = zero_param("ms.point.b", {c});
    for (size_t i = 0; i < cfg_.atrous_rates.size(); ++i) {
      const std::string p = "ms.atrous" + std::to_string(i) + ".";
      ms_atrous_w_.push_back(conv_param(p + "w", {c, c, 3, 3}, rng));
      ms_atrous_b_.push_back(zero_param(p + "b", {c}));
    }
    for (int i = 0; i < cfg_.n_aux; ++i) {
      const std::string p = "aux" + std::to_string(i) + ".";
      aux_.push_back(AuxDecoder{
          conv_param(p + "pw1.w", {c, c / g, 1, 1}, rng), zero_param(p + "pw1.b", {c}),
          conv_param(p + "pw2.w", {c, c / g, 1, 1}, rng), zero_param(p + "pw2.b", {c}),
          head_param(p + "head.w", {3, c, 3, 3}, rng), zero_param(p + "head.b", {3})});
    }
    const int fused_in = cfg_.n_aux * c + cfg_.n_aux * 3;
    main_fuse_w_ = conv_param("main.fuse.w", {c, fused_in, 1, 1}, rng);
    main_fuse_b_ = zero_param("main.fuse.b", {c});
    main_head_w_ = head_param("main.head.w", {3, c, 3, 3}, rng);
    main_head_b_ = zero_param("main.head.b", {3});
  }

  const QSNetConfig& config() const { return cfg_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.var->val.numel();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p.var->zero_grad();
  }

  ag::Var encoder_forward(ag::Tape* tape, const ag::Var& input) const {
    if (input->val.ndim() != 4 || input->val.size(1) != 3)
      throw std::invalid_argument("encoder_forward: expected NCHW RGB input");
    const int g = cfg_.groups;
    auto x = ag::relu(tape, ag::conv2d(tape, input, stem_w_, stem_b_, 1, 1));
    for (const auto& u : units_) {
      auto h = ag::relu(tape, ag::conv2d(tape, x, u.pw1_w, u.pw1_b, g, 1));
      h = ag::channel_shuffle(tape, h, g);
      h = ag::depthwise3x3(tape, h, u.dw_w, u.dw_b, 1);
      h = ag::conv2d(tape, h, u.pw2_w, u.pw2_b, g, 1);
      x = ag::relu(tape, ag::add(tape, x, h));
    }
    return x;
  }

  std::vector<ag::Var> multiscale_extract(ag::Tape* tape, const ag::Var& trunk) const {
    std::vector<ag::Var> features;
    features.push_back(ag::relu(tape, ag::conv2d(tape, trunk, ms_point_w_, ms_point_b_, 1, 1)));
    for (size_t i = 0; i < ms_atrous_w_.size(); ++i)
      features.push_back(ag::relu(
          tape, ag::conv2d(tape, trunk, ms_atrous_w_[i], ms_atrous_b_[i], 1,
                           cfg_.atrous_rates[i])));
    return features;
  }

  ag::Var auxiliary_decode(ag::Tape* tape, int index, const ag::Var& feature) const {
    const auto& d = aux_.at(size_t(index));
    const int g = cfg_.groups;
    auto h = ag::relu(tape, ag::conv2d(tape, feature, d.pw1_w, d.pw1_b, g, 1));
    if (cfg_.feature_sharing) h = ag::channel_shuffle(tape, h, g);
    h = ag::relu(tape, ag::conv2d(tape, h, d.pw2_w, d.pw2_b, g, 1));
    return ag::conv2d(tape, h, d.head_w, d.head_b, 1, 1);
  }

  ag::Var main_decode(ag::Tape* tape, const std::vector<ag::Var>& features,
                      const std::vector<ag::Var>& aux_rains) const {
    if (int(features.size()) != cfg_.n_aux || int(aux_rains.size()) != cfg_.n_aux)
      throw std::invalid_argument("main_decode: expected n_aux features and predictions");
    auto stacked = ag::concat_channels(tape, features);
    if (cfg_.feature_sharing) stacked = ag::channel_shuffle(tape, stacked, cfg_.n_aux);
    std::vector<ag::Var> cat{stacked};
    cat.insert(cat.end(), aux_rains.begin(), aux_rains.end());
    auto fused = ag::relu(tape, ag::conv2d(tape, ag::concat_channels(tape, cat), main_fuse_w_,
                                           main_fuse_b_, 1, 1));
    return ag::conv2d(tape, fused, main_head_w_, main_head_b_, 1, 1);
  }

  Output forward(ag::Tape* tape, const ag::Var& input) const {
    Output out;
    auto trunk = encoder_forward(tape, input);
    out.features = multiscale_extract(tape, trunk);
    for (int i = 0; i < cfg_.n_aux; ++i)
      out.aux_rains.push_back(auxiliary_decode(tape, i, out.features[size_t(i)]));
    out.rain = main_decode(tape, out.features, out.aux_rains);
    return out;
  }

  // Derained image B = clamp(I - R, 0, 1).
  Tensor derain(const Tensor& input) const {
    auto out = forward(nullptr, ag::make_var(input));
    Tensor b = input;
    for (size_t i = 0; i < b.data.size(); ++i)
      b.data[i] = std::clamp(b.data[i] - out.rain->val.data[i], 0.0f, 1.0f);
    return b;
  }

 private:
  struct Unit {
    ag::Var pw1_w, pw1_b, dw_w, dw_b, pw2_w, pw2_b;
  };
  struct AuxDecoder {
    ag::Var pw1_w, pw1_b, pw2_w, pw2_b, head_w, head_b;
  };

  ag::Var register_param(std::string name, Tensor t) {
    auto v = ag::make_var(std::move(t), true);
    params_.push_back({std::move(name), v});
    return v;
  }

  ag::Var conv_param(std::string name, std::vector<int64_t> shape, Rng& rng) {
    const int64_t fan_in = shape[1] * shape[2] * shape[3];
    const float bound = 1.0f / std::sqrt(float(fan_in));
    return register_param(std::move(name), Tensor::uniform(std::move(shape), rng, -bound, bound));
  }

  // Prediction heads start at zero under identity_start.
  ag::Var head_param(std::string name, std::vector<int64_t> shape, Rng& rng) {
    if (cfg_.identity_start) return register_param(std::move(name), Tensor::zeros(std::move(shape)));
    return conv_param(std::move(name), std::move(shape), rng);
  }

  ag::Var zero_param(std::string name, std::vector<int64_t> shape) {
    return register_param(std::move(name), Tensor::zeros(std::move(shape)));
  }

  QSNetConfig cfg_;
  std::vector<Param> params_;
  ag::Var stem_w_, stem_b_;
  std::vector<Unit> units_;
  ag::Var ms_point_w_, ms_point_b_;
  std::vector<ag::Var> ms_atrous_w_, ms_atrous_b_;
  std::vector<AuxDecoder> aux_;
  ag::Var main_fuse_w_, main_fuse_b_, main_head_w_, main_head_b_;
};

}  // namespace qsnet
