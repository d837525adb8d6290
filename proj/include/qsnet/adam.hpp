#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "qsnet/qsnet.hpp"
#include "qsnet/tensor.hpp"

namespace qsnet {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // global gradient-norm ceiling; 0 disables clipping
};

// First-order adaptive-moment optimizer with bias correction and global-norm
// gradient clipping. Moment buffers follow the parameter order given at
// construction, which makes the state trivially serializable.
class Adam {
 public:
  Adam(const std::vector<Param>& params, const AdamConfig& cfg) : cfg_(cfg) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params) {
      m_.emplace_back(p.var->val.shape, 0.0f);
      v_.emplace_back(p.var->val.shape, 0.0f);
    }
  }

  // Applies one update from the gradients currently stored on the
  // parameters; parameters with no gradient buffer contribute zero.
  void step(const std::vector<Param>& params) {
    if (params.size() != m_.size()) throw std::invalid_argument("Adam::step: parameter set changed");
    ++t_;

    double sq_norm = 0.0;
    for (const auto& p : params) {
      if (p.var->grad.numel() == 0) continue;
      for (float g : p.var->grad.data) sq_norm += double(g) * double(g);
    }
    const double norm = std::sqrt(sq_norm);
    const double clip_scale =
        (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;

    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (size_t i = 0; i < params.size(); ++i) {
      auto& val = params[i].var->val;
      auto& grad = params[i].var->grad;
      const bool has_grad = grad.numel() != 0;
      for (int64_t j = 0; j < val.numel(); ++j) {
        const double g = has_grad ? double(grad.data[size_t(j)]) * clip_scale : 0.0;
        const double m = cfg_.beta1 * double(m_[i].data[size_t(j)]) + (1.0 - cfg_.beta1) * g;
        const double v = cfg_.beta2 * double(v_[i].data[size_t(j)]) + (1.0 - cfg_.beta2) * g * g;
        m_[i].data[size_t(j)] = float(m);
        v_[i].data[size_t(j)] = float(v);
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        val.data[size_t(j)] =
            float(double(val.data[size_t(j)]) - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
    last_grad_norm_ = norm;
  }

  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }
  int64_t steps_taken() const { return t_; }
  double last_grad_norm() const { return last_grad_norm_; }
  const AdamConfig& config() const { return cfg_; }

  // State access for checkpointing. Moments are kept in float storage to
  // match the parameter precision; the struct-of-arrays layout round-trips
  // bit-exactly through the checkpoint file.
  const std::vector<Tensor>& moment1() const { return m_; }
  const std::vector<Tensor>& moment2() const { return v_; }
  void restore(const std::vector<Tensor>& m, const std::vector<Tensor>& v, int64_t t, double lr) {
    if (m.size() != m_.size() || v.size() != v_.size())
      throw std::invalid_argument("Adam::restore: state size mismatch");
    for (size_t i = 0; i < m.size(); ++i) {
      check_same_shape(m[i], m_[i], "Adam::restore");
      check_same_shape(v[i], v_[i], "Adam::restore");
    }
    m_ = m;
    v_ = v;
    t_ = t;
    cfg_.lr = lr;
  }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  int64_t t_ = 0;
  double last_grad_norm_ = 0.0;
};

}  // namespace qsnet
