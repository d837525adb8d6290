#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qsnet/rng.hpp"

namespace qsnet {

// Dense float32 tensor, row-major. 4-D activations use NCHW order.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
    data.assign(size_t(numel_of(shape)), 0.0f);
  }
  Tensor(std::vector<int64_t> s, float fill) : shape(std::move(s)) {
    data.assign(size_t(numel_of(shape)), fill);
  }

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int64_t> s, float v) { return Tensor(std::move(s), v); }
  static Tensor uniform(std::vector<int64_t> s, Rng& rng, float lo, float hi) {
    Tensor t(std::move(s));
    for (auto& v : t.data) v = float(rng.uniform(lo, hi));
    return t;
  }

  int64_t numel() const { return int64_t(data.size()); }
  int ndim() const { return int(shape.size()); }
  int64_t size(int i) const { return shape.at(size_t(i)); }

  // 4-D accessors.
  float& at(int64_t n, int64_t c, int64_t h, int64_t w) {
    return data[size_t(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  float at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return data[size_t(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(float v) { std::fill(data.begin(), data.end(), v); }

  double sum() const {
    double acc = 0.0;
    for (float v : data) acc += v;
    return acc;
  }

  double abs_max() const {
    double m = 0.0;
    for (float v : data) m = std::max(m, double(std::fabs(v)));
    return m;
  }

  bool all_finite() const {
    for (float v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
  }
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(who) + ": shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
}

}  // namespace qsnet
