#pragma once

#include <cmath>
#include <vector>

#include "provwatch/nn/tensor.hpp"

namespace provwatch::nn {

/// Scales all gradients so their joint L2 norm is at most max_norm. Returns the norm
/// before clipping.
template <class T>
T clip_grad_norm(std::vector<Tensor<T>>& params, T max_norm) {
  T sq = 0;
  for (auto& p : params)
    if (p.grad().size()) sq += p.grad().squaredNorm();
  T norm = std::sqrt(sq);
  if (norm > max_norm && norm > T(0)) {
    T s = max_norm / norm;
    for (auto& p : params)
      if (p.grad().size()) p.node()->grad *= s;
  }
  return norm;
}

/// Adam with bias correction.
template <class T>
class Adam {
 public:
  struct Options {
    T lr = T(5e-4);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
  };

  Adam(std::vector<Tensor<T>> params, Options opts) : params_(std::move(params)), opts_(opts) {
    for (auto& p : params_) {
      m_.push_back(Matrix<T>::Zero(p.rows(), p.cols()));
      v_.push_back(Matrix<T>::Zero(p.rows(), p.cols()));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    const T c1 = T(1) - std::pow(opts_.beta1, static_cast<T>(t_));
    const T c2 = T(1) - std::pow(opts_.beta2, static_cast<T>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (p.grad().size() == 0) continue;
      const auto& g = p.grad();
      m_[i] = opts_.beta1 * m_[i] + (T(1) - opts_.beta1) * g;
      v_[i] = opts_.beta2 * v_[i] + (T(1) - opts_.beta2) * g.cwiseProduct(g);
      p.mutable_value().array() -=
          opts_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + opts_.eps);
    }
  }

  std::vector<Tensor<T>>& params() { return params_; }
  long steps() const { return t_; }

 private:
  std::vector<Tensor<T>> params_;
  Options opts_;
  std::vector<Matrix<T>> m_, v_;
  long t_ = 0;
};

}  // namespace provwatch::nn
