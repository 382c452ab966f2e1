#pragma once

#include <cmath>
#include <vector>

#include "poseadapt/autodiff.hpp"

namespace poseadapt {

// Adam with bias correction. Parameters are leaf Values; step() consumes the
// gradients accumulated on them since the last zero_grad().
class Adam {
 public:
  explicit Adam(std::vector<Value> params, double lr = 1e-3, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(p.shape());
      v_.emplace_back(p.shape());
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  std::size_t step_count() const { return t_; }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& x = params_[i].mutable_val();
      const Tensor& g = params_[i].grad();
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      for (std::size_t j = 0; j < x.size(); ++j) {
        m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
        x[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
      }
    }
  }

 private:
  std::vector<Value> params_;
  std::vector<Tensor> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

// Step-decay schedule: the base rate is multiplied by `factor` once for every
// drop epoch that has been reached.
inline double scheduled_lr(double base, const std::vector<std::size_t>& drops, double factor,
                           std::size_t epoch) {
  double lr = base;
  for (std::size_t d : drops) {
    if (epoch >= d) lr *= factor;
  }
  return lr;
}

}  // namespace poseadapt
