#pragma once

#include <cmath>
#include <vector>

#include "m2m/nn/layers.hpp"

namespace m2m::nn {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a fixed list of parameters. The parameter list
// order defines the moment layout, so it must not change between steps.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Param<T>*> params, AdamConfig cfg) : cfg_(cfg), params_(std::move(params)) {
    for (const Param<T>* p : params_) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  const AdamConfig& config() const { return cfg_; }
  long step_count() const { return step_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }

  void zero_grad() {
    for (Param<T>* p : params_) p->zero_grad();
  }

  void step() {
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Param<T>& p = *params_[k];
      if (p.grad.shape() != p.value.shape() || m_[k].shape() != p.value.shape()) {
        throw ShapeError("adam: moment/gradient shape mismatch for " + p.name);
      }
      T* w = p.value.data();
      const T* g = p.grad.data();
      T* m = m_[k].data();
      T* v = v_[k].data();
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double gi = g[i];
        const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        w[i] = static_cast<T>(w[i] - cfg_.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg_.eps));
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<Param<T>*> params_;
  std::vector<Tensor<T>> m_, v_;
  long step_ = 0;
};

}  // namespace m2m::nn
