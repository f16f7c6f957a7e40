#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "segmate/blocks.hpp"

namespace segmate {

// AdamW with decoupled weight decay:
//   theta <- theta - lr*wd*theta - lr*mhat/(sqrt(vhat)+eps)
// Frozen parameters are skipped entirely (no decay, no moment update).
template <typename T>
class AdamW {
 public:
  AdamW(T lr = T(2e-4), T weight_decay = T(1e-4), T beta1 = T(0.9), T beta2 = T(0.999),
        T eps = T(1e-8))
      : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  T lr() const { return lr_; }
  void set_lr(T lr) { lr_ = lr; }

  void step(ParamList<T>& params, const std::vector<bool>& frozen = {}) {
    if (states_.empty()) {
      for (auto& p : params)
        states_.push_back({std::vector<T>(p.tensor.numel(), T(0)),
                           std::vector<T>(p.tensor.numel(), T(0))});
    }
    ++t_;
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1_), t_));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2_), t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!params[i].trainable) continue;
      if (!frozen.empty() && frozen[i]) continue;
      auto theta = params[i].tensor.data();
      auto grad = params[i].tensor.grad();
      auto& m = states_[i].m;
      auto& v = states_[i].v;
      for (std::size_t j = 0; j < theta.size(); ++j) {
        const T g = grad[j];
        m[j] = beta1_ * m[j] + (T(1) - beta1_) * g;
        v[j] = beta2_ * v[j] + (T(1) - beta2_) * g * g;
        const T mhat = m[j] / bc1;
        const T vhat = v[j] / bc2;
        theta[j] -= lr_ * wd_ * theta[j] + lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void zero_grad(ParamList<T>& params) {
    for (auto& p : params)
      if (p.trainable) p.tensor.zero_grad();
  }

 private:
  struct State {
    std::vector<T> m, v;
  };
  T lr_, wd_, beta1_, beta2_, eps_;
  std::vector<State> states_;
  long t_ = 0;
};

// "reduce on plateau" on a higher-is-better validation metric: one reduction
// after `patience` consecutive observations without improvement > min_delta.
template <typename T>
class PlateauScheduler {
 public:
  PlateauScheduler(T factor = T(0.5), int patience = 5, T min_delta = T(1e-4))
      : factor_(factor), patience_(patience), min_delta_(min_delta) {
    if (!(factor > T(0) && factor < T(1)))
      fail(ErrorKind::Config, "plateau factor must lie in (0,1)");
    if (patience < 1) fail(ErrorKind::Config, "plateau patience must be >= 1");
  }

  // returns true when the learning rate should be reduced by `factor`
  bool observe(T metric) {
    if (metric > best_ + min_delta_) {
      best_ = metric;
      bad_ = 0;
      return false;
    }
    if (++bad_ >= patience_) {
      bad_ = 0;
      return true;
    }
    return false;
  }

  T factor() const { return factor_; }

 private:
  T factor_;
  int patience_;
  T min_delta_;
  T best_ = -std::numeric_limits<T>::infinity();
  int bad_ = 0;
};

}  // namespace segmate
