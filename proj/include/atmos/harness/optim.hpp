#pragma once

#include <cmath>
#include <numbers>

#include "atmos/nn/param_store.hpp"

namespace atmos::harness {

/// Adam with decoupled weight decay. Moments are kept in double.
template <typename T>
class AdamW {
 public:
  AdamW(nn::ParamStore<T>& store, double beta1, double beta2, double weight_decay, double eps)
      : store_(store), b1_(beta1), b2_(beta2), wd_(weight_decay), eps_(eps) {
    for (const auto& e : store_.entries()) {
      m_.emplace_back(e.var.value().size(), 0.0);
      v_.emplace_back(e.var.value().size(), 0.0);
    }
  }

  /// Applies one update to every parameter that received a gradient.
  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    auto& entries = store_.entries();
    for (std::size_t k = 0; k < entries.size(); ++k) {
      auto& var = entries[k].var;
      if (!var.requires_grad() || !var.has_grad()) continue;
      auto& p = var.mutable_value();
      const auto& g = var.grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        m[i] = b1_ * m[i] + (1.0 - b1_) * gi;
        v[i] = b2_ * v[i] + (1.0 - b2_) * gi * gi;
        const double upd = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        const double pi = static_cast<double>(p[i]);
        p[i] = static_cast<T>(pi - lr * (upd + wd_ * pi));
      }
    }
  }

  std::int64_t steps() const { return t_; }

 private:
  nn::ParamStore<T>& store_;
  double b1_, b2_, wd_, eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Cosine annealing from lr0 at step 0 towards floor at step `total`.
inline double cosine_lr(std::int64_t step, std::int64_t total, double lr0, double floor) {
  if (total <= 0) return lr0;
  const double t = std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0, 1.0);
  return floor + 0.5 * (lr0 - floor) * (1.0 + std::cos(std::numbers::pi * t));
}

inline double exponential_lr(std::int64_t epoch, double lr0, double decay) {
  return lr0 * std::pow(decay, static_cast<double>(epoch));
}

/// Gate noise decays linearly to zero over the first `fraction` of training.
inline double annealed_noise(std::int64_t step, std::int64_t total, double sigma, double fraction) {
  if (fraction <= 0.0 || total <= 0) return 0.0;
  const double t = static_cast<double>(step) / (fraction * static_cast<double>(total));
  return t >= 1.0 ? 0.0 : sigma * (1.0 - t);
}

}  // namespace atmos::harness
