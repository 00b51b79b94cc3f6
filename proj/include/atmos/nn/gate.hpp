#pragma once

#include <optional>

#include "atmos/nn/layers.hpp"

namespace atmos::nn {

/// Mixture-of-experts router: softmax(FC(GAP(Conv1x1(e)) + eps)).
/// eps ~ N(0, sigma^2) is drawn per (sample, hidden unit) only in training.
template <typename T>
class Gate {
 public:
  Gate() = default;
  Gate(ParamStore<T>& store, const std::string& name, std::int64_t in_channels, std::int64_t experts,
       std::int64_t hidden)
      : experts_(experts), hidden_(hidden), stream_(hash_name(name)) {
    if (experts < 2) throw ConfigError("gate needs at least 2 experts, got " + std::to_string(experts));
    if (hidden < 1) throw ConfigError("gate hidden width must be >= 1");
    reduce_ = Conv2d<T>::square(store, name + ".reduce", in_channels, hidden, 1);
    fc_ = Linear<T>(store, name + ".fc", hidden, experts);
  }

  /// Routing logits before the softmax, (B, n_experts).
  Var<T> logits(const Var<T>& e, const ForwardContext& ctx) const {
    Var<T> pooled = ops::gap(reduce_(e));
    if (ctx.training && ctx.noise_sigma > 0.0) {
      Tensor<T> eps(pooled.shape());
      CounterRng rng(derive_key({ctx.noise_key, stream_}));
      for (auto& v : eps.values()) v = static_cast<T>(ctx.noise_sigma * rng.normal());
      pooled = ops::add(pooled, Var<T>::constant(std::move(eps)));
    }
    return fc_(pooled);
  }

  Var<T> operator()(const Var<T>& e, const ForwardContext& ctx) const {
    if (forced_) {
      Tensor<T> w(Shape{e.dim(0), experts_});
      for (std::int64_t b = 0; b < e.dim(0); ++b)
        for (std::int64_t i = 0; i < experts_; ++i)
          w[static_cast<std::size_t>(b * experts_ + i)] = static_cast<T>((*forced_)[static_cast<std::size_t>(i)]);
      return Var<T>::constant(std::move(w));
    }
    return ops::softmax_lastdim(logits(e, ctx));
  }

  /// Pins the routing weights (tests and ablations); nullopt restores routing.
  void force_weights(std::optional<std::vector<double>> w) {
    if (w && static_cast<std::int64_t>(w->size()) != experts_)
      throw ConfigError("forced gate weights need " + std::to_string(experts_) + " entries");
    forced_ = std::move(w);
  }

  std::int64_t experts() const { return experts_; }
  const Linear<T>& fc() const { return fc_; }

 private:
  std::int64_t experts_ = 2, hidden_ = 1;
  std::uint64_t stream_ = 0;
  Conv2d<T> reduce_;
  Linear<T> fc_;
  std::optional<std::vector<double>> forced_;
};

}  // namespace atmos::nn
