#pragma once

#include <cmath>

#include "atmos/nn/layers.hpp"

namespace atmos::nn {

/// Multi-head cross-attention from a query feature map onto a context map,
/// added back through a tanh gate that starts at zero:
///   out = q + tanh(gate) * Wo * Attn(Wq q, Wk ctx, Wv ctx)
template <typename T>
class CrossAttention {
 public:
  CrossAttention() = default;
  CrossAttention(ParamStore<T>& store, const std::string& name, std::int64_t query_channels,
                 std::int64_t context_channels, std::int64_t heads)
      : cq_(query_channels), cctx_(context_channels), heads_(heads) {
    if (heads <= 0 || query_channels % heads != 0 || context_channels % heads != 0)
      throw ConfigError("cross-attention: channels " + std::to_string(query_channels) + "/" +
                        std::to_string(context_channels) + " not divisible by " + std::to_string(heads) + " heads");
    q_ = Conv2d<T>::square(store, name + ".q", cq_, cq_, 1);
    k_ = Conv2d<T>::square(store, name + ".k", cctx_, cq_, 1);
    v_ = Conv2d<T>::square(store, name + ".v", cctx_, cq_, 1);
    o_ = Conv2d<T>::square(store, name + ".o", cq_, cq_, 1);
    gate_ = store.create(name + ".gate", Shape{1}, InitKind::kZeros);
  }

  /// Softmax attention weights (B * heads, Nq, Nk).
  Var<T> attention(const Var<T>& queries, const Var<T>& context) const {
    check(queries, context);
    const auto B = queries.dim(0), hd = cq_ / heads_;
    const auto nq = queries.dim(2) * queries.dim(3), nk = context.dim(2) * context.dim(3);
    Var<T> q = ops::reshape(q_(queries), Shape{B * heads_, hd, nq});
    Var<T> k = ops::reshape(k_(context), Shape{B * heads_, hd, nk});
    Var<T> scores = ops::mul_scalar(ops::bmm(q, k, true, false), T(1) / std::sqrt(static_cast<T>(hd)));
    return ops::softmax_lastdim(scores);
  }

  Var<T> operator()(const Var<T>& queries, const Var<T>& context) const {
    const auto B = queries.dim(0), hd = cq_ / heads_;
    const auto nk = context.dim(2) * context.dim(3);
    Var<T> weights = attention(queries, context);
    Var<T> v = ops::reshape(v_(context), Shape{B * heads_, hd, nk});
    Var<T> attended = ops::bmm(v, weights, false, true);  // (B*heads, hd, Nq)
    attended = o_(ops::reshape(attended, queries.shape()));
    return ops::add(queries, ops::scale_by(attended, ops::tanh(gate_)));
  }

  const Var<T>& gate() const { return gate_; }
  Var<T>& gate() { return gate_; }

 private:
  void check(const Var<T>& queries, const Var<T>& context) const {
    if (queries.value().rank() != 4 || context.value().rank() != 4 || queries.dim(1) != cq_ ||
        context.dim(1) != cctx_ || queries.dim(0) != context.dim(0))
      throw ShapeError("cross-attention: queries " + shape_str(queries.shape()) + ", context " +
                       shape_str(context.shape()) + " (expected " + std::to_string(cq_) + "/" +
                       std::to_string(cctx_) + " channels)");
  }

  std::int64_t cq_ = 0, cctx_ = 0, heads_ = 1;
  Conv2d<T> q_, k_, v_, o_;
  Var<T> gate_;
};

}  // namespace atmos::nn
