#pragma once

#include <string>

#include "atmos/conv.hpp"
#include "atmos/nn/param_store.hpp"
#include "atmos/ops.hpp"

namespace atmos::nn {

/// Per-call switches shared by every module in a forward pass.
struct ForwardContext {
  bool training = false;
  double noise_sigma = 0.0;   // gate exploration noise, used only when training
  std::uint64_t noise_key = 0;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& name, std::int64_t cin, std::int64_t cout, std::int64_t kh,
         std::int64_t kw, Conv2dGeometry geom, bool with_bias = true)
      : geom_(geom), cin_(cin), cout_(cout) {
    weight_ = store.create(name + ".weight", Shape{cout, cin, kh, kw}, InitKind::kUniformFanIn, cin * kh * kw);
    if (with_bias) bias_ = store.create(name + ".bias", Shape{cout}, InitKind::kUniformFanIn, cin * kh * kw);
  }

  /// Square k x k kernel; padding keeps the size at stride 1 for odd k.
  static Conv2d square(ParamStore<T>& store, const std::string& name, std::int64_t cin, std::int64_t cout, int k,
                       int stride = 1, bool with_bias = true, int dilation = 1) {
    return Conv2d(store, name, cin, cout, k, k, Conv2dGeometry::square(stride, dilation * (k - 1) / 2, dilation),
                  with_bias);
  }

  Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, weight_, bias_, geom_); }

  const Var<T>& weight() const { return weight_; }
  const Var<T>& bias() const { return bias_; }
  std::int64_t in_channels() const { return cin_; }
  std::int64_t out_channels() const { return cout_; }

 private:
  Var<T> weight_, bias_;
  Conv2dGeometry geom_;
  std::int64_t cin_ = 0, cout_ = 0;
};

template <typename T>
class InstanceNorm {
 public:
  InstanceNorm() = default;
  InstanceNorm(ParamStore<T>& store, const std::string& name, std::int64_t channels) {
    gain_ = store.create(name + ".gain", Shape{channels}, InitKind::kOnes);
    shift_ = store.create(name + ".shift", Shape{channels}, InitKind::kZeros);
  }
  Var<T> operator()(const Var<T>& x) const { return ops::instance_norm(x, gain_, shift_); }
  const Var<T>& shift() const { return shift_; }
  const Var<T>& gain() const { return gain_; }

 private:
  Var<T> gain_, shift_;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, std::int64_t in, std::int64_t out) {
    weight_ = store.create(name + ".weight", Shape{out, in}, InitKind::kUniformFanIn, in);
    bias_ = store.create(name + ".bias", Shape{out}, InitKind::kUniformFanIn, in);
  }
  Var<T> operator()(const Var<T>& x) const { return ops::linear(x, weight_, bias_); }
  const Var<T>& weight() const { return weight_; }
  const Var<T>& bias() const { return bias_; }

 private:
  Var<T> weight_, bias_;
};

/// Activation kinds shared by the pointwise suite and the CLI gradient check.
enum class Pointwise { kRelu, kLeakyRelu, kSigmoid, kTanh, kSoftplus };

inline Pointwise pointwise_from_name(const std::string& s) {
  if (s == "relu") return Pointwise::kRelu;
  if (s == "leaky_relu") return Pointwise::kLeakyRelu;
  if (s == "sigmoid") return Pointwise::kSigmoid;
  if (s == "tanh") return Pointwise::kTanh;
  if (s == "softplus") return Pointwise::kSoftplus;
  throw ConfigError("unknown pointwise kind '" + s + "'");
}

template <typename T>
Var<T> apply_pointwise(const Var<T>& x, Pointwise kind) {
  switch (kind) {
    case Pointwise::kRelu: return ops::relu(x);
    case Pointwise::kLeakyRelu: return ops::leaky_relu(x, T(0.2));
    case Pointwise::kSigmoid: return ops::sigmoid(x);
    case Pointwise::kTanh: return ops::tanh(x);
    case Pointwise::kSoftplus: return ops::softplus(x);
  }
  throw ConfigError("unknown pointwise kind");
}

}  // namespace atmos::nn
