#pragma once

// Fast Fourier Convolution: channels are split into a local part (ordinary
// 3x3 convolutions) and a global part whose self-path runs in the 2-D
// frequency domain, giving every output pixel an image-wide receptive field.

#include <cmath>

#include "atmos/nn/layers.hpp"
#include "atmos/spectral.hpp"

namespace atmos::nn {

/// rfft2 -> pointwise complex-as-2-channel 1x1 conv -> optional ReLU -> irfft2.
/// weight has shape (2 * Cout, 2 * Cin, 1, 1).
template <typename T>
Var<T> spectral_unit(const Var<T>& x, const Var<T>& weight, bool nonlinearity = true) {
  if (x.value().rank() != 4) throw ShapeError("spectral_unit: expected 4-D input, got " + shape_str(x.shape()));
  const auto H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0 || W % 2 != 0)
    throw ShapeError("spectral_unit: spatial dims must be even, got " + shape_str(x.shape()));
  Var<T> f = ops::rfft2(x);
  f = ops::conv2d(f, weight, Conv2dGeometry{});
  if (nonlinearity) f = ops::relu(f);
  return ops::irfft2(f, H, W);
}

/// Global/local channel split for a given ratio; the ratio must divide the
/// channel count exactly.
inline std::int64_t global_channels(std::int64_t channels, double ratio) {
  if (ratio < 0.0 || ratio > 1.0) throw ConfigError("ratio_global must lie in [0, 1], got " + std::to_string(ratio));
  const double g = static_cast<double>(channels) * ratio;
  const auto gi = static_cast<std::int64_t>(std::llround(g));
  if (std::abs(g - static_cast<double>(gi)) > 1e-9)
    throw ConfigError("ratio_global " + std::to_string(ratio) + " does not split " + std::to_string(channels) +
                      " channels evenly");
  return gi;
}

template <typename T>
class FFCLayer {
 public:
  FFCLayer() = default;
  FFCLayer(ParamStore<T>& store, const std::string& name, std::int64_t cin, std::int64_t cout, double ratio)
      : in_g_(global_channels(cin, ratio)), in_l_(cin - in_g_), out_g_(global_channels(cout, ratio)),
        out_l_(cout - out_g_) {
    if (in_l_ > 0 && out_l_ > 0) l2l_ = Conv2d<T>::square(store, name + ".l2l", in_l_, out_l_, 3, 1, false);
    if (in_g_ > 0 && out_l_ > 0) g2l_ = Conv2d<T>::square(store, name + ".g2l", in_g_, out_l_, 3, 1, false);
    if (in_l_ > 0 && out_g_ > 0) l2g_ = Conv2d<T>::square(store, name + ".l2g", in_l_, out_g_, 3, 1, false);
    if (in_g_ > 0 && out_g_ > 0)
      g2g_ = store.create(name + ".g2g.spectral", Shape{2 * out_g_, 2 * in_g_, 1, 1}, InitKind::kUniformFanIn,
                          2 * in_g_);
    if (out_l_ > 0) norm_l_ = InstanceNorm<T>(store, name + ".norm_l", out_l_);
    if (out_g_ > 0) norm_g_ = InstanceNorm<T>(store, name + ".norm_g", out_g_);
  }

  Var<T> operator()(const Var<T>& x) const {
    if (x.dim(1) != in_l_ + in_g_)
      throw ShapeError("FFC layer expects " + std::to_string(in_l_ + in_g_) + " channels, got " +
                       shape_str(x.shape()));
    Var<T> xl = in_l_ > 0 ? ops::slice_channels(x, 0, in_l_) : Var<T>{};
    Var<T> xg = in_g_ > 0 ? ops::slice_channels(x, in_l_, in_g_) : Var<T>{};
    std::vector<Var<T>> outs;
    if (out_l_ > 0) {
      std::vector<Var<T>> terms;
      if (in_l_ > 0) terms.push_back(l2l_(xl));
      if (in_g_ > 0) terms.push_back(g2l_(xg));
      outs.push_back(ops::relu(norm_l_(terms.size() == 1 ? terms[0] : ops::add_n(terms))));
    }
    if (out_g_ > 0) {
      std::vector<Var<T>> terms;
      if (in_l_ > 0) terms.push_back(l2g_(xl));
      if (in_g_ > 0) terms.push_back(spectral_unit(xg, g2g_, true));
      outs.push_back(ops::relu(norm_g_(terms.size() == 1 ? terms[0] : ops::add_n(terms))));
    }
    return outs.size() == 1 ? outs[0] : ops::concat_channels(outs);
  }

  std::int64_t out_channels() const { return out_l_ + out_g_; }
  bool has_spectral_path() const { return g2g_.defined(); }
  const InstanceNorm<T>& norm_local() const { return norm_l_; }
  const InstanceNorm<T>& norm_global() const { return norm_g_; }

 private:
  std::int64_t in_g_ = 0, in_l_ = 0, out_g_ = 0, out_l_ = 0;
  Conv2d<T> l2l_, g2l_, l2g_;
  Var<T> g2g_;
  InstanceNorm<T> norm_l_, norm_g_;
};

/// Two FFC layers with a residual connection (1x1 projection when the
/// channel count changes). ratio 0 reduces to a plain two-conv residual block.
template <typename T>
class FFCBlock {
 public:
  FFCBlock() = default;
  FFCBlock(ParamStore<T>& store, const std::string& name, std::int64_t cin, std::int64_t cout, double ratio)
      : first_(store, name + ".ffc1", cin, cout, ratio), second_(store, name + ".ffc2", cout, cout, ratio) {
    if (cin != cout) proj_ = Conv2d<T>::square(store, name + ".proj", cin, cout, 1, 1, false);
  }

  Var<T> operator()(const Var<T>& x) const {
    Var<T> y = second_(first_(x));
    return ops::add(y, proj_.weight().defined() ? proj_(x) : x);
  }

  const FFCLayer<T>& first() const { return first_; }
  const FFCLayer<T>& second() const { return second_; }

 private:
  FFCLayer<T> first_, second_;
  Conv2d<T> proj_;
};

}  // namespace atmos::nn
