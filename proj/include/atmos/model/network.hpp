#pragma once

// Generator (encoder -> MoE bottleneck -> attention decoder -> evidential head)
// and the conditional patch discriminator.

#include <array>

#include "atmos/nn/attention.hpp"
#include "atmos/nn/convlstm.hpp"
#include "atmos/nn/ffc.hpp"
#include "atmos/nn/gate.hpp"

namespace atmos::model {

using nn::ForwardContext;

struct NetworkConfig {
  std::array<std::int64_t, 4> channels{16, 32, 64, 128};
  std::int64_t height = 64, width = 64;
  std::int64_t n_heads = 4;
  std::int64_t gate_hidden = 64;
  double sigma_noise = 0.1;
  double ratio_global = 0.5;
  double alpha_offset = 1.0;
  bool use_attention = true;
  std::array<std::int64_t, 4> disc_channels{64, 128, 256, 512};
  std::uint64_t seed = 1;

  void validate() const {
    for (auto c : channels)
      if (c < 1) throw ConfigError("network channels must be positive");
    if (height % 8 != 0 || width % 8 != 0 || height < 8 || width < 8)
      throw ConfigError("input size " + std::to_string(height) + "x" + std::to_string(width) +
                        " must be a positive multiple of 8");
    if (n_heads < 1 || gate_hidden < 1) throw ConfigError("n_heads and gate_hidden must be >= 1");
    if (!(ratio_global >= 0 && ratio_global < 1)) throw ConfigError("ratio_global must lie in [0, 1)");
  }
  bool operator==(const NetworkConfig&) const = default;
};

/// Per-pixel Normal-Inverse-Gamma parameters, each (B, 1, H, W).
template <typename T>
struct NIGPrediction {
  Var<T> gamma, nu, alpha, beta;

  Tensor<T> aleatoric() const {
    Tensor<T> out(gamma.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = beta.value()[i] / (alpha.value()[i] - T(1));
    return out;
  }
  Tensor<T> epistemic() const {
    Tensor<T> out(gamma.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = beta.value()[i] / (nu.value()[i] * (alpha.value()[i] - T(1)));
    return out;
  }
};

template <typename T>
struct EncoderFeatures {
  Var<T> e0, e1, e2, e3;
};

/// 3x3 conv -> instance norm -> ReLU; the plain-convolution expert.
template <typename T>
class ConvExpert {
 public:
  ConvExpert() = default;
  ConvExpert(nn::ParamStore<T>& store, const std::string& name, std::int64_t c)
      : conv_(nn::Conv2d<T>::square(store, name + ".conv", c, c, 3, 1, false)), norm_(store, name + ".norm", c) {}
  Var<T> operator()(const Var<T>& x) const { return ops::relu(norm_(conv_(x))); }

 private:
  nn::Conv2d<T> conv_;
  nn::InstanceNorm<T> norm_;
};

template <typename T>
class Generator {
 public:
  explicit Generator(const NetworkConfig& cfg) : cfg_(cfg), store_(cfg.seed) {
    cfg_.validate();
    auto& s = store_;
    const auto [c1, c2, c3, c4] = cfg_.channels;
    const double r = cfg_.ratio_global;
    stem_ = nn::Conv2d<T>::square(s, "enc.stem", 2, c1, 3);
    down_[0] = nn::Conv2d<T>::square(s, "enc.down1", c1, c2, 3, 2);
    down_[1] = nn::Conv2d<T>::square(s, "enc.down2", c2, c3, 3, 2);
    down_[2] = nn::Conv2d<T>::square(s, "enc.down3", c3, c4, 3, 2);
    moe_conv_ = ConvExpert<T>(s, "enc.moe.conv", c2);
    moe_ffc_ = nn::FFCBlock<T>(s, "enc.moe.ffc", c2, c2, r);
    moe_lstm_ = nn::ConvLSTM<T>(s, "enc.moe.lstm", c2, c2);
    moe_gate_ = nn::Gate<T>(s, "enc.moe.gate", c2, 3, cfg_.gate_hidden);
    enc_ffc_[0] = nn::FFCBlock<T>(s, "enc.ffc2", c3, c3, r);
    enc_ffc_[1] = nn::FFCBlock<T>(s, "enc.ffc3", c4, c4, r);

    vlstm_ = nn::ConvLSTM<T>(s, "bottleneck.vlstm", c4, c4);
    vlstm_proj_ = nn::Conv2d<T>::square(s, "bottleneck.vlstm_proj", c4, c4, 1);
    bott_ffc_ = nn::FFCBlock<T>(s, "bottleneck.ffc", c4, c4, r);
    bott_gate_ = nn::Gate<T>(s, "bottleneck.gate", c4, 2, cfg_.gate_hidden);

    const std::array<std::int64_t, 4> in_c{c4, c3, c2, c1};
    for (int st = 0; st < 3; ++st) {
      const std::string p = "dec" + std::to_string(st + 1);
      const auto cin = in_c[static_cast<std::size_t>(st)], cout = in_c[static_cast<std::size_t>(st + 1)];
      dec_pre_[st] = nn::FFCBlock<T>(s, p + ".pre", cin, cin, r);
      dec_up_[st] = nn::Conv2d<T>::square(s, p + ".up", cin, cout, 3);
      if (cfg_.use_attention) dec_attn_[st] = nn::CrossAttention<T>(s, p + ".attn", cout, c4, cfg_.n_heads);
      dec_fuse_[st] = nn::FFCBlock<T>(s, p + ".fuse", 2 * cout, cout, r);
    }
    head_ = nn::Conv2d<T>::square(s, "head", c1, 4, 3);
  }

  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;

  // ---- encoder
  Var<T> stem(const Var<T>& x) const { return ops::relu(stem_(x)); }
  Var<T> down(int i, const Var<T>& x) const { return ops::relu(down_[i](x)); }

  /// Outputs of the three stage-1 experts (conv, FFC, ConvLSTM) on a downsampled map.
  std::vector<Var<T>> stage1_experts(const Var<T>& d) const { return {moe_conv_(d), moe_ffc_(d), moe_lstm_(d)}; }

  EncoderFeatures<T> encoder(const Var<T>& x, const ForwardContext& ctx) const {
    check_input(x);
    EncoderFeatures<T> f;
    f.e0 = stem(x);
    const Var<T> d1 = down(0, f.e0);
    f.e1 = ops::mix(stage1_experts(d1), moe_gate_(d1, ctx));
    f.e2 = enc_ffc_[0](down(1, f.e1));
    f.e3 = enc_ffc_[1](down(2, f.e2));
    return f;
  }

  // ---- bottleneck
  std::vector<Var<T>> bottleneck_experts(const Var<T>& e3) const {
    return {vlstm_proj_(vlstm_(e3)), bott_ffc_(e3)};
  }
  static Var<T> combine(const std::vector<Var<T>>& experts, const Var<T>& w) { return ops::mix(experts, w); }
  Var<T> bottleneck_weights(const Var<T>& e3, const ForwardContext& ctx) const { return bott_gate_(e3, ctx); }
  Var<T> bottleneck(const Var<T>& e3, const ForwardContext& ctx) const {
    return combine(bottleneck_experts(e3), bottleneck_weights(e3, ctx));
  }

  // ---- decoder
  /// Returns the three stage outputs; the last one is the decoder output.
  std::vector<Var<T>> decoder_stages(const Var<T>& b, const EncoderFeatures<T>& f) const {
    const std::array<Var<T>, 3> skips{f.e2, f.e1, f.e0};
    std::vector<Var<T>> outs;
    Var<T> d = b;
    for (int st = 0; st < 3; ++st) {
      Var<T> u = ops::relu(dec_up_[st](ops::upsample_nearest2x(dec_pre_[st](d))));
      if (cfg_.use_attention) u = dec_attn_[st](u, b);
      const auto& skip = skips[static_cast<std::size_t>(st)];
      if (skip.shape() != u.shape())
        throw ShapeError("decoder stage " + std::to_string(st + 1) + ": skip " + shape_str(skip.shape()) +
                         " vs upsampled " + shape_str(u.shape()));
      d = dec_fuse_[st](ops::concat_channels<T>({u, skip}));
      outs.push_back(d);
    }
    return outs;
  }
  Var<T> decoder(const Var<T>& b, const EncoderFeatures<T>& f) const { return decoder_stages(b, f).back(); }

  // ---- head
  NIGPrediction<T> head_from_raw(const Var<T>& raw) const {
    NIGPrediction<T> p;
    p.gamma = ops::softplus(ops::slice_channels(raw, 0, 1));
    p.nu = ops::add_scalar(ops::softplus(ops::slice_channels(raw, 1, 1)), T(1e-6));
    // The 1e-6 keeps alpha > 1 once softplus underflows for very negative inputs.
    p.alpha = ops::add_scalar(ops::softplus(ops::slice_channels(raw, 2, 1)), static_cast<T>(cfg_.alpha_offset + 1e-6));
    p.beta = ops::add_scalar(ops::softplus(ops::slice_channels(raw, 3, 1)), T(1e-6));
    return p;
  }
  NIGPrediction<T> evidential_head(const Var<T>& features) const { return head_from_raw(head_(features)); }

  /// x = (B, 2, H, W): channel 0 masked normalized ATB, channel 1 mask.
  NIGPrediction<T> forward(const Var<T>& x, const ForwardContext& ctx = {}) const {
    const auto f = encoder(x, ctx);
    return evidential_head(decoder(bottleneck(f.e3, ctx), f));
  }
  NIGPrediction<T> forward(const Var<T>& atb_masked, const Var<T>& mask, const ForwardContext& ctx) const {
    return forward(ops::concat_channels<T>({atb_masked, mask}), ctx);
  }

  nn::Gate<T>& encoder_gate() { return moe_gate_; }
  nn::Gate<T>& bottleneck_gate() { return bott_gate_; }
  const NetworkConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return store_; }
  const nn::ParamStore<T>& params() const { return store_; }

 private:
  void check_input(const Var<T>& x) const {
    if (x.value().rank() != 4 || x.dim(1) != 2)
      throw ShapeError("generator input must be (B, 2, H, W), got " + shape_str(x.shape()));
    if (x.dim(2) % 8 != 0 || x.dim(3) % 8 != 0)
      throw ConfigError("generator input " + shape_str(x.shape()) + ": H and W must be divisible by 8");
  }

  NetworkConfig cfg_;
  nn::ParamStore<T> store_;
  nn::Conv2d<T> stem_;
  std::array<nn::Conv2d<T>, 3> down_;
  ConvExpert<T> moe_conv_;
  nn::FFCBlock<T> moe_ffc_;
  nn::ConvLSTM<T> moe_lstm_;
  nn::Gate<T> moe_gate_;
  std::array<nn::FFCBlock<T>, 2> enc_ffc_;
  nn::ConvLSTM<T> vlstm_;
  nn::Conv2d<T> vlstm_proj_;
  nn::FFCBlock<T> bott_ffc_;
  nn::Gate<T> bott_gate_;
  std::array<nn::FFCBlock<T>, 3> dec_pre_;
  std::array<nn::Conv2d<T>, 3> dec_up_;
  std::array<nn::CrossAttention<T>, 3> dec_attn_;
  std::array<nn::FFCBlock<T>, 3> dec_fuse_;
  nn::Conv2d<T> head_;
};

/// LeakyReLU slopes (1 or 0.2 per element) of one discriminator pass. A
/// recorded pattern can be replayed on another input, which makes the
/// discriminator exactly affine in that input.
template <typename T>
struct ActivationPattern {
  std::vector<Tensor<T>> slopes;
  bool replay = false;
};

template <typename T>
struct DiscriminatorOutput {
  Var<T> logits;               // (B, 1, h, w)
  std::vector<Var<T>> features;  // activations after layers 1-4
};

/// Five 4x4 convolutions, strides (2, 2, 2, 1, 1), LeakyReLU(0.2) between
/// layers. Input channels: image, mask, masked ATB.
template <typename T>
class Discriminator {
 public:
  explicit Discriminator(const NetworkConfig& cfg) : store_(derive_key({cfg.seed, 0xd15cULL})) {
    std::int64_t cin = 3;
    const std::array<int, 5> strides{2, 2, 2, 1, 1};
    for (int i = 0; i < 5; ++i) {
      const std::int64_t cout = i < 4 ? cfg.disc_channels[static_cast<std::size_t>(i)] : 1;
      layers_[i] = nn::Conv2d<T>(store_, "disc.conv" + std::to_string(i + 1), cin, cout, 4, 4,
                                 Conv2dGeometry::square(strides[static_cast<std::size_t>(i)], 1));
      cin = cout;
    }
  }

  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;

  static std::pair<std::int64_t, std::int64_t> logit_size(std::int64_t h, std::int64_t w) {
    for (int s : {2, 2, 2, 1, 1}) {
      h = conv_out_dim(h, 4, s, 1, 1);
      w = conv_out_dim(w, 4, s, 1, 1);
    }
    return {h, w};
  }

  DiscriminatorOutput<T> forward(const Var<T>& image, const Var<T>& mask, const Var<T>& atb_masked) const {
    return forward(ops::concat_channels<T>({image, mask, atb_masked}));
  }

  DiscriminatorOutput<T> forward(const Var<T>& x, ActivationPattern<T>* pattern = nullptr) const {
    if (x.value().rank() != 4 || x.dim(1) != 3)
      throw ShapeError("discriminator input must be (B, 3, H, W), got " + shape_str(x.shape()));
    const auto [h, w] = logit_size(x.dim(2), x.dim(3));
    if (h < 1 || w < 1) throw ShapeError("discriminator input " + shape_str(x.shape()) + " is too small");
    DiscriminatorOutput<T> out;
    Var<T> y = x;
    if (pattern && !pattern->replay) pattern->slopes.clear();
    for (int i = 0; i < 4; ++i) {
      Var<T> pre = layers_[i](y);
      if (pattern && pattern->replay) {
        y = ops::mul_const(pre, pattern->slopes.at(static_cast<std::size_t>(i)));
      } else {
        y = ops::leaky_relu(pre);
        if (pattern) {
          Tensor<T> sl(pre.shape());
          for (std::size_t k = 0; k < sl.size(); ++k) sl[k] = pre.value()[k] > T(0) ? T(1) : T(0.2);
          pattern->slopes.push_back(std::move(sl));
        }
      }
      out.features.push_back(y);
    }
    out.logits = layers_[4](y);
    return out;
  }

  nn::ParamStore<T>& params() { return store_; }
  const nn::ParamStore<T>& params() const { return store_; }

 private:
  nn::ParamStore<T> store_;
  std::array<nn::Conv2d<T>, 5> layers_;
};

}  // namespace atmos::model
