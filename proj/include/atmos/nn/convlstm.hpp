#pragma once

// Convolutional LSTM scanned along the width axis. Each of the W columns is
// one time step; gates are 3x1 convolutions over the height of the column,
// applied to the input column and to the previous hidden column.

#include "atmos/nn/layers.hpp"

namespace atmos::nn {

namespace detail {

/// Forward state kept for backpropagation through time.
template <typename T>
struct LstmTape {
  std::int64_t B, Cin, Ch, H, W;
  // Per step, (B, Ch, H) each.
  std::vector<AlignedVector<T>> i, f, o, g, c, tanh_c, h_prev, c_prev;
};

inline atmos::detail::ConvDims column_dims(std::int64_t B, std::int64_t cin, std::int64_t H, std::int64_t cout) {
  return {B, cin, H, 1, cout, 3, 1, H, 1};
}

inline Conv2dGeometry column_geometry() { return Conv2dGeometry{1, 1, 1, 0, 1, 1}; }

}  // namespace detail

/// x (B, Cin, H, W); wx (4Ch, Cin, 3, 1); wh (4Ch, Ch, 3, 1); bias (4Ch).
/// Gate order within the 4Ch channels: input, forget, output, candidate.
template <typename T>
Var<T> convlstm_scan(const Var<T>& x, const Var<T>& wx, const Var<T>& wh, const Var<T>& bias) {
  if (x.value().rank() != 4) throw ShapeError("convlstm_scan: expected 4-D input, got " + shape_str(x.shape()));
  const auto B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto Ch = wh.dim(1);
  if (wx.shape() != Shape{4 * Ch, Cin, 3, 1} || wh.shape() != Shape{4 * Ch, Ch, 3, 1} ||
      bias.value().size() != static_cast<std::size_t>(4 * Ch))
    throw ShapeError("convlstm_scan: weights " + shape_str(wx.shape()) + ", " + shape_str(wh.shape()) +
                     " do not match input " + shape_str(x.shape()));

  // Input contribution to all gates at once: (B, 4Ch, H, W).
  const auto geom = detail::column_geometry();
  atmos::detail::ConvDims dx_dims{B, Cin, H, W, 4 * Ch, 3, 1, H, W};
  AlignedVector<T> gx(static_cast<std::size_t>(B * 4 * Ch * H * W));
  atmos::detail::conv_forward_raw(x.value().data(), wx.value().data(), bias.value().data(), dx_dims, geom, gx.data());

  const auto hd = detail::column_dims(B, Ch, H, 4 * Ch);
  const std::size_t n = static_cast<std::size_t>(B * Ch * H);
  auto tape = std::make_shared<detail::LstmTape<T>>();
  *tape = {B, Cin, Ch, H, W, {}, {}, {}, {}, {}, {}, {}, {}};
  for (auto* v : {&tape->i, &tape->f, &tape->o, &tape->g, &tape->c, &tape->tanh_c, &tape->h_prev, &tape->c_prev})
    v->resize(static_cast<std::size_t>(W));

  Tensor<T> out(Shape{B, Ch, H, W});
  AlignedVector<T> h(n, T(0)), c(n, T(0)), gates(static_cast<std::size_t>(B * 4 * Ch * H));
  for (std::int64_t t = 0; t < W; ++t) {
    tape->h_prev[t] = h;
    tape->c_prev[t] = c;
    atmos::detail::conv_forward_raw(h.data(), wh.value().data(), static_cast<const T*>(nullptr), hd, geom,
                                    gates.data());
    auto& gi = tape->i[t];
    auto& gf = tape->f[t];
    auto& go = tape->o[t];
    auto& gg = tape->g[t];
    auto& tc = tape->tanh_c[t];
    gi.resize(n), gf.resize(n), go.resize(n), gg.resize(n), tc.resize(n);
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t k = 0; k < Ch; ++k) {
        for (std::int64_t y = 0; y < H; ++y) {
          const std::size_t s = static_cast<std::size_t>((b * Ch + k) * H + y);
          auto pre = [&](std::int64_t gate) {
            const std::int64_t ch = gate * Ch + k;
            return gates[static_cast<std::size_t>((b * 4 * Ch + ch) * H + y)] +
                   gx[static_cast<std::size_t>(((b * 4 * Ch + ch) * H + y) * W + t)];
          };
          gi[s] = ops::sigmoid_scalar(pre(0));
          gf[s] = ops::sigmoid_scalar(pre(1));
          go[s] = ops::sigmoid_scalar(pre(2));
          gg[s] = std::tanh(pre(3));
          c[s] = gf[s] * c[s] + gi[s] * gg[s];
          tc[s] = std::tanh(c[s]);
          h[s] = go[s] * tc[s];
          out[static_cast<std::size_t>(((b * Ch + k) * H + y) * W + t)] = h[s];
        }
      }
    }
    tape->c[t] = c;
  }

  return make_op<T>(std::move(out), {x, wx, wh, bias}, [tape, dx_dims, hd, geom](Node<T>& self) {
    const auto& tp = *tape;
    const auto B = tp.B, Ch = tp.Ch, H = tp.H, W = tp.W;
    const std::size_t n = static_cast<std::size_t>(B * Ch * H);
    auto* gx_in = parent_grad(self, 0);
    auto* gwx = parent_grad(self, 1);
    auto* gwh = parent_grad(self, 2);
    auto* gb = parent_grad(self, 3);
    const T* wh = self.parents[2]->value.data();

    AlignedVector<T> dgx(static_cast<std::size_t>(B * 4 * Ch * H * W), T(0));
    AlignedVector<T> dh_next(n, T(0)), dc_next(n, T(0)), dgates(static_cast<std::size_t>(B * 4 * Ch * H));
    for (std::int64_t t = W - 1; t >= 0; --t) {
      const auto& gi = tp.i[t];
      const auto& gf = tp.f[t];
      const auto& go = tp.o[t];
      const auto& gg = tp.g[t];
      const auto& tc = tp.tanh_c[t];
      const auto& cp = tp.c_prev[t];
      for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t k = 0; k < Ch; ++k) {
          for (std::int64_t y = 0; y < H; ++y) {
            const std::size_t s = static_cast<std::size_t>((b * Ch + k) * H + y);
            const T dh = self.grad[static_cast<std::size_t>(((b * Ch + k) * H + y) * W + t)] + dh_next[s];
            const T dc = dh * go[s] * (T(1) - tc[s] * tc[s]) + dc_next[s];
            const T d_o = dh * tc[s];
            const T d_i = dc * gg[s];
            const T d_g = dc * gi[s];
            const T d_f = dc * cp[s];
            dc_next[s] = dc * gf[s];
            const T pre[4] = {d_i * gi[s] * (T(1) - gi[s]), d_f * gf[s] * (T(1) - gf[s]),
                              d_o * go[s] * (T(1) - go[s]), d_g * (T(1) - gg[s] * gg[s])};
            for (std::int64_t gate = 0; gate < 4; ++gate) {
              const std::int64_t ch = gate * Ch + k;
              dgates[static_cast<std::size_t>((b * 4 * Ch + ch) * H + y)] = pre[gate];
              dgx[static_cast<std::size_t>(((b * 4 * Ch + ch) * H + y) * W + t)] = pre[gate];
            }
          }
        }
      }
      std::fill(dh_next.begin(), dh_next.end(), T(0));
      atmos::detail::conv_backward_raw(tp.h_prev[t].data(), wh, dgates.data(), hd, geom, dh_next.data(),
                                       gwh ? gwh->data() : nullptr, static_cast<T*>(nullptr));
    }
    atmos::detail::conv_backward_raw(self.parents[0]->value.data(), self.parents[1]->value.data(), dgx.data(),
                                     dx_dims, geom, gx_in ? gx_in->data() : nullptr, gwx ? gwx->data() : nullptr,
                                     gb ? gb->data() : nullptr);
  });
}

template <typename T>
class ConvLSTM {
 public:
  ConvLSTM() = default;
  ConvLSTM(ParamStore<T>& store, const std::string& name, std::int64_t cin, std::int64_t hidden) : hidden_(hidden) {
    wx_ = store.create(name + ".wx", Shape{4 * hidden, cin, 3, 1}, InitKind::kUniformFanIn, (cin + hidden) * 3);
    wh_ = store.create(name + ".wh", Shape{4 * hidden, hidden, 3, 1}, InitKind::kUniformFanIn, (cin + hidden) * 3);
    bias_ = store.create(name + ".bias", Shape{4 * hidden}, InitKind::kZeros);
  }

  Var<T> operator()(const Var<T>& x) const { return convlstm_scan(x, wx_, wh_, bias_); }
  std::int64_t hidden_channels() const { return hidden_; }

 private:
  Var<T> wx_, wh_, bias_;
  std::int64_t hidden_ = 0;
};

}  // namespace atmos::nn
