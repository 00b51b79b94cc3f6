#pragma once

// 2-D cross-correlation over (B, C, H, W) tensors via im2col + GEMM.

#include <Eigen/Core>
#include <optional>

#include "atmos/autodiff.hpp"

namespace atmos {

struct Conv2dGeometry {
  int stride_h = 1, stride_w = 1;
  int pad_h = 0, pad_w = 0;
  int dil_h = 1, dil_w = 1;

  static Conv2dGeometry square(int stride, int pad, int dilation = 1) {
    return {stride, stride, pad, pad, dilation, dilation};
  }
};

inline std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, int stride, int pad, int dil) {
  return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}

namespace detail {

struct ConvDims {
  std::int64_t B, Cin, H, W, Cout, kh, kw, Ho, Wo;
  std::int64_t K() const { return Cin * kh * kw; }
  std::int64_t P() const { return Ho * Wo; }
};

template <typename T>
void im2col(const T* x, const ConvDims& d, const Conv2dGeometry& g, T* cols) {
  const std::int64_t P = d.P();
  for (std::int64_t c = 0; c < d.Cin; ++c) {
    for (std::int64_t i = 0; i < d.kh; ++i) {
      for (std::int64_t j = 0; j < d.kw; ++j) {
        T* row = cols + ((c * d.kh + i) * d.kw + j) * P;
        for (std::int64_t oh = 0; oh < d.Ho; ++oh) {
          const std::int64_t ih = oh * g.stride_h - g.pad_h + i * g.dil_h;
          T* dst = row + oh * d.Wo;
          if (ih < 0 || ih >= d.H) {
            std::fill_n(dst, d.Wo, T(0));
            continue;
          }
          const T* src = x + (c * d.H + ih) * d.W;
          for (std::int64_t ow = 0; ow < d.Wo; ++ow) {
            const std::int64_t iw = ow * g.stride_w - g.pad_w + j * g.dil_w;
            dst[ow] = (iw >= 0 && iw < d.W) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvDims& d, const Conv2dGeometry& g, T* dx) {
  const std::int64_t P = d.P();
  for (std::int64_t c = 0; c < d.Cin; ++c) {
    for (std::int64_t i = 0; i < d.kh; ++i) {
      for (std::int64_t j = 0; j < d.kw; ++j) {
        const T* row = cols + ((c * d.kh + i) * d.kw + j) * P;
        for (std::int64_t oh = 0; oh < d.Ho; ++oh) {
          const std::int64_t ih = oh * g.stride_h - g.pad_h + i * g.dil_h;
          if (ih < 0 || ih >= d.H) continue;
          T* dst = dx + (c * d.H + ih) * d.W;
          const T* src = row + oh * d.Wo;
          for (std::int64_t ow = 0; ow < d.Wo; ++ow) {
            const std::int64_t iw = ow * g.stride_w - g.pad_w + j * g.dil_w;
            if (iw >= 0 && iw < d.W) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

inline bool is_pointwise(const ConvDims& d, const Conv2dGeometry& g) {
  return d.kh == 1 && d.kw == 1 && g.stride_h == 1 && g.stride_w == 1 && g.pad_h == 0 && g.pad_w == 0;
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// out[b] = W * cols(x[b]) (+ bias), raw buffers.
template <typename T>
void conv_forward_raw(const T* x, const T* w, const T* bias, const ConvDims& d, const Conv2dGeometry& g, T* out) {
  using CMap = Eigen::Map<const RowMat<T>>;
  const bool pw = is_pointwise(d, g);
  AlignedVector<T> cols(pw ? 0 : static_cast<std::size_t>(d.K() * d.P()));
  CMap Wm(w, d.Cout, d.K());
  for (std::int64_t b = 0; b < d.B; ++b) {
    const T* xb = x + b * d.Cin * d.H * d.W;
    const T* cb = xb;
    if (!pw) {
      im2col(xb, d, g, cols.data());
      cb = cols.data();
    }
    Eigen::Map<RowMat<T>> O(out + b * d.Cout * d.P(), d.Cout, d.P());
    O.noalias() = Wm * CMap(cb, d.K(), d.P());
    if (bias)
      for (std::int64_t o = 0; o < d.Cout; ++o) O.row(o).array() += bias[o];
  }
}

/// Accumulates gradients for any non-null destination.
template <typename T>
void conv_backward_raw(const T* x, const T* w, const T* dout, const ConvDims& d, const Conv2dGeometry& g, T* dx,
                       T* dw, T* dbias) {
  using CMap = Eigen::Map<const RowMat<T>>;
  const bool pw = is_pointwise(d, g);
  AlignedVector<T> cols(pw || !dw ? 0 : static_cast<std::size_t>(d.K() * d.P()));
  AlignedVector<T> dcols(pw || !dx ? 0 : static_cast<std::size_t>(d.K() * d.P()));
  CMap Wm(w, d.Cout, d.K());
  for (std::int64_t b = 0; b < d.B; ++b) {
    CMap G(dout + b * d.Cout * d.P(), d.Cout, d.P());
    const T* xb = x + b * d.Cin * d.H * d.W;
    if (dw) {
      const T* cb = xb;
      if (!pw) {
        im2col(xb, d, g, cols.data());
        cb = cols.data();
      }
      Eigen::Map<RowMat<T>>(dw, d.Cout, d.K()).noalias() += G * CMap(cb, d.K(), d.P()).transpose();
    }
    if (dbias)
      for (std::int64_t o = 0; o < d.Cout; ++o) dbias[o] += G.row(o).sum();
    if (dx) {
      T* dxb = dx + b * d.Cin * d.H * d.W;
      if (pw) {
        Eigen::Map<RowMat<T>>(dxb, d.Cin, d.P()).noalias() += Wm.transpose() * G;
      } else {
        Eigen::Map<RowMat<T>>(dcols.data(), d.K(), d.P()).noalias() = Wm.transpose() * G;
        col2im_add(dcols.data(), d, g, dxb);
      }
    }
  }
}

inline ConvDims conv_dims(const Shape& x, const Shape& w, const Conv2dGeometry& g) {
  if (x.size() != 4 || w.size() != 4)
    throw ShapeError("conv2d: expected 4-D input and weight, got " + shape_str(x) + " and " + shape_str(w));
  if (x[1] != w[1])
    throw ShapeError("conv2d: input channels " + std::to_string(x[1]) + " but weight expects " + std::to_string(w[1]));
  if (g.stride_h < 1 || g.stride_w < 1 || g.dil_h < 1 || g.dil_w < 1 || g.pad_h < 0 || g.pad_w < 0)
    throw ConfigError("conv2d: stride and dilation must be >= 1, padding >= 0");
  ConvDims d{x[0], x[1], x[2], x[3], w[0], w[2], w[3], 0, 0};
  d.Ho = conv_out_dim(d.H, d.kh, g.stride_h, g.pad_h, g.dil_h);
  d.Wo = conv_out_dim(d.W, d.kw, g.stride_w, g.pad_w, g.dil_w);
  if (d.Ho < 1 || d.Wo < 1)
    throw ShapeError("conv2d: kernel " + shape_str(w) + " does not fit input " + shape_str(x));
  return d;
}

}  // namespace detail

namespace ops {

/// weight (Cout, Cin, kh, kw); bias (Cout) or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Conv2dGeometry g) {
  const atmos::detail::ConvDims d = atmos::detail::conv_dims(x.shape(), weight.shape(), g);
  const bool has_bias = bias.defined();
  if (has_bias && bias.value().size() != static_cast<std::size_t>(d.Cout))
    throw ShapeError("conv2d: bias size " + std::to_string(bias.value().size()) + " for " +
                     std::to_string(d.Cout) + " output channels");
  Tensor<T> out(Shape{d.B, d.Cout, d.Ho, d.Wo});
  atmos::detail::conv_forward_raw(x.value().data(), weight.value().data(), has_bias ? bias.value().data() : nullptr, d, g,
                           out.data());
  std::vector<Var<T>> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return make_op<T>(std::move(out), std::move(parents), [d, g, has_bias](Node<T>& self) {
    Tensor<T>* gx = parent_grad(self, 0);
    Tensor<T>* gw = parent_grad(self, 1);
    Tensor<T>* gb = has_bias ? parent_grad(self, 2) : nullptr;
    atmos::detail::conv_backward_raw(self.parents[0]->value.data(), self.parents[1]->value.data(), self.grad.data(), d, g,
                              gx ? gx->data() : nullptr, gw ? gw->data() : nullptr, gb ? gb->data() : nullptr);
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, Conv2dGeometry g) {
  return conv2d(x, weight, Var<T>{}, g);
}

}  // namespace ops
}  // namespace atmos
