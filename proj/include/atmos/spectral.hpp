#pragma once

// Real 2-D Fourier transforms as differentiable ops.
//
// rfft2 maps a real (B, C, H, W) tensor to its half spectrum, stored as real
// channels (B, 2C, H, W/2 + 1) with channel 2c holding the real part and
// 2c + 1 the imaginary part of input channel c. Both directions use the
// orthonormal 1/sqrt(HW) scaling, so irfft2(rfft2(x)) == x and
//   sum_{kh, kw} c(kw) |X(kh, kw)|^2 == sum x^2
// with c(0) = c(W/2) = 1 and c(kw) = 2 otherwise.

#include <complex>
#include <unsupported/Eigen/FFT>

#include "atmos/autodiff.hpp"

namespace atmos {

namespace detail {

template <typename T>
class Fft2 {
 public:
  Fft2(std::int64_t h, std::int64_t w) : h_(h), w_(w), wf_(w / 2 + 1) {
    fft_.SetFlag(Eigen::FFT<T>::Unscaled);
  }

  std::int64_t half_width() const { return wf_; }

  /// Forward half spectrum of one real plane. out has h * wf entries.
  void forward(const T* x, std::complex<T>* out) {
    std::vector<std::complex<T>> row_in(static_cast<std::size_t>(w_)), row_out;
    std::vector<std::complex<T>> tmp(static_cast<std::size_t>(h_ * wf_));
    for (std::int64_t r = 0; r < h_; ++r) {
      for (std::int64_t c = 0; c < w_; ++c) row_in[static_cast<std::size_t>(c)] = {x[r * w_ + c], T(0)};
      fft_.fwd(row_out, row_in);
      for (std::int64_t k = 0; k < wf_; ++k) tmp[static_cast<std::size_t>(r * wf_ + k)] = row_out[static_cast<std::size_t>(k)];
    }
    column_pass(tmp.data(), out, true);
  }

  /// Re( sum_{kh, kw<=W/2} weight(kw) * Z e^{+i theta} ), unnormalized.
  /// With doubled weights this is the inverse of the half spectrum; with unit
  /// weights it is the adjoint of forward().
  void inverse_real(const std::complex<T>* z, T* x, bool hermitian_weights) {
    std::vector<std::complex<T>> tmp(static_cast<std::size_t>(h_ * wf_));
    column_pass(z, tmp.data(), false);
    std::vector<std::complex<T>> row_in(static_cast<std::size_t>(w_)), row_out;
    for (std::int64_t r = 0; r < h_; ++r) {
      std::fill(row_in.begin(), row_in.end(), std::complex<T>(0));
      for (std::int64_t k = 0; k < wf_; ++k) {
        T c = T(1);
        if (hermitian_weights && k != 0 && !(w_ % 2 == 0 && k == w_ / 2)) c = T(2);
        row_in[static_cast<std::size_t>(k)] = c * tmp[static_cast<std::size_t>(r * wf_ + k)];
      }
      fft_.inv(row_out, row_in);
      for (std::int64_t c = 0; c < w_; ++c) x[r * w_ + c] = row_out[static_cast<std::size_t>(c)].real();
    }
  }

  /// Hermitian weight of half-spectrum column kw.
  T column_weight(std::int64_t kw) const {
    return (kw == 0 || (w_ % 2 == 0 && kw == w_ / 2)) ? T(1) : T(2);
  }

 private:
  void column_pass(const std::complex<T>* in, std::complex<T>* out, bool fwd) {
    std::vector<std::complex<T>> col_in(static_cast<std::size_t>(h_)), col_out;
    for (std::int64_t k = 0; k < wf_; ++k) {
      for (std::int64_t r = 0; r < h_; ++r) col_in[static_cast<std::size_t>(r)] = in[r * wf_ + k];
      if (fwd) fft_.fwd(col_out, col_in);
      else fft_.inv(col_out, col_in);
      for (std::int64_t r = 0; r < h_; ++r) out[r * wf_ + k] = col_out[static_cast<std::size_t>(r)];
    }
  }

  std::int64_t h_, w_, wf_;
  Eigen::FFT<T> fft_;
};

template <typename T>
void split_complex(const std::vector<std::complex<T>>& z, T* re, T* im) {
  for (std::size_t i = 0; i < z.size(); ++i) {
    re[i] = z[i].real();
    im[i] = z[i].imag();
  }
}

}  // namespace detail

namespace ops {

/// (B, C, H, W) -> (B, 2C, H, W/2 + 1), orthonormal.
template <typename T>
Var<T> rfft2(const Var<T>& x) {
  if (x.value().rank() != 4) throw ShapeError("rfft2: expected 4-D input, got " + shape_str(x.shape()));
  const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  atmos::detail::Fft2<T> fft(H, W);
  const auto Wf = fft.half_width();
  const std::int64_t plane = H * Wf;
  const T scale = T(1) / std::sqrt(static_cast<T>(H * W));
  Tensor<T> out(Shape{B, 2 * C, H, Wf});
  std::vector<std::complex<T>> z(static_cast<std::size_t>(plane));
  for (std::int64_t p = 0; p < B * C; ++p) {
    fft.forward(x.value().data() + p * H * W, z.data());
    for (auto& v : z) v *= scale;
    atmos::detail::split_complex(z, out.data() + (2 * p) * plane, out.data() + (2 * p + 1) * plane);
  }
  return make_op<T>(std::move(out), {x}, [B, C, H, W, Wf, scale](Node<T>& self) {
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    atmos::detail::Fft2<T> fft(H, W);
    const std::int64_t plane = H * Wf;
    std::vector<std::complex<T>> z(static_cast<std::size_t>(plane));
    AlignedVector<T> buf(static_cast<std::size_t>(H * W));
    for (std::int64_t p = 0; p < B * C; ++p) {
      const T* re = self.grad.data() + (2 * p) * plane;
      const T* im = self.grad.data() + (2 * p + 1) * plane;
      for (std::int64_t i = 0; i < plane; ++i) z[static_cast<std::size_t>(i)] = {re[i], im[i]};
      fft.inverse_real(z.data(), buf.data(), false);
      T* g = gx->data() + p * H * W;
      for (std::int64_t i = 0; i < H * W; ++i) g[i] += scale * buf[static_cast<std::size_t>(i)];
    }
  });
}

/// Inverse of rfft2 for a spatial size (H, W): (B, 2C, H, W/2 + 1) -> (B, C, H, W).
template <typename T>
Var<T> irfft2(const Var<T>& spec, std::int64_t H, std::int64_t W) {
  if (spec.value().rank() != 4 || spec.dim(1) % 2 != 0 || spec.dim(2) != H || spec.dim(3) != W / 2 + 1)
    throw ShapeError("irfft2: spectrum " + shape_str(spec.shape()) + " does not match output " + std::to_string(H) +
                     "x" + std::to_string(W));
  const auto B = spec.dim(0), C = spec.dim(1) / 2;
  atmos::detail::Fft2<T> fft(H, W);
  const auto Wf = fft.half_width();
  const std::int64_t plane = H * Wf;
  const T scale = T(1) / std::sqrt(static_cast<T>(H * W));
  Tensor<T> out(Shape{B, C, H, W});
  std::vector<std::complex<T>> z(static_cast<std::size_t>(plane));
  for (std::int64_t p = 0; p < B * C; ++p) {
    const T* re = spec.value().data() + (2 * p) * plane;
    const T* im = spec.value().data() + (2 * p + 1) * plane;
    for (std::int64_t i = 0; i < plane; ++i) z[static_cast<std::size_t>(i)] = {re[i], im[i]};
    T* o = out.data() + p * H * W;
    fft.inverse_real(z.data(), o, true);
    for (std::int64_t i = 0; i < H * W; ++i) o[i] *= scale;
  }
  return make_op<T>(std::move(out), {spec}, [B, C, H, W, Wf, scale](Node<T>& self) {
    auto* gs = parent_grad(self, 0);
    if (!gs) return;
    atmos::detail::Fft2<T> fft(H, W);
    const std::int64_t plane = H * Wf;
    std::vector<std::complex<T>> z(static_cast<std::size_t>(plane));
    for (std::int64_t p = 0; p < B * C; ++p) {
      fft.forward(self.grad.data() + p * H * W, z.data());
      T* gre = gs->data() + (2 * p) * plane;
      T* gim = gs->data() + (2 * p + 1) * plane;
      for (std::int64_t kh = 0; kh < H; ++kh) {
        for (std::int64_t kw = 0; kw < Wf; ++kw) {
          const std::int64_t i = kh * Wf + kw;
          const T c = scale * fft.column_weight(kw);
          gre[i] += c * z[static_cast<std::size_t>(i)].real();
          gim[i] += c * z[static_cast<std::size_t>(i)].imag();
        }
      }
    }
  });
}

}  // namespace ops
}  // namespace atmos
