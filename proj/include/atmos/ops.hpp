#pragma once

// Differentiable tensor operations: elementwise math, reductions, shape
// manipulation, softmax, batched matmul and normalization.

#include <Eigen/Core>
#include <cmath>
#include <numeric>
#include <string>

#include "atmos/autodiff.hpp"

namespace atmos::ops {

namespace detail {

template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& x, F f, DF df) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_op<T>(std::move(out), {x}, [df](Node<T>& self) {
    Tensor<T>* gx = parent_grad(self, 0);
    if (!gx) return;
    const Tensor<T>& xv = self.parents[0]->value;
    for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += self.grad[i] * df(xv[i], self.value[i]);
  });
}

template <typename T>
void require_same(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

template <typename T>
void require_rank(const Var<T>& a, int r, const char* op) {
  if (a.value().rank() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_str(a.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a, b, "add");
  Tensor<T> out = a.value();
  out += b.value();
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) *g += self.grad;
    if (auto* g = parent_grad(self, 1)) *g += self.grad;
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a, b, "sub");
  Tensor<T> out = a.value();
  out.axpy(T(-1), b.value());
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) *g += self.grad;
    if (auto* g = parent_grad(self, 1)) g->axpy(T(-1), self.grad);
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a, b, "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    if (auto* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
  });
}

/// Sum of a list of same-shape tensors.
template <typename T>
Var<T> add_n(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ShapeError("add_n: empty list");
  Tensor<T> out = xs[0].value();
  for (std::size_t k = 1; k < xs.size(); ++k) {
    detail::require_same(xs[0], xs[k], "add_n");
    out += xs[k].value();
  }
  return make_op<T>(std::move(out), xs, [](Node<T>& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k)
      if (auto* g = parent_grad(self, k)) *g += self.grad;
  });
}

// ---------------------------------------------------------------------------
// Elementwise with constants

template <typename T>
Var<T> add_scalar(const Var<T>& x, T c) {
  return detail::unary<T>(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& x, T c) {
  return detail::unary<T>(x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

/// x * s where s is a one-element Var.
template <typename T>
Var<T> scale_by(const Var<T>& x, const Var<T>& s) {
  if (s.value().size() != 1) throw ShapeError("scale_by: scale must have one element");
  const T sv = s.value()[0];
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * sv;
  return make_op<T>(std::move(out), {x, s}, [](Node<T>& self) {
    const auto& xv = self.parents[0]->value;
    const T sv = self.parents[1]->value[0];
    if (auto* g = parent_grad(self, 0)) g->axpy(sv, self.grad);
    if (auto* g = parent_grad(self, 1)) {
      T acc = 0;
      for (std::size_t i = 0; i < xv.size(); ++i) acc += self.grad[i] * xv[i];
      (*g)[0] += acc;
    }
  });
}

/// Multiplies by a constant tensor of the same shape (masks).
template <typename T>
Var<T> mul_const(const Var<T>& x, const Tensor<T>& c) {
  x.value().check_same(c, "mul_const");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * c[i];
  return make_op<T>(std::move(out), {x}, [c](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * c[i];
  });
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

template <typename T>
Var<T> relu(const Var<T>& x) {
  return detail::unary<T>(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope = T(0.2)) {
  return detail::unary<T>(
      x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
T sigmoid_scalar(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary<T>(x, [](T v) { return sigmoid_scalar(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return detail::unary<T>(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

/// ln(1 + e^x); returns x itself above 30.
template <typename T>
T softplus_scalar(T v) {
  if (v > T(30)) return v;
  return std::log1p(std::exp(v));
}

template <typename T>
Var<T> softplus(const Var<T>& x) {
  return detail::unary<T>(x, [](T v) { return softplus_scalar(v); },
                          [](T v, T) { return v > T(30) ? T(1) : sigmoid_scalar(v); });
}

template <typename T>
Var<T> abs(const Var<T>& x) {
  return detail::unary<T>(
      x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> square(const Var<T>& x) {
  return detail::unary<T>(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum(const Var<T>& x) {
  T acc = 0;
  for (T v : x.value().values()) acc += v;
  return make_op<T>(Tensor<T>::scalar(acc), {x}, [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      const T s = self.grad[0];
      for (auto& v : g->values()) v += s;
    }
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  const T n = static_cast<T>(x.value().size());
  return mul_scalar(sum(x), T(1) / n);
}

/// Global average pool: (B, C, H, W) -> (B, C).
template <typename T>
Var<T> gap(const Var<T>& x) {
  detail::require_rank(x, 4, "gap");
  const auto B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{B, C});
  const T* xv = x.value().data();
  for (std::int64_t i = 0; i < B * C; ++i) {
    T acc = 0;
    for (std::int64_t k = 0; k < HW; ++k) acc += xv[i * HW + k];
    out[static_cast<std::size_t>(i)] = acc / static_cast<T>(HW);
  }
  return make_op<T>(std::move(out), {x}, [HW](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const T d = self.grad[i] / static_cast<T>(HW);
        for (std::int64_t k = 0; k < HW; ++k) (*g)[i * HW + k] += d;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Var<T> reshape(const Var<T>& x, Shape s) {
  Tensor<T> out = x.value().reshaped(std::move(s));
  return make_op<T>(std::move(out), {x}, [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

/// Concatenates 4-D tensors along channels.
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: empty list");
  const auto B = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
  std::int64_t C = 0;
  for (const auto& x : xs) {
    detail::require_rank(x, 4, "concat_channels");
    if (x.dim(0) != B || x.dim(2) != H || x.dim(3) != W)
      throw ShapeError("concat_channels: " + shape_str(x.shape()) + " vs " + shape_str(xs[0].shape()));
    C += x.dim(1);
  }
  Tensor<T> out(Shape{B, C, H, W});
  const std::int64_t HW = H * W;
  std::int64_t c0 = 0;
  for (const auto& x : xs) {
    const auto Ck = x.dim(1);
    for (std::int64_t b = 0; b < B; ++b)
      std::copy_n(x.value().data() + b * Ck * HW, Ck * HW, out.data() + (b * C + c0) * HW);
    c0 += Ck;
  }
  return make_op<T>(std::move(out), xs, [B, C, HW](Node<T>& self) {
    std::int64_t c0 = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      const auto Ck = self.parents[k]->value.dim(1);
      if (auto* g = parent_grad(self, k)) {
        for (std::int64_t b = 0; b < B; ++b) {
          const T* src = self.grad.data() + (b * C + c0) * HW;
          T* dst = g->data() + b * Ck * HW;
          for (std::int64_t i = 0; i < Ck * HW; ++i) dst[i] += src[i];
        }
      }
      c0 += Ck;
    }
  });
}

/// Channels [start, start + count) of a 4-D tensor.
template <typename T>
Var<T> slice_channels(const Var<T>& x, std::int64_t start, std::int64_t count) {
  detail::require_rank(x, 4, "slice_channels");
  const auto B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (start < 0 || count < 0 || start + count > C)
    throw ShapeError("slice_channels: [" + std::to_string(start) + ", +" + std::to_string(count) +
                     ") outside " + shape_str(x.shape()));
  Tensor<T> out(Shape{B, count, x.dim(2), x.dim(3)});
  for (std::int64_t b = 0; b < B; ++b)
    std::copy_n(x.value().data() + (b * C + start) * HW, count * HW, out.data() + b * count * HW);
  return make_op<T>(std::move(out), {x}, [B, C, HW, start, count](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::int64_t b = 0; b < B; ++b) {
        const T* src = self.grad.data() + b * count * HW;
        T* dst = g->data() + (b * C + start) * HW;
        for (std::int64_t i = 0; i < count * HW; ++i) dst[i] += src[i];
      }
    }
  });
}

/// Nearest-neighbour 2x upsampling of (B, C, H, W).
template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x) {
  detail::require_rank(x, 4, "upsample_nearest2x");
  const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> out(Shape{B, C, 2 * H, 2 * W});
  for (std::int64_t p = 0; p < B * C; ++p)
    for (std::int64_t h = 0; h < 2 * H; ++h)
      for (std::int64_t w = 0; w < 2 * W; ++w)
        out[(p * 2 * H + h) * 2 * W + w] = x.value()[(p * H + h / 2) * W + w / 2];
  return make_op<T>(std::move(out), {x}, [B, C, H, W](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::int64_t p = 0; p < B * C; ++p)
        for (std::int64_t h = 0; h < 2 * H; ++h)
          for (std::int64_t w = 0; w < 2 * W; ++w)
            (*g)[(p * H + h / 2) * W + w / 2] += self.grad[(p * 2 * H + h) * 2 * W + w];
  });
}

/// x[:, :, top:top+h, left:left+w]
template <typename T>
Var<T> crop2d(const Var<T>& x, std::int64_t top, std::int64_t left, std::int64_t h, std::int64_t w) {
  detail::require_rank(x, 4, "crop2d");
  const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (top < 0 || left < 0 || h < 1 || w < 1 || top + h > H || left + w > W)
    throw ShapeError("crop2d: window out of range for " + shape_str(x.shape()));
  if (top == 0 && left == 0 && h == H && w == W) return x;
  Tensor<T> out(Shape{B, C, h, w});
  for (std::int64_t p = 0; p < B * C; ++p)
    for (std::int64_t r = 0; r < h; ++r)
      for (std::int64_t c = 0; c < w; ++c) out[(p * h + r) * w + c] = x.value()[(p * H + top + r) * W + left + c];
  return make_op<T>(std::move(out), {x}, [=](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::int64_t p = 0; p < B * C; ++p)
        for (std::int64_t r = 0; r < h; ++r)
          for (std::int64_t c = 0; c < w; ++c) (*g)[(p * H + top + r) * W + left + c] += self.grad[(p * h + r) * w + c];
  });
}

// ---------------------------------------------------------------------------
// Dense layers

/// x (B, in) * W^T (in, out) + b -> (B, out).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  detail::require_rank(x, 2, "linear");
  const auto B = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (weight.dim(1) != in || bias.value().size() != static_cast<std::size_t>(out_dim))
    throw ShapeError("linear: input " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()));
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  Tensor<T> out(Shape{B, out_dim});
  Eigen::Map<Mat> O(out.data(), B, out_dim);
  O.noalias() = CMap(x.value().data(), B, in) * CMap(weight.value().data(), out_dim, in).transpose();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t o = 0; o < out_dim; ++o) O(b, o) += bias.value()[static_cast<std::size_t>(o)];
  return make_op<T>(std::move(out), {x, weight, bias}, [B, in, out_dim](Node<T>& self) {
    CMap G(self.grad.data(), B, out_dim);
    if (auto* g = parent_grad(self, 0))
      Eigen::Map<Mat>(g->data(), B, in).noalias() += G * CMap(self.parents[1]->value.data(), out_dim, in);
    if (auto* g = parent_grad(self, 1))
      Eigen::Map<Mat>(g->data(), out_dim, in).noalias() +=
          G.transpose() * CMap(self.parents[0]->value.data(), B, in);
    if (auto* g = parent_grad(self, 2))
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t o = 0; o < out_dim; ++o) (*g)[static_cast<std::size_t>(o)] += G(b, o);
  });
}

/// Softmax over the last axis.
template <typename T>
Var<T> softmax_lastdim(const Var<T>& x) {
  const auto n = x.dim(-1);
  const auto rows = static_cast<std::int64_t>(x.value().size()) / n;
  Tensor<T> out(x.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* in = x.value().data() + r * n;
    T* o = out.data() + r * n;
    T m = in[0];
    for (std::int64_t k = 1; k < n; ++k) m = std::max(m, in[k]);
    T z = 0;
    for (std::int64_t k = 0; k < n; ++k) z += (o[k] = std::exp(in[k] - m));
    for (std::int64_t k = 0; k < n; ++k) o[k] /= z;
  }
  return make_op<T>(std::move(out), {x}, [rows, n](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* y = self.value.data() + r * n;
        const T* dy = self.grad.data() + r * n;
        T dot = 0;
        for (std::int64_t k = 0; k < n; ++k) dot += dy[k] * y[k];
        for (std::int64_t k = 0; k < n; ++k) (*g)[r * n + k] += y[k] * (dy[k] - dot);
      }
    }
  });
}

/// Batched matmul over the leading axis: op(A[i]) * op(B[i]).
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool trans_a = false, bool trans_b = false) {
  detail::require_rank(a, 3, "bmm");
  detail::require_rank(b, 3, "bmm");
  const auto N = a.dim(0);
  if (b.dim(0) != N) throw ShapeError("bmm: batch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const auto ar = a.dim(1), ac = a.dim(2), br = b.dim(1), bc = b.dim(2);
  const auto m = trans_a ? ac : ar, k = trans_a ? ar : ac;
  const auto k2 = trans_b ? bc : br, n = trans_b ? br : bc;
  if (k != k2) throw ShapeError("bmm: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  Tensor<T> out(Shape{N, m, n});
  for (std::int64_t i = 0; i < N; ++i) {
    CMap A(a.value().data() + i * ar * ac, ar, ac);
    CMap Bm(b.value().data() + i * br * bc, br, bc);
    Eigen::Map<Mat> O(out.data() + i * m * n, m, n);
    if (!trans_a && !trans_b) O.noalias() = A * Bm;
    else if (trans_a && !trans_b) O.noalias() = A.transpose() * Bm;
    else if (!trans_a && trans_b) O.noalias() = A * Bm.transpose();
    else O.noalias() = A.transpose() * Bm.transpose();
  }
  return make_op<T>(std::move(out), {a, b}, [=](Node<T>& self) {
    for (std::int64_t i = 0; i < N; ++i) {
      CMap G(self.grad.data() + i * m * n, m, n);
      CMap A(self.parents[0]->value.data() + i * ar * ac, ar, ac);
      CMap Bm(self.parents[1]->value.data() + i * br * bc, br, bc);
      if (auto* g = parent_grad(self, 0)) {
        Eigen::Map<Mat> GA(g->data() + i * ar * ac, ar, ac);
        // C = opA(A) opB(B); dA from dC.
        if (!trans_a && !trans_b) GA.noalias() += G * Bm.transpose();
        else if (!trans_a && trans_b) GA.noalias() += G * Bm;
        else if (trans_a && !trans_b) GA.noalias() += Bm * G.transpose();
        else GA.noalias() += Bm.transpose() * G.transpose();
      }
      if (auto* g = parent_grad(self, 1)) {
        Eigen::Map<Mat> GB(g->data() + i * br * bc, br, bc);
        if (!trans_a && !trans_b) GB.noalias() += A.transpose() * G;
        else if (trans_a && !trans_b) GB.noalias() += A * G;
        else if (!trans_a && trans_b) GB.noalias() += G.transpose() * A;
        else GB.noalias() += G.transpose() * A.transpose();
      }
    }
  });
}

/// Per-sample, per-channel normalization over (H, W) with affine gain/shift
/// of shape (C).
template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& shift, T eps = T(1e-5)) {
  detail::require_rank(x, 4, "instance_norm");
  const auto B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gain.value().size() != static_cast<std::size_t>(C) || shift.value().size() != static_cast<std::size_t>(C))
    throw ShapeError("instance_norm: affine params do not match " + shape_str(x.shape()));
  Tensor<T> out(x.shape());
  Tensor<T> xhat(x.shape());
  AlignedVector<T> inv_std(static_cast<std::size_t>(B * C));
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t c = 0; c < C; ++c) {
      const std::int64_t p = b * C + c;
      const T* in = x.value().data() + p * HW;
      T mu = 0;
      for (std::int64_t k = 0; k < HW; ++k) mu += in[k];
      mu /= static_cast<T>(HW);
      T var = 0;
      for (std::int64_t k = 0; k < HW; ++k) var += (in[k] - mu) * (in[k] - mu);
      var /= static_cast<T>(HW);
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[static_cast<std::size_t>(p)] = is;
      const T gv = gain.value()[static_cast<std::size_t>(c)], sv = shift.value()[static_cast<std::size_t>(c)];
      for (std::int64_t k = 0; k < HW; ++k) {
        const T xh = (in[k] - mu) * is;
        xhat[p * HW + k] = xh;
        out[p * HW + k] = gv * xh + sv;
      }
    }
  }
  return make_op<T>(std::move(out), {x, gain, shift},
                    [B, C, HW, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
    auto* gx = parent_grad(self, 0);
    auto* gg = parent_grad(self, 1);
    auto* gs = parent_grad(self, 2);
    const auto& gain = self.parents[1]->value;
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t c = 0; c < C; ++c) {
        const std::int64_t p = b * C + c;
        const T* dy = self.grad.data() + p * HW;
        const T* xh = xhat.data() + p * HW;
        T sum_dy = 0, sum_dy_xh = 0;
        for (std::int64_t k = 0; k < HW; ++k) {
          sum_dy += dy[k];
          sum_dy_xh += dy[k] * xh[k];
        }
        if (gg) (*gg)[static_cast<std::size_t>(c)] += sum_dy_xh;
        if (gs) (*gs)[static_cast<std::size_t>(c)] += sum_dy;
        if (gx) {
          const T gv = gain[static_cast<std::size_t>(c)];
          const T is = inv_std[static_cast<std::size_t>(p)];
          const T n = static_cast<T>(HW);
          for (std::int64_t k = 0; k < HW; ++k)
            (*gx)[p * HW + k] += gv * is * (dy[k] - sum_dy / n - xh[k] * sum_dy_xh / n);
        }
      }
    }
  });
}

/// Mixture of expert outputs: out[b] = sum_i w[b, i] * experts[i][b].
/// Terms with weight exactly zero are skipped in the forward sum so a one-hot
/// weight row reproduces the selected expert bitwise.
template <typename T>
Var<T> mix(const std::vector<Var<T>>& experts, const Var<T>& weights) {
  if (experts.empty()) throw ShapeError("mix: no experts");
  detail::require_rank(weights, 2, "mix");
  const auto n = static_cast<std::int64_t>(experts.size());
  const auto B = experts[0].dim(0);
  if (weights.dim(0) != B || weights.dim(1) != n)
    throw ShapeError("mix: weights " + shape_str(weights.shape()) + " for " + std::to_string(n) + " experts");
  for (const auto& e : experts) detail::require_same(e, experts[0], "mix");
  const auto per = static_cast<std::int64_t>(experts[0].value().size()) / B;
  Tensor<T> out(experts[0].shape());
  for (std::int64_t b = 0; b < B; ++b) {
    T* o = out.data() + b * per;
    for (std::int64_t i = 0; i < n; ++i) {
      const T w = weights.value()[static_cast<std::size_t>(b * n + i)];
      if (w == T(0)) continue;
      const T* e = experts[static_cast<std::size_t>(i)].value().data() + b * per;
      for (std::int64_t k = 0; k < per; ++k) o[k] += w * e[k];
    }
  }
  std::vector<Var<T>> parents = experts;
  parents.push_back(weights);
  return make_op<T>(std::move(out), std::move(parents), [B, n, per](Node<T>& self) {
    const auto& w = self.parents[static_cast<std::size_t>(n)]->value;
    auto* gw = parent_grad(self, static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      auto* ge = parent_grad(self, static_cast<std::size_t>(i));
      const auto& ev = self.parents[static_cast<std::size_t>(i)]->value;
      for (std::int64_t b = 0; b < B; ++b) {
        const T* dy = self.grad.data() + b * per;
        if (ge) {
          const T wv = w[static_cast<std::size_t>(b * n + i)];
          T* d = ge->data() + b * per;
          for (std::int64_t k = 0; k < per; ++k) d[k] += wv * dy[k];
        }
        if (gw) {
          const T* e = ev.data() + b * per;
          T acc = 0;
          for (std::int64_t k = 0; k < per; ++k) acc += dy[k] * e[k];
          (*gw)[static_cast<std::size_t>(b * n + i)] += acc;
        }
      }
    }
  });
}

}  // namespace atmos::ops
