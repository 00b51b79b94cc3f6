#pragma once

// Image-quality metrics in double precision. All functions take row-major
// images of identical shape; masked variants restrict to mask == 1 pixels.

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "atmos/common.hpp"

namespace atmos::harness {

struct Image {
  std::int64_t rows = 0, cols = 0;
  std::vector<double> v;

  Image() = default;
  Image(std::int64_t r, std::int64_t c, double fill = 0.0) : rows(r), cols(c), v(static_cast<std::size_t>(r * c), fill) {}
  /// `data` is any indexable container (vector, span) of r*c values.
  template <typename Container>
  static Image from(std::int64_t r, std::int64_t c, const Container& data) {
    if (data.size() != static_cast<std::size_t>(r * c)) throw ShapeError("image data size does not match shape");
    Image im(r, c);
    for (std::size_t i = 0; i < data.size(); ++i) im.v[i] = static_cast<double>(data[i]);
    return im;
  }
  double operator()(std::int64_t r, std::int64_t c) const { return v[static_cast<std::size_t>(r * cols + c)]; }
};

struct MetricValues {
  double psnr = 0, ssim = 0, mae = 0;
};

struct MetricRow {
  MetricValues full;
  std::optional<MetricValues> masked;  // absent when the mask is empty
};

constexpr double kPsnrCap = 99.0;
constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimK1 = 0.01, kSsimK2 = 0.03;

namespace detail {

inline void check_pair(const Image& a, const Image& b, const std::vector<std::uint8_t>* mask) {
  if (a.rows != b.rows || a.cols != b.cols)
    throw ShapeError("metric images differ in shape: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                     " vs " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
  if (mask && mask->size() != a.v.size()) throw ShapeError("metric mask size does not match image");
}

inline bool selected(const std::vector<std::uint8_t>* mask, std::size_t i) { return !mask || (*mask)[i] != 0; }

inline double psnr_from_mse(double mse, double data_range) {
  if (mse < 1e-12) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(data_range * data_range / mse));
}

inline std::vector<double> gaussian_kernel() {
  std::vector<double> k(kSsimWindow);
  double s = 0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
    s += k[static_cast<std::size_t>(i)];
  }
  for (auto& v : k) v /= s;
  return k;
}

// Valid-mode separable Gaussian filter: (rows-10) x (cols-10).
inline Image filter_valid(const Image& x) {
  const auto k = gaussian_kernel();
  const std::int64_t w = kSsimWindow, orow = x.rows - w + 1, ocol = x.cols - w + 1;
  Image tmp(x.rows, ocol), out(orow, ocol);
  for (std::int64_t r = 0; r < x.rows; ++r)
    for (std::int64_t c = 0; c < ocol; ++c) {
      double s = 0;
      for (std::int64_t j = 0; j < w; ++j) s += k[static_cast<std::size_t>(j)] * x(r, c + j);
      tmp.v[static_cast<std::size_t>(r * ocol + c)] = s;
    }
  for (std::int64_t r = 0; r < orow; ++r)
    for (std::int64_t c = 0; c < ocol; ++c) {
      double s = 0;
      for (std::int64_t i = 0; i < w; ++i) s += k[static_cast<std::size_t>(i)] * tmp(r + i, c);
      out.v[static_cast<std::size_t>(r * ocol + c)] = s;
    }
  return out;
}

}  // namespace detail

inline double mae(const Image& a, const Image& b, const std::vector<std::uint8_t>* mask = nullptr) {
  detail::check_pair(a, b, mask);
  double s = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.v.size(); ++i)
    if (detail::selected(mask, i)) {
      s += std::abs(a.v[i] - b.v[i]);
      ++n;
    }
  if (n == 0) throw ConfigError("mae over an empty region");
  return s / static_cast<double>(n);
}

inline double psnr(const Image& a, const Image& b, double data_range, const std::vector<std::uint8_t>* mask = nullptr) {
  detail::check_pair(a, b, mask);
  if (!(data_range > 0)) throw ConfigError("data_range must be positive");
  double s = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.v.size(); ++i)
    if (detail::selected(mask, i)) {
      const double d = a.v[i] - b.v[i];
      s += d * d;
      ++n;
    }
  if (n == 0) throw ConfigError("psnr over an empty region");
  return detail::psnr_from_mse(s / static_cast<double>(n), data_range);
}

/// Per-window SSIM over all fully contained 11x11 windows; map entry (r, c)
/// belongs to the window centred on pixel (r + 5, c + 5).
inline Image ssim_map(const Image& a, const Image& b, double data_range) {
  detail::check_pair(a, b, nullptr);
  if (a.rows < kSsimWindow || a.cols < kSsimWindow)
    throw ShapeError("ssim needs images of at least 11x11, got " + std::to_string(a.rows) + "x" +
                     std::to_string(a.cols));
  Image aa(a.rows, a.cols), bb(a.rows, a.cols), ab(a.rows, a.cols);
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    aa.v[i] = a.v[i] * a.v[i];
    bb.v[i] = b.v[i] * b.v[i];
    ab.v[i] = a.v[i] * b.v[i];
  }
  const Image mu_a = detail::filter_valid(a), mu_b = detail::filter_valid(b);
  const Image s_aa = detail::filter_valid(aa), s_bb = detail::filter_valid(bb), s_ab = detail::filter_valid(ab);
  const double c1 = std::pow(kSsimK1 * data_range, 2), c2 = std::pow(kSsimK2 * data_range, 2);
  Image out(mu_a.rows, mu_a.cols);
  for (std::size_t i = 0; i < out.v.size(); ++i) {
    const double ma = mu_a.v[i], mb = mu_b.v[i];
    const double va = s_aa.v[i] - ma * ma, vb = s_bb.v[i] - mb * mb, cov = s_ab.v[i] - ma * mb;
    out.v[i] = ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return out;
}

/// Mean SSIM; with a mask, only windows whose centre pixel is masked count.
/// Returns nullopt when the mask selects no window.
inline std::optional<double> ssim(const Image& a, const Image& b, double data_range,
                                  const std::vector<std::uint8_t>* mask = nullptr) {
  detail::check_pair(a, b, mask);
  const Image m = ssim_map(a, b, data_range);
  const std::int64_t half = kSsimWindow / 2;
  double s = 0;
  std::size_t n = 0;
  for (std::int64_t r = 0; r < m.rows; ++r)
    for (std::int64_t c = 0; c < m.cols; ++c) {
      if (mask && !(*mask)[static_cast<std::size_t>((r + half) * a.cols + c + half)]) continue;
      s += m(r, c);
      ++n;
    }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

inline MetricRow compute_metrics(const Image& pred, const Image& target, const std::vector<std::uint8_t>& mask,
                                 double data_range = 1.0) {
  detail::check_pair(pred, target, &mask);
  MetricRow row;
  row.full = {psnr(pred, target, data_range), *ssim(pred, target, data_range), mae(pred, target)};
  bool any = false;
  for (auto m : mask) any = any || m != 0;
  if (any) {
    MetricValues mv;
    mv.psnr = psnr(pred, target, data_range, &mask);
    mv.mae = mae(pred, target, &mask);
    // Masked pixels may all sit within 5 px of the border, leaving no window.
    const auto s = ssim(pred, target, data_range, &mask);
    mv.ssim = s ? *s : std::nan("");
    row.masked = mv;
  }
  return row;
}

/// Arithmetic mean of the rows; masked means over the rows that have them
/// (masked SSIM over rows where it is defined).
inline MetricRow aggregate(const std::vector<MetricRow>& rows) {
  if (rows.empty()) throw ConfigError("cannot aggregate zero metric rows");
  MetricRow out;
  MetricValues msum;
  std::size_t nm = 0, ns = 0;
  for (const auto& r : rows) {
    out.full.psnr += r.full.psnr;
    out.full.ssim += r.full.ssim;
    out.full.mae += r.full.mae;
    if (r.masked) {
      msum.psnr += r.masked->psnr;
      if (std::isfinite(r.masked->ssim)) {
        msum.ssim += r.masked->ssim;
        ++ns;
      }
      msum.mae += r.masked->mae;
      ++nm;
    }
  }
  const double n = static_cast<double>(rows.size());
  out.full = {out.full.psnr / n, out.full.ssim / n, out.full.mae / n};
  if (nm) {
    const double k = static_cast<double>(nm);
    out.masked = MetricValues{msum.psnr / k, ns ? msum.ssim / static_cast<double>(ns) : std::nan(""), msum.mae / k};
  }
  return out;
}

}  // namespace atmos::harness
