#pragma once

// Regridding, meridional slicing, log normalization, masks and the
// scene-level train/test split.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "atmos/data/lidar.hpp"

namespace atmos::data {

// ---------------------------------------------------------------- regrid

namespace detail {

struct AxisSample {
  std::int64_t i0 = 0, i1 = 0;
  double w = 0.0;
};

/// Fractional index -> bracketing indices, clamped to [0, n-1]. Positions
/// within 1e-9 of a node snap to it, so grid-aligned targets copy exactly.
inline AxisSample axis_sample(double f, std::int64_t n) {
  AxisSample s;
  const double r = std::round(f);
  if (std::abs(f - r) < 1e-9) f = r;
  if (f <= 0.0 || n == 1) return s;
  if (f >= static_cast<double>(n - 1)) {
    s.i0 = s.i1 = n - 1;
    return s;
  }
  s.i0 = static_cast<std::int64_t>(std::floor(f));
  s.w = f - static_cast<double>(s.i0);
  s.i1 = s.w == 0.0 ? s.i0 : s.i0 + 1;
  return s;
}

inline double lerp(double a, double b, double w) { return w == 0.0 ? a : a + w * (b - a); }

inline bool overlaps(double lo_a, double hi_a, double lo_b, double hi_b) {
  const double tol = 1e-6;
  return lo_a <= hi_b + tol && lo_b <= hi_a + tol;
}

}  // namespace detail

/// Meters east/north of `src` origin for a point of `g`.
inline double east_offset(const GridSpec& src, const GridSpec& g) {
  return (g.origin_lon - src.origin_lon) * kMetersPerDegree * std::cos(src.origin_lat * std::numbers::pi / 180.0);
}
inline double north_offset(const GridSpec& src, const GridSpec& g) {
  return (g.origin_lat - src.origin_lat) * kMetersPerDegree;
}

/// Trilinear interpolation of a field onto `target`.
inline Field3D regrid_field(const Field3D& f, const GridSpec& target) {
  const GridSpec& s = f.grid;
  s.validate();
  target.validate();
  const double ex = east_offset(s, target), ny = north_offset(s, target);
  const double dxs = s.d_horiz, dxt = target.d_horiz;
  const bool ok =
      detail::overlaps(ex, ex + static_cast<double>(target.n_lon - 1) * dxt, 0.0,
                       static_cast<double>(s.n_lon - 1) * dxs) &&
      detail::overlaps(ny, ny + static_cast<double>(target.n_lat - 1) * dxt, 0.0,
                       static_cast<double>(s.n_lat - 1) * dxs) &&
      detail::overlaps(target.altitude(target.n_alt - 1), target.altitude(0), s.altitude(s.n_alt - 1), s.altitude(0));
  if (!ok) throw ConfigError("regrid: target grid does not overlap the source grid");

  std::vector<detail::AxisSample> lon(static_cast<std::size_t>(target.n_lon)), lat(static_cast<std::size_t>(target.n_lat)),
      alt(static_cast<std::size_t>(target.n_alt));
  for (std::int64_t i = 0; i < target.n_lon; ++i)
    lon[static_cast<std::size_t>(i)] = detail::axis_sample((ex + static_cast<double>(i) * dxt) / dxs, s.n_lon);
  for (std::int64_t i = 0; i < target.n_lat; ++i)
    lat[static_cast<std::size_t>(i)] = detail::axis_sample((ny + static_cast<double>(i) * dxt) / dxs, s.n_lat);
  for (std::int64_t a = 0; a < target.n_alt; ++a)
    alt[static_cast<std::size_t>(a)] =
        detail::axis_sample(static_cast<double>(s.n_alt - 1) - target.altitude(a) / s.dz(), s.n_alt);

  Field3D out(target);
  for (std::int64_t i = 0; i < target.n_lon; ++i) {
    const auto& X = lon[static_cast<std::size_t>(i)];
    for (std::int64_t a = 0; a < target.n_alt; ++a) {
      const auto& Z = alt[static_cast<std::size_t>(a)];
      for (std::int64_t j = 0; j < target.n_lat; ++j) {
        const auto& Y = lat[static_cast<std::size_t>(j)];
        auto along_lat = [&](std::int64_t x, std::int64_t z) { return detail::lerp(f(x, z, Y.i0), f(x, z, Y.i1), Y.w); };
        auto along_alt = [&](std::int64_t x) { return detail::lerp(along_lat(x, Z.i0), along_lat(x, Z.i1), Z.w); };
        out(i, a, j) = std::max(0.0, detail::lerp(along_alt(X.i0), along_alt(X.i1), X.w));
      }
    }
  }
  return out;
}

inline SimulatedPair regrid(const SimulatedPair& p, const GridSpec& target) {
  SimulatedPair out;
  out.wavelength = p.wavelength;
  out.seed = p.seed;
  out.scene_id = p.scene_id;
  out.atb = regrid_field(p.atb, target);
  out.bc = regrid_field(p.bc, target);
  out.t2 = regrid_field(p.t2, target);
  return out;
}

// ---------------------------------------------------------------- slices

struct NormSpec {
  double log_floor = 1e-8;
  double log_ceil = 1e-3;

  void validate() const {
    if (!(log_floor > 0 && log_floor < log_ceil)) throw ConfigError("normalization needs 0 < log_floor < log_ceil");
  }
  bool operator==(const NormSpec&) const = default;
};

/// One (altitude x latitude) cross-section in physical units, binary32.
struct SlicePair {
  std::int64_t rows = 0, cols = 0;  // rows = altitude levels (top first), cols = latitude
  std::vector<float> atb, bc, t2;
  std::vector<std::uint8_t> mask;  // 1 = unknown / to restore
  int wavelength = 532;
  std::string scene_id;
  std::uint64_t seed = 0;
  std::int64_t slice_index = 0;  // longitude index

  std::size_t pixels() const { return static_cast<std::size_t>(rows * cols); }
  std::string label() const {
    return scene_id + "/" + std::to_string(wavelength) + "nm/lon" + std::to_string(slice_index);
  }
  bool operator==(const SlicePair&) const = default;
};

/// mask = 1 where t2 < threshold.
template <typename T>
std::vector<std::uint8_t> physics_mask(const std::vector<T>& t2, double threshold = 0.7) {
  if (!(threshold > 0 && threshold < 1)) throw ConfigError("mask threshold must lie in (0, 1)");
  std::vector<std::uint8_t> m(t2.size());
  for (std::size_t i = 0; i < t2.size(); ++i) m[i] = static_cast<double>(t2[i]) < threshold ? 1 : 0;
  return m;
}

/// One slice per longitude index; the slab is already (altitude, latitude) row-major.
inline std::vector<SlicePair> slice_meridional(const SimulatedPair& p, double mask_threshold = 0.7) {
  const GridSpec& g = p.grid();
  std::vector<SlicePair> out;
  const std::size_t n = static_cast<std::size_t>(g.n_alt * g.n_lat);
  for (std::int64_t lon = 0; lon < g.n_lon; ++lon) {
    SlicePair s;
    s.rows = g.n_alt;
    s.cols = g.n_lat;
    s.wavelength = p.wavelength;
    s.scene_id = p.scene_id;
    s.seed = p.seed;
    s.slice_index = lon;
    const std::size_t off = p.bc.index(lon, 0, 0);
    auto take = [&](const Field3D& f) {
      return std::vector<float>(f.v.begin() + static_cast<std::ptrdiff_t>(off),
                                f.v.begin() + static_cast<std::ptrdiff_t>(off + n));
    };
    s.atb = take(p.atb);
    s.bc = take(p.bc);
    s.t2 = take(p.t2);
    s.mask = physics_mask(s.t2, mask_threshold);
    out.push_back(std::move(s));
  }
  return out;
}

/// Inverse of slice_meridional (fields come back at binary32 precision).
inline SimulatedPair reassemble(const std::vector<SlicePair>& slices, GridSpec grid) {
  if (static_cast<std::int64_t>(slices.size()) != grid.n_lon) throw ShapeError("reassemble: slice count != n_lon");
  SimulatedPair p;
  p.atb = p.bc = p.t2 = Field3D(grid);
  for (const auto& s : slices) {
    if (s.rows != grid.n_alt || s.cols != grid.n_lat) throw ShapeError("reassemble: slice shape mismatch");
    const std::size_t off = p.bc.index(s.slice_index, 0, 0);
    for (std::size_t i = 0; i < s.pixels(); ++i) {
      p.atb.v[off + i] = s.atb[i];
      p.bc.v[off + i] = s.bc[i];
      p.t2.v[off + i] = s.t2[i];
    }
    p.wavelength = s.wavelength;
    p.scene_id = s.scene_id;
    p.seed = s.seed;
  }
  return p;
}

// ---------------------------------------------------------------- normalization

inline double normalize_value(double x, const NormSpec& n) {
  const double lf = std::log10(n.log_floor), lc = std::log10(n.log_ceil);
  const double y = (std::log10(std::max(x, n.log_floor)) - lf) / (lc - lf);
  return std::clamp(y, 0.0, 1.0);
}

inline double denormalize_value(double y, const NormSpec& n) {
  const double lf = std::log10(n.log_floor), lc = std::log10(n.log_ceil);
  return std::pow(10.0, lf + y * (lc - lf));
}

template <typename T>
std::vector<T> normalize(const std::vector<T>& x, const NormSpec& n) {
  n.validate();
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = static_cast<T>(normalize_value(static_cast<double>(x[i]), n));
  return y;
}

template <typename T>
std::vector<T> denormalize(const std::vector<T>& y, const NormSpec& n) {
  n.validate();
  std::vector<T> x(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) x[i] = static_cast<T>(denormalize_value(static_cast<double>(y[i]), n));
  return x;
}

// ---------------------------------------------------------------- random masks

constexpr double kHeavyMask = 0.5;
constexpr double kLightMask = 0.15;

/// Union of random axis-aligned rectangles until at least `coverage` of the
/// pixels are masked. Rectangle sides are at most 30% of each dimension.
inline std::vector<std::uint8_t> random_mask(std::uint64_t seed, std::int64_t rows, std::int64_t cols,
                                             double coverage) {
  if (!(coverage >= 0.0 && coverage <= 1.0)) throw ConfigError("mask coverage must lie in [0, 1]");
  const std::size_t n = static_cast<std::size_t>(rows * cols);
  std::vector<std::uint8_t> m(n, 0);
  if (coverage >= 1.0) {
    std::fill(m.begin(), m.end(), 1);
    return m;
  }
  const auto target = static_cast<std::size_t>(std::ceil(coverage * static_cast<double>(n)));
  std::size_t count = 0;
  CounterRng rng(derive_key({seed, 0x4a5cULL}));
  const std::int64_t max_h = std::max<std::int64_t>(1, rows * 3 / 10), max_w = std::max<std::int64_t>(1, cols * 3 / 10);
  const std::int64_t min_h = std::max<std::int64_t>(1, rows / 20), min_w = std::max<std::int64_t>(1, cols / 20);
  while (count < target) {
    const std::int64_t h = min_h + static_cast<std::int64_t>(rng.next_u64() % static_cast<std::uint64_t>(max_h - min_h + 1));
    const std::int64_t w = min_w + static_cast<std::int64_t>(rng.next_u64() % static_cast<std::uint64_t>(max_w - min_w + 1));
    const std::int64_t r0 = static_cast<std::int64_t>(rng.next_u64() % static_cast<std::uint64_t>(rows - h + 1));
    const std::int64_t c0 = static_cast<std::int64_t>(rng.next_u64() % static_cast<std::uint64_t>(cols - w + 1));
    for (std::int64_t r = r0; r < r0 + h; ++r)
      for (std::int64_t c = c0; c < c0 + w; ++c) {
        auto& px = m[static_cast<std::size_t>(r * cols + c)];
        if (!px) {
          px = 1;
          ++count;
        }
      }
  }
  return m;
}

inline std::vector<std::uint8_t> mask_union(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  if (a.size() != b.size()) throw ShapeError("mask_union: size mismatch");
  std::vector<std::uint8_t> m(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) m[i] = (a[i] | b[i]) ? 1 : 0;
  return m;
}

// ---------------------------------------------------------------- split

enum class Partition { kTrain, kTest };

inline const char* partition_name(Partition p) { return p == Partition::kTrain ? "train" : "test"; }

/// Scene-level split: every slice of a scene shares one partition. Returns
/// the partition for each input scene id, in order.
inline std::vector<Partition> split_scenes(const std::vector<std::string>& slice_scene_ids, double ratio,
                                           std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie in (0, 1)");
  std::vector<std::string> scenes;
  for (const auto& id : slice_scene_ids)
    if (std::find(scenes.begin(), scenes.end(), id) == scenes.end()) scenes.push_back(id);
  const auto n = static_cast<std::int64_t>(scenes.size());
  if (n < 2) throw ConfigError("split needs at least 2 scenes, got " + std::to_string(n));
  std::sort(scenes.begin(), scenes.end());
  CounterRng rng(derive_key({seed, 0x5b117ULL}));
  for (std::int64_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
    std::swap(scenes[static_cast<std::size_t>(i)], scenes[static_cast<std::size_t>(j)]);
  }
  const std::int64_t n_train = std::clamp<std::int64_t>(std::llround(ratio * static_cast<double>(n)), 1, n - 1);
  std::map<std::string, Partition> part;
  for (std::int64_t i = 0; i < n; ++i)
    part[scenes[static_cast<std::size_t>(i)]] = i < n_train ? Partition::kTrain : Partition::kTest;
  std::vector<Partition> out;
  for (const auto& id : slice_scene_ids) out.push_back(part.at(id));
  return out;
}

/// Full-scale image count: scenes x longitude slices x wavelengths x signal types.
constexpr std::int64_t paired_image_count(std::int64_t scenes, std::int64_t n_lon, std::int64_t wavelengths = 2,
                                          std::int64_t signal_types = 2) {
  return scenes * n_lon * wavelengths * signal_types;
}

}  // namespace atmos::data
