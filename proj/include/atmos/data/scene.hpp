#pragma once

// Procedural atmospheric scenes: an exponential molecular background plus
// Gaussian-ellipsoid clouds and aerosol layers on a (lon, lat, alt) grid.

#include <array>
#include <cmath>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "atmos/common.hpp"
#include "atmos/rng.hpp"

namespace atmos::data {

constexpr double kMetersPerDegree = 111320.0;

struct GridSpec {
  std::int64_t n_lon = 4;
  std::int64_t n_lat = 32;
  std::int64_t n_alt = 32;
  double d_horiz = 10000.0;  // m
  double alt_top = 16000.0;  // m
  double origin_lon = 104.5;
  double origin_lat = 4.9;

  double dz() const { return alt_top / static_cast<double>(n_alt); }
  /// Height of altitude index a; index 0 is the top level.
  double altitude(std::int64_t a) const { return static_cast<double>(n_alt - 1 - a) * dz(); }
  std::int64_t voxels() const { return n_lon * n_lat * n_alt; }

  void validate() const {
    if (n_lon < 1 || n_lat < 1 || n_alt < 2)
      throw ConfigError("grid needs n_lon, n_lat >= 1 and n_alt >= 2, got " + std::to_string(n_lon) + "x" +
                        std::to_string(n_lat) + "x" + std::to_string(n_alt));
    if (!(alt_top > 0) || !(d_horiz > 0)) throw ConfigError("grid spacing and alt_top must be positive");
  }
  bool operator==(const GridSpec&) const = default;
};

/// Scalar field over a grid. Element (lon, alt, lat) lives at
/// ((lon * n_alt + alt) * n_lat + lat), so every longitude slab is contiguous
/// and already in (altitude-major, latitude-minor) slice order.
struct Field3D {
  GridSpec grid;
  std::vector<double> v;

  Field3D() = default;
  explicit Field3D(const GridSpec& g, double fill = 0.0)
      : grid(g), v(static_cast<std::size_t>(g.voxels()), fill) {}

  std::size_t index(std::int64_t lon, std::int64_t alt, std::int64_t lat) const {
    return static_cast<std::size_t>((lon * grid.n_alt + alt) * grid.n_lat + lat);
  }
  double& operator()(std::int64_t lon, std::int64_t alt, std::int64_t lat) { return v[index(lon, alt, lat)]; }
  double operator()(std::int64_t lon, std::int64_t alt, std::int64_t lat) const { return v[index(lon, alt, lat)]; }
  bool operator==(const Field3D&) const = default;
};

struct Range {
  double lo = 0, hi = 0;
  double draw(CounterRng& rng) const { return lo == hi ? lo : rng.uniform(lo, hi); }
  bool operator==(const Range&) const = default;
};

struct SceneParams {
  std::int64_t n_clouds = 4;
  std::int64_t n_aerosol_layers = 2;
  Range cloud_beta{5e-6, 5e-5};
  Range aerosol_beta{1e-7, 2e-6};
  Range cloud_altitude{1500.0, 12000.0};
  Range cloud_horizontal{5e3, 6e4};  // Gaussian sigma, m
  Range cloud_vertical{300.0, 1500.0};
  Range aerosol_altitude{0.0, 3000.0};
  Range aerosol_horizontal{5e4, 3e5};
  Range aerosol_vertical{500.0, 2000.0};
  double lidar_ratio_cloud = 18.0;
  double lidar_ratio_aer = 50.0;

  void validate() const {
    if (n_clouds < 0 || n_aerosol_layers < 0) throw ConfigError("structure counts must be non-negative");
    const std::array<std::pair<const char*, Range>, 8> ranges = {{{"cloud_beta", cloud_beta},
                                                                  {"aerosol_beta", aerosol_beta},
                                                                  {"cloud_altitude", cloud_altitude},
                                                                  {"cloud_horizontal", cloud_horizontal},
                                                                  {"cloud_vertical", cloud_vertical},
                                                                  {"aerosol_altitude", aerosol_altitude},
                                                                  {"aerosol_horizontal", aerosol_horizontal},
                                                                  {"aerosol_vertical", aerosol_vertical}}};
    for (const auto& [name, r] : ranges)
      if (!(r.lo >= 0) || !(r.hi >= r.lo)) throw ConfigError(std::string("bad range for ") + name);
    for (const auto& [name, r] : ranges) {
      std::string n = name;
      if ((n.ends_with("horizontal") || n.ends_with("vertical")) && !(r.lo > 0))
        throw ConfigError("extent range " + n + " must be strictly positive");
    }
    if (!(lidar_ratio_cloud >= 0) || !(lidar_ratio_aer >= 0)) throw ConfigError("lidar ratios must be >= 0");
  }
  bool operator==(const SceneParams&) const = default;
};

struct Volume3D {
  int wavelength = 532;
  std::uint64_t seed = 0;
  std::string scene_id;
  Field3D beta_mol, beta_cloud, beta_aer;
  Field3D sigma_mol, sigma_cloud, sigma_aer;

  const GridSpec& grid() const { return beta_mol.grid; }
  bool operator==(const Volume3D&) const = default;
};

constexpr double kBeta0At532 = 1.39e-6;  // m^-1 sr^-1
constexpr double kScaleHeight = 8000.0;  // m

inline void check_wavelength(int wavelength) {
  if (wavelength != 355 && wavelength != 532)
    throw ConfigError("unsupported wavelength " + std::to_string(wavelength) + " nm (expected 355 or 532)");
}

inline double molecular_beta0(int wavelength) {
  check_wavelength(wavelength);
  return kBeta0At532 * std::pow(532.0 / wavelength, 4);
}

struct MolecularProfile {
  std::vector<double> beta;   // indexed by altitude index (0 = top)
  std::vector<double> sigma;
};

inline MolecularProfile molecular_profile(int wavelength, const GridSpec& grid) {
  const double b0 = molecular_beta0(wavelength);
  grid.validate();
  MolecularProfile p;
  for (std::int64_t a = 0; a < grid.n_alt; ++a) {
    const double b = b0 * std::exp(-grid.altitude(a) / kScaleHeight);
    p.beta.push_back(b);
    p.sigma.push_back(8.0 * std::numbers::pi / 3.0 * b);
  }
  return p;
}

inline std::string scene_name(std::uint64_t seed) { return "scene-" + std::to_string(seed); }

namespace detail {

struct Ellipsoid {
  double x, y, z;     // centre, m (x along longitude, y along latitude)
  double sx, sy, sz;  // Gaussian sigmas, m
  double amplitude;
};

inline Ellipsoid draw_ellipsoid(CounterRng& rng, const GridSpec& g, const Range& beta, const Range& alt,
                                const Range& horiz, const Range& vert) {
  Ellipsoid e{};
  e.x = rng.uniform() * static_cast<double>(g.n_lon) * g.d_horiz;
  e.y = rng.uniform() * static_cast<double>(g.n_lat) * g.d_horiz;
  e.z = std::min(alt.draw(rng), g.alt_top);
  e.sx = horiz.draw(rng);
  e.sy = horiz.draw(rng);
  e.sz = vert.draw(rng);
  e.amplitude = beta.draw(rng);
  return e;
}

inline void add_ellipsoid(Field3D& f, const Ellipsoid& e) {
  const GridSpec& g = f.grid;
  for (std::int64_t lon = 0; lon < g.n_lon; ++lon) {
    const double dx = (static_cast<double>(lon) * g.d_horiz - e.x) / e.sx;
    for (std::int64_t a = 0; a < g.n_alt; ++a) {
      const double dzv = (g.altitude(a) - e.z) / e.sz;
      for (std::int64_t lat = 0; lat < g.n_lat; ++lat) {
        const double dy = (static_cast<double>(lat) * g.d_horiz - e.y) / e.sy;
        f(lon, a, lat) += e.amplitude * std::exp(-0.5 * (dx * dx + dy * dy + dzv * dzv));
      }
    }
  }
}

}  // namespace detail

/// Builds one scene. The structures depend only on (seed, grid, params), so
/// both wavelengths of a scene share the same clouds and aerosol.
inline Volume3D generate_scene(std::uint64_t seed, const GridSpec& grid, const SceneParams& params,
                               int wavelength) {
  grid.validate();
  params.validate();
  const auto mol = molecular_profile(wavelength, grid);

  Volume3D v;
  v.wavelength = wavelength;
  v.seed = seed;
  v.scene_id = scene_name(seed);
  v.beta_mol = Field3D(grid);
  v.sigma_mol = Field3D(grid);
  for (std::int64_t lon = 0; lon < grid.n_lon; ++lon)
    for (std::int64_t a = 0; a < grid.n_alt; ++a)
      for (std::int64_t lat = 0; lat < grid.n_lat; ++lat) {
        v.beta_mol(lon, a, lat) = mol.beta[static_cast<std::size_t>(a)];
        v.sigma_mol(lon, a, lat) = mol.sigma[static_cast<std::size_t>(a)];
      }

  v.beta_cloud = Field3D(grid);
  v.beta_aer = Field3D(grid);
  for (std::int64_t i = 0; i < params.n_clouds; ++i) {
    CounterRng rng(derive_key({seed, 0xc10dULL, static_cast<std::uint64_t>(i)}));
    detail::add_ellipsoid(v.beta_cloud, detail::draw_ellipsoid(rng, grid, params.cloud_beta, params.cloud_altitude,
                                                               params.cloud_horizontal, params.cloud_vertical));
  }
  for (std::int64_t i = 0; i < params.n_aerosol_layers; ++i) {
    CounterRng rng(derive_key({seed, 0xae50ULL, static_cast<std::uint64_t>(i)}));
    detail::add_ellipsoid(v.beta_aer,
                          detail::draw_ellipsoid(rng, grid, params.aerosol_beta, params.aerosol_altitude,
                                                 params.aerosol_horizontal, params.aerosol_vertical));
  }

  v.sigma_cloud = Field3D(grid);
  v.sigma_aer = Field3D(grid);
  for (std::size_t i = 0; i < v.beta_cloud.v.size(); ++i) {
    v.sigma_cloud.v[i] = params.lidar_ratio_cloud * v.beta_cloud.v[i];
    v.sigma_aer.v[i] = params.lidar_ratio_aer * v.beta_aer.v[i];
  }
  return v;
}

struct SceneDescriptor {
  std::int64_t index = 0;
  std::uint64_t seed = 0;
  int wavelength = 532;
  bool operator==(const SceneDescriptor&) const = default;
};

/// (seed, wavelength) descriptors ordered by scene index then wavelength.
inline std::vector<SceneDescriptor> scene_catalog(std::int64_t n_scenes, std::uint64_t base_seed) {
  if (n_scenes < 1) throw ConfigError("n_scenes must be >= 1");
  std::vector<SceneDescriptor> out;
  std::set<std::uint64_t> used;
  std::uint64_t salt = 0;
  for (std::int64_t i = 0; i < n_scenes; ++i) {
    std::uint64_t s = derive_key({base_seed, static_cast<std::uint64_t>(i), salt});
    while (!used.insert(s).second) s = derive_key({base_seed, static_cast<std::uint64_t>(i), ++salt});
    for (int wl : {355, 532}) out.push_back({i, s, wl});
  }
  return out;
}

}  // namespace atmos::data
