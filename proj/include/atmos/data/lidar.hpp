#pragma once

// Single-scattering nadir lidar: ATB = BC * t2 with
// t2(k) = exp(-2 eta sum_{j<k} sigma(j) dz), integrated downward from the top.

#include <limits>

#include "atmos/data/scene.hpp"

namespace atmos::data {

struct LidarConfig {
  int wavelength = 532;
  double eta = 0.7;

  void validate() const {
    check_wavelength(wavelength);
    if (!(eta > 0.0 && eta <= 1.0)) throw ConfigError("eta must lie in (0, 1], got " + std::to_string(eta));
  }
};

struct SimulatedPair {
  int wavelength = 532;
  std::uint64_t seed = 0;
  std::string scene_id;
  Field3D atb, bc, t2;

  const GridSpec& grid() const { return bc.grid; }
  bool operator==(const SimulatedPair&) const = default;
};

/// t2 for one column ordered top to bottom. Level k sees only the layers above it.
inline std::vector<double> two_way_transmittance(const std::vector<double>& sigma_total, double eta, double dz) {
  if (!(dz > 0)) throw DomainError("dz must be positive");
  std::vector<double> t2(sigma_total.size());
  double tau = 0.0;
  for (std::size_t k = 0; k < sigma_total.size(); ++k) {
    // exp underflows to 0 only for optical depths beyond ~370; keep t2 > 0.
    t2[k] = std::max(std::exp(-2.0 * eta * tau), std::numeric_limits<double>::min());
    const double s = sigma_total[k];
    if (!(s >= 0.0)) throw DomainError("negative or non-finite extinction " + std::to_string(s) + " at level " +
                                       std::to_string(k));
    tau += s * dz;
  }
  return t2;
}

inline Field3D total_backscatter(const Volume3D& v) {
  Field3D bc(v.grid());
  for (std::size_t i = 0; i < bc.v.size(); ++i) bc.v[i] = v.beta_mol.v[i] + v.beta_cloud.v[i] + v.beta_aer.v[i];
  return bc;
}

inline void check_volume(const Volume3D& v) {
  const GridSpec& g = v.grid();
  g.validate();
  for (const Field3D* f : {&v.beta_cloud, &v.beta_aer, &v.sigma_mol, &v.sigma_cloud, &v.sigma_aer})
    if (!(f->grid == g) || f->v.size() != static_cast<std::size_t>(g.voxels()))
      throw ConfigError("volume " + v.scene_id + ": species fields disagree on the grid");
}

inline SimulatedPair simulate(const Volume3D& v, const LidarConfig& cfg) {
  cfg.validate();
  if (v.wavelength != cfg.wavelength)
    throw ConfigError("volume wavelength " + std::to_string(v.wavelength) + " nm does not match lidar " +
                      std::to_string(cfg.wavelength) + " nm");
  check_volume(v);
  const GridSpec& g = v.grid();
  SimulatedPair p;
  p.wavelength = v.wavelength;
  p.seed = v.seed;
  p.scene_id = v.scene_id;
  p.bc = total_backscatter(v);
  p.t2 = Field3D(g);
  p.atb = Field3D(g);
  std::vector<double> column(static_cast<std::size_t>(g.n_alt));
  for (std::int64_t lon = 0; lon < g.n_lon; ++lon)
    for (std::int64_t lat = 0; lat < g.n_lat; ++lat) {
      for (std::int64_t a = 0; a < g.n_alt; ++a) {
        const std::size_t i = p.bc.index(lon, a, lat);
        column[static_cast<std::size_t>(a)] = v.sigma_mol.v[i] + v.sigma_cloud.v[i] + v.sigma_aer.v[i];
      }
      const auto t2 = two_way_transmittance(column, cfg.eta, g.dz());
      for (std::int64_t a = 0; a < g.n_alt; ++a) {
        const std::size_t i = p.bc.index(lon, a, lat);
        p.t2.v[i] = t2[static_cast<std::size_t>(a)];
        p.atb.v[i] = p.bc.v[i] * p.t2.v[i];
      }
    }
  return p;
}

/// Unattenuated backscatter, identical to simulate(v, cfg).bc.
inline Field3D simulate_zero_tau(const Volume3D& v) {
  check_volume(v);
  return total_backscatter(v);
}

inline Volume3D with_zero_extinction(Volume3D v) {
  for (Field3D* f : {&v.sigma_mol, &v.sigma_cloud, &v.sigma_aer}) std::fill(f->v.begin(), f->v.end(), 0.0);
  return v;
}

}  // namespace atmos::data
