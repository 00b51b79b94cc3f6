#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "atmos/data/lidar.hpp"

using namespace atmos;
using namespace atmos::data;

namespace {

GridSpec small_grid() {
  GridSpec g;
  g.n_lon = 3;
  g.n_lat = 10;
  g.n_alt = 24;
  g.d_horiz = 10000;
  g.alt_top = 12000;
  return g;
}

SceneParams empty_params() {
  SceneParams p;
  p.n_clouds = 0;
  p.n_aerosol_layers = 0;
  return p;
}

}  // namespace

// ---------------------------------------------------------------- molecular

TEST(Molecular, RayleighScaling) {
  const double r = (532.0 / 355.0) * (532.0 / 355.0) * (532.0 / 355.0) * (532.0 / 355.0);
  EXPECT_NEAR(molecular_beta0(355) / molecular_beta0(532), r, 1e-12);
  EXPECT_NEAR(r, 5.04351, 1e-5);
  EXPECT_NEAR(molecular_beta0(355), 7.01048e-6, 1e-11);
  EXPECT_THROW(molecular_beta0(1064), ConfigError);
}

TEST(Molecular, ScaleHeightIdentity) {
  GridSpec g;
  g.n_alt = 20;
  g.alt_top = 20000;  // level a sits at (19 - a) km
  const auto p = molecular_profile(532, g);
  EXPECT_DOUBLE_EQ(g.altitude(11), 8000.0);
  EXPECT_NEAR(p.beta[11] / (1.39e-6 / std::exp(1.0)), 1.0, 1e-14);
}

TEST(Molecular, FullProfileMatchesClosedForm) {
  GridSpec g;
  g.n_alt = 200;
  g.alt_top = 20000;
  const auto p = molecular_profile(532, g);
  ASSERT_EQ(p.beta.size(), 200u);
  for (int a = 0; a < 200; ++a) {
    const double z = (199 - a) * 100.0;
    const double expect = 1.39e-6 * std::exp(-z / 8000.0);
    EXPECT_NEAR(p.beta[a] / expect, 1.0, 1e-12);
    EXPECT_NEAR(p.sigma[a] / (8.0 * M_PI / 3.0 * expect), 1.0, 1e-12);
    if (a > 0) {
      EXPECT_LT(p.beta[a - 1], p.beta[a]);  // decreasing with height
    }
  }
}

// ---------------------------------------------------------------- scenes

TEST(Scene, EmptySceneIsPureMolecular) {
  const auto v = generate_scene(7, small_grid(), empty_params(), 532);
  const auto mol = molecular_profile(532, small_grid());
  for (double x : v.beta_cloud.v) EXPECT_EQ(x, 0.0);
  for (double x : v.sigma_cloud.v) EXPECT_EQ(x, 0.0);
  for (double x : v.beta_aer.v) EXPECT_EQ(x, 0.0);
  const auto& g = v.grid();
  for (std::int64_t lon = 0; lon < g.n_lon; ++lon)
    for (std::int64_t a = 0; a < g.n_alt; ++a)
      for (std::int64_t lat = 0; lat < g.n_lat; ++lat) EXPECT_EQ(v.beta_mol(lon, a, lat), mol.beta[a]);
}

TEST(Scene, Deterministic) {
  EXPECT_TRUE(generate_scene(11, small_grid(), SceneParams{}, 355) ==
              generate_scene(11, small_grid(), SceneParams{}, 355));
  EXPECT_FALSE(generate_scene(11, small_grid(), SceneParams{}, 355).beta_cloud ==
               generate_scene(12, small_grid(), SceneParams{}, 355).beta_cloud);
}

TEST(Scene, NonNegativeAndLidarRatioExact) {
  SceneParams p;
  p.n_clouds = 6;
  p.n_aerosol_layers = 3;
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    for (int wl : {355, 532}) {
      const auto v = generate_scene(seed, small_grid(), p, wl);
      for (const Field3D* f : {&v.beta_mol, &v.beta_cloud, &v.beta_aer, &v.sigma_mol, &v.sigma_cloud, &v.sigma_aer})
        for (double x : f->v) {
          ASSERT_TRUE(std::isfinite(x));
          ASSERT_GE(x, 0.0);
        }
      for (std::size_t i = 0; i < v.beta_cloud.v.size(); ++i) {
        ASSERT_EQ(v.sigma_cloud.v[i], 18.0 * v.beta_cloud.v[i]);
        ASSERT_EQ(v.sigma_aer.v[i], 50.0 * v.beta_aer.v[i]);
      }
      double cloud_max = 0;
      for (double x : v.beta_cloud.v) cloud_max = std::max(cloud_max, x);
      EXPECT_GT(cloud_max, 0.0);
    }
  }
}

TEST(Scene, RayleighScalingVoxelwise) {
  const auto a = generate_scene(5, small_grid(), SceneParams{}, 355);
  const auto b = generate_scene(5, small_grid(), SceneParams{}, 532);
  const double r = std::pow(532.0 / 355.0, 4);
  for (std::size_t i = 0; i < a.beta_mol.v.size(); ++i) EXPECT_NEAR(a.beta_mol.v[i] / (b.beta_mol.v[i] * r), 1.0, 1e-12);
  EXPECT_TRUE(a.beta_cloud == b.beta_cloud);  // structures are shared across wavelengths
}

TEST(Scene, InvalidInputs) {
  GridSpec g = small_grid();
  g.n_lat = 0;
  EXPECT_THROW(generate_scene(1, g, SceneParams{}, 532), ConfigError);
  SceneParams p;
  p.cloud_beta = {2e-5, 1e-5};
  EXPECT_THROW(generate_scene(1, small_grid(), p, 532), ConfigError);
}

TEST(Catalog, CountsAndUniqueness) {
  EXPECT_EQ(scene_catalog(384, 1).size(), 768u);
  const auto one = scene_catalog(1, 1);
  ASSERT_EQ(one.size(), 2u);
  EXPECT_EQ(one[0].wavelength, 355);
  EXPECT_EQ(one[1].wavelength, 532);
  const auto five = scene_catalog(5, 42);
  ASSERT_EQ(five.size(), 10u);
  std::set<std::uint64_t> seeds;
  std::set<std::pair<std::uint64_t, int>> pairs;
  for (std::size_t i = 0; i < five.size(); ++i) {
    seeds.insert(five[i].seed);
    pairs.insert({five[i].seed, five[i].wavelength});
    EXPECT_EQ(five[i].index, static_cast<std::int64_t>(i / 2));
  }
  EXPECT_EQ(seeds.size(), 5u);
  EXPECT_EQ(pairs.size(), 10u);
  EXPECT_EQ(five, scene_catalog(5, 42));
  EXPECT_THROW(scene_catalog(0, 1), ConfigError);
}

// ---------------------------------------------------------------- transmittance

TEST(Transmittance, ZeroExtinction) {
  for (double t : two_way_transmittance(std::vector<double>(50, 0.0), 0.7, 100.0)) EXPECT_EQ(t, 1.0);
}

TEST(Transmittance, AnalyticSlab) {
  // Ten layers of optical depth 0.1 above level 10.
  const auto t2 = two_way_transmittance(std::vector<double>(20, 0.1 / 250.0), 1.0, 250.0);
  EXPECT_EQ(t2[0], 1.0);
  EXPECT_NEAR(t2[10], std::exp(-2.0), 1e-9);
  EXPECT_NEAR(t2[10], 0.135335, 1e-6);
}

TEST(Transmittance, MatchesRefinedQuadrature) {
  // Smooth profile sampled at level centres; the oracle integrates the same
  // continuous function with a 10x finer midpoint rule.
  const int n = 200;
  const double dz = 100.0, eta = 0.7;
  CounterRng rng(derive_key({99}));
  struct Bump { double z, s, a; };
  std::vector<Bump> bumps;
  for (int i = 0; i < 4; ++i) bumps.push_back({rng.uniform(1000, 18000), rng.uniform(300, 1500), rng.uniform(1e-5, 4e-4)});
  auto sigma = [&](double z) {
    double s = 1.16e-5 * std::exp(-z / 8000.0);
    for (const auto& b : bumps) s += b.a * std::exp(-0.5 * std::pow((z - b.z) / b.s, 2));
    return s;
  };
  auto z_of = [&](int k) { return (n - 1 - k) * dz; };
  std::vector<double> prof(n);
  for (int k = 0; k < n; ++k) prof[k] = sigma(z_of(k));
  const auto t2 = two_way_transmittance(prof, eta, dz);
  double worst = 0;
  for (int k = 0; k < n; ++k) {
    const double lo = z_of(k) + dz / 2, hi = z_of(0) + dz / 2;
    const int m = 10 * k;
    double tau = 0;
    for (int i = 0; i < m; ++i) tau += sigma(lo + (i + 0.5) * (hi - lo) / m) * (hi - lo) / m;
    worst = std::max(worst, std::abs(t2[k] / std::exp(-2 * eta * tau) - 1.0));
  }
  EXPECT_LT(worst, 0.01);
}

TEST(Transmittance, RejectsNegativeExtinction) {
  EXPECT_THROW(two_way_transmittance({0.0, -1e-6, 0.0}, 0.7, 100.0), DomainError);
}

// ---------------------------------------------------------------- simulate

TEST(Simulate, InvariantsOnRandomScenes) {
  SceneParams p;
  p.n_clouds = 6;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto v = generate_scene(seed, small_grid(), p, 532);
    const auto s = simulate(v, {532, 0.7});
    const auto& g = s.grid();
    for (std::size_t i = 0; i < s.bc.v.size(); ++i) {
      ASSERT_EQ(s.atb.v[i], s.bc.v[i] * s.t2.v[i]);
      ASSERT_LE(s.atb.v[i], s.bc.v[i]);
      ASSERT_GT(s.t2.v[i], 0.0);
      ASSERT_LE(s.t2.v[i], 1.0);
    }
    for (std::int64_t lon = 0; lon < g.n_lon; ++lon)
      for (std::int64_t lat = 0; lat < g.n_lat; ++lat) {
        EXPECT_EQ(s.t2(lon, 0, lat), 1.0);
        EXPECT_EQ(s.atb(lon, 0, lat), s.bc(lon, 0, lat));
        for (std::int64_t a = 1; a < g.n_alt; ++a) ASSERT_LE(s.t2(lon, a, lat), s.t2(lon, a - 1, lat));
      }
  }
}

TEST(Simulate, OpaqueCloudAttenuation) {
  auto v = generate_scene(1, small_grid(), empty_params(), 532);
  std::fill(v.sigma_mol.v.begin(), v.sigma_mol.v.end(), 0.0);
  const auto& g = v.grid();
  const double dz = g.dz();
  for (std::int64_t lon = 0; lon < g.n_lon; ++lon)
    for (std::int64_t lat = 0; lat < g.n_lat; ++lat)
      for (std::int64_t a = 5; a < 8; ++a) {
        v.beta_cloud(lon, a, lat) = 1.0 / dz / 18.0;
        v.sigma_cloud(lon, a, lat) = 1.0 / dz;  // three layers of optical depth 1
      }
  const auto s = simulate(v, {532, 1.0});
  for (std::int64_t a = 8; a < g.n_alt; ++a) EXPECT_NEAR(s.atb(1, a, 4) / s.bc(1, a, 4), std::exp(-6.0), 1e-15);
  EXPECT_NEAR(std::exp(-6.0), 2.479e-3, 1e-6);
}

TEST(Simulate, ZeroTauEquivalence) {
  for (std::uint64_t seed = 10; seed < 13; ++seed) {
    const auto v = generate_scene(seed, small_grid(), SceneParams{}, 355);
    const auto bc = simulate_zero_tau(v);
    const auto zt = simulate(with_zero_extinction(v), {355, 0.7});
    EXPECT_TRUE(zt.atb.v == bc.v);
    EXPECT_TRUE(simulate(v, {355, 0.7}).bc == bc);
    const auto mol = molecular_profile(355, small_grid());
    for (std::int64_t a = 0; a < small_grid().n_alt; ++a) ASSERT_GE(bc(0, a, 0), mol.beta[a]);
  }
  const auto pure = simulate_zero_tau(generate_scene(3, small_grid(), empty_params(), 532));
  const auto mol = molecular_profile(532, small_grid());
  for (std::int64_t a = 0; a < small_grid().n_alt; ++a) EXPECT_EQ(pure(2, a, 7), mol.beta[a]);
}

TEST(Simulate, EtaMonotonicity) {
  const auto v = generate_scene(21, small_grid(), SceneParams{}, 532);
  const auto lo = simulate(v, {532, 0.3});
  const auto hi = simulate(v, {532, 0.9});
  for (std::size_t i = 0; i < lo.t2.v.size(); ++i) ASSERT_LE(hi.t2.v[i], lo.t2.v[i]);
}

TEST(Simulate, ConfigErrors) {
  const auto v = generate_scene(21, small_grid(), SceneParams{}, 532);
  EXPECT_THROW(simulate(v, {355, 0.7}), ConfigError);
  EXPECT_THROW(simulate(v, {532, 0.0}), ConfigError);
  auto bad = v;
  bad.sigma_aer.grid.n_lat = 9;
  EXPECT_THROW(simulate(bad, {532, 0.7}), ConfigError);
}
