#pragma once

// Data stages: scene generation -> lidar simulation -> dataset build. Each
// stage reads and writes files in a directory so the CLI can run them one at
// a time; the in-memory variants are what the file stages call.

#include <algorithm>
#include <filesystem>

#include "atmos/harness/config.hpp"
#include "atmos/harness/io.hpp"

namespace atmos::harness {

namespace fs = std::filesystem;

inline std::string volume_stem(const std::string& scene_id, int wavelength) {
  return scene_id + "_" + std::to_string(wavelength);
}

inline std::vector<data::Volume3D> generate_scenes(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<data::Volume3D> out;
  for (const auto& d : data::scene_catalog(cfg.n_scenes, cfg.seed))
    if (std::find(cfg.wavelengths.begin(), cfg.wavelengths.end(), d.wavelength) != cfg.wavelengths.end())
      out.push_back(data::generate_scene(d.seed, cfg.scene_grid, cfg.scene, d.wavelength));
  return out;
}

inline std::vector<data::SimulatedPair> simulate_all(const ExperimentConfig& cfg,
                                                     const std::vector<data::Volume3D>& volumes) {
  std::vector<data::SimulatedPair> out;
  for (const auto& v : volumes) out.push_back(data::simulate(v, data::LidarConfig{v.wavelength, cfg.lidar_eta}));
  return out;
}

/// Regrid -> slice (with physics masks) -> scene-level split. Fills `manifest`.
inline std::vector<data::SlicePair> build_slices(const ExperimentConfig& cfg,
                                                 const std::vector<data::SimulatedPair>& pairs,
                                                 data::DatasetManifest& manifest) {
  std::vector<data::SlicePair> slices;
  for (const auto& p : pairs) {
    auto s = data::slice_meridional(data::regrid(p, cfg.target_grid), cfg.mask_threshold);
    for (auto& x : s) slices.push_back(std::move(x));
  }
  std::vector<std::string> ids;
  for (const auto& s : slices) ids.push_back(s.scene_id);
  manifest = {};
  manifest.norm = cfg.norm;
  manifest.seed = cfg.seed;
  manifest.split_ratio = cfg.split_ratio;
  manifest.mask_threshold = cfg.mask_threshold;
  const auto parts = data::split_scenes(ids, cfg.split_ratio, derive_key({cfg.seed, 0x5b17ULL}));
  for (std::size_t i = 0; i < slices.size(); ++i) {
    data::SliceEntry e;
    e.partition = data::partition_name(parts[i]);
    manifest.slices.push_back(e);
  }
  return slices;
}

// ---------------------------------------------------------------- file stages

inline std::vector<fs::path> gen_scenes_to(const ExperimentConfig& cfg, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  for (const auto& v : generate_scenes(cfg)) {
    const auto path = out_dir / (volume_stem(v.scene_id, v.wavelength) + ".scene.atmv");
    data::write_volume_file(path.string(), data::to_volume_file(v));
    written.push_back(path);
  }
  return written;
}

inline std::vector<fs::path> simulate_dir(const ExperimentConfig& cfg, const fs::path& in_dir, const fs::path& out_dir) {
  const auto inputs = files_with_suffix(in_dir, ".scene.atmv");
  if (inputs.empty()) throw ConfigError("no scene volumes (*.scene.atmv) in " + in_dir.string());
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  for (const auto& in : inputs) {
    const auto v = data::volume_from_file(data::read_volume_file(in.string()));
    const auto p = data::simulate(v, data::LidarConfig{v.wavelength, cfg.lidar_eta});
    const auto path = out_dir / (volume_stem(p.scene_id, p.wavelength) + ".pair.atmv");
    data::write_volume_file(path.string(), data::to_volume_file(p));
    written.push_back(path);
  }
  return written;
}

inline data::DatasetManifest build_dataset_from_dir(const ExperimentConfig& cfg, const fs::path& in_dir,
                                                    const fs::path& archive) {
  const auto inputs = files_with_suffix(in_dir, ".pair.atmv");
  if (inputs.empty()) throw ConfigError("no simulated pairs (*.pair.atmv) in " + in_dir.string());
  std::vector<data::SimulatedPair> pairs;
  for (const auto& in : inputs) pairs.push_back(data::pair_from_file(data::read_volume_file(in.string())));
  data::DatasetManifest m;
  const auto slices = build_slices(cfg, pairs, m);
  if (archive.has_parent_path()) fs::create_directories(archive.parent_path());
  data::write_archive(archive.string(), slices, m);
  return m;
}

/// gen -> simulate -> build inside `work_dir`; returns the archive path.
inline fs::path run_data_pipeline(const ExperimentConfig& cfg, const fs::path& work_dir) {
  gen_scenes_to(cfg, work_dir / "scenes");
  simulate_dir(cfg, work_dir / "scenes", work_dir / "pairs");
  const auto archive = work_dir / "dataset.atmb";
  build_dataset_from_dir(cfg, work_dir / "pairs", archive);
  return archive;
}

}  // namespace atmos::harness
