#pragma once

// Dataset archive ("ATMB") and volume files ("ATMV").
//
// ATMB payload: one record per slice, at the byte offset listed in the
// manifest (relative to the first payload byte):
//   rows u32 | cols u32 | atb f32[rows*cols] | bc f32[..] | t2 f32[..] | mask u8[..] | crc32 u32
// The CRC covers the record bytes before it.

#include <optional>

#include "json.hpp"

#include "atmos/data/container.hpp"
#include "atmos/data/dataset.hpp"

namespace atmos::data {

constexpr std::uint32_t kArchiveVersion = 1;
constexpr std::uint32_t kVolumeVersion = 1;

inline nlohmann::json grid_to_json(const GridSpec& g) {
  return {{"n_lon", g.n_lon}, {"n_lat", g.n_lat},           {"n_alt", g.n_alt},          {"d_horiz", g.d_horiz},
          {"alt_top", g.alt_top}, {"origin_lon", g.origin_lon}, {"origin_lat", g.origin_lat}};
}

inline GridSpec grid_from_json(const nlohmann::json& j) {
  GridSpec g;
  g.n_lon = j.at("n_lon").get<std::int64_t>();
  g.n_lat = j.at("n_lat").get<std::int64_t>();
  g.n_alt = j.at("n_alt").get<std::int64_t>();
  g.d_horiz = j.at("d_horiz").get<double>();
  g.alt_top = j.at("alt_top").get<double>();
  g.origin_lon = j.value("origin_lon", g.origin_lon);
  g.origin_lat = j.value("origin_lat", g.origin_lat);
  return g;
}

struct SliceEntry {
  std::string scene_id;
  std::uint64_t seed = 0;
  int wavelength = 532;
  std::int64_t slice_index = 0;
  std::int64_t rows = 0, cols = 0;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
  std::string partition = "train";
  bool operator==(const SliceEntry&) const = default;
};

struct DatasetManifest {
  std::uint32_t format_version = kArchiveVersion;
  NormSpec norm;
  std::uint64_t seed = 0;
  double split_ratio = 0.9;
  double mask_threshold = 0.7;
  std::vector<SliceEntry> slices;
  bool operator==(const DatasetManifest&) const = default;

  std::vector<std::size_t> indices(const std::string& partition) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < slices.size(); ++i)
      if (partition == "all" || slices[i].partition == partition) out.push_back(i);
    return out;
  }
};

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json slices = nlohmann::json::array();
  for (const auto& s : m.slices)
    slices.push_back({{"scene_id", s.scene_id},
                      {"seed", s.seed},
                      {"wavelength", s.wavelength},
                      {"slice_index", s.slice_index},
                      {"rows", s.rows},
                      {"cols", s.cols},
                      {"offset", s.offset},
                      {"length", s.length},
                      {"partition", s.partition}});
  return {{"format_version", m.format_version},
          {"norm", {{"log_floor", m.norm.log_floor}, {"log_ceil", m.norm.log_ceil}}},
          {"seed", m.seed},
          {"split_ratio", m.split_ratio},
          {"mask_threshold", m.mask_threshold},
          {"slices", slices}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.format_version = j.at("format_version").get<std::uint32_t>();
  m.norm.log_floor = j.at("norm").at("log_floor").get<double>();
  m.norm.log_ceil = j.at("norm").at("log_ceil").get<double>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.split_ratio = j.at("split_ratio").get<double>();
  m.mask_threshold = j.at("mask_threshold").get<double>();
  for (const auto& s : j.at("slices")) {
    SliceEntry e;
    e.scene_id = s.at("scene_id").get<std::string>();
    e.seed = s.at("seed").get<std::uint64_t>();
    e.wavelength = s.at("wavelength").get<int>();
    e.slice_index = s.at("slice_index").get<std::int64_t>();
    e.rows = s.at("rows").get<std::int64_t>();
    e.cols = s.at("cols").get<std::int64_t>();
    e.offset = s.at("offset").get<std::uint64_t>();
    e.length = s.at("length").get<std::uint64_t>();
    e.partition = s.at("partition").get<std::string>();
    m.slices.push_back(std::move(e));
  }
  return m;
}

struct Dataset {
  DatasetManifest manifest;
  std::vector<SlicePair> slices;
};

/// Fills manifest.slices (ids, shapes, offsets) from `slices` and serializes.
/// Partition labels already present in the manifest are kept when counts match.
inline Bytes encode_archive(std::vector<SlicePair> const& slices, DatasetManifest& manifest) {
  std::vector<std::string> parts;
  for (const auto& e : manifest.slices) parts.push_back(e.partition);
  if (parts.size() != slices.size()) parts.assign(slices.size(), "train");
  manifest.slices.clear();
  manifest.format_version = kArchiveVersion;
  ByteWriter w;
  for (std::size_t k = 0; k < slices.size(); ++k) {
    const auto& s = slices[k];
    const std::size_t n = s.pixels();
    if (s.atb.size() != n || s.bc.size() != n || s.t2.size() != n || s.mask.size() != n)
      throw ShapeError("archive: slice " + s.label() + " has inconsistent field sizes");
    const std::size_t start = w.size();
    w.u32(static_cast<std::uint32_t>(s.rows));
    w.u32(static_cast<std::uint32_t>(s.cols));
    for (const auto* f : {&s.atb, &s.bc, &s.t2})
      for (float v : *f) w.f32(v);
    for (auto b : s.mask) w.u8(b ? 1 : 0);
    w.crc_since(start);
    manifest.slices.push_back({s.scene_id, s.seed, s.wavelength, s.slice_index, s.rows, s.cols, start,
                               w.size() - start, parts[k]});
  }
  return std::move(w.bytes());
}

inline void write_archive(const std::string& path, const std::vector<SlicePair>& slices, DatasetManifest& manifest) {
  Bytes payload = encode_archive(slices, manifest);
  write_framed(path, "ATMB", kArchiveVersion, manifest_to_json(manifest).dump(), payload);
}

inline Dataset decode_archive(const Framed& f, const std::string& ctx) {
  Dataset d;
  try {
    d.manifest = manifest_from_json(nlohmann::json::parse(f.manifest));
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError(ArchiveError::Kind::kBadManifest, ctx + ": bad manifest: " + e.what());
  }
  std::uint64_t prev_end = 0;
  for (const auto& e : d.manifest.slices) {
    const std::string label = e.scene_id + "/" + std::to_string(e.wavelength) + "nm/lon" + std::to_string(e.slice_index);
    if (e.offset < prev_end)
      throw ArchiveError(ArchiveError::Kind::kBadManifest, ctx + ": overlapping record offsets at slice " + label);
    if (e.offset + e.length > f.payload.size())
      throw ArchiveError(ArchiveError::Kind::kTruncated, ctx + ": record for slice " + label + " runs past end of file");
    prev_end = e.offset + e.length;
    ByteReader r(f.payload.data() + e.offset, static_cast<std::size_t>(e.length), ctx + " slice " + label);
    SlicePair s;
    s.rows = r.u32();
    s.cols = r.u32();
    if (s.rows != e.rows || s.cols != e.cols)
      throw ArchiveError(ArchiveError::Kind::kChecksumMismatch,
                         ctx + ": slice " + label + " header shape disagrees with the manifest");
    const std::size_t n = s.pixels();
    for (auto* fld : {&s.atb, &s.bc, &s.t2}) {
      fld->resize(n);
      for (auto& v : *fld) v = r.f32();
    }
    s.mask.resize(n);
    for (auto& b : s.mask) b = r.u8();
    if (!r.check_crc_since(0))
      throw ArchiveError(ArchiveError::Kind::kChecksumMismatch, ctx + ": checksum mismatch in slice " + label);
    s.wavelength = e.wavelength;
    s.scene_id = e.scene_id;
    s.seed = e.seed;
    s.slice_index = e.slice_index;
    d.slices.push_back(std::move(s));
  }
  return d;
}

inline Dataset read_archive(const std::string& path) {
  return decode_archive(read_framed(path, "ATMB", kArchiveVersion), path);
}

// ---------------------------------------------------------------- volume files

/// Named binary64 fields over one grid; used for scene volumes and simulated pairs.
struct VolumeFile {
  std::string kind;  // "scene" or "pair"
  GridSpec grid;
  int wavelength = 532;
  std::uint64_t seed = 0;
  std::string scene_id;
  std::vector<std::pair<std::string, std::vector<double>>> fields;

  const std::vector<double>& field(const std::string& name) const {
    for (const auto& [n, v] : fields)
      if (n == name) return v;
    throw ArchiveError(ArchiveError::Kind::kBadManifest, "volume file has no field '" + name + "'");
  }
};

inline void write_volume_file(const std::string& path, const VolumeFile& vf) {
  nlohmann::json names = nlohmann::json::array();
  ByteWriter w;
  for (const auto& [name, v] : vf.fields) {
    names.push_back(name);
    const std::size_t start = w.size();
    for (double x : v) w.f64(x);
    w.crc_since(start);
  }
  nlohmann::json m = {{"kind", vf.kind},       {"grid", grid_to_json(vf.grid)}, {"wavelength", vf.wavelength},
                      {"seed", vf.seed},       {"scene_id", vf.scene_id},       {"fields", names}};
  write_framed(path, "ATMV", kVolumeVersion, m.dump(), w.bytes());
}

inline VolumeFile read_volume_file(const std::string& path) {
  const Framed f = read_framed(path, "ATMV", kVolumeVersion);
  VolumeFile vf;
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(f.manifest);
    vf.kind = m.at("kind").get<std::string>();
    vf.grid = grid_from_json(m.at("grid"));
    vf.wavelength = m.at("wavelength").get<int>();
    vf.seed = m.at("seed").get<std::uint64_t>();
    vf.scene_id = m.at("scene_id").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError(ArchiveError::Kind::kBadManifest, path + ": bad manifest: " + e.what());
  }
  ByteReader r(f.payload.data(), f.payload.size(), path);
  const auto n = static_cast<std::size_t>(vf.grid.voxels());
  for (const auto& name : m.at("fields")) {
    const std::size_t start = r.pos();
    std::vector<double> v(n);
    for (auto& x : v) x = r.f64();
    if (!r.check_crc_since(start))
      throw ArchiveError(ArchiveError::Kind::kChecksumMismatch, path + ": checksum mismatch in field " +
                                                                    name.get<std::string>());
    vf.fields.emplace_back(name.get<std::string>(), std::move(v));
  }
  return vf;
}

inline VolumeFile to_volume_file(const Volume3D& v) {
  VolumeFile vf{"scene", v.grid(), v.wavelength, v.seed, v.scene_id, {}};
  vf.fields = {{"beta_mol", v.beta_mol.v},   {"beta_cloud", v.beta_cloud.v}, {"beta_aer", v.beta_aer.v},
               {"sigma_mol", v.sigma_mol.v}, {"sigma_cloud", v.sigma_cloud.v}, {"sigma_aer", v.sigma_aer.v}};
  return vf;
}

inline Volume3D volume_from_file(const VolumeFile& vf) {
  if (vf.kind != "scene") throw ArchiveError(ArchiveError::Kind::kBadManifest, "expected a scene volume file");
  Volume3D v;
  v.wavelength = vf.wavelength;
  v.seed = vf.seed;
  v.scene_id = vf.scene_id;
  auto field = [&](const char* n) {
    Field3D f(vf.grid);
    f.v = vf.field(n);
    return f;
  };
  v.beta_mol = field("beta_mol");
  v.beta_cloud = field("beta_cloud");
  v.beta_aer = field("beta_aer");
  v.sigma_mol = field("sigma_mol");
  v.sigma_cloud = field("sigma_cloud");
  v.sigma_aer = field("sigma_aer");
  return v;
}

inline VolumeFile to_volume_file(const SimulatedPair& p) {
  VolumeFile vf{"pair", p.grid(), p.wavelength, p.seed, p.scene_id, {}};
  vf.fields = {{"atb", p.atb.v}, {"bc", p.bc.v}, {"t2", p.t2.v}};
  return vf;
}

inline SimulatedPair pair_from_file(const VolumeFile& vf) {
  if (vf.kind != "pair") throw ArchiveError(ArchiveError::Kind::kBadManifest, "expected a simulated-pair file");
  SimulatedPair p;
  p.wavelength = vf.wavelength;
  p.seed = vf.seed;
  p.scene_id = vf.scene_id;
  for (auto [name, dst] : {std::pair{"atb", &p.atb}, std::pair{"bc", &p.bc}, std::pair{"t2", &p.t2}}) {
    *dst = Field3D(vf.grid);
    dst->v = vf.field(name);
  }
  return p;
}

}  // namespace atmos::data
