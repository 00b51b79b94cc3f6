#pragma once

// "ATMP" checkpoint: same framing as the dataset archive. The manifest holds
// the full experiment config, the training position and a tensor index; each
// tensor record is raw binary32 values followed by its CRC32.

#include "atmos/harness/config.hpp"

namespace atmos::harness {

constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string net;  // "generator" or "discriminator"
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  ExperimentConfig config;
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  std::vector<TensorRecord> tensors;
};

template <typename T>
void append_params(Checkpoint& ck, const std::string& net, const nn::ParamStore<T>& store) {
  for (const auto& e : store.entries()) {
    TensorRecord r{net, e.name, e.var.shape(), {}};
    r.values.reserve(e.var.value().size());
    for (auto v : e.var.value().values()) r.values.push_back(static_cast<float>(v));
    ck.tensors.push_back(std::move(r));
  }
}

inline void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  data::ByteWriter w;
  json index = json::array();
  for (const auto& t : ck.tensors) {
    const std::size_t start = w.size();
    for (float v : t.values) w.f32(v);
    w.crc_since(start);
    index.push_back({{"net", t.net}, {"name", t.name}, {"shape", t.shape}, {"offset", start},
                     {"count", t.values.size()}});
  }
  const json m = {{"config", to_json(ck.config)}, {"epoch", ck.epoch}, {"step", ck.step}, {"tensors", index}};
  data::write_framed(path, "ATMP", kCheckpointVersion, m.dump(), w.bytes());
}

inline Checkpoint read_checkpoint(const std::string& path) {
  using data::ArchiveError;
  const auto f = data::read_framed(path, "ATMP", kCheckpointVersion);
  Checkpoint ck;
  json m;
  try {
    m = json::parse(f.manifest);
    ck.config = from_json(m.at("config"));
    ck.epoch = m.at("epoch").get<std::int64_t>();
    ck.step = m.at("step").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw ArchiveError(ArchiveError::Kind::kBadManifest, path + ": bad checkpoint manifest: " + e.what());
  } catch (const ConfigError& e) {
    throw ArchiveError(ArchiveError::Kind::kBadManifest, path + ": bad embedded config: " + e.what());
  }
  data::ByteReader r(f.payload.data(), f.payload.size(), path);
  for (const auto& t : m.at("tensors")) {
    TensorRecord rec;
    rec.net = t.at("net").get<std::string>();
    rec.name = t.at("name").get<std::string>();
    rec.shape = t.at("shape").get<Shape>();
    const auto off = t.at("offset").get<std::size_t>();
    const auto count = t.at("count").get<std::size_t>();
    r.seek(off);
    rec.values.resize(count);
    for (auto& v : rec.values) v = r.f32();
    if (!r.check_crc_since(off))
      throw ArchiveError(ArchiveError::Kind::kChecksumMismatch,
                         path + ": checksum mismatch in tensor " + rec.net + "/" + rec.name);
    ck.tensors.push_back(std::move(rec));
  }
  return ck;
}

/// Copies the checkpoint's `net` tensors into `store`. Every parameter of the
/// store must be present with an identical shape.
template <typename T>
void load_params(const Checkpoint& ck, const std::string& net, nn::ParamStore<T>& store) {
  using data::ArchiveError;
  std::size_t found = 0;
  for (const auto& t : ck.tensors) {
    if (t.net != net) continue;
    ++found;
    auto& entries = store.entries();
    auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.name == t.name; });
    if (it == entries.end())
      throw ArchiveError(ArchiveError::Kind::kBadManifest,
                         "checkpoint tensor " + net + "/" + t.name + " has no counterpart in the configured network");
    if (it->var.shape() != t.shape)
      throw ArchiveError(ArchiveError::Kind::kBadManifest, "checkpoint tensor " + net + "/" + t.name + " has shape " +
                                                               shape_str(t.shape) + ", network expects " +
                                                               shape_str(it->var.shape()));
    auto& dst = it->var.mutable_value();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(t.values[i]);
  }
  if (found != store.entries().size())
    throw ArchiveError(ArchiveError::Kind::kBadManifest, "checkpoint holds " + std::to_string(found) + " " + net +
                                                             " tensors, network has " +
                                                             std::to_string(store.entries().size()));
}

}  // namespace atmos::harness
