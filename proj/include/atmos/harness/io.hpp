#pragma once

// Portable graymaps (binary P5, 16-bit big-endian) and small CSV helpers.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "atmos/harness/metrics.hpp"

namespace atmos::harness {

/// Writes values clipped to [lo, hi] and scaled to 0..65535.
inline void write_pgm16(const std::string& path, const Image& im, double lo = 0.0, double hi = 1.0) {
  if (!(hi > lo)) throw ConfigError("write_pgm16: empty value range");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write image " + path);
  out << "P5\n" << im.cols << " " << im.rows << "\n65535\n";
  for (double v : im.v) {
    const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
    const auto q = static_cast<std::uint16_t>(std::lround(t * 65535.0));
    const char b[2] = {static_cast<char>(q >> 8), static_cast<char>(q & 0xff)};
    out.write(b, 2);
  }
  if (!out) throw ConfigError("write failed for image " + path);
}

/// Reads a 16-bit P5 file back to values in [0, 1].
inline Image read_pgm16(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open image " + path);
  std::string magic;
  std::int64_t w = 0, h = 0, maxv = 0;
  in >> magic >> w >> h >> maxv;
  in.get();
  if (magic != "P5" || maxv != 65535 || w < 1 || h < 1) throw ConfigError(path + ": not a 16-bit P5 graymap");
  Image im(h, w);
  for (auto& v : im.v) {
    unsigned char b[2];
    if (!in.read(reinterpret_cast<char*>(b), 2)) throw ConfigError(path + ": truncated pixel data");
    v = static_cast<double>((b[0] << 8) | b[1]) / 65535.0;
  }
  return im;
}

/// Shortest round-trip decimal form, so CSV files compare bitwise across runs.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ConfigError("CSV has no column '" + name + "'");
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open CSV " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path + ": empty CSV");
  t.header = split_csv_line(line);
  while (std::getline(in, line))
    if (!line.empty()) t.rows.push_back(split_csv_line(line));
  return t;
}

/// Sorted list of files in `dir` whose name ends with `suffix`.
inline std::vector<std::filesystem::path> files_with_suffix(const std::filesystem::path& dir, const std::string& suffix) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && name.size() > suffix.size() && name.ends_with(suffix)) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace atmos::harness
