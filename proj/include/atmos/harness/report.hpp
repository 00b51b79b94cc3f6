#pragma once

// Renders metric CSVs into a markdown summary and gamma/target PGM pairs into
// absolute-difference images.

#include <filesystem>
#include <fstream>

#include "atmos/harness/io.hpp"

namespace atmos::harness {

struct ReportOutput {
  std::filesystem::path summary;
  std::vector<std::filesystem::path> difference_images;
};

namespace detail {

inline std::string markdown_row(const std::vector<std::string>& cells) {
  std::string s = "|";
  for (const auto& c : cells) s += " " + (c.empty() ? std::string("-") : c) + " |";
  return s + "\n";
}

/// Numbers are shortened to 4 decimals for reading; the CSV keeps full precision.
inline std::string short_cell(const std::string& c) {
  char* end = nullptr;
  const double v = std::strtod(c.c_str(), &end);
  if (c.empty() || end != c.c_str() + c.size() || std::floor(v) == v) return c;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

inline std::string table(const CsvTable& t, std::size_t max_rows) {
  std::string s = markdown_row(t.header);
  s += markdown_row(std::vector<std::string>(t.header.size(), "---"));
  // Long logs keep their head and tail.
  const std::size_t n = t.rows.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (n > max_rows && i == max_rows / 2) {
      s += markdown_row(std::vector<std::string>(t.header.size(), "..."));
      i = n - max_rows / 2;
    }
    std::vector<std::string> cells;
    for (const auto& c : t.rows[i]) cells.push_back(short_cell(c));
    cells.resize(t.header.size());
    s += markdown_row(cells);
  }
  return s;
}

}  // namespace detail

/// Writes <out_dir>/summary.md with one table per CSV. Evaluation CSVs are
/// reduced to their aggregate row. With `image_dir`, every *_gamma.pgm that
/// has a *_target.pgm sibling yields <out_dir>/<stem>_diff.pgm = |gamma - target|.
inline ReportOutput render_report(const std::vector<std::filesystem::path>& csvs, const std::filesystem::path& out_dir,
                                  const std::optional<std::filesystem::path>& image_dir = std::nullopt,
                                  std::size_t max_rows = 20) {
  namespace fs = std::filesystem;
  if (csvs.empty() && !image_dir) throw ConfigError("report: no metric CSVs or image directory given");
  fs::create_directories(out_dir);
  ReportOutput out;
  std::string md = "# Metrics summary\n";
  for (const auto& path : csvs) {
    auto t = read_csv(path.string());
    md += "\n## " + path.filename().string() + "\n\n";
    if (!t.header.empty() && t.header[0] == "slice") {
      md += std::to_string(t.rows.size() - 1) + " slices; aggregate means (model, then copy-input baseline):\n\n";
      const auto mean = std::find_if(t.rows.begin(), t.rows.end(), [](const auto& r) { return !r.empty() && r[0] == "mean"; });
      if (mean == t.rows.end()) throw ConfigError(path.string() + ": evaluation CSV has no mean row");
      CsvTable agg{{"", "PSNR", "SSIM", "MAE", "PSNR (mask)", "SSIM (mask)", "MAE (mask)"}, {}};
      auto pick = [&](const std::string& prefix) {
        std::vector<std::string> r{prefix.empty() ? "model" : "baseline"};
        for (const char* k : {"psnr", "ssim", "mae", "psnr_masked", "ssim_masked", "mae_masked"})
          r.push_back((*mean)[t.column(prefix + k)]);
        agg.rows.push_back(r);
      };
      pick("");
      pick("base_");
      md += detail::table(agg, max_rows);
    } else {
      md += detail::table(t, max_rows);
    }
  }

  if (image_dir) {
    const std::string suffix = "_gamma.pgm";
    std::vector<std::string> lines;
    for (const auto& g : files_with_suffix(*image_dir, suffix)) {
      const auto name = g.filename().string();
      const auto stem = name.substr(0, name.size() - suffix.size());
      const auto target = *image_dir / (stem + "_target.pgm");
      if (!fs::exists(target)) continue;
      const Image a = read_pgm16(g.string()), b = read_pgm16(target.string());
      if (a.rows != b.rows || a.cols != b.cols) throw ShapeError("report: " + stem + " gamma and target differ in size");
      Image d(a.rows, a.cols);
      double mx = 0.0;
      for (std::size_t i = 0; i < d.v.size(); ++i) mx = std::max(mx, d.v[i] = std::abs(a.v[i] - b.v[i]));
      const auto dst = out_dir / (stem + "_diff.pgm");
      write_pgm16(dst.string(), d);
      out.difference_images.push_back(dst);
      lines.push_back("| " + stem + " | " + detail::short_cell(fmt(mx)) + " |\n");
    }
    md += "\n## Difference images\n\n|gamma - target|, same 0..1 scale as the dumps.\n\n| slice | max |\n| --- | --- |\n";
    for (const auto& l : lines) md += l;
  }

  out.summary = out_dir / "summary.md";
  std::ofstream f(out.summary, std::ios::trunc);
  if (!f) throw ConfigError("cannot write " + out.summary.string());
  f << md;
  return out;
}

}  // namespace atmos::harness
