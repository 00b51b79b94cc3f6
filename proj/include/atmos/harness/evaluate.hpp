#pragma once

// Checkpoint evaluation: per-slice PSNR/SSIM/MAE of the predicted mean against
// the target on the full slice and inside the mask, next to the copy-input
// baseline (masked ATB taken as the estimate).

#include <filesystem>
#include <fstream>

#include "atmos/harness/checkpoint.hpp"
#include "atmos/harness/io.hpp"
#include "atmos/harness/samples.hpp"

namespace atmos::harness {

struct SliceEval {
  std::string label;
  MetricRow model, baseline;
};

struct EvalResult {
  std::vector<SliceEval> slices;
  MetricRow model_mean, baseline_mean;
};

inline const char* kEvalCsvHeader =
    "slice,psnr,ssim,mae,psnr_masked,ssim_masked,mae_masked,"
    "base_psnr,base_ssim,base_mae,base_psnr_masked,base_ssim_masked,base_mae_masked";

inline std::string metric_cells(const MetricRow& r) {
  const MetricValues nan{std::nan(""), std::nan(""), std::nan("")};
  const MetricValues& m = r.masked ? *r.masked : nan;
  return fmt(r.full.psnr) + "," + fmt(r.full.ssim) + "," + fmt(r.full.mae) + "," + fmt(m.psnr) + "," +
         fmt(m.ssim) + "," + fmt(m.mae);
}

/// Generator with the checkpoint's weights, built from `network` (default:
/// the config stored in the checkpoint). Shape disagreements are load errors.
inline std::unique_ptr<model::Generator<float>> load_generator(const Checkpoint& ck,
                                                               const model::NetworkConfig* network = nullptr) {
  auto g = std::make_unique<model::Generator<float>>(network ? *network : ck.config.network);
  load_params(ck, "generator", g->params());
  return g;
}

/// Scales a non-negative map by its maximum for display.
inline Image scaled_by_max(Image im) {
  double mx = 0.0;
  for (double v : im.v)
    if (std::isfinite(v)) mx = std::max(mx, v);
  if (mx > 0.0)
    for (auto& v : im.v) v /= mx;
  return im;
}

/// Evaluates `partition` of `archive`. With `image_dir`, writes per slice
/// <label>_{input,gamma,target,aleatoric,epistemic}.pgm ('/' in labels -> '_').
/// With `network`, the generator is built from it instead of the checkpoint's config.
inline EvalResult evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& archive,
                           const std::string& partition, const std::filesystem::path& csv_path,
                           const std::optional<std::filesystem::path>& image_dir = std::nullopt,
                           const model::NetworkConfig* network = nullptr) {
  const auto ck = read_checkpoint(checkpoint.string());
  const auto gen = load_generator(ck, network);
  const auto ds = data::read_archive(archive.string());
  const auto idx = ds.manifest.indices(partition);
  if (idx.empty()) throw ConfigError("partition '" + partition + "' of " + archive.string() + " is empty");
  if (image_dir) std::filesystem::create_directories(*image_dir);

  EvalResult res;
  std::vector<MetricRow> model_rows, base_rows;
  for (auto i : idx) {
    const Sample s = make_sample(ds.slices[i], ds.manifest.norm, ck.config.train_mask_coverage);
    const auto p = predict(*gen, make_batch({&s}), {});
    std::vector<std::uint8_t> m(s.mask.size());
    for (std::size_t k = 0; k < m.size(); ++k) m[k] = s.mask[k] != 0.0f;
    const auto target = Image::from(s.rows, s.cols, s.y);
    const auto gamma = Image::from(s.rows, s.cols, p.gamma.value().values());
    const auto input = Image::from(s.rows, s.cols, s.atb_masked);
    SliceEval e{s.label, compute_metrics(gamma, target, m, ck.config.data_range),
                compute_metrics(input, target, m, ck.config.data_range)};
    model_rows.push_back(e.model);
    base_rows.push_back(e.baseline);

    if (image_dir) {
      // aleatoric = beta / (alpha - 1), epistemic = beta / (nu (alpha - 1))
      Image alea(s.rows, s.cols), epi(s.rows, s.cols);
      const auto &nu = p.nu.value(), &al = p.alpha.value(), &be = p.beta.value();
      for (std::size_t k = 0; k < alea.v.size(); ++k) {
        alea.v[k] = be[k] / (al[k] - 1.0);
        epi.v[k] = alea.v[k] / nu[k];
      }
      std::string stem = s.label;
      std::replace(stem.begin(), stem.end(), '/', '_');
      const auto base = (*image_dir / stem).string();
      write_pgm16(base + "_input.pgm", input);
      write_pgm16(base + "_gamma.pgm", gamma);
      write_pgm16(base + "_target.pgm", target);
      write_pgm16(base + "_aleatoric.pgm", scaled_by_max(alea));
      write_pgm16(base + "_epistemic.pgm", scaled_by_max(epi));
    }
    res.slices.push_back(std::move(e));
  }
  res.model_mean = aggregate(model_rows);
  res.baseline_mean = aggregate(base_rows);

  if (csv_path.has_parent_path()) std::filesystem::create_directories(csv_path.parent_path());
  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + csv_path.string());
  out << kEvalCsvHeader << "\n";
  for (const auto& e : res.slices) out << e.label << "," << metric_cells(e.model) << "," << metric_cells(e.baseline) << "\n";
  out << "mean," << metric_cells(res.model_mean) << "," << metric_cells(res.baseline_mean) << "\n";
  return res;
}

}  // namespace atmos::harness
