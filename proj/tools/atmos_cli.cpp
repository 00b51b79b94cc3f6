// atmos: data generation, training and evaluation from the command line.

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"

#include "atmos/harness/evaluate.hpp"
#include "atmos/harness/gradsuite.hpp"
#include "atmos/harness/pipeline.hpp"
#include "atmos/harness/report.hpp"
#include "atmos/harness/train.hpp"

using namespace atmos;
using namespace atmos::harness;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config, preset, out;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* app, const std::string& out_help) {
    app->add_option("--config", config, "JSON config (keys mirror ExperimentConfig)")->check(CLI::ExistingFile);
    app->add_option("--preset", preset, "base preset")->check(CLI::IsMember({"desk", "full", "overfit"}));
    app->add_option("--seed", seed, "master seed (also seeds network initialization)");
    app->add_option("--out", out, out_help);
  }

  bool config_given() const { return !config.empty() || !preset.empty() || seed.has_value(); }

  ExperimentConfig resolve() const {
    ExperimentConfig c = preset.empty() ? desk_preset() : harness::preset(preset);
    if (!config.empty()) {
      std::ifstream in(config);
      json j;
      try {
        j = json::parse(in);
      } catch (const json::exception& e) {
        throw ConfigError("config file '" + config + "': " + e.what());
      }
      c = preset.empty() ? from_json(j) : overlay(c, j);
    }
    if (seed) {
      c.seed = *seed;
      c.network.seed = *seed;
    }
    c.validate();
    return c;
  }

  fs::path out_or(const fs::path& fallback) const { return out.empty() ? fallback : fs::path(out); }
};

std::string metric_line(const char* what, const MetricRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-9s PSNR %7.3f  SSIM %.4f  MAE %.5f", what, r.full.psnr, r.full.ssim, r.full.mae);
  std::string s = buf;
  if (r.masked) {
    std::snprintf(buf, sizeof buf, " | masked PSNR %7.3f  SSIM %.4f  MAE %.5f", r.masked->psnr, r.masked->ssim,
                  r.masked->mae);
    s += buf;
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"atmos: lidar scene synthesis, dataset building, training and evaluation", "atmos"};
  app.require_subcommand(1);

  Common gen_o, sim_o, build_o, grad_o, train_o, eval_o, rep_o;
  std::string sim_in, build_in, train_in, eval_in, eval_ckpt, eval_partition, eval_images, rep_images;
  std::vector<std::string> rep_csvs;
  bool grad_full_widths = false;

  auto* gen = app.add_subcommand("gen-scenes", "synthesize 3-D scenes (*.scene.atmv)");
  gen_o.attach(gen, "output directory (default: scenes)");

  auto* sim = app.add_subcommand("simulate", "simulate lidar ATB/BC pairs (*.pair.atmv) from scenes");
  sim_o.attach(sim, "output directory (default: pairs)");
  sim->add_option("--in", sim_in, "directory of *.scene.atmv")->required();

  auto* build = app.add_subcommand("build-dataset", "regrid, slice, mask and split pairs into an archive");
  build_o.attach(build, "archive path (default: dataset.atmb)");
  build->add_option("--in", build_in, "directory of *.pair.atmv")->required();

  auto* grad = app.add_subcommand("gradcheck", "central-difference gradient suite at binary64");
  grad_o.attach(grad, "unused");
  grad->add_flag("--full-widths", grad_full_widths, "check the generator at the configured channel widths");

  auto* tr = app.add_subcommand("train", "train generator and discriminator");
  train_o.attach(tr, "run directory (default: run)");
  tr->add_option("--in", train_in, "dataset archive")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset partition");
  eval_o.attach(ev, "metrics CSV (default: eval.csv)");
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint file (*.atmp)")->required();
  ev->add_option("--in", eval_in, "dataset archive")->required();
  ev->add_option("--partition", eval_partition, "train, test or all (default: config eval_partition)");
  ev->add_option("--dump-images", eval_images, "directory for per-slice PGM dumps");

  auto* rep = app.add_subcommand("report", "render metric CSVs into summary tables and difference images");
  rep_o.attach(rep, "report directory (default: report)");
  rep->add_option("--in", rep_csvs, "metric CSV files");
  rep->add_option("--images", rep_images, "directory of PGM dumps from eval --dump-images");

  if (argc < 2) {
    std::cerr << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) {
      const auto cfg = gen_o.resolve();
      const auto files = gen_scenes_to(cfg, gen_o.out_or("scenes"));
      std::cout << "wrote " << files.size() << " scene volumes to " << gen_o.out_or("scenes").string() << "\n";
    } else if (*sim) {
      const auto cfg = sim_o.resolve();
      const auto files = simulate_dir(cfg, sim_in, sim_o.out_or("pairs"));
      std::cout << "wrote " << files.size() << " simulated pairs to " << sim_o.out_or("pairs").string() << "\n";
    } else if (*build) {
      const auto cfg = build_o.resolve();
      const auto path = build_o.out_or("dataset.atmb");
      const auto m = build_dataset_from_dir(cfg, build_in, path);
      std::cout << "wrote " << path.string() << ": " << m.slices.size() << " slices (" << m.indices("train").size()
                << " train, " << m.indices("test").size() << " test)\n";
    } else if (*grad) {
      const auto cfg = grad_o.resolve();
      GradSuiteOptions opt;
      if (grad_full_widths) opt.generator_channels = cfg.network.channels;
      opt.disc_channels = cfg.network.disc_channels;
      int failed = 0;
      gradient_suite(opt, [&](const GradCheckReport& r) {
        std::printf("%s %-22s max_rel_err %.3e%s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.max_rel_err,
                    r.finite ? "" : " (non-finite)");
        std::fflush(stdout);
        failed += !r.pass;
      });
      if (failed) {
        std::fprintf(stderr, "atmos gradcheck: %d operator(s) failed\n", failed);
        return 1;
      }
    } else if (*tr) {
      const auto cfg = train_o.resolve();
      const auto res = train(cfg, train_in, train_o.out_or("run"), &std::cout);
      std::cout << "trained " << res.steps << " steps; " << res.checkpoints.size() << " checkpoints in "
                << (res.run_dir / "checkpoints").string() << "\n";
      if (res.initial_val) std::cout << metric_line("val@0", *res.initial_val) << "\n";
      if (res.final_val) std::cout << metric_line("val@end", *res.final_val) << "\n";
    } else if (*ev) {
      std::optional<model::NetworkConfig> net;
      std::string partition = eval_partition;
      if (eval_o.config_given()) {
        const auto cfg = eval_o.resolve();
        net = cfg.network;
        if (partition.empty()) partition = cfg.eval_partition;
      }
      if (partition.empty()) partition = read_checkpoint(eval_ckpt).config.eval_partition;
      harness::check_partition(partition, "--partition");
      std::optional<fs::path> images;
      if (!eval_images.empty()) images = eval_images;
      const auto r = evaluate(eval_ckpt, eval_in, partition, eval_o.out_or("eval.csv"), images, net ? &*net : nullptr);
      std::cout << r.slices.size() << " slices of partition '" << partition << "'\n"
                << metric_line("model", r.model_mean) << "\n"
                << metric_line("baseline", r.baseline_mean) << "\n";
    } else if (*rep) {
      std::vector<fs::path> csvs(rep_csvs.begin(), rep_csvs.end());
      std::optional<fs::path> images;
      if (!rep_images.empty()) images = rep_images;
      const auto out = render_report(csvs, rep_o.out_or("report"), images);
      std::cout << "wrote " << out.summary.string() << " and " << out.difference_images.size()
                << " difference images\n";
    }
  } catch (const data::ArchiveError& e) {
    std::fprintf(stderr, "atmos: %s error: %s\n", data::archive_error_name(e.kind()), e.what());
    return 1;
  } catch (const TrainingFault& e) {
    std::fprintf(stderr, "atmos: training fault in term '%s': %s\n", e.term().c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "atmos: %s\n", e.what());
    return 1;
  }
  return 0;
}
