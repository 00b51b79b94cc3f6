// Acceptance run: every criterion at its stated tolerance and time budget,
// one PASS/FAIL line each. Exit status is the number of failures (capped).
//
//   acceptance [--work DIR] [--only N ...]

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>

#include "CLI11.hpp"

#include "atmos/harness/evaluate.hpp"
#include "atmos/harness/gradsuite.hpp"
#include "atmos/harness/pipeline.hpp"
#include "atmos/harness/train.hpp"
#include "atmos/model/network.hpp"
#include "atmos/nn/ffc.hpp"
#include "atmos/nn/gate.hpp"
#include "metric_oracle.hpp"
#include "nig_oracle.hpp"
#include "test_util.hpp"

using namespace atmos;
using namespace atmos::harness;
namespace fs = std::filesystem;
using atmos::testing::bitwise_equal;
using atmos::testing::random_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double budget_s;  // 0: no runtime bound
  std::function<Outcome(const fs::path&)> run;
};

std::string printf_str(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path fresh_dir(const fs::path& p) {
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const data::Bytes& b) {
  std::ofstream(p, std::ios::binary | std::ios::trunc)
      .write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

ExperimentConfig ten_desk_scenes() {
  auto cfg = desk_preset();
  cfg.n_scenes = 10;
  return cfg;
}

// ---------------------------------------------------------------- 1, 2, 3

Outcome zero_tau(const fs::path&) {
  const auto cfg = ten_desk_scenes();
  int equal = 0, total = 0;
  for (const auto& v : generate_scenes(cfg)) {
    ++total;
    const auto zt = data::simulate(data::with_zero_extinction(v), {v.wavelength, cfg.lidar_eta});
    const auto bc = data::simulate_zero_tau(v);
    equal += zt.atb.v.size() == bc.v.size() &&
             std::memcmp(zt.atb.v.data(), bc.v.data(), bc.v.size() * sizeof(double)) == 0;
  }
  return {total == 2 * cfg.n_scenes && equal == total,
          printf_str("%d/%d volumes (10 scenes x 2 wavelengths) bitwise equal", equal, total)};
}

Outcome attenuation(const fs::path&) {
  const auto cfg = ten_desk_scenes();
  std::size_t voxels = 0, violations = 0;
  for (const auto& p : simulate_all(cfg, generate_scenes(cfg)))
    for (std::size_t i = 0; i < p.bc.v.size(); ++i, ++voxels) violations += !(p.atb.v[i] <= p.bc.v[i]);

  // Ten layers of optical depth 0.1 above level 10.
  const auto slab = data::two_way_transmittance(std::vector<double>(20, 0.1 / 250.0), 1.0, 250.0);
  const double slab_err = std::abs(slab[10] - std::exp(-2.0));

  // Smooth random profiles against a 10x finer midpoint rule of the same function.
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const int n = 200;
    const double dz = 100.0, eta = 0.7;
    CounterRng rng(derive_key({seed, 0xacce}));
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
    const auto t2 = data::two_way_transmittance(prof, eta, dz);
    for (int k = 0; k < n; ++k) {
      const double lo = z_of(k) + dz / 2, hi = z_of(0) + dz / 2;
      const int m = 10 * k;
      double tau = 0;
      for (int i = 0; i < m; ++i) tau += sigma(lo + (i + 0.5) * (hi - lo) / m) * (hi - lo) / m;
      worst = std::max(worst, std::abs(t2[k] / std::exp(-2 * eta * tau) - 1.0));
    }
  }
  return {violations == 0 && slab_err <= 1e-9 && worst <= 0.01,
          printf_str("ATB>BC at %zu of %zu voxels; slab |t2-e^-2| %.2e; quadrature rel err %.2e", violations, voxels,
                     slab_err, worst)};
}

Outcome dataset_arithmetic(const fs::path&) {
  const auto cfg = full_preset();
  const auto n = data::paired_image_count(cfg.n_scenes, cfg.target_grid.n_lon,
                                          static_cast<std::int64_t>(cfg.wavelengths.size()), 2);
  return {n == 921600 && cfg.n_scenes == 384 && cfg.target_grid.n_lon == 600,
          printf_str("%lld scenes x %lld slices x %zu wavelengths x 2 signals = %lld",
                     static_cast<long long>(cfg.n_scenes), static_cast<long long>(cfg.target_grid.n_lon),
                     cfg.wavelengths.size(), static_cast<long long>(n))};
}

// ---------------------------------------------------------------- 4, 5, 6, 7

Outcome gradients(const fs::path&) {
  const auto reports = gradient_suite();
  int failed = 0;
  double worst = 0;
  std::string worst_name;
  for (const auto& r : reports) {
    failed += !r.pass;
    if (!r.finite || r.max_rel_err > worst) {
      worst = r.finite ? r.max_rel_err : INFINITY;
      worst_name = r.name;
    }
  }
  return {failed == 0 && worst < 1e-3,
          printf_str("%zu checks, %d failed; worst %.2e (%s)", reports.size(), failed, worst, worst_name.c_str())};
}

Outcome gate_moe(const fs::path&) {
  // Simplex over 1000 random inputs, half with two experts and half with three.
  double worst_sum = 0;
  std::size_t outside = 0;
  for (int n_exp : {2, 3}) {
    nn::ParamStore<float> store(static_cast<std::uint64_t>(700 + n_exp));
    nn::Gate<float> gate(store, "g", 8, n_exp, 8);
    for (std::uint64_t s = 0; s < 500; ++s) {
      const auto e = Var<float>::constant(random_tensor<float>(Shape{1, 8, 4, 4}, 1000 * n_exp + s, -5, 5));
      const auto w = gate(e, {s % 2 == 0, 1.0, s});
      double sum = 0;
      for (float v : w.value().values()) {
        outside += !(v >= 0.0f && v <= 1.0f);
        sum += v;
      }
      worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
    }
  }

  // One-hot weights on the mixing op and on both generator gates.
  int one_hot_ok = 0, one_hot_total = 0;
  {
    std::vector<Var<float>> experts;
    for (std::uint64_t k = 0; k < 3; ++k)
      experts.push_back(Var<float>::constant(random_tensor<float>(Shape{2, 4, 8, 8}, 900 + k)));
    for (std::size_t k = 0; k < 3; ++k) {
      Tensor<float> w(Shape{2, 3});
      w[k] = w[3 + k] = 1.0f;
      ++one_hot_total;
      one_hot_ok += bitwise_equal(ops::mix<float>(experts, Var<float>::constant(w)).value(), experts[k].value());
    }
  }
  {
    model::NetworkConfig c;
    c.height = c.width = 32;
    model::Generator<float> g(c);
    const auto x = Var<float>::constant(random_tensor<float>(Shape{2, 2, 32, 32}, 950, 0.0, 1.0));
    const auto experts = g.stage1_experts(g.down(0, g.stem(x)));
    for (std::size_t k = 0; k < experts.size(); ++k) {
      std::vector<double> w(experts.size(), 0.0);
      w[k] = 1.0;
      g.encoder_gate().force_weights(w);
      ++one_hot_total;
      one_hot_ok += bitwise_equal(g.encoder(x, {}).e1.value(), experts[k].value());
    }
    g.encoder_gate().force_weights(std::nullopt);
    const auto f = g.encoder(x, {});
    const auto bexp = g.bottleneck_experts(f.e3);
    for (std::size_t k = 0; k < bexp.size(); ++k) {
      std::vector<double> w(bexp.size(), 0.0);
      w[k] = 1.0;
      g.bottleneck_gate().force_weights(w);
      ++one_hot_total;
      one_hot_ok += bitwise_equal(g.bottleneck(f.e3, {}).value(), bexp[k].value());
    }
  }
  return {outside == 0 && worst_sum <= 1e-6 && one_hot_ok == one_hot_total,
          printf_str("1000 inputs: max |sum-1| %.2e, %zu weights outside [0,1]; one-hot bitwise %d/%d", worst_sum,
                     outside, one_hot_ok, one_hot_total)};
}

Outcome spectral(const fs::path&) {
  double worst_id = 0;
  for (auto shape : {Shape{2, 3, 8, 8}, Shape{1, 2, 6, 10}, Shape{1, 4, 16, 12}}) {
    const auto x = Var<float>::constant(random_tensor<float>(shape, 31));
    const auto C = shape[1];
    const auto w = Var<float>::constant(nn::init_values<float>(Shape{2 * C, 2 * C, 1, 1}, {nn::InitKind::kIdentity}));
    worst_id = std::max(worst_id, atmos::testing::max_abs_diff(nn::spectral_unit(x, w, false).value(), x.value()));
  }
  // Parseval for the orthonormal half spectrum: interior columns count twice.
  double worst_p = 0;
  for (auto [H, W] : {std::pair<std::int64_t, std::int64_t>{8, 8}, {6, 10}, {16, 12}}) {
    const auto xt = random_tensor(Shape{2, 1, H, W}, 32 + H);
    const auto f = ops::rfft2(Var<double>::constant(xt)).value();
    for (std::int64_t b = 0; b < 2; ++b) {
      double ex = 0, ef = 0;
      for (std::int64_t h = 0; h < H; ++h)
        for (std::int64_t w = 0; w < W; ++w) ex += xt.at(b, 0, h, w) * xt.at(b, 0, h, w);
      for (std::int64_t h = 0; h < H; ++h)
        for (std::int64_t k = 0; k <= W / 2; ++k) {
          const double re = f.at(b, 0, h, k), im = f.at(b, 1, h, k);
          ef += (k == 0 || k == W / 2 ? 1.0 : 2.0) * (re * re + im * im);
        }
      worst_p = std::max(worst_p, std::abs(ef / ex - 1.0));
    }
  }
  return {worst_id <= 1e-5 && worst_p <= 1e-5,
          printf_str("identity filter max err %.2e; Parseval rel err %.2e", worst_id, worst_p)};
}

Outcome evidential(const fs::path&) {
  auto pred = [](const Shape& s, double g, double nu, double a, double b) {
    return model::NIGPrediction<double>{Var<double>::constant(Tensor<double>(s, g)), Var<double>::constant(Tensor<double>(s, nu)),
                                        Var<double>::constant(Tensor<double>(s, a)), Var<double>::constant(Tensor<double>(s, b))};
  };
  CounterRng rng(derive_key({0xe71d, 7}));
  const int draws = 120;
  double worst = 0;
  for (int i = 0; i < draws; ++i) {
    const double y = rng.uniform(-2, 2), g = rng.uniform(-2, 2), nu = rng.uniform(0.1, 5);
    const double a = rng.uniform(1.1, 6), b = rng.uniform(0.05, 3);
    const Shape s{1, 1, 1, 1};
    const double loss = model::evidential_nll(pred(s, g, nu, a, b), Tensor<double>(s, y)).value()[0];
    worst = std::max(worst, std::abs(loss + std::log(atmos::testing::marginal_by_quadrature(y, g, nu, a, b))));
  }
  // Regularizer at Y = gamma, pixelwise random parameters.
  const Shape s{2, 1, 8, 8};
  const auto gamma = random_tensor(s, 41);
  model::NIGPrediction<double> p{Var<double>::constant(gamma), Var<double>::constant(random_tensor(s, 42, 0.1, 5)),
                                 Var<double>::constant(random_tensor(s, 43, 1.1, 6)),
                                 Var<double>::constant(random_tensor(s, 44, 0.05, 3))};
  const double reg = model::evidential_reg(p, gamma).value()[0];
  return {worst <= 1e-6 && reg == 0.0,
          printf_str("%d draws, max |nll + ln quadrature| %.2e; reg at Y=gamma %g", draws, worst, reg)};
}

// ---------------------------------------------------------------- 8

Outcome overfit(const fs::path& work) {
  const auto cfg = overfit_preset();
  const auto dir = fresh_dir(work / "overfit");
  const auto archive = run_data_pipeline(cfg, dir);
  const auto ds = data::read_archive(archive.string());
  bool shape_ok = ds.slices.size() == 8 && cfg.batch_size == 3 && cfg.max_steps <= 500 &&
                  cfg.network.channels == std::array<std::int64_t, 4>{16, 32, 64, 128};
  for (const auto& s : ds.slices) shape_ok = shape_ok && s.rows == 64 && s.cols == 64;

  const auto res = train(cfg, archive, dir / "run");
  const auto val = read_csv((dir / "run" / "val.csv").string());
  const auto col = val.column("mae_masked");
  const double mae0 = std::stod(val.rows.front().at(col)), mae_end = std::stod(val.rows.back().at(col));
  const auto ev = evaluate(res.checkpoints.back(), archive, "all", dir / "eval.csv");
  const double gain = ev.model_mean.full.psnr - ev.baseline_mean.full.psnr;
  return {shape_ok && res.steps <= 500 && mae_end <= 0.5 * mae0 && gain >= 3.0,
          printf_str("%zu slices, %lld steps; masked MAE %.4f -> %.4f (x%.3f); PSNR %.2f vs baseline %.2f (%+.2f dB)",
                     ds.slices.size(), static_cast<long long>(res.steps), mae0, mae_end, mae_end / mae0,
                     ev.model_mean.full.psnr, ev.baseline_mean.full.psnr, gain)};
}

// ---------------------------------------------------------------- 9, 10, 11

Outcome metric_pins(const fs::path&) {
  auto random_image = [](std::int64_t r, std::int64_t c, std::uint64_t seed) {
    Image im(r, c);
    CounterRng rng(derive_key({seed, 0x1a6e}));
    for (auto& v : im.v) v = rng.uniform();
    return im;
  };
  double self = 0, offset = 0, oracle = 0;
  for (std::uint64_t s = 0; s < 4; ++s) {
    const auto x = random_image(32 + 8 * static_cast<std::int64_t>(s), 40, s);
    self = std::max(self, std::abs(*ssim(x, x, 1.0) - 1.0));
    Image a(24, 24, 0.1 * static_cast<double>(s)), b(24, 24, 0.1 * static_cast<double>(s) + 0.1);
    offset = std::max(offset, std::abs(psnr(a, b, 1.0) - 20.0));
    auto y = x;
    CounterRng rng(derive_key({s, 0x55}));
    for (auto& v : y.v) v = std::clamp(v + 0.3 * (rng.uniform() - 0.5), 0.0, 1.0);
    oracle = std::max(oracle, std::abs(*ssim(x, y, 1.0) - atmos::testing::ssim_oracle(x, y, 1.0)));
  }
  return {self <= 1e-12 && offset <= 1e-6 && oracle <= 1e-6,
          printf_str("|SSIM(x,x)-1| %.1e; |PSNR-20| %.1e dB; SSIM vs oracle %.1e", self, offset, oracle)};
}

ExperimentConfig replay_config() {
  auto c = desk_preset();
  c.n_scenes = 2;
  c.network.channels = {4, 8, 8, 8};
  c.network.n_heads = 2;
  c.network.gate_hidden = 4;
  c.network.disc_channels = {4, 4, 8, 8};
  c.epochs = 2;
  c.max_steps = 3;
  c.val_slices = 2;
  return c;
}

Outcome replay(const fs::path& work) {
  const auto cfg = replay_config();
  std::vector<fs::path> roots;
  for (const char* name : {"replay_a", "replay_b"}) {
    const auto dir = fresh_dir(work / name);
    const auto archive = run_data_pipeline(cfg, dir);
    const auto res = train(cfg, archive, dir / "run");
    evaluate(res.checkpoints.back(), archive, cfg.eval_partition, dir / "eval.csv");
    roots.push_back(dir);
  }
  // Every file of both trees: scenes, pairs, archive, checkpoints and CSVs.
  std::set<fs::path> files;
  for (const auto& root : roots)
    for (const auto& e : fs::recursive_directory_iterator(root))
      if (e.is_regular_file()) files.insert(fs::relative(e.path(), root));
  int differ = 0;
  std::string first;
  for (const auto& f : files) {
    const auto a = roots[0] / f, b = roots[1] / f;
    if (!fs::exists(a) || !fs::exists(b) || slurp(a) != slurp(b)) {
      if (!differ++) first = f.string();
    }
  }
  bool key_files = true;
  for (const char* f : {"dataset.atmb", "run/loss.csv", "run/val.csv", "eval.csv"})
    key_files = key_files && files.count(f) == 1;
  return {differ == 0 && key_files,
          printf_str("%zu files compared, %d differ%s%s", files.size(), differ, differ ? "; first " : "",
                     first.c_str())};
}

Outcome archive_robustness(const fs::path& work) {
  auto cfg = desk_preset();
  cfg.n_scenes = 2;
  const auto dir = fresh_dir(work / "archive");
  data::DatasetManifest m;
  const auto slices = build_slices(cfg, simulate_all(cfg, generate_scenes(cfg)), m);
  const auto path = dir / "a.atmb", again = dir / "b.atmb";
  data::write_archive(path.string(), slices, m);
  const auto d = data::read_archive(path.string());
  auto m2 = d.manifest;
  data::write_archive(again.string(), d.slices, m2);
  const bool round_trip = d.slices == slices && d.manifest == m && slurp(path) == slurp(again);

  // One flipped byte at several places in every slice record.
  const auto bytes = data::read_file(path.string());
  const auto header = bytes.size() - m.slices.back().offset - m.slices.back().length;
  int detected = 0, trials = 0;
  for (std::size_t k = 0; k < m.slices.size(); ++k) {
    const auto len = m.slices[k].length;
    for (std::uint64_t at : {std::uint64_t{0}, std::uint64_t{5}, len / 3, len / 2 + 1, len - 100, len - 5, len - 1}) {
      auto bad = bytes;
      bad[header + m.slices[k].offset + at] ^= 0x04;
      write_bytes(again, bad);
      ++trials;
      try {
        data::read_archive(again.string());
      } catch (const data::ArchiveError& e) {
        detected += e.kind() == data::ArchiveError::Kind::kChecksumMismatch &&
                    std::string(e.what()).find(slices[k].label()) != std::string::npos;
      }
    }
  }
  return {round_trip && detected == trials,
          printf_str("%zu slices round trip %s; %d/%d corruptions reported with slice label", slices.size(),
                     round_trip ? "bitwise" : "DIFFERS", detected, trials)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string work = (fs::temp_directory_path() / "atmos_acceptance").string();
  std::vector<int> only;
  app.add_option("--work", work, "scratch directory");
  app.add_option("--only", only, "criterion numbers to run");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all = {
      {1, "zero-tau equivalence", 10, zero_tau},
      {2, "attenuation physics", 30, attenuation},
      {3, "dataset arithmetic", 0, dataset_arithmetic},
      {4, "gradient suite", 600, gradients},
      {5, "gate/MoE properties", 0, gate_moe},
      {6, "spectral identity", 0, spectral},
      {7, "evidential oracle", 120, evidential},
      {8, "overfit sanity", 1800, overfit},
      {9, "metric pins", 0, metric_pins},
      {10, "determinism replay", 0, replay},
      {11, "archive robustness", 0, archive_robustness},
  };
  fs::create_directories(work);
  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(work);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.budget_s == 0 || secs < c.budget_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::string budget = c.budget_s > 0 ? printf_str(" (limit %.0f s)", c.budget_s) : "";
    std::printf("%s %2d %-22s %8.2f s%s  %s\n", pass ? "PASS" : "FAIL", c.id, c.name, secs, budget.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  return std::min(failed, 100);
}
