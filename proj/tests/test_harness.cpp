#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "atmos/harness/evaluate.hpp"
#include "atmos/harness/pipeline.hpp"
#include "atmos/harness/report.hpp"
#include "atmos/harness/train.hpp"
#include "metric_oracle.hpp"

using namespace atmos;
using namespace atmos::harness;
namespace fs = std::filesystem;
using atmos::testing::ssim_oracle;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("atmos_harness_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

Image random_image(std::int64_t r, std::int64_t c, std::uint64_t seed) {
  Image im(r, c);
  CounterRng rng(seed);
  for (auto& v : im.v) v = rng.uniform();
  return im;
}

// 2 scenes x 1 longitude of 32x32 at one wavelength and a small network.
ExperimentConfig tiny_run() {
  ExperimentConfig c = desk_preset();
  c.n_scenes = 2;
  c.wavelengths = {532};
  c.scene_grid = {2, 24, 20, 14000.0, 16000.0};
  c.target_grid = {1, 32, 32, 10000.0, 16000.0};
  c.network.channels = {4, 8, 8, 8};
  c.network.n_heads = 2;
  c.network.gate_hidden = 4;
  c.network.disc_channels = {4, 4, 8, 8};
  c.network.height = c.network.width = 32;
  c.epochs = 2;
  c.batch_size = 1;
  c.checkpoint_every = 1;
  c.train_partition = "all";
  c.eval_partition = "all";
  c.val_slices = 2;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

// ---------------------------------------------------------------- metrics

TEST(Metrics, IdentityPins) {
  const auto x = random_image(24, 30, 1);
  const std::vector<std::uint8_t> m(x.v.size(), 1);
  const auto r = compute_metrics(x, x, m);
  EXPECT_EQ(r.full.mae, 0.0);
  EXPECT_DOUBLE_EQ(r.full.ssim, 1.0);
  EXPECT_EQ(r.full.psnr, kPsnrCap);
  ASSERT_TRUE(r.masked);
  EXPECT_DOUBLE_EQ(r.masked->ssim, 1.0);
}

TEST(Metrics, ConstantOffsetIsTwentyDecibels) {
  Image a(16, 16, 0.3), b(16, 16, 0.4);
  EXPECT_NEAR(psnr(a, b, 1.0), 20.0, 1e-6);
}

TEST(Metrics, SsimMatchesDirectWindowOracle) {
  for (std::uint64_t s = 0; s < 3; ++s) {
    auto a = random_image(20, 27, 10 + s), b = a;
    CounterRng rng(99 + s);
    for (auto& v : b.v) v = std::clamp(v + 0.2 * (rng.uniform() - 0.5), 0.0, 1.0);
    EXPECT_NEAR(*ssim(a, b, 1.0), ssim_oracle(a, b, 1.0), 1e-6);
  }
}

TEST(Metrics, PsnrDecreasesWithNoiseAndMaeIsBounded) {
  const auto x = random_image(32, 32, 3);
  double last = kPsnrCap + 1;
  for (double amp : {0.01, 0.05, 0.2}) {
    auto y = x;
    CounterRng rng(4);
    for (auto& v : y.v) v = std::clamp(v + amp * rng.normal(), 0.0, 1.0);
    const double p = psnr(x, y, 1.0);
    EXPECT_LT(p, last);
    last = p;
    const double e = mae(x, y);
    EXPECT_GE(e, 0.0);
    EXPECT_LE(e, 1.0);
  }
}

TEST(Metrics, EmptyMaskIsAbsentNotZero) {
  const auto x = random_image(16, 16, 5), y = random_image(16, 16, 6);
  const auto r = compute_metrics(x, y, std::vector<std::uint8_t>(x.v.size(), 0));
  EXPECT_FALSE(r.masked.has_value());
  EXPECT_GT(r.full.mae, 0.0);
}

TEST(Metrics, MaskedValuesUseOnlyMaskedPixels) {
  Image a(16, 16, 0.5), b(16, 16, 0.5);
  std::vector<std::uint8_t> m(a.v.size(), 0);
  for (std::size_t i = 0; i < 16; ++i) {
    m[i] = 1;
    b.v[i] = 0.6;
  }
  const auto r = compute_metrics(a, b, m);
  EXPECT_NEAR(r.masked->mae, 0.1, 1e-12);
  EXPECT_NEAR(r.full.mae, 0.1 * 16 / 256, 1e-12);
  EXPECT_NEAR(r.masked->psnr, 20.0, 1e-6);
}

TEST(Metrics, AggregateIsMeanOfRows) {
  std::vector<MetricRow> rows;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto a = random_image(16, 16, 20 + s), b = random_image(16, 16, 40 + s);
    std::vector<std::uint8_t> m(a.v.size(), s == 2 ? 0 : 1);
    rows.push_back(compute_metrics(a, b, m));
  }
  const auto agg = aggregate(rows);
  double p = 0, mm = 0;
  for (const auto& r : rows) p += r.full.psnr;
  for (const auto& r : rows)
    if (r.masked) mm += r.masked->mae;
  EXPECT_NEAR(agg.full.psnr, p / 5, 1e-9);
  EXPECT_NEAR(agg.masked->mae, mm / 4, 1e-9);
  EXPECT_THROW(aggregate({}), ConfigError);
}

// ---------------------------------------------------------------- config

TEST(Config, PaperDefaults) {
  const auto c = desk_preset();
  EXPECT_EQ(c.optimizer.lr, 1e-4);
  EXPECT_EQ(c.batch_size, 3);
  EXPECT_EQ(c.epochs, 20);
  EXPECT_EQ(c.checkpoint_every, 5);
  EXPECT_EQ(c.optimizer.weight_decay, 0.01);
  EXPECT_EQ(c.optimizer.beta1, 0.9);
  EXPECT_EQ(c.optimizer.beta2, 0.999);
  EXPECT_NO_THROW(preset("full").validate());
  EXPECT_NO_THROW(preset("overfit").validate());
  EXPECT_THROW(preset("huge"), ConfigError);
}

TEST(Config, JsonRoundTripAndOverlay) {
  auto c = tiny_run();
  c.loss.r1_gamma = 3.5;
  c.seed = 77;
  const auto back = from_json(to_json(c));
  EXPECT_TRUE(back == c);
  const auto over = overlay(desk_preset(), json{{"epochs", 3}, {"optimizer", {{"lr", 2e-4}}}});
  EXPECT_EQ(over.epochs, 3);
  EXPECT_EQ(over.optimizer.lr, 2e-4);
  EXPECT_EQ(over.batch_size, 3);

  const auto dir = temp_dir("config");
  save_config((dir / "c.json").string(), c);
  EXPECT_TRUE(load_config((dir / "c.json").string()) == c);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(overlay(desk_preset(), json{{"epoch", 3}}), ConfigError);
  EXPECT_THROW(overlay(desk_preset(), json{{"optimizer", {{"learning_rate", 1}}}}), ConfigError);
  EXPECT_THROW(overlay(desk_preset(), json{{"batch_size", 0}}).validate(), ConfigError);
}

// ---------------------------------------------------------------- optimizer

TEST(Optim, AdamWMatchesHandComputedSteps) {
  nn::ParamStore<double> store(1);
  auto p = store.create("p", Shape{2}, nn::InitKind::kZeros, 1);
  p.mutable_value()[0] = 1.0;
  p.mutable_value()[1] = -2.0;
  AdamW<double> opt(store, 0.9, 0.999, 0.01, 1e-8);
  const double lr = 0.1;
  // mean(p^2) over two entries has gradient p; reference recursion written out longhand.
  double ref[2] = {1.0, -2.0}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int t = 1; t <= 3; ++t) {
    store.zero_grad();
    ops::mean(ops::square(p)).backward();
    opt.step(lr);
    for (int i = 0; i < 2; ++i) {
      const double g = ref[i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      ref[i] -= lr * (mh / (std::sqrt(vh) + 1e-8) + 0.01 * ref[i]);
    }
    EXPECT_NEAR(p.value()[0], ref[0], 1e-12);
    EXPECT_NEAR(p.value()[1], ref[1], 1e-12);
  }
  EXPECT_EQ(opt.steps(), 3);
}

TEST(Optim, FrozenParametersAreUntouched) {
  nn::ParamStore<double> store(2);
  auto p = store.create("p", Shape{1}, nn::InitKind::kOnes, 1);
  AdamW<double> opt(store, 0.9, 0.999, 0.01, 1e-8);
  opt.step(0.1);  // no gradient yet
  EXPECT_EQ(p.value()[0], 1.0);
}

TEST(Optim, Schedules) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 1e-4, 1e-6), 1e-4);
  EXPECT_NEAR(cosine_lr(50, 100, 1e-4, 1e-6), 0.5 * (1e-4 + 1e-6), 1e-18);
  EXPECT_DOUBLE_EQ(cosine_lr(100, 100, 1e-4, 1e-6), 1e-6);
  EXPECT_DOUBLE_EQ(exponential_lr(0, 1e-4, 0.98), 1e-4);
  EXPECT_NEAR(exponential_lr(3, 1e-4, 0.98), 1e-4 * 0.98 * 0.98 * 0.98, 1e-18);
  EXPECT_DOUBLE_EQ(annealed_noise(0, 100, 0.1, 0.5), 0.1);
  EXPECT_NEAR(annealed_noise(25, 100, 0.1, 0.5), 0.05, 1e-15);
  EXPECT_EQ(annealed_noise(50, 100, 0.1, 0.5), 0.0);
  EXPECT_EQ(annealed_noise(10, 100, 0.1, 0.0), 0.0);
}

// ---------------------------------------------------------------- checkpoint

TEST(Checkpoint, RoundTripCorruptionAndShapeMismatch) {
  const auto cfg = tiny_run();
  model::Generator<float> g(cfg.network);
  Checkpoint ck{cfg, 3, 17, {}};
  append_params(ck, "generator", g.params());
  const auto dir = temp_dir("ckpt");
  const auto path = (dir / "a.atmp").string();
  write_checkpoint(path, ck);

  const auto back = read_checkpoint(path);
  EXPECT_TRUE(back.config == cfg);
  EXPECT_EQ(back.epoch, 3);
  EXPECT_EQ(back.step, 17);
  auto other_cfg = cfg;
  other_cfg.network.seed = 9;
  model::Generator<float> h(other_cfg.network);
  load_params(back, "generator", h.params());
  for (std::size_t k = 0; k < g.params().entries().size(); ++k)
  {
    const auto a = g.params().entries()[k].var.value().values(), b = h.params().entries()[k].var.value().values();
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin(), b.end())) << g.params().entries()[k].name;
  }

  auto wider = cfg.network;
  wider.channels = {8, 8, 8, 8};
  model::Generator<float> w(wider);
  EXPECT_THROW(load_params(back, "generator", w.params()), data::ArchiveError);

  auto bytes = slurp(path);
  bytes[bytes.size() - 10] ^= 0x20;
  std::ofstream(dir / "b.atmp", std::ios::binary) << bytes;
  try {
    read_checkpoint((dir / "b.atmp").string());
    FAIL() << "corruption not detected";
  } catch (const data::ArchiveError& e) {
    EXPECT_EQ(e.kind(), data::ArchiveError::Kind::kChecksumMismatch);
  }
}

// ---------------------------------------------------------------- io

TEST(Io, PgmRoundTrip) {
  auto im = random_image(7, 13, 8);
  const auto path = (temp_dir("pgm") / "x.pgm").string();
  write_pgm16(path, im);
  const auto back = read_pgm16(path);
  ASSERT_EQ(back.rows, 7);
  ASSERT_EQ(back.cols, 13);
  for (std::size_t i = 0; i < im.v.size(); ++i) EXPECT_NEAR(back.v[i], im.v[i], 0.5 / 65535 + 1e-12);
  const auto bytes = slurp(path);
  EXPECT_EQ(bytes.substr(0, 16), "P5\n13 7\n65535\n" + bytes.substr(14, 2));
  EXPECT_EQ(bytes.size(), 14 + 7 * 13 * 2u);
}

TEST(Io, FmtRoundTripsExactly) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, -2.5e17}) EXPECT_EQ(std::stod(fmt(v)), v);
  EXPECT_EQ(fmt(std::nan("")), "nan");
}

// ---------------------------------------------------------------- pipeline

TEST(Pipeline, BuildDatasetSliceCount) {
  auto cfg = desk_preset();
  cfg.n_scenes = 2;
  const auto dir = temp_dir("count");
  const auto archive = run_data_pipeline(cfg, dir);
  const auto ds = data::read_archive(archive.string());
  EXPECT_EQ(ds.slices.size(), static_cast<std::size_t>(2 * cfg.target_grid.n_lon * 2));
  EXPECT_EQ(ds.manifest.slices.size(), ds.slices.size());
  for (const auto& s : ds.slices) {
    EXPECT_EQ(s.rows, 64);
    EXPECT_EQ(s.cols, 64);
  }
}

TEST(Pipeline, ZeroTauBaselineIsPerfect) {
  const auto cfg = tiny_run();
  const auto v = data::with_zero_extinction(generate_scenes(cfg).at(0));
  const auto pair = data::simulate(v, data::LidarConfig{v.wavelength, cfg.lidar_eta});
  for (const auto& s : data::slice_meridional(data::regrid(pair, cfg.target_grid), cfg.mask_threshold)) {
    const auto smp = make_sample(s, cfg.norm, 0.0);
    for (float m : smp.mask) ASSERT_EQ(m, 0.0f);
    const auto r = compute_metrics(Image::from(s.rows, s.cols, smp.atb_masked), Image::from(s.rows, s.cols, smp.y),
                                   std::vector<std::uint8_t>(smp.mask.size(), 0));
    EXPECT_EQ(r.full.mae, 0.0);
    EXPECT_EQ(r.full.psnr, kPsnrCap);
    EXPECT_DOUBLE_EQ(r.full.ssim, 1.0);
    EXPECT_FALSE(r.masked);
  }
}

TEST(Samples, PaddingAndMaskedInput) {
  const auto cfg = tiny_run();
  const auto pairs = simulate_all(cfg, generate_scenes(cfg));
  data::DatasetManifest m;
  const auto slices = build_slices(cfg, pairs, m);
  const auto s = make_sample(slices[0], cfg.norm, 0.3);
  const auto again = make_sample(slices[0], cfg.norm, 0.3);
  EXPECT_EQ(s.mask, again.mask);  // fixed per slice
  for (std::size_t i = 0; i < s.mask.size(); ++i) {
    if (slices[0].mask[i]) {
      EXPECT_EQ(s.mask[i], 1.0f);
    }
    EXPECT_EQ(s.atb_masked[i], s.mask[i] ? 0.0f : s.atb[i]);
  }
  Sample odd = s;
  odd.rows = 20;
  odd.cols = 24;
  for (auto* v : {&odd.atb, &odd.y, &odd.mask, &odd.atb_masked}) v->resize(20 * 24);
  const auto b = make_batch({&odd});
  EXPECT_EQ(b.input.shape(), (Shape{1, 2, 32, 32}));
  EXPECT_EQ(b.y.shape(), (Shape{1, 1, 20, 24}));
  EXPECT_EQ(b.input[static_cast<std::size_t>(25 * 32 + 30)], 0.0f);
}

// ---------------------------------------------------------------- train / eval

class RunTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(temp_dir("run"));
    archive_ = new fs::path(run_data_pipeline(tiny_run(), *dir_ / "data"));
  }
  static void TearDownTestSuite() {
    delete dir_;
    delete archive_;
  }
  static fs::path* dir_;
  static fs::path* archive_;
};
fs::path* RunTest::dir_ = nullptr;
fs::path* RunTest::archive_ = nullptr;

TEST_F(RunTest, ZeroEpochsEmitsOnlyInitCheckpoint) {
  auto cfg = tiny_run();
  cfg.epochs = 0;
  const auto res = train(cfg, *archive_, *dir_ / "zero");
  ASSERT_EQ(res.checkpoints.size(), 1u);
  EXPECT_EQ(res.checkpoints[0].filename(), "epoch_0000.atmp");
  EXPECT_EQ(res.steps, 0);
  int n = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(*dir_ / "zero" / "checkpoints")) ++n;
  EXPECT_EQ(n, 1);
  const auto log = read_csv((*dir_ / "zero" / "loss.csv").string());
  EXPECT_TRUE(log.rows.empty());
  EXPECT_EQ(log.header.size(), 10u);
}

TEST_F(RunTest, TrainingIsDeterministicAndEvaluates) {
  const auto cfg = tiny_run();
  const auto a = train(cfg, *archive_, *dir_ / "a");
  const auto b = train(cfg, *archive_, *dir_ / "b");
  EXPECT_EQ(a.steps, 4);  // 2 slices, batch 1, 2 epochs
  const auto la = slurp(*dir_ / "a" / "loss.csv");
  EXPECT_EQ(la, slurp(*dir_ / "b" / "loss.csv"));
  EXPECT_EQ(slurp(*dir_ / "a" / "val.csv"), slurp(*dir_ / "b" / "val.csv"));
  EXPECT_EQ(read_csv((*dir_ / "a" / "loss.csv").string()).rows.size(), 4u);
  ASSERT_EQ(a.checkpoints.size(), 3u);  // init + epochs 1 and 2
  EXPECT_TRUE(read_checkpoint(a.checkpoints.back().string()).config == cfg);

  const auto csv = *dir_ / "a" / "eval.csv";
  const auto r = evaluate(a.checkpoints.back(), *archive_, "all", csv, *dir_ / "a" / "images");
  ASSERT_EQ(r.slices.size(), 2u);
  const auto t = read_csv(csv.string());
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_EQ(t.rows.back()[0], "mean");
  const double mean_psnr = (r.slices[0].model.full.psnr + r.slices[1].model.full.psnr) / 2;
  EXPECT_NEAR(std::stod(t.rows.back()[t.column("psnr")]), mean_psnr, 1e-9);
  for (const char* kind : {"input", "gamma", "target", "aleatoric", "epistemic"}) {
    std::string stem = r.slices[0].label;
    std::replace(stem.begin(), stem.end(), '/', '_');
    EXPECT_TRUE(fs::exists(*dir_ / "a" / "images" / (stem + "_" + kind + ".pgm"))) << kind;
  }
  const auto r2 = evaluate(a.checkpoints.back(), *archive_, "all", *dir_ / "a" / "eval2.csv");
  EXPECT_EQ(slurp(csv), slurp(*dir_ / "a" / "eval2.csv"));

  const auto rep = render_report({csv, *dir_ / "a" / "val.csv"}, *dir_ / "a" / "report", *dir_ / "a" / "images");
  EXPECT_EQ(rep.difference_images.size(), 2u);
  const auto md = slurp(rep.summary);
  EXPECT_NE(md.find("baseline"), std::string::npos);
  EXPECT_NE(md.find("val.csv"), std::string::npos);
}

TEST_F(RunTest, EvaluationErrors) {
  auto cfg = tiny_run();
  cfg.epochs = 0;
  const auto res = train(cfg, *archive_, *dir_ / "err");
  auto ds = data::read_archive(archive_->string());
  for (auto& e : ds.manifest.slices) e.partition = "train";
  const auto train_only = *dir_ / "err" / "train_only.atmb";
  data::write_archive(train_only.string(), ds.slices, ds.manifest);
  EXPECT_THROW(evaluate(res.checkpoints[0], train_only, "test", *dir_ / "err" / "e.csv"), ConfigError);
  EXPECT_FALSE(fs::exists(*dir_ / "err" / "e.csv"));
  auto other = cfg.network;
  other.channels = {4, 8, 8, 16};
  EXPECT_THROW(evaluate(res.checkpoints[0], *archive_, "all", *dir_ / "err" / "e.csv", std::nullopt, &other),
               data::ArchiveError);
  other = cfg.network;
  other.seed = 5;  // weights come from the checkpoint, so only shapes matter
  EXPECT_NO_THROW(evaluate(res.checkpoints[0], *archive_, "all", *dir_ / "err" / "e.csv", std::nullopt, &other));
}

TEST_F(RunTest, NonFiniteLossRecordsFault) {
  auto cfg = tiny_run();
  cfg.optimizer.lr = cfg.optimizer.lr_floor = 1e30;
  cfg.optimizer.d_lr = 1e30;
  cfg.epochs = 5;
  try {
    train(cfg, *archive_, *dir_ / "fault");
    FAIL() << "expected a training fault";
  } catch (const TrainingFault& f) {
    const auto j = json::parse(slurp(*dir_ / "fault" / "fault.json"));
    EXPECT_EQ(j["term"], f.term());
    EXPECT_EQ(j["step"].get<int>(), 0);  // the first D update already blows up the G step
    EXPECT_NE(std::string(f.what()).find("step 0"), std::string::npos);
  }
}
