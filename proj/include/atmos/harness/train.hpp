#pragma once

// Adversarial training loop: one discriminator step (logistic loss + R1) and
// one generator step (weighted objective) per batch, AdamW for both,
// cosine-annealed generator rate, per-epoch exponential discriminator rate.

#include <filesystem>
#include <fstream>

#include "atmos/harness/checkpoint.hpp"
#include "atmos/harness/io.hpp"
#include "atmos/harness/optim.hpp"
#include "atmos/harness/samples.hpp"

namespace atmos::harness {

struct TrainResult {
  std::filesystem::path run_dir;
  std::vector<std::filesystem::path> checkpoints;
  std::int64_t steps = 0;
  std::optional<MetricRow> initial_val, final_val;
};

inline const char* kValCsvHeader =
    "epoch,step,psnr,ssim,mae,psnr_masked,ssim_masked,mae_masked";

inline std::vector<Sample> load_samples(const data::Dataset& ds, const std::vector<std::size_t>& idx,
                                        const ExperimentConfig& cfg) {
  std::vector<Sample> out;
  for (auto i : idx) out.push_back(make_sample(ds.slices[i], ds.manifest.norm, cfg.train_mask_coverage));
  return out;
}

/// Metrics of gamma against the target, aggregated over `samples` (noise off).
template <typename T>
MetricRow evaluate_samples(const model::Generator<T>& g, const std::vector<Sample>& samples, double data_range) {
  std::vector<MetricRow> rows;
  for (const auto& s : samples) {
    const auto p = predict(g, make_batch({&s}), {});
    std::vector<std::uint8_t> m(s.mask.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = s.mask[i] != 0.0f;
    rows.push_back(compute_metrics(Image::from(s.rows, s.cols, p.gamma.value().values()),
                                   Image::from(s.rows, s.cols, s.y), m, data_range));
  }
  return aggregate(rows);
}

inline std::string val_row(std::int64_t epoch, std::int64_t step, const MetricRow& r) {
  std::string line = std::to_string(epoch) + "," + std::to_string(step) + "," + fmt(r.full.psnr) + "," +
                     fmt(r.full.ssim) + "," + fmt(r.full.mae);
  if (r.masked)
    line += "," + fmt(r.masked->psnr) + "," + fmt(r.masked->ssim) + "," + fmt(r.masked->mae);
  else
    line += ",,,";
  return line;
}

inline std::string loss_row(std::int64_t step, const model::LossReport& r) {
  return std::to_string(step) + "," + fmt(r.ev) + "," + fmt(r.adv) + "," + fmt(r.hrf) + "," + fmt(r.fm) + "," +
         fmt(r.l1) + "," + fmt(r.mix) + "," + fmt(r.d_adv) + "," + fmt(r.r1) + "," + fmt(r.total);
}

/// Trains on `cfg.train_partition` of the archive and writes into `run_dir`:
/// config.json, loss.csv, val.csv and checkpoints/epoch_NNNN.atmp.
inline TrainResult train(const ExperimentConfig& cfg, const std::filesystem::path& archive,
                         const std::filesystem::path& run_dir, std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  using T = float;
  cfg.validate();
  const auto ds = data::read_archive(archive.string());
  const auto train_idx = ds.manifest.indices(cfg.train_partition);
  if (train_idx.empty()) throw ConfigError("training partition '" + cfg.train_partition + "' is empty");
  const auto samples = load_samples(ds, train_idx, cfg);

  // Fixed validation subset: evaluation partition if it has slices, else training.
  auto val_idx = ds.manifest.indices(cfg.eval_partition);
  if (val_idx.empty()) val_idx = train_idx;
  if (static_cast<std::int64_t>(val_idx.size()) > cfg.val_slices) val_idx.resize(static_cast<std::size_t>(cfg.val_slices));
  const auto val = load_samples(ds, val_idx, cfg);

  fs::create_directories(run_dir / "checkpoints");
  save_config((run_dir / "config.json").string(), cfg);
  std::ofstream loss_csv(run_dir / "loss.csv", std::ios::trunc);
  std::ofstream val_csv(run_dir / "val.csv", std::ios::trunc);
  loss_csv << model::LossReport::kCsvHeader << "\n";
  val_csv << kValCsvHeader << "\n";

  model::Generator<T> gen(cfg.network);
  model::Discriminator<T> disc(cfg.network);
  model::HrfExtractor<T> hrf(derive_key({cfg.seed, 0x4ef0ULL}));
  const auto& oc = cfg.optimizer;
  AdamW<T> opt_g(gen.params(), oc.beta1, oc.beta2, oc.weight_decay, oc.eps);
  AdamW<T> opt_d(disc.params(), oc.beta1, oc.beta2, oc.weight_decay, oc.eps);

  TrainResult res;
  res.run_dir = run_dir;
  std::int64_t step = 0;
  auto save = [&](std::int64_t epoch) {
    Checkpoint ck{cfg, epoch, step, {}};
    append_params(ck, "generator", gen.params());
    append_params(ck, "discriminator", disc.params());
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%04lld.atmp", static_cast<long long>(epoch));
    const auto path = run_dir / "checkpoints" / name;
    write_checkpoint(path.string(), ck);
    res.checkpoints.push_back(path);
  };

  res.initial_val = evaluate_samples(gen, val, cfg.data_range);
  val_csv << val_row(0, 0, *res.initial_val) << "\n";
  save(0);

  const auto n = static_cast<std::int64_t>(samples.size());
  const std::int64_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  std::int64_t total = cfg.epochs * per_epoch;
  if (cfg.max_steps >= 0) total = std::min(total, cfg.max_steps);

  std::vector<Var<T>> d_params;
  for (auto& e : disc.params().entries()) d_params.push_back(e.var);
  const auto& w = cfg.loss;
  std::int64_t epoch = 0;
  bool saved_last = true;
  try {
    for (epoch = 1; epoch <= cfg.epochs && step < total; ++epoch) {
      std::vector<std::size_t> order(static_cast<std::size_t>(n));
      std::iota(order.begin(), order.end(), std::size_t{0});
      CounterRng shuffle(derive_key({cfg.seed, 0x5f0ffULL, static_cast<std::uint64_t>(epoch)}));
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.next_u64() % i]);
      const double lr_d = exponential_lr(epoch - 1, oc.d_lr, oc.d_decay);

      for (std::int64_t k = 0; k < per_epoch && step < total; ++k) {
        std::vector<const Sample*> items;
        for (std::int64_t j = k * cfg.batch_size; j < std::min(n, (k + 1) * cfg.batch_size); ++j)
          items.push_back(&samples[order[static_cast<std::size_t>(j)]]);
        const Batch b = make_batch(items);
        const auto y = Var<T>::constant(b.y), m = Var<T>::constant(b.mask), am = Var<T>::constant(b.atb_masked);

        const model::ForwardContext ctx{
            true, annealed_noise(step, total, cfg.network.sigma_noise, cfg.noise_anneal_fraction),
            derive_key({cfg.seed, 0x6a7eULL, static_cast<std::uint64_t>(step)})};
        const auto pred = predict(gen, b, ctx);

        // Discriminator step.
        model::LossReport rep;
        disc.params().zero_grad();
        const auto d_real = disc.forward(y, m, am);
        const auto d_fake = disc.forward(pred.gamma.detach(), m, am);
        auto d_loss = model::discriminator_adversarial(d_real.logits, d_fake.logits);
        model::detail::require_finite(d_loss, "d_adv");
        d_loss.backward();
        rep.d_adv = static_cast<double>(d_loss.value()[0]);
        if (w.r1_gamma > 0) {
          const auto real_in = ops::concat_channels<T>({y, m, am}).value();
          rep.r1 = model::r1_penalty<T>(
              [&](const Var<T>& x, model::ActivationPattern<T>* pat) { return disc.forward(x, pat).logits; }, real_in,
              w.r1_gamma, d_params);
        }
        opt_d.step(lr_d);

        // Generator step; the discriminator is a fixed function here.
        disc.params().set_requires_grad(false);
        gen.params().zero_grad();
        const auto g_out = disc.forward(pred.gamma, m, am);
        const auto real_feats = disc.forward(y, m, am).features;
        model::GeneratorTerms<T> terms;
        terms.ev = ops::add(model::evidential_nll(pred, b.y),
                            ops::mul_scalar(model::evidential_reg(pred, b.y), static_cast<T>(w.ev_reg)));
        terms.adv = model::generator_adversarial(g_out.logits);
        terms.hrf = hrf.loss(pred.gamma, b.y);
        terms.fm = model::feature_matching(real_feats, g_out.features);
        terms.l1 = model::l1_loss(pred.gamma, b.y);
        terms.mix = model::physics_mix_loss(pred.gamma, b.atb, b.mask, b.y);
        auto [total_loss, g_rep] = model::total_generator_loss(terms, w);
        disc.params().set_requires_grad(true);
        total_loss.backward();
        opt_g.step(cosine_lr(step, total, oc.lr, oc.lr_floor));

        g_rep.d_adv = rep.d_adv;
        g_rep.r1 = rep.r1;
        loss_csv << loss_row(step, g_rep) << std::endl;
        ++step;
        saved_last = false;
        if (log && (step % 25 == 0 || step == total))
          *log << "step " << step << "/" << total << " total " << g_rep.total << " d_adv " << g_rep.d_adv << std::endl;
      }

      const bool last = epoch == cfg.epochs || step >= total;
      res.final_val = evaluate_samples(gen, val, cfg.data_range);
      val_csv << val_row(epoch, step, *res.final_val) << std::endl;
      if (epoch % cfg.checkpoint_every == 0 || last) {
        save(epoch);
        saved_last = true;
      }
      if (last) break;
    }
  } catch (const TrainingFault& f) {
    std::ofstream fault(run_dir / "fault.json", std::ios::trunc);
    fault << json{{"term", f.term()}, {"step", step}, {"epoch", epoch}, {"message", f.what()}}.dump(2) << "\n";
    throw TrainingFault(f.term(), "step " + std::to_string(step) + ": " + f.what());
  }
  if (!saved_last) save(epoch);
  res.steps = step;
  return res;
}

}  // namespace atmos::harness
