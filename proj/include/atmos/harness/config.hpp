#pragma once

// ExperimentConfig: everything a run depends on, serialized as JSON with the
// same field names. Reading overlays a (possibly partial) JSON object onto a
// preset; unknown keys are rejected.

#include <fstream>
#include <set>

#include "json.hpp"

#include "atmos/data/archive.hpp"
#include "atmos/data/lidar.hpp"
#include "atmos/model/objectives.hpp"

namespace atmos::harness {

using nlohmann::json;

struct OptimizerConfig {
  double lr = 1e-4;
  double lr_floor = 1e-6;  // end of the generator cosine schedule
  double d_lr = 1e-4;
  double d_decay = 0.98;  // discriminator lr multiplier per epoch
  double beta1 = 0.9, beta2 = 0.999;
  double weight_decay = 0.01;
  double eps = 1e-8;
  bool operator==(const OptimizerConfig&) const = default;
};

struct ExperimentConfig {
  std::string preset = "desk";
  std::uint64_t seed = 1;

  // data generation
  std::int64_t n_scenes = 10;
  data::GridSpec scene_grid;
  data::GridSpec target_grid;
  data::SceneParams scene;
  double lidar_eta = 0.7;
  std::vector<int> wavelengths{355, 532};
  data::NormSpec norm;
  double mask_threshold = 0.7;
  double split_ratio = 0.9;
  double train_mask_coverage = data::kLightMask;  // random rectangles on top of the physics mask

  // training
  model::NetworkConfig network;
  model::LossWeights loss;
  OptimizerConfig optimizer;
  std::int64_t epochs = 20;
  std::int64_t batch_size = 3;
  std::int64_t checkpoint_every = 5;
  std::int64_t max_steps = -1;  // -1: no cap
  double noise_anneal_fraction = 0.5;
  std::string train_partition = "train";
  std::int64_t val_slices = 8;

  // evaluation
  std::string eval_partition = "test";
  double data_range = 1.0;

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

inline void check_partition(const std::string& p, const char* what) {
  if (p != "train" && p != "test" && p != "all")
    throw ConfigError(std::string(what) + " must be train, test or all, got '" + p + "'");
}

inline void ExperimentConfig::validate() const {
  if (n_scenes < 1) throw ConfigError("n_scenes must be >= 1");
  scene_grid.validate();
  target_grid.validate();
  scene.validate();
  data::LidarConfig{532, lidar_eta}.validate();
  if (wavelengths.empty()) throw ConfigError("at least one wavelength is required");
  for (int w : wavelengths) data::check_wavelength(w);
  norm.validate();
  if (!(mask_threshold > 0 && mask_threshold < 1)) throw ConfigError("mask_threshold must lie in (0, 1)");
  if (!(split_ratio > 0 && split_ratio < 1)) throw ConfigError("split_ratio must lie in (0, 1)");
  if (!(train_mask_coverage >= 0 && train_mask_coverage <= 1)) throw ConfigError("train_mask_coverage must lie in [0, 1]");
  network.validate();
  loss.validate();
  const auto& o = optimizer;
  if (!(o.lr > 0) || !(o.lr_floor >= 0) || o.lr_floor > o.lr || !(o.d_lr > 0))
    throw ConfigError("learning rates must be positive with lr_floor <= lr");
  if (!(o.d_decay > 0 && o.d_decay <= 1)) throw ConfigError("d_decay must lie in (0, 1]");
  if (!(o.beta1 >= 0 && o.beta1 < 1) || !(o.beta2 >= 0 && o.beta2 < 1)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(o.weight_decay >= 0) || !(o.eps > 0)) throw ConfigError("weight_decay must be >= 0 and eps > 0");
  if (epochs < 0 || batch_size < 1 || checkpoint_every < 1) throw ConfigError("epochs >= 0, batch_size >= 1, checkpoint_every >= 1");
  if (max_steps < -1) throw ConfigError("max_steps must be -1 or >= 0");
  if (!(noise_anneal_fraction >= 0 && noise_anneal_fraction <= 1)) throw ConfigError("noise_anneal_fraction must lie in [0, 1]");
  check_partition(train_partition, "train_partition");
  check_partition(eval_partition, "eval_partition");
  if (val_slices < 1) throw ConfigError("val_slices must be >= 1");
  if (!(data_range > 0)) throw ConfigError("data_range must be positive");
}

// ---------------------------------------------------------------- presets

inline ExperimentConfig desk_preset() {
  ExperimentConfig c;
  c.preset = "desk";
  c.scene_grid = {4, 48, 40, 14000.0, 16000.0};
  c.target_grid = {2, 64, 64, 10000.0, 16000.0};
  c.network.height = c.network.width = 64;
  return c;
}

/// 2 scenes x 2 longitudes x 2 wavelengths = 8 slices of 64x64, trained on all
/// of them for at most 500 steps.
inline ExperimentConfig overfit_preset() {
  ExperimentConfig c = desk_preset();
  c.preset = "overfit";
  c.n_scenes = 2;
  c.epochs = 167;
  c.max_steps = 500;
  c.checkpoint_every = 50;
  c.train_partition = "all";
  c.eval_partition = "all";
  return c;
}

inline ExperimentConfig full_preset() {
  ExperimentConfig c;
  c.preset = "full";
  c.n_scenes = 384;
  c.scene_grid = {600, 600, 200, 5000.0, 20000.0};
  c.target_grid = c.scene_grid;
  c.network.channels = {64, 128, 256, 512};
  c.network.height = 208;  // 200 x 600 slices, zero-padded to multiples of 16
  c.network.width = 608;
  return c;
}

inline ExperimentConfig preset(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "overfit") return overfit_preset();
  if (name == "full") return full_preset();
  throw ConfigError("unknown preset '" + name + "' (expected desk, overfit or full)");
}

// ---------------------------------------------------------------- JSON

namespace detail {

inline json range_json(const data::Range& r) { return json::array({r.lo, r.hi}); }

/// Overlays keys of `j` onto fields; remembers which keys were consumed so
/// that leftovers can be reported.
class Overlay {
 public:
  Overlay(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
  }
  ~Overlay() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(where_ + ": unknown key '" + k + "'");
  }
  template <typename V>
  void operator()(const char* key, V& field) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      field = j_.at(key).get<V>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }
  void range(const char* key, data::Range& r) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& a = j_.at(key);
    if (!a.is_array() || a.size() != 2) throw ConfigError(where_ + "." + key + ": expected [lo, hi]");
    r = {a[0].get<double>(), a[1].get<double>()};
  }
  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline void read_grid(const json& j, data::GridSpec& g, const std::string& where) {
  Overlay o(j, where);
  o("n_lon", g.n_lon);
  o("n_lat", g.n_lat);
  o("n_alt", g.n_alt);
  o("d_horiz", g.d_horiz);
  o("alt_top", g.alt_top);
  o("origin_lon", g.origin_lon);
  o("origin_lat", g.origin_lat);
}

}  // namespace detail

inline json to_json(const ExperimentConfig& c) {
  const auto& s = c.scene;
  const auto& n = c.network;
  const auto& l = c.loss;
  const auto& o = c.optimizer;
  return {
      {"preset", c.preset},
      {"seed", c.seed},
      {"n_scenes", c.n_scenes},
      {"scene_grid", data::grid_to_json(c.scene_grid)},
      {"target_grid", data::grid_to_json(c.target_grid)},
      {"scene",
       {{"n_clouds", s.n_clouds},
        {"n_aerosol_layers", s.n_aerosol_layers},
        {"cloud_beta", detail::range_json(s.cloud_beta)},
        {"aerosol_beta", detail::range_json(s.aerosol_beta)},
        {"cloud_altitude", detail::range_json(s.cloud_altitude)},
        {"cloud_horizontal", detail::range_json(s.cloud_horizontal)},
        {"cloud_vertical", detail::range_json(s.cloud_vertical)},
        {"aerosol_altitude", detail::range_json(s.aerosol_altitude)},
        {"aerosol_horizontal", detail::range_json(s.aerosol_horizontal)},
        {"aerosol_vertical", detail::range_json(s.aerosol_vertical)},
        {"lidar_ratio_cloud", s.lidar_ratio_cloud},
        {"lidar_ratio_aer", s.lidar_ratio_aer}}},
      {"lidar_eta", c.lidar_eta},
      {"wavelengths", c.wavelengths},
      {"norm", {{"log_floor", c.norm.log_floor}, {"log_ceil", c.norm.log_ceil}}},
      {"mask_threshold", c.mask_threshold},
      {"split_ratio", c.split_ratio},
      {"train_mask_coverage", c.train_mask_coverage},
      {"network",
       {{"channels", n.channels},
        {"height", n.height},
        {"width", n.width},
        {"n_heads", n.n_heads},
        {"gate_hidden", n.gate_hidden},
        {"sigma_noise", n.sigma_noise},
        {"ratio_global", n.ratio_global},
        {"alpha_offset", n.alpha_offset},
        {"use_attention", n.use_attention},
        {"disc_channels", n.disc_channels},
        {"seed", n.seed}}},
      {"loss",
       {{"lambda_ev", l.ev},
        {"lambda_adv", l.adv},
        {"lambda_hrf", l.hrf},
        {"lambda_fm", l.fm},
        {"lambda_1", l.l1},
        {"lambda_mix", l.mix},
        {"lambda_ev_reg", l.ev_reg},
        {"r1_gamma", l.r1_gamma}}},
      {"optimizer",
       {{"lr", o.lr},
        {"lr_floor", o.lr_floor},
        {"d_lr", o.d_lr},
        {"d_decay", o.d_decay},
        {"beta1", o.beta1},
        {"beta2", o.beta2},
        {"weight_decay", o.weight_decay},
        {"eps", o.eps}}},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"checkpoint_every", c.checkpoint_every},
      {"max_steps", c.max_steps},
      {"noise_anneal_fraction", c.noise_anneal_fraction},
      {"train_partition", c.train_partition},
      {"val_slices", c.val_slices},
      {"eval_partition", c.eval_partition},
      {"data_range", c.data_range},
  };
}

/// Applies `j` on top of `base` (normally a preset).
inline ExperimentConfig overlay(ExperimentConfig c, const json& j) {
  {
    detail::Overlay o(j, "config");
    o("preset", c.preset);
    o("seed", c.seed);
    o("n_scenes", c.n_scenes);
    if (auto* g = o.child("scene_grid")) detail::read_grid(*g, c.scene_grid, "scene_grid");
    if (auto* g = o.child("target_grid")) detail::read_grid(*g, c.target_grid, "target_grid");
    if (auto* sj = o.child("scene")) {
      detail::Overlay s(*sj, "scene");
      s("n_clouds", c.scene.n_clouds);
      s("n_aerosol_layers", c.scene.n_aerosol_layers);
      s.range("cloud_beta", c.scene.cloud_beta);
      s.range("aerosol_beta", c.scene.aerosol_beta);
      s.range("cloud_altitude", c.scene.cloud_altitude);
      s.range("cloud_horizontal", c.scene.cloud_horizontal);
      s.range("cloud_vertical", c.scene.cloud_vertical);
      s.range("aerosol_altitude", c.scene.aerosol_altitude);
      s.range("aerosol_horizontal", c.scene.aerosol_horizontal);
      s.range("aerosol_vertical", c.scene.aerosol_vertical);
      s("lidar_ratio_cloud", c.scene.lidar_ratio_cloud);
      s("lidar_ratio_aer", c.scene.lidar_ratio_aer);
    }
    o("lidar_eta", c.lidar_eta);
    o("wavelengths", c.wavelengths);
    if (auto* nj = o.child("norm")) {
      detail::Overlay s(*nj, "norm");
      s("log_floor", c.norm.log_floor);
      s("log_ceil", c.norm.log_ceil);
    }
    o("mask_threshold", c.mask_threshold);
    o("split_ratio", c.split_ratio);
    o("train_mask_coverage", c.train_mask_coverage);
    if (auto* nj = o.child("network")) {
      detail::Overlay s(*nj, "network");
      auto& n = c.network;
      s("channels", n.channels);
      s("height", n.height);
      s("width", n.width);
      s("n_heads", n.n_heads);
      s("gate_hidden", n.gate_hidden);
      s("sigma_noise", n.sigma_noise);
      s("ratio_global", n.ratio_global);
      s("alpha_offset", n.alpha_offset);
      s("use_attention", n.use_attention);
      s("disc_channels", n.disc_channels);
      s("seed", n.seed);
    }
    if (auto* lj = o.child("loss")) {
      detail::Overlay s(*lj, "loss");
      auto& l = c.loss;
      s("lambda_ev", l.ev);
      s("lambda_adv", l.adv);
      s("lambda_hrf", l.hrf);
      s("lambda_fm", l.fm);
      s("lambda_1", l.l1);
      s("lambda_mix", l.mix);
      s("lambda_ev_reg", l.ev_reg);
      s("r1_gamma", l.r1_gamma);
    }
    if (auto* oj = o.child("optimizer")) {
      detail::Overlay s(*oj, "optimizer");
      auto& p = c.optimizer;
      s("lr", p.lr);
      s("lr_floor", p.lr_floor);
      s("d_lr", p.d_lr);
      s("d_decay", p.d_decay);
      s("beta1", p.beta1);
      s("beta2", p.beta2);
      s("weight_decay", p.weight_decay);
      s("eps", p.eps);
    }
    o("epochs", c.epochs);
    o("batch_size", c.batch_size);
    o("checkpoint_every", c.checkpoint_every);
    o("max_steps", c.max_steps);
    o("noise_anneal_fraction", c.noise_anneal_fraction);
    o("train_partition", c.train_partition);
    o("val_slices", c.val_slices);
    o("eval_partition", c.eval_partition);
    o("data_range", c.data_range);
  }
  c.validate();
  return c;
}

/// A config file names its preset (default desk); its other keys override it.
inline ExperimentConfig from_json(const json& j) {
  const std::string p = j.is_object() && j.contains("preset") ? j.at("preset").get<std::string>() : "desk";
  return overlay(preset(p), j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path + "': " + e.what());
  }
  return from_json(j);
}

inline void save_config(const std::string& path, const ExperimentConfig& c) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file '" + path + "'");
  out << to_json(c).dump(2) << "\n";
}

}  // namespace atmos::harness
