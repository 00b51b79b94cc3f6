#pragma once

// Central-difference gradient checks of every differentiable operator and of
// the assembled generator and discriminator, all at binary64.

#include "atmos/gradcheck.hpp"
#include "atmos/model/objectives.hpp"

namespace atmos::harness {

struct GradSuiteOptions {
  double tolerance = 1e-3;
  std::int64_t network_entries_per_tensor = 3;
  std::array<std::int64_t, 4> generator_channels{16, 32, 64, 128};
  std::array<std::int64_t, 4> disc_channels{64, 128, 256, 512};
};

namespace detail {

using Params = std::vector<std::pair<std::string, Var<double>>>;

inline Params params_of(const nn::ParamStore<double>& store) {
  Params p;
  for (const auto& e : store.entries()) p.emplace_back(e.name, e.var);
  return p;
}

inline Tensor<double> uniform_tensor(const Shape& s, std::uint64_t seed, double lo, double hi) {
  Tensor<double> t(s);
  CounterRng rng(derive_key({seed, 0x9c5ULL}));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace detail

/// Runs the suite; `on_result` (optional) sees each report as it completes.
inline std::vector<GradCheckReport> gradient_suite(const GradSuiteOptions& opt = {},
                                                   const std::function<void(const GradCheckReport&)>& on_result = {}) {
  using VarD = Var<double>;
  using In = std::vector<VarD>;
  using detail::params_of;
  std::vector<GradCheckReport> out;
  auto record = [&](GradCheckReport r) {
    if (on_result) on_result(r);
    out.push_back(std::move(r));
  };
  const double tol = opt.tolerance;

  {
    nn::ParamStore<double> s(101);
    auto w = s.create("w", Shape{4, 3, 3, 3}, nn::InitKind::kUniformFanIn, 27);
    auto b = s.create("b", Shape{4}, nn::InitKind::kUniformFanIn, 27);
    record(grad_check_shapes("conv2d", [&](const In& in) { return ops::conv2d(in[0], w, b, Conv2dGeometry::square(1, 1)); },
                             {Shape{2, 3, 8, 8}}, params_of(s), tol));
    record(grad_check_shapes(
        "conv2d_stride2", [&](const In& in) { return ops::conv2d(in[0], w, b, Conv2dGeometry::square(2, 1)); },
        {Shape{2, 3, 8, 8}}, params_of(s), tol));
    record(grad_check_shapes(
        "conv2d_dilated", [&](const In& in) { return ops::conv2d(in[0], w, b, Conv2dGeometry::square(1, 2, 2)); },
        {Shape{2, 3, 8, 8}}, params_of(s), tol));
  }
  record(grad_check_shapes("rfft2", [](const In& in) { return ops::rfft2(in[0]); }, {Shape{2, 4, 8, 8}}, {}, tol));
  record(grad_check_shapes("irfft2", [](const In& in) { return ops::irfft2(in[0], 8, 8); }, {Shape{2, 8, 8, 5}}, {},
                           tol));
  {
    nn::ParamStore<double> s(102);
    auto w = s.create("spectral", Shape{8, 8, 1, 1}, nn::InitKind::kUniformFanIn, 8);
    record(grad_check_shapes("spectral_unit", [&](const In& in) { return nn::spectral_unit(in[0], w, true); },
                             {Shape{2, 4, 8, 8}}, params_of(s), tol));
  }
  {
    nn::ParamStore<double> s(103);
    nn::FFCBlock<double> block(s, "ffc", 8, 8, 0.5);
    record(grad_check_shapes("ffc_block", [&](const In& in) { return block(in[0]); }, {Shape{2, 8, 8, 8}},
                             params_of(s), tol));
  }
  {
    nn::ParamStore<double> s(104);
    nn::ConvLSTM<double> lstm(s, "lstm", 8, 8);
    s.get("lstm.bias").mutable_value() = detail::uniform_tensor(Shape{32}, 1, -0.5, 0.5);
    record(grad_check_shapes("convlstm_scan", [&](const In& in) { return lstm(in[0]); }, {Shape{2, 8, 8, 8}},
                             params_of(s), tol));
  }
  {
    nn::ParamStore<double> s(105);
    nn::CrossAttention<double> attn(s, "attn", 8, 8, 2);
    s.get("attn.gate").mutable_value()[0] = 0.4;
    record(grad_check_shapes("cross_attention", [&](const In& in) { return attn(in[0], in[1]); },
                             {Shape{2, 8, 8, 8}, Shape{2, 8, 4, 4}}, params_of(s), tol));
  }
  {
    nn::ParamStore<double> s(106);
    nn::Gate<double> gate(s, "gate", 8, 3, 16);
    record(grad_check_shapes("gate_forward", [&](const In& in) { return gate(in[0], {}); }, {Shape{2, 8, 8, 8}},
                             params_of(s), tol));
  }
  for (const char* name : {"relu", "leaky_relu", "sigmoid", "tanh", "softplus"}) {
    const auto kind = nn::pointwise_from_name(name);
    record(grad_check_shapes(name, [&](const In& in) { return nn::apply_pointwise(in[0], kind); },
                             {Shape{2, 8, 8, 8}}, {}, tol));
  }
  record(grad_check_shapes("global_average_pool", [](const In& in) { return ops::gap(in[0]); }, {Shape{2, 8, 8, 8}},
                           {}, tol));
  {
    nn::ParamStore<double> s(107);
    auto w = s.create("w", Shape{5, 8}, nn::InitKind::kUniformFanIn, 8);
    auto b = s.create("b", Shape{5}, nn::InitKind::kUniformFanIn, 8);
    record(grad_check_shapes("fully_connected", [&](const In& in) { return ops::linear(in[0], w, b); },
                             {Shape{2, 8}}, params_of(s), tol));
  }
  {
    nn::ParamStore<double> s(108);
    auto gain = s.create("gain", Shape{8}, nn::InitKind::kOnes, 1);
    auto shift = s.create("shift", Shape{8}, nn::InitKind::kZeros, 1);
    record(grad_check_shapes("instance_norm", [&](const In& in) { return ops::instance_norm(in[0], gain, shift); },
                             {Shape{2, 8, 8, 8}}, params_of(s), tol));
  }
  record(grad_check_shapes("upsample_nearest2x", [](const In& in) { return ops::upsample_nearest2x(in[0]); },
                           {Shape{2, 8, 4, 4}}, {}, tol));
  record(grad_check_shapes("softmax", [](const In& in) { return ops::softmax_lastdim(in[0]); }, {Shape{2, 8, 8}}, {},
                           tol));
  record(grad_check_shapes(
      "mix",
      [](const In& in) { return ops::mix<double>({in[0], in[1]}, ops::softmax_lastdim(in[2])); },
      {Shape{2, 8, 8, 8}, Shape{2, 8, 8, 8}, Shape{2, 2}}, {}, tol));
  {
    const auto y = detail::uniform_tensor(Shape{2, 1, 8, 8}, 2, 0, 1);
    record(grad_check_shapes(
        "evidential_nll",
        [&](const In& in) {
          model::NIGPrediction<double> p{in[0], ops::add_scalar(ops::softplus(in[1]), 1e-6),
                                         ops::add_scalar(ops::softplus(in[2]), 1.0 + 1e-6),
                                         ops::add_scalar(ops::softplus(in[3]), 1e-6)};
          return ops::add(model::evidential_nll(p, y), model::evidential_reg(p, y));
        },
        {Shape{2, 1, 8, 8}, Shape{2, 1, 8, 8}, Shape{2, 1, 8, 8}, Shape{2, 1, 8, 8}}, {}, tol));
  }

  // Assembled networks: parameters are sampled. The generator has ~1e5 ReLUs
  // coupled through the FFT, so a step of 1e-6 crosses a kink for a sizable
  // fraction of entries; 1e-7 with two refinements stays above rounding noise.
  GradCheckOptions net;
  net.step = 1e-7;
  net.kink_refinements = 2;
  net.max_entries_per_tensor = opt.network_entries_per_tensor;
  {
    model::NetworkConfig c;
    c.channels = opt.generator_channels;
    c.height = c.width = 16;
    model::Generator<double> g(c);
    const auto x = detail::uniform_tensor(Shape{1, 2, 16, 16}, 3, 0, 1);
    record(grad_check(
        "generator",
        [&](const In& in) {
          const auto p = g.forward(in[0]);
          return ops::concat_channels<double>({p.gamma, p.nu, p.alpha, p.beta});
        },
        {x}, params_of(g.params()), tol, net));
  }
  {
    model::NetworkConfig c;
    c.disc_channels = opt.disc_channels;
    c.height = c.width = 32;
    model::Discriminator<double> d(c);
    const auto x = detail::uniform_tensor(Shape{1, 3, 32, 32}, 4, 0, 1);
    record(grad_check(
        "discriminator", [&](const In& in) { return d.forward(in[0]).logits; }, {x}, params_of(d.params()), tol, net));
  }
  return out;
}

}  // namespace atmos::harness
