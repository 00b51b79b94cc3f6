#pragma once

// Turns archive slices into network-ready tensors: normalized ATB and BC,
// the effective mask (physics mask united with light random rectangles), and
// the masked input. Batches are zero-padded to multiples of 16 so the
// bottleneck keeps even spatial dimensions.

#include "atmos/harness/config.hpp"

namespace atmos::harness {

struct Sample {
  std::int64_t rows = 0, cols = 0;
  std::string label;
  std::vector<float> atb, y, mask, atb_masked;  // normalized, mask in {0, 1}
};

inline std::vector<std::uint8_t> effective_mask(const data::SlicePair& s, double coverage) {
  const auto seed = derive_key({s.seed, static_cast<std::uint64_t>(s.slice_index),
                                static_cast<std::uint64_t>(s.wavelength), 0x3a5cULL});
  return data::mask_union(s.mask, data::random_mask(seed, s.rows, s.cols, coverage));
}

inline Sample make_sample(const data::SlicePair& s, const data::NormSpec& norm, double coverage) {
  Sample out;
  out.rows = s.rows;
  out.cols = s.cols;
  out.label = s.label();
  out.atb = data::normalize(s.atb, norm);
  out.y = data::normalize(s.bc, norm);
  const auto m = effective_mask(s, coverage);
  out.mask.resize(m.size());
  out.atb_masked.resize(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    out.mask[i] = m[i] ? 1.0f : 0.0f;
    out.atb_masked[i] = m[i] ? 0.0f : out.atb[i];
  }
  return out;
}

inline std::int64_t padded(std::int64_t n) { return (n + 15) / 16 * 16; }

struct Batch {
  std::int64_t rows = 0, cols = 0;
  Tensor<float> input;                   // (B, 2, padded rows, padded cols)
  Tensor<float> y, mask, atb, atb_masked;  // (B, 1, rows, cols)
};

inline Batch make_batch(const std::vector<const Sample*>& items) {
  if (items.empty()) throw ConfigError("empty batch");
  Batch b;
  b.rows = items[0]->rows;
  b.cols = items[0]->cols;
  const auto B = static_cast<std::int64_t>(items.size());
  const auto H = b.rows, W = b.cols, Hp = padded(H), Wp = padded(W);
  b.input = Tensor<float>(Shape{B, 2, Hp, Wp});
  for (auto* t : {&b.y, &b.mask, &b.atb, &b.atb_masked}) *t = Tensor<float>(Shape{B, 1, H, W});
  for (std::int64_t k = 0; k < B; ++k) {
    const Sample& s = *items[static_cast<std::size_t>(k)];
    if (s.rows != H || s.cols != W) throw ShapeError("batch mixes slice shapes: " + s.label);
    for (std::int64_t r = 0; r < H; ++r)
      for (std::int64_t c = 0; c < W; ++c) {
        const auto src = static_cast<std::size_t>(r * W + c);
        const auto dst = static_cast<std::size_t>((k * H + r) * W + c);
        b.input[static_cast<std::size_t>(((k * 2) * Hp + r) * Wp + c)] = s.atb_masked[src];
        b.input[static_cast<std::size_t>(((k * 2 + 1) * Hp + r) * Wp + c)] = s.mask[src];
        b.y[dst] = s.y[src];
        b.mask[dst] = s.mask[src];
        b.atb[dst] = s.atb[src];
        b.atb_masked[dst] = s.atb_masked[src];
      }
  }
  return b;
}

/// Generator prediction cropped back to the slice shape.
template <typename T>
model::NIGPrediction<T> predict(const model::Generator<T>& g, const Batch& b, const model::ForwardContext& ctx) {
  auto p = g.forward(Var<T>::constant(Tensor<T>::cast_from(b.input)), ctx);
  auto crop = [&](const Var<T>& v) { return ops::crop2d(v, 0, 0, b.rows, b.cols); };
  return {crop(p.gamma), crop(p.nu), crop(p.alpha), crop(p.beta)};
}

}  // namespace atmos::harness
