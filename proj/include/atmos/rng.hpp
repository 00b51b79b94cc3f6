#pragma once

// Counter-based pseudorandom numbers. Every draw is a pure function of
// (key, counter), so results do not depend on evaluation order.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <string_view>

namespace atmos {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Folds a list of integers into one stream key.
constexpr std::uint64_t derive_key(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t k = 0x6a09e667f3bcc909ULL;
  for (auto p : parts) k = mix64(k ^ mix64(p));
  return k;
}

/// FNV-1a, used to turn parameter names into stream ids.
constexpr std::uint64_t hash_name(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t draw_u64(std::uint64_t key, std::uint64_t counter) noexcept {
  return mix64(key ^ mix64(counter * 0xd1b54a32d192ed03ULL + 1));
}

/// Uniform in [0, 1) with 53 random bits.
constexpr double draw_uniform(std::uint64_t key, std::uint64_t counter) noexcept {
  return static_cast<double>(draw_u64(key, counter) >> 11) * 0x1.0p-53;
}

/// Sequential view over a counter stream.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key, std::uint64_t start = 0) noexcept
      : key_(key), counter_(start) {}

  std::uint64_t next_u64() noexcept { return draw_u64(key_, counter_++); }
  double uniform() noexcept { return draw_uniform(key_, counter_++); }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Box-Muller; consumes two counters per call.
  double normal() noexcept {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace atmos
