#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "atmos/autodiff.hpp"
#include "atmos/rng.hpp"

namespace atmos::nn {

enum class InitKind { kZeros, kOnes, kUniformFanIn, kNormal, kIdentity };

inline const char* init_kind_name(InitKind k) {
  switch (k) {
    case InitKind::kZeros: return "zeros";
    case InitKind::kOnes: return "ones";
    case InitKind::kUniformFanIn: return "uniform_fan_in";
    case InitKind::kNormal: return "normal";
    case InitKind::kIdentity: return "identity";
  }
  return "?";
}

inline InitKind init_kind_from_name(const std::string& s) {
  if (s == "zeros") return InitKind::kZeros;
  if (s == "ones") return InitKind::kOnes;
  if (s == "uniform_fan_in") return InitKind::kUniformFanIn;
  if (s == "normal") return InitKind::kNormal;
  if (s == "identity") return InitKind::kIdentity;
  throw ConfigError("unknown init kind '" + s + "'");
}

/// How a parameter was initialised; stored in checkpoints.
struct InitRecord {
  InitKind kind = InitKind::kZeros;
  std::uint64_t seed = 0;   // stream key for random kinds
  std::int64_t fan_in = 0;  // uniform bound is 1/sqrt(fan_in)
  double stddev = 0.0;      // kNormal only
};

/// Values for a parameter of shape `shape` under `rec`. Computed in double
/// so float and double models built from the same seed agree.
template <typename T>
Tensor<T> init_values(const Shape& shape, const InitRecord& rec) {
  Tensor<T> t(shape);
  CounterRng rng(rec.seed);
  switch (rec.kind) {
    case InitKind::kZeros: break;
    case InitKind::kOnes: t.fill(T(1)); break;
    case InitKind::kUniformFanIn: {
      const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::int64_t>(rec.fan_in, 1)));
      for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
      break;
    }
    case InitKind::kNormal:
      for (auto& v : t.values()) v = static_cast<T>(rec.stddev * rng.normal());
      break;
    case InitKind::kIdentity: {
      // (C, C, 1, 1) or (C, C) identity map
      if (shape.size() < 2 || shape[0] != shape[1])
        throw ShapeError("identity init needs a square leading shape, got " + shape_str(shape));
      const std::int64_t inner = shape_numel(shape) / (shape[0] * shape[1]);
      for (std::int64_t i = 0; i < shape[0]; ++i) t[static_cast<std::size_t>((i * shape[1] + i) * inner)] = T(1);
      break;
    }
  }
  return t;
}

/// Named parameter tensors in registration order.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Var<T> var;
    InitRecord init;
  };

  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  Var<T> create(const std::string& name, Shape shape, InitKind kind, std::int64_t fan_in = 0, double stddev = 0.0) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    InitRecord rec{kind, derive_key({seed_, hash_name(name)}), fan_in, stddev};
    Var<T> v = Var<T>::leaf(init_values<T>(shape, rec), true);
    index_[name] = entries_.size();
    entries_.push_back({name, v, rec});
    return v;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Entry& entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return entries_[it->second];
  }
  Var<T> get(const std::string& name) const { return entry(name).var; }

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<Entry>& entries() noexcept { return entries_; }

  std::int64_t count() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::int64_t>(e.var.value().size());
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.var.zero_grad();
  }

  void set_requires_grad(bool r) {
    for (auto& e : entries_) e.var.set_requires_grad(r);
  }

  /// Copies values from a store with the same layout (any scalar type).
  template <typename U>
  void copy_values_from(const ParamStore<U>& other) {
    for (const auto& oe : other.entries()) {
      auto& e = entries_[entry_index(oe.name)];
      if (e.var.shape() != oe.var.shape())
        throw ShapeError("parameter '" + oe.name + "' shape " + shape_str(oe.var.shape()) + " vs " +
                         shape_str(e.var.shape()));
      e.var.mutable_value() = Tensor<T>::template cast_from<U>(oe.var.value());
    }
  }

  std::size_t entry_index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }

 private:
  std::uint64_t seed_;
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace atmos::nn
