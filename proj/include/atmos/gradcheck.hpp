#pragma once

// Central-difference gradient checking at binary64.
//
// The op under test may return any shape; it is reduced to a scalar through
// a fixed random projection L = <r, y>, which exercises the whole Jacobian
// rather than its column sums. For each checked tensor the error is
//   ||g_analytic - g_numeric||_inf / max(||g_analytic||_inf, ||g_numeric||_inf)
// over the checked entries, and the report carries the maximum over tensors.
//
// ReLU-type kinks within one step of the evaluation point corrupt a central
// difference. They show up as disagreeing one-sided differences; such entries
// are re-estimated with the step divided by 10, a bounded number of times.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>

#include "atmos/ops.hpp"
#include "atmos/rng.hpp"

namespace atmos {

struct GradCheckOptions {
  double step = 1e-4;
  std::int64_t max_entries_per_tensor = -1;  // -1 checks every entry
  std::uint64_t seed = 7;
  // Gradients that are identically zero (e.g. a key bias under softmax) leave
  // only rounding noise on both sides; below this magnitude the error is absolute.
  double abs_floor = 1e-7;
  int kink_refinements = 3;
};

struct GradCheckReport {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
  bool finite = true;
  std::string worst_tensor;
  std::int64_t entries_checked = 0;
};

using GradFn = std::function<Var<double>(const std::vector<Var<double>>&)>;

namespace detail {

inline std::vector<std::size_t> pick_entries(std::size_t n, std::int64_t limit, CounterRng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (limit < 0 || static_cast<std::size_t>(limit) >= n) return idx;
  for (std::size_t i = 0; i < static_cast<std::size_t>(limit); ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.next_u64() % (n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(static_cast<std::size_t>(limit));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

/// Checks gradients of fn(inputs) with respect to the inputs and to every
/// tensor in `params` (which fn must read through the Vars given here).
inline GradCheckReport grad_check(const std::string& name, const GradFn& fn, std::vector<Tensor<double>> inputs,
                                  std::vector<std::pair<std::string, Var<double>>> params, double tolerance,
                                  const GradCheckOptions& opt = {}) {
  GradCheckReport report;
  report.name = name;
  CounterRng rng(derive_key({opt.seed, hash_name(name)}));

  std::vector<Var<double>> in_vars;
  for (auto& t : inputs) in_vars.push_back(Var<double>::leaf(t, true));
  for (auto& [n, p] : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }

  Var<double> probe = fn(in_vars);
  Tensor<double> proj(probe.shape());
  for (auto& v : proj.values()) v = rng.uniform(-1.0, 1.0);
  auto loss_of = [&](const std::vector<Var<double>>& vars) {
    Var<double> y = fn(vars);
    double acc = 0;
    for (std::size_t i = 0; i < y.value().size(); ++i) acc += proj[i] * y.value()[i];
    return acc;
  };

  Var<double> loss = ops::sum(ops::mul_const(probe, proj));
  loss.backward();

  // Collect (label, var) for everything checked.
  std::vector<std::pair<std::string, Var<double>>> targets;
  for (std::size_t i = 0; i < in_vars.size(); ++i) targets.emplace_back("input" + std::to_string(i), in_vars[i]);
  for (auto& p : params) targets.push_back(p);
  // Finite differences only need values; skip graph construction.
  for (auto& [label, var] : targets) var.set_requires_grad(false);
  const double f0 = loss_of(in_vars);  // same summation order as the perturbed evaluations
  constexpr double kEps = std::numeric_limits<double>::epsilon();

  for (auto& [label, var] : targets) {
    Tensor<double> analytic = var.has_grad() ? var.grad() : Tensor<double>(var.shape());
    if (!analytic.all_finite()) {
      report.finite = false;
      report.max_rel_err = std::numeric_limits<double>::infinity();
      report.worst_tensor = label;
      continue;
    }
    auto entries = detail::pick_entries(analytic.size(), opt.max_entries_per_tensor, rng);
    double max_diff = 0, max_a = 0, max_n = 0;
    const double scale = std::max(analytic.max_abs(), opt.abs_floor);
    Tensor<double>& value = var.mutable_value();
    for (std::size_t i : entries) {
      const double saved = value[i];
      double h = opt.step, numeric = 0;
      for (int level = 0; level <= opt.kink_refinements; ++level, h /= 10) {
        value[i] = saved + h;
        const double up = loss_of(in_vars);
        value[i] = saved - h;
        const double down = loss_of(in_vars);
        value[i] = saved;
        numeric = (up - down) / (2 * h);
        // The second term is the rounding level of the difference quotient.
        const double gap = std::max(0.1 * tolerance * scale, 64 * kEps * (std::abs(f0) + 1) / h);
        if (std::abs((up - f0) - (f0 - down)) / h <= gap) break;
      }
      if (!std::isfinite(numeric)) report.finite = false;
      max_diff = std::max(max_diff, std::abs(numeric - analytic[i]));
      max_a = std::max(max_a, std::abs(analytic[i]));
      max_n = std::max(max_n, std::abs(numeric));
    }
    report.entries_checked += static_cast<std::int64_t>(entries.size());
    const double denom = std::max({max_a, max_n, opt.abs_floor});
    const double rel = max_diff / denom;
    if (rel > report.max_rel_err || !std::isfinite(rel)) {
      report.max_rel_err = rel;
      report.worst_tensor = label;
    }
  }
  for (auto& p : params) p.second.set_requires_grad(true);
  report.pass = report.finite && report.max_rel_err < tolerance;
  return report;
}

/// Convenience: random N(0, 1) inputs of the given shapes.
inline GradCheckReport grad_check_shapes(const std::string& name, const GradFn& fn, const std::vector<Shape>& shapes,
                                         std::vector<std::pair<std::string, Var<double>>> params, double tolerance,
                                         const GradCheckOptions& opt = {}) {
  std::vector<Tensor<double>> inputs;
  CounterRng rng(derive_key({opt.seed, hash_name(name), 1}));
  for (const auto& s : shapes) {
    Tensor<double> t(s);
    for (auto& v : t.values()) v = rng.normal();
    inputs.push_back(std::move(t));
  }
  return grad_check(name, fn, std::move(inputs), std::move(params), tolerance, opt);
}

}  // namespace atmos
