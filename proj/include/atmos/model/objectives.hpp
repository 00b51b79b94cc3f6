#pragma once

#include <boost/math/special_functions/digamma.hpp>

#include <cmath>
#include <functional>
#include <numbers>
#include <sstream>

#include "atmos/model/network.hpp"

namespace atmos::model {

struct LossWeights {
  double ev = 1.0, adv = 1.0, hrf = 5.0, fm = 10.0, l1 = 10.0, mix = 10.0;
  double ev_reg = 0.01;
  double r1_gamma = 10.0;

  void validate() const {
    for (double w : {ev, adv, hrf, fm, l1, mix, ev_reg, r1_gamma})
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
  }
  bool operator==(const LossWeights&) const = default;
};

namespace detail {

template <typename T>
void require_finite(const Var<T>& v, const std::string& term) {
  for (std::size_t i = 0; i < v.value().size(); ++i)
    if (!std::isfinite(static_cast<double>(v.value()[i])))
      throw TrainingFault(term, "non-finite " + term + " loss (element " + std::to_string(i) + ")");
}

}  // namespace detail

/// Per-pixel negative log marginal likelihood of Y under NIG(gamma, nu, alpha, beta).
inline double nig_nll(double y, double gamma, double nu, double alpha, double beta) {
  const double omega = 2.0 * beta * (1.0 + nu);
  const double r = y - gamma;
  return 0.5 * std::log(std::numbers::pi / nu) - alpha * std::log(omega) +
         (alpha + 0.5) * std::log(nu * r * r + omega) + std::lgamma(alpha) - std::lgamma(alpha + 0.5);
}

/// Mean NIG negative log-likelihood over all pixels, with analytic gradients
/// for gamma, nu, alpha and beta (Y is a constant target).
template <typename T>
Var<T> evidential_nll(const NIGPrediction<T>& p, const Tensor<T>& y) {
  y.check_same(p.gamma.value(), "evidential_nll target");
  const std::size_t n = y.size();
  const auto &g = p.gamma.value(), &nu = p.nu.value(), &al = p.alpha.value(), &be = p.beta.value();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = nig_nll(y[i], g[i], nu[i], al[i], be[i]);
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << "non-finite evidential NLL at pixel " << i << " (y=" << y[i] << " gamma=" << g[i] << " nu=" << nu[i]
         << " alpha=" << al[i] << " beta=" << be[i] << ")";
      throw TrainingFault("ev", os.str());
    }
    total += v;
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(n)));
  return make_op<T>(std::move(out), {p.gamma, p.nu, p.alpha, p.beta}, [y](Node<T>& self) {
    const double s = static_cast<double>(self.grad[0]) / static_cast<double>(y.size());
    const auto &g = self.parents[0]->value, &nu = self.parents[1]->value, &al = self.parents[2]->value,
               &be = self.parents[3]->value;
    Tensor<T>* dg = parent_grad(self, 0);
    Tensor<T>* dn = parent_grad(self, 1);
    Tensor<T>* da = parent_grad(self, 2);
    Tensor<T>* db = parent_grad(self, 3);
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double a = al[i], b = be[i], v = nu[i];
      const double omega = 2.0 * b * (1.0 + v), r = static_cast<double>(y[i]) - g[i];
      const double d = v * r * r + omega;
      if (dg) (*dg)[i] += static_cast<T>(s * (a + 0.5) * (-2.0 * v * r) / d);
      if (dn) (*dn)[i] += static_cast<T>(s * (-0.5 / v - a * 2.0 * b / omega + (a + 0.5) * (r * r + 2.0 * b) / d));
      if (da)
        (*da)[i] += static_cast<T>(s * (std::log(d) - std::log(omega) + boost::math::digamma(a) -
                                        boost::math::digamma(a + 0.5)));
      if (db) (*db)[i] += static_cast<T>(s * (-a / b + (a + 0.5) * 2.0 * (1.0 + v) / d));
    }
  });
}

/// mean |Y - gamma| * (2 nu + alpha)
template <typename T>
Var<T> evidential_reg(const NIGPrediction<T>& p, const Tensor<T>& y) {
  Var<T> resid = ops::abs(ops::sub(p.gamma, Var<T>::constant(y)));
  return ops::mean(ops::mul(resid, ops::add(ops::mul_scalar(p.nu, T(2)), p.alpha)));
}

template <typename T>
Var<T> l1_loss(const Var<T>& pred, const Tensor<T>& target) {
  return ops::mean(ops::abs(ops::sub(pred, Var<T>::constant(target))));
}

// ---------------------------------------------------------------- adversarial

/// Non-saturating generator loss: mean softplus(-D(fake)).
template <typename T>
Var<T> generator_adversarial(const Var<T>& fake_logits) {
  return ops::mean(ops::softplus(ops::mul_scalar(fake_logits, T(-1))));
}

/// mean softplus(-D(real)) + mean softplus(D(fake)).
template <typename T>
Var<T> discriminator_adversarial(const Var<T>& real_logits, const Var<T>& fake_logits) {
  return ops::add(ops::mean(ops::softplus(ops::mul_scalar(real_logits, T(-1)))), ops::mean(ops::softplus(fake_logits)));
}

/// Patch logits of a discriminator input; the pattern argument is forwarded
/// to Discriminator::forward (score functions without kinks may ignore it).
template <typename T>
using ScoreFn = std::function<Var<T>(const Var<T>&, ActivationPattern<T>*)>;

/// R1 = (gamma/2) * mean_b ||d S_b / d image_b||^2, with S_b the sum of the
/// patch logits of sample b and the image being the first `image_channels`
/// channels of the real input.
///
/// `params` are the discriminator parameters; the value pass never touches
/// their gradients. With `accumulate`, (d R1 / d theta) is added to them:
///   d R1 / d theta = (gamma/B) * d/de [grad_theta S(x + e v)],  v = grad_image S(x).
/// S is evaluated with the activation pattern recorded at x, so it is affine
/// in x and the difference quotient is exact for any e.
template <typename T>
double r1_penalty(const ScoreFn<T>& logits_of, const Tensor<T>& real_input, double gamma,
                  std::vector<Var<T>> params = {}, bool accumulate = true, std::int64_t image_channels = 1) {
  std::vector<bool> saved;
  for (auto& p : params) {
    saved.push_back(p.requires_grad());
    p.set_requires_grad(false);
  }
  auto restore = [&] {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].set_requires_grad(saved[i]);
  };
  const auto B = real_input.dim(0), C = real_input.dim(1);
  const std::int64_t plane = real_input.dim(2) * real_input.dim(3);
  ActivationPattern<T> pattern;
  Var<T> x = Var<T>::leaf(real_input, true);
  Var<T> logits = logits_of(x, &pattern);
  if (logits.requires_grad()) ops::sum(logits).backward();
  Tensor<T> v(real_input.shape());
  double sq = 0;
  if (x.has_grad()) {
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < image_channels; ++c)
        for (std::int64_t i = 0; i < plane; ++i) {
          const std::size_t k = static_cast<std::size_t>((b * C + c) * plane + i);
          v[k] = x.grad()[k];
          sq += static_cast<double>(v[k]) * static_cast<double>(v[k]);
        }
  }
  restore();
  const double value = 0.5 * gamma * sq / static_cast<double>(B);
  if (!std::isfinite(value)) throw TrainingFault("r1", "non-finite R1 penalty");

  const double vmax = static_cast<double>(v.max_abs());
  if (!accumulate || params.empty() || vmax == 0.0 || gamma == 0.0) return value;
  const double eps = std::max(1.0, static_cast<double>(real_input.max_abs())) / vmax;
  pattern.replay = true;
  for (int sign : {1, -1}) {
    Tensor<T> xs = real_input;
    xs.axpy(static_cast<T>(sign * eps), v);
    Var<T> out = logits_of(Var<T>::constant(xs), &pattern);
    const double coef = sign * gamma / (2.0 * eps * static_cast<double>(B));
    out.backward(Tensor<T>(out.shape(), static_cast<T>(coef)));
  }
  return value;
}

// ---------------------------------------------------------------- feature terms

/// mean over layers of mean |real - fake|; real features are constants.
template <typename T>
Var<T> feature_matching(const std::vector<Var<T>>& real, const std::vector<Var<T>>& fake) {
  if (real.size() != fake.size() || real.empty())
    throw ShapeError("feature_matching: " + std::to_string(real.size()) + " real vs " + std::to_string(fake.size()) +
                     " fake feature maps");
  std::vector<Var<T>> terms;
  for (std::size_t i = 0; i < real.size(); ++i)
    terms.push_back(ops::mean(ops::abs(ops::sub(fake[i], real[i].detach()))));
  return ops::mul_scalar(ops::add_n(terms), T(1) / static_cast<T>(terms.size()));
}

/// Frozen, randomly initialized 4-layer dilated conv net (dilations 1, 2, 4, 8).
template <typename T>
class HrfExtractor {
 public:
  explicit HrfExtractor(std::uint64_t seed, std::int64_t channels = 32) : store_(derive_key({seed, 0x4a7fULL})) {
    std::int64_t cin = 1;
    for (int i = 0; i < 4; ++i) {
      layers_[i] = nn::Conv2d<T>::square(store_, "hrf.conv" + std::to_string(i + 1), cin, channels, 3, 1, true, 1 << i);
      cin = channels;
    }
    store_.set_requires_grad(false);
  }
  HrfExtractor(const HrfExtractor&) = delete;
  HrfExtractor& operator=(const HrfExtractor&) = delete;

  std::vector<Var<T>> features(const Var<T>& image) const {
    std::vector<Var<T>> out;
    Var<T> y = image;
    for (const auto& l : layers_) {
      y = ops::leaky_relu(l(y));
      out.push_back(y);
    }
    return out;
  }

  /// mean over layers of the feature-map MSE.
  Var<T> loss(const Var<T>& pred, const Tensor<T>& target) const {
    const auto ft = features(Var<T>::constant(target));
    const auto fp = features(pred);
    std::vector<Var<T>> terms;
    for (std::size_t i = 0; i < ft.size(); ++i) terms.push_back(ops::mean(ops::square(ops::sub(fp[i], ft[i]))));
    return ops::mul_scalar(ops::add_n(terms), T(1) / static_cast<T>(terms.size()));
  }

  const nn::ParamStore<T>& params() const { return store_; }

 private:
  nn::ParamStore<T> store_;
  std::array<nn::Conv2d<T>, 4> layers_;
};

/// x_hat = (1 - m) * atb + m * gamma;  L_mix = mean |x_hat - Y|
template <typename T>
Var<T> physics_mix_loss(const Var<T>& gamma, const Tensor<T>& atb_norm, const Tensor<T>& mask, const Tensor<T>& y) {
  gamma.value().check_same(atb_norm, "physics_mix atb");
  gamma.value().check_same(mask, "physics_mix mask");
  Tensor<T> keep(atb_norm.shape());
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = (T(1) - mask[i]) * atb_norm[i];
  Var<T> mixed = ops::add(ops::mul_const(gamma, mask), Var<T>::constant(std::move(keep)));
  return l1_loss(mixed, y);
}

// ---------------------------------------------------------------- totals

struct LossReport {
  double ev = 0, adv = 0, hrf = 0, fm = 0, l1 = 0, mix = 0;
  double d_adv = 0, r1 = 0;
  double total = 0;

  static constexpr const char* kCsvHeader = "step,ev,adv,hrf,fm,l1,mix,d_adv,r1,total";
};

template <typename T>
struct GeneratorTerms {
  Var<T> ev, adv, hrf, fm, l1, mix;
};

/// Weighted generator objective. The returned report carries the unweighted
/// terms and a total recomputed in binary64 from them.
template <typename T>
std::pair<Var<T>, LossReport> total_generator_loss(const GeneratorTerms<T>& t, const LossWeights& w) {
  const std::array<std::pair<const char*, const Var<T>*>, 6> named = {
      {{"ev", &t.ev}, {"adv", &t.adv}, {"hrf", &t.hrf}, {"fm", &t.fm}, {"l1", &t.l1}, {"mix", &t.mix}}};
  const std::array<double, 6> lambda = {w.ev, w.adv, w.hrf, w.fm, w.l1, w.mix};
  LossReport r;
  std::array<double*, 6> slots = {&r.ev, &r.adv, &r.hrf, &r.fm, &r.l1, &r.mix};
  std::vector<Var<T>> weighted;
  for (std::size_t i = 0; i < named.size(); ++i) {
    const Var<T>& v = *named[i].second;
    if (!v.defined()) continue;
    detail::require_finite(v, named[i].first);
    *slots[i] = static_cast<double>(v.value()[0]);
    if (lambda[i] != 0.0) weighted.push_back(ops::mul_scalar(v, static_cast<T>(lambda[i])));
  }
  for (std::size_t i = 0; i < slots.size(); ++i) r.total += lambda[i] * *slots[i];
  Var<T> total = weighted.empty() ? Var<T>::constant(Tensor<T>::scalar(T(0))) : ops::add_n(weighted);
  return {total, r};
}

}  // namespace atmos::model
