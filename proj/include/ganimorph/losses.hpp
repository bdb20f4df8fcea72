#pragma once

// Objective terms: adversarial, feature matching, MS-SSIM + L1 cyclic, and the
// scheduled loss normalization (SLN) that periodically rescales each group.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "error.hpp"
#include "networks.hpp"

namespace ganimorph::loss {

struct LossWeights {
  double gan = 0.49;
  double fm = 0.21;
  double cyc = 0.30;
  double ss = 0.70;
  double l1 = 0.30;

  void validate() const {
    for (double v : {gan, fm, cyc, ss, l1})
      if (!(v >= 0.0)) throw ValidationError("loss weights must be non-negative");
    if (std::abs(gan + fm + cyc - 1.0) > 1e-9)
      throw ValidationError("loss weights: gan + fm + cyc must equal 1");
    if (std::abs(ss + l1 - 1.0) > 1e-9) throw ValidationError("loss weights: ss + l1 must equal 1");
  }

  bool operator==(const LossWeights&) const = default;
};

inline void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.sizes().equals(b.sizes()))
    throw ShapeError(std::string(what) + ": shape mismatch " + nets::GeneratorImpl::shape_string(a) +
                     " vs " + nets::GeneratorImpl::shape_string(b));
}

// ---------------------------------------------------------------------------
// Adversarial

struct GanLoss {
  torch::Tensor d_loss;  // mean BCE over all real (target 1) and fake (target 0) logits
  torch::Tensor g_loss;  // non-saturating: mean BCE of fake logits against target 1
};

/// Every logit (one per spatial position for map discriminators) is one
/// real-vs-fake decision.
inline GanLoss gan_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits) {
  require_same_shape(real_logits, fake_logits, "gan_loss");
  namespace F = torch::nn::functional;
  // BCE(l, 1) = softplus(-l), BCE(l, 0) = softplus(l).
  auto d = 0.5 * (F::softplus(-real_logits).mean() + F::softplus(fake_logits).mean());
  auto g = F::softplus(-fake_logits).mean();
  return {d, g};
}

// ---------------------------------------------------------------------------
// Feature matching

/// Mean over layers of the squared L2 distance between batch-mean activations.
inline torch::Tensor feature_matching_loss(std::span<const torch::Tensor> real_layers,
                                           std::span<const torch::Tensor> fake_layers) {
  if (real_layers.size() != fake_layers.size())
    throw ShapeError("feature_matching_loss: " + std::to_string(real_layers.size()) + " real taps vs " +
                     std::to_string(fake_layers.size()) + " fake taps");
  if (real_layers.empty()) throw ShapeError("feature_matching_loss: no feature taps");
  torch::Tensor total;
  for (std::size_t i = 0; i < real_layers.size(); ++i) {
    const auto& r = real_layers[i];
    const auto& f = fake_layers[i];
    if (r.dim() < 1 || r.dim() != f.dim() || !r.sizes().slice(1).equals(f.sizes().slice(1)))
      throw ShapeError("feature_matching_loss: tap " + std::to_string(i) + " shape mismatch " +
                       nets::GeneratorImpl::shape_string(r) + " vs " + nets::GeneratorImpl::shape_string(f));
    auto term = (r.mean(0) - f.mean(0)).pow(2).sum();
    total = i == 0 ? term : total + term;
  }
  return total / static_cast<double>(real_layers.size());
}

inline torch::Tensor feature_matching_loss(const nets::FeatureTaps& real, const nets::FeatureTaps& fake) {
  return feature_matching_loss(std::span<const torch::Tensor>(real.layers),
                               std::span<const torch::Tensor>(fake.layers));
}

// ---------------------------------------------------------------------------
// MS-SSIM

/// Per-scale exponents of the standard five-scale MS-SSIM.
inline constexpr std::array<double, 5> kMsSsimExponents{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

struct MsSsimOptions {
  int scales = 5;
  double dynamic_range = 2.0;  // inputs live in [-1, 1]
  int window = 11;
  double sigma = 1.5;
  /// Off replaces sigma_xy with sigma_x * sigma_y (contrast only). Not the default.
  bool structure = true;

  bool operator==(const MsSsimOptions&) const = default;
};

/// Exponents for `scales` levels; fewer than five levels use the leading
/// exponents renormalized to sum to one.
inline std::vector<double> ms_ssim_exponents(int scales) {
  if (scales < 1 || scales > 5) throw ValidationError("ms_ssim: scales must be in 1..5");
  std::vector<double> w(kMsSsimExponents.begin(), kMsSsimExponents.begin() + scales);
  if (scales < 5) {
    double sum = 0.0;
    for (double v : w) sum += v;
    for (double& v : w) v /= sum;
  }
  return w;
}

/// Smallest side length that keeps the window inside the coarsest scale.
inline int ms_ssim_min_size(int scales, int window = 11) { return window << (scales - 1); }

/// Largest scale count (<= 5) usable at this image size.
inline int ms_ssim_max_scales(int size, int window = 11) {
  int scales = 0;
  for (int s = size; s >= window && scales < 5; s /= 2) ++scales;
  return scales;
}

inline torch::Tensor gaussian_window(int size, double sigma, torch::TensorOptions opts) {
  auto x = torch::arange(size, opts) - (size - 1) / 2.0;
  auto g = torch::exp(-(x * x) / (2.0 * sigma * sigma));
  return g / g.sum();
}

/// Batch-mean MS-SSIM of two [B, C, H, W] tensors, per channel without any
/// colour decorrelation. Both inputs are expected in [-1, 1].
inline torch::Tensor ms_ssim(const torch::Tensor& a, const torch::Tensor& b, const MsSsimOptions& opts = {}) {
  require_same_shape(a, b, "ms_ssim");
  if (a.dim() != 4) throw ShapeError("ms_ssim expects [B, C, H, W] tensors");
  const auto exponents = ms_ssim_exponents(opts.scales);
  const int min_size = ms_ssim_min_size(opts.scales, opts.window);
  if (std::min(a.size(2), a.size(3)) < min_size)
    throw ShapeError("ms_ssim: images must be at least " + std::to_string(min_size) + "x" +
                     std::to_string(min_size) + " for " + std::to_string(opts.scales) + " scales, got " +
                     std::to_string(a.size(2)) + "x" + std::to_string(a.size(3)));

  const auto channels = a.size(1);
  const auto g = gaussian_window(opts.window, opts.sigma, a.options());
  const auto wx = g.view({1, 1, 1, opts.window}).expand({channels, 1, 1, opts.window}).contiguous();
  const auto wy = g.view({1, 1, opts.window, 1}).expand({channels, 1, opts.window, 1}).contiguous();
  auto blur = [&](const torch::Tensor& t) {
    namespace F = torch::nn::functional;
    return F::conv2d(F::conv2d(t, wx, F::Conv2dFuncOptions().groups(channels)), wy,
                     F::Conv2dFuncOptions().groups(channels));
  };

  const double c1 = std::pow(0.01 * opts.dynamic_range, 2);
  const double c2 = std::pow(0.03 * opts.dynamic_range, 2);
  constexpr double kFloor = 1e-8;

  torch::Tensor x = a;
  torch::Tensor y = b;
  torch::Tensor product;
  for (int j = 0; j < opts.scales; ++j) {
    if (j > 0) {
      x = torch::avg_pool2d(x, 2);
      y = torch::avg_pool2d(y, 2);
    }
    auto mu_x = blur(x);
    auto mu_y = blur(y);
    auto var_x = blur(x * x) - mu_x * mu_x;
    auto var_y = blur(y * y) - mu_y * mu_y;
    auto cov = opts.structure ? blur(x * y) - mu_x * mu_y
                              : torch::sqrt(var_x.clamp_min(1e-12) * var_y.clamp_min(1e-12));
    auto cs_map = (2.0 * cov + c2) / (var_x + var_y + c2);
    torch::Tensor level;
    if (j + 1 < opts.scales) {
      level = cs_map.mean({2, 3});
    } else {
      auto lum = (2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1);
      level = (lum * cs_map).mean({2, 3});
    }
    auto term = level.clamp_min(kFloor).pow(exponents[j]);
    product = j == 0 ? term : product * term;
  }
  return product.mean();
}

inline torch::Tensor l1_loss(const torch::Tensor& a, const torch::Tensor& b) {
  require_same_shape(a, b, "l1_loss");
  return (a - b).abs().mean();
}

// ---------------------------------------------------------------------------
// Cyclic reconstruction

struct CyclicTerms {
  torch::Tensor ss;     // (1 - MS-SSIM(x', x)) + (1 - MS-SSIM(y', y))
  torch::Tensor l1;     // mean |x' - x| + mean |y' - y|
  torch::Tensor total;  // w.ss * ss + w.l1 * l1
};

inline CyclicTerms cyclic_loss(const torch::Tensor& x, const torch::Tensor& x_rec, const torch::Tensor& y,
                               const torch::Tensor& y_rec, const LossWeights& w,
                               const MsSsimOptions& opts = {}) {
  require_same_shape(x, x_rec, "cyclic_loss");
  require_same_shape(y, y_rec, "cyclic_loss");
  auto ss = (1.0 - ms_ssim(x_rec, x, opts)) + (1.0 - ms_ssim(y_rec, y, opts));
  auto l1 = loss::l1_loss(x_rec, x) + loss::l1_loss(y_rec, y);
  return {ss, l1, w.ss * ss + w.l1 * l1};
}

// ---------------------------------------------------------------------------
// Scheduled loss normalization

struct SlnState {
  double accumulator = 0.0;  // exponentially weighted mean of squared raw losses
  double beta = 0.99;
  double epsilon = 1e-10;
  int period = 200;
  std::uint64_t counter = 0;  // iterations seen so far

  void validate() const {
    if (!(beta > 0.0 && beta < 1.0)) throw ValidationError("sln: beta must be in (0, 1)");
    if (!(epsilon >= 0.0)) throw ValidationError("sln: epsilon must be non-negative");
    if (period < 1) throw ValidationError("sln: period must be positive");
    if (!(accumulator >= 0.0)) throw ValidationError("sln: accumulator must be non-negative");
  }

  bool operator==(const SlnState&) const = default;
};

/// Advances the state by one iteration and returns the multiplier applied to
/// the raw loss: 1 / (accumulator + epsilon) on iterations where
/// counter mod period == 1, otherwise 1.
inline double sln_step(SlnState& state, double raw) {
  if (std::isnan(raw) || std::isinf(raw)) throw NumericError("sln: non-finite loss value");
  if (raw < 0.0) throw ValidationError("sln: loss value must be non-negative, got " + std::to_string(raw));
  state.counter += 1;
  state.accumulator = state.beta * state.accumulator + (1.0 - state.beta) * raw * raw;
  const auto period = static_cast<std::uint64_t>(state.period);
  const bool scheduled = state.counter % period == 1 % period;
  return scheduled ? 1.0 / (state.accumulator + state.epsilon) : 1.0;
}

/// Pure form: (effective value, next state).
inline std::pair<double, SlnState> sln_apply(SlnState state, double raw) {
  const double scale = sln_step(state, raw);
  return {raw * scale, state};
}

/// One SLN channel per normalized group of the total objective.
struct SlnStates {
  SlnState gan;
  SlnState fm;
  SlnState cyc;

  static SlnStates with(double beta, double epsilon, int period) {
    SlnState s;
    s.beta = beta;
    s.epsilon = epsilon;
    s.period = period;
    return {s, s, s};
  }

  bool operator==(const SlnStates&) const = default;
};

/// Raw objective terms, each already summed over both translation directions.
struct LossTerms {
  torch::Tensor gan;
  torch::Tensor fm;
  torch::Tensor ss;
  torch::Tensor l1;
};

struct ObjectiveValues {
  double gan_raw = 0.0, fm_raw = 0.0, ss_raw = 0.0, l1_raw = 0.0, cyc_raw = 0.0;
  double gan_effective = 0.0, fm_effective = 0.0, cyc_effective = 0.0;
  double total = 0.0;

  bool operator==(const ObjectiveValues&) const = default;
};

struct Objective {
  torch::Tensor total;
  ObjectiveValues values;
};

/// w.gan * SLN(gan) + w.fm * SLN(fm) + w.cyc * SLN(w.ss * ss + w.l1 * l1).
/// SLN multipliers are constants, so gradients flow through the raw terms.
inline Objective total_objective(const LossTerms& terms, const LossWeights& w, SlnStates& states) {
  w.validate();
  ObjectiveValues v;
  v.gan_raw = terms.gan.item<double>();
  v.fm_raw = terms.fm.item<double>();
  v.ss_raw = terms.ss.item<double>();
  v.l1_raw = terms.l1.item<double>();
  v.cyc_raw = w.ss * v.ss_raw + w.l1 * v.l1_raw;
  for (double t : {v.gan_raw, v.fm_raw, v.ss_raw, v.l1_raw}) {
    if (!std::isfinite(t)) {
      std::ostringstream msg;
      msg << "non-finite loss term (gan=" << v.gan_raw << " fm=" << v.fm_raw << " ss=" << v.ss_raw
          << " l1=" << v.l1_raw << ")";
      throw NumericError(msg.str());
    }
  }

  const double k_gan = sln_step(states.gan, v.gan_raw);
  const double k_fm = sln_step(states.fm, v.fm_raw);
  const double k_cyc = sln_step(states.cyc, v.cyc_raw);
  v.gan_effective = v.gan_raw * k_gan;
  v.fm_effective = v.fm_raw * k_fm;
  v.cyc_effective = v.cyc_raw * k_cyc;
  v.total = w.gan * v.gan_effective + w.fm * v.fm_effective + w.cyc * v.cyc_effective;

  auto cyc = w.ss * terms.ss + w.l1 * terms.l1;
  auto total = (w.gan * k_gan) * terms.gan + (w.fm * k_fm) * terms.fm + (w.cyc * k_cyc) * cyc;
  return {total, v};
}

}  // namespace ganimorph::loss
