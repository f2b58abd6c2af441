#pragma once

#include <cmath>
#include <span>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fri/common.hpp"
#include "fri/signal.hpp"

namespace fri {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kSqrt2 = 1.41421356237309504880;

// Closed support window; every kernel evaluates to exactly 0 outside it.
struct KernelSupport {
  double t_min;
  double t_max;

  void validate() const {
    if (!(t_min < t_max)) throw ConfigError("KernelSupport: t_min must be < t_max");
  }
  double length() const { return t_max - t_min; }
  bool contains(double t) const { return t >= t_min && t <= t_max; }
};

namespace detail {

// Integral of exp(-u^2 / 2 sigma^2) over [a, b].
inline double gaussian_integral(double sigma, double a, double b) {
  const double scale = sigma * std::sqrt(kPi / 2.0);
  const double inv = 1.0 / (sigma * kSqrt2);
  return scale * (std::erf(b * inv) - std::erf(a * inv));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Fixed kernels: truncated Gaussian and truncated Gaussian pair. Not
// learnable here; they serve as hand-designed baselines.
// ---------------------------------------------------------------------------

struct TruncatedGaussianKernel {
  double sigma;
  KernelSupport window;

  TruncatedGaussianKernel(double sigma_, KernelSupport window_)
      : sigma(sigma_), window(window_) {
    if (!(sigma > 0)) throw ConfigError("TruncatedGaussianKernel: sigma must be > 0");
    window.validate();
  }

  double evaluate(double t) const {
    if (!window.contains(t)) return 0.0;
    return std::exp(-t * t / (2.0 * sigma * sigma));
  }

  // Exact integral over [a, b], clipped to the truncation window.
  double integral(double a, double b) const {
    a = std::max(a, window.t_min);
    b = std::min(b, window.t_max);
    if (a >= b) return 0.0;
    return detail::gaussian_integral(sigma, a, b);
  }

  KernelSupport support() const { return window; }
};

struct GaussianPairKernel {
  double gain_a;
  double gain_b;
  double t1;
  double t2;
  double sigma;
  KernelSupport window;

  GaussianPairKernel(double gain_a_, double gain_b_, double t1_, double t2_, double sigma_,
                     KernelSupport window_)
      : gain_a(gain_a_), gain_b(gain_b_), t1(t1_), t2(t2_), sigma(sigma_), window(window_) {
    if (!(sigma > 0)) throw ConfigError("GaussianPairKernel: sigma must be > 0");
    window.validate();
    if (t1 <= window.t_min || t1 >= window.t_max || t2 <= window.t_min || t2 >= window.t_max) {
      throw ConfigError("GaussianPairKernel: lobe centers must lie inside the support window");
    }
  }

  double evaluate(double t) const {
    if (!window.contains(t)) return 0.0;
    const double inv = 1.0 / (2.0 * sigma * sigma);
    return gain_a * std::exp(-(t - t1) * (t - t1) * inv) +
           gain_b * std::exp(-(t - t2) * (t - t2) * inv);
  }

  double integral(double a, double b) const {
    a = std::max(a, window.t_min);
    b = std::min(b, window.t_max);
    if (a >= b) return 0.0;
    return gain_a * detail::gaussian_integral(sigma, a - t1, b - t1) +
           gain_b * detail::gaussian_integral(sigma, a - t2, b - t2);
  }

  KernelSupport support() const { return window; }
};

// ---------------------------------------------------------------------------
// Piecewise-linear kernel: weighted first-order B-spline basis on a uniform
// knot grid k = -K..K, support [-K T, K T]. Linear in its coefficients, which
// is what makes the joint-learning gradient path cheap and exact.
// ---------------------------------------------------------------------------

class BSplineKernel {
 public:
  BSplineKernel(std::vector<double> coefficients, double knot_spacing)
      : coeffs_(std::move(coefficients)), spacing_(knot_spacing) {
    if (coeffs_.empty() || coeffs_.size() % 2 == 0) {
      throw ConfigError("BSplineKernel: coefficient count must be odd (2K+1)");
    }
    if (!(spacing_ > 0)) throw ConfigError("BSplineKernel: knot spacing must be > 0");
  }

  // Constant coefficient vector plus a low-amplitude smooth perturbation
  // (a few low-frequency cosines). One of the two joint-learning starts.
  static BSplineKernel smooth_init(int half_knots, double knot_spacing, double base,
                                   double perturb_amp, uint64_t seed) {
    std::vector<double> c(static_cast<size_t>(2 * half_knots + 1), base);
    Rng rng(seed);
    const int n_waves = 3;
    std::vector<double> phase(n_waves), amp(n_waves);
    for (int w = 0; w < n_waves; ++w) {
      phase[w] = rng.uniform(0.0, 2.0 * kPi);
      amp[w] = perturb_amp * rng.uniform(0.5, 1.0);
    }
    for (size_t i = 0; i < c.size(); ++i) {
      const double x = static_cast<double>(i) / static_cast<double>(c.size() - 1);
      for (int w = 0; w < n_waves; ++w) {
        c[i] += amp[w] * std::cos(2.0 * kPi * (w + 1) * x + phase[w]);
      }
    }
    return BSplineKernel(std::move(c), knot_spacing);
  }

  // Coefficients sampled from a Gaussian bump of width sigma. The other
  // joint-learning start.
  static BSplineKernel gaussian_init(int half_knots, double knot_spacing, double sigma) {
    std::vector<double> c(static_cast<size_t>(2 * half_knots + 1));
    for (int k = -half_knots; k <= half_knots; ++k) {
      const double t = k * knot_spacing;
      c[static_cast<size_t>(k + half_knots)] = std::exp(-t * t / (2.0 * sigma * sigma));
    }
    return BSplineKernel(std::move(c), knot_spacing);
  }

  int half_knots() const { return static_cast<int>(coeffs_.size() / 2); }
  double knot_spacing() const { return spacing_; }
  const std::vector<double>& coefficients() const { return coeffs_; }
  void set_coefficients(std::span<const double> c) {
    if (c.size() != coeffs_.size()) {
      throw ConfigError("BSplineKernel: coefficient count mismatch");
    }
    std::copy(c.begin(), c.end(), coeffs_.begin());
  }

  KernelSupport support() const {
    const double half = half_knots() * spacing_;
    return {-half, half};
  }

  double evaluate(double t) const {
    const int K = half_knots();
    const double half = K * spacing_;
    if (t < -half || t > half) return 0.0;
    const double x = t / spacing_;  // knot units
    double k0 = std::floor(x);
    double frac = x - k0;
    int i0 = static_cast<int>(k0) + K;
    double v = 0.0;
    if (i0 >= 0 && i0 < static_cast<int>(coeffs_.size())) v += coeffs_[i0] * (1.0 - frac);
    if (i0 + 1 >= 0 && i0 + 1 < static_cast<int>(coeffs_.size())) v += coeffs_[i0 + 1] * frac;
    return v;
  }

  // Adds weight * beta_k(t) into out[k] for the (at most two) active basis
  // functions. Backbone of the sample->coefficient Jacobian.
  void accumulate_basis(double t, double weight, std::span<double> out) const {
    const int K = half_knots();
    const double half = K * spacing_;
    if (t < -half || t > half) return;
    const double x = t / spacing_;
    double k0 = std::floor(x);
    double frac = x - k0;
    int i0 = static_cast<int>(k0) + K;
    if (i0 >= 0 && i0 < static_cast<int>(out.size())) out[i0] += weight * (1.0 - frac);
    if (i0 + 1 >= 0 && i0 + 1 < static_cast<int>(out.size())) out[i0 + 1] += weight * frac;
  }

  // Exact integral over [a, b] of the piecewise-linear shape.
  double integral(double a, double b) const {
    const int K = half_knots();
    const double half = K * spacing_;
    a = std::max(a, -half);
    b = std::min(b, half);
    if (a >= b) return 0.0;
    return antiderivative(b) - antiderivative(a);
  }

 private:
  // Integral from -K T to t (t inside support).
  double antiderivative(double t) const {
    const int K = half_knots();
    const double x = t / spacing_ + K;  // segments start at 0
    int seg = static_cast<int>(std::floor(x));
    seg = std::clamp(seg, 0, 2 * K - 1);
    const double frac = std::clamp(x - seg, 0.0, 1.0);
    double area = 0.0;
    for (int s = 0; s < seg; ++s) {
      area += 0.5 * (coeffs_[s] + coeffs_[s + 1]);
    }
    const double c0 = coeffs_[seg];
    const double c1 = coeffs_[seg + 1];
    area += c0 * frac + 0.5 * (c1 - c0) * frac * frac;
    return area * spacing_;
  }

  std::vector<double> coeffs_;
  double spacing_;
};

// ---------------------------------------------------------------------------
// Two-exponential kernel h(t) = A0 (e^{-a1 t} - e^{-a2 t}) u(t) with
// A0 = a1 a2 / (a2 - a1), i.e. unity DC gain. This is the impulse response of
// a two-real-pole low-pass stage, learnable through its poles.
//
// The poles live in a box: a1 = a_min + (a_max - a_min - gap) s(p1) and
// a2 = a1 + gap + (a_max - a1 - gap) s(p2) with s the logistic map, so
// a_min <= a1 < a2 <= a_max and a2 - a1 >= gap hold for any raw (p1, p2).
// The minimum gap keeps A0 finite.
//
// The response is treated as identically zero past t_horizon = 20 / a1
// (tail mass < 1e-8), which gives every sampler a compact window.
// ---------------------------------------------------------------------------

class TwoExpKernel {
 public:
  static constexpr double kHorizonFactor = 20.0;
  static constexpr double kDefaultAlphaMin = 1.0;
  static constexpr double kDefaultAlphaMax = 100.0;
  static constexpr double kDefaultMinGap = 1e-2;

  TwoExpKernel(double raw_p1, double raw_p2, double alpha_min, double alpha_max, double min_gap)
      : p1_(raw_p1), p2_(raw_p2), alpha_min_(alpha_min), alpha_max_(alpha_max), gap_(min_gap) {
    if (!(alpha_min > 0) || !(alpha_max > alpha_min) || !(min_gap > 0) ||
        !(alpha_max - alpha_min > min_gap)) {
      throw ConfigError("TwoExpKernel: need 0 < alpha_min < alpha_max and 0 < min_gap < range");
    }
  }

  static TwoExpKernel from_alphas(double alpha1, double alpha2,
                                  double alpha_min = kDefaultAlphaMin,
                                  double alpha_max = kDefaultAlphaMax,
                                  double min_gap = kDefaultMinGap) {
    const double u1 = (alpha1 - alpha_min) / (alpha_max - alpha_min - min_gap);
    if (!(u1 > 0.0) || !(u1 < 1.0)) {
      throw ConfigError(str_printf("TwoExpKernel: alpha1=%g must lie strictly inside (%g, %g)",
                                   alpha1, alpha_min, alpha_max - min_gap));
    }
    const double span = alpha_max - alpha1 - min_gap;
    const double u2 = (alpha2 - alpha1 - min_gap) / span;
    if (!(span > 0.0) || !(u2 > 0.0) || !(u2 < 1.0)) {
      throw ConfigError(str_printf(
          "TwoExpKernel: alpha2=%g must lie strictly inside (alpha1+gap, alpha_max) = (%g, %g)",
          alpha2, alpha1 + min_gap, alpha_max));
    }
    return TwoExpKernel(logit(u1), logit(u2), alpha_min, alpha_max, min_gap);
  }

  double alpha1() const {
    const double a1 = alpha_min_ + (alpha_max_ - alpha_min_ - gap_) * logistic(p1_);
    return std::clamp(a1, alpha_min_, alpha_max_ - gap_);
  }
  double alpha2() const {
    const double a1 = alpha1();
    const double a2 = a1 + gap_ + (alpha_max_ - a1 - gap_) * logistic(p2_);
    return std::clamp(a2, a1 + gap_, alpha_max_);
  }
  double gain() const {
    const double a1 = alpha1(), a2 = alpha2();
    return a1 * a2 / (a2 - a1);
  }
  double horizon() const { return kHorizonFactor / alpha1(); }
  double alpha_min() const { return alpha_min_; }
  double alpha_max() const { return alpha_max_; }
  double min_gap() const { return gap_; }
  double raw_p1() const { return p1_; }
  double raw_p2() const { return p2_; }
  void set_raw(double p1, double p2) {
    p1_ = p1;
    p2_ = p2;
  }

  KernelSupport support() const { return {0.0, horizon()}; }

  double evaluate(double t) const {
    if (t < 0.0 || t > horizon()) return 0.0;
    const double a1 = alpha1(), a2 = alpha2();
    return (a1 * a2 / (a2 - a1)) * (std::exp(-a1 * t) - std::exp(-a2 * t));
  }

  double integral(double a, double b) const {
    const double hor = horizon();
    a = std::clamp(a, 0.0, hor);
    b = std::clamp(b, 0.0, hor);
    if (a >= b) return 0.0;
    return antiderivative(b) - antiderivative(a);
  }

  // d h / d alpha_i at t (zero outside the support). Includes the derivative
  // of the unity-gain constant A0.
  void alpha_gradient(double t, double& d_alpha1, double& d_alpha2) const {
    if (t < 0.0 || t > horizon()) {
      d_alpha1 = d_alpha2 = 0.0;
      return;
    }
    const double a1 = alpha1(), a2 = alpha2();
    const double diff = a2 - a1;
    const double a0 = a1 * a2 / diff;
    const double e1 = std::exp(-a1 * t), e2 = std::exp(-a2 * t);
    const double bracket = e1 - e2;
    d_alpha1 = (a2 * a2 / (diff * diff)) * bracket - a0 * t * e1;
    d_alpha2 = -(a1 * a1 / (diff * diff)) * bracket + a0 * t * e2;
  }

  // d h / d raw params, chaining through the logistic pole box.
  void raw_gradient(double t, double& d_p1, double& d_p2) const {
    double da1, da2;
    alpha_gradient(t, da1, da2);
    const double s1 = logistic(p1_), s2 = logistic(p2_);
    const double a1 = alpha1();
    const double dalpha1_dp1 = (alpha_max_ - alpha_min_ - gap_) * s1 * (1.0 - s1);
    const double dalpha2_dp1 = (1.0 - s2) * dalpha1_dp1;
    const double dalpha2_dp2 = (alpha_max_ - a1 - gap_) * s2 * (1.0 - s2);
    d_p1 = da1 * dalpha1_dp1 + da2 * dalpha2_dp1;
    d_p2 = da2 * dalpha2_dp2;
  }

 private:
  static double logistic(double p) { return 1.0 / (1.0 + std::exp(-p)); }
  static double logit(double u) { return std::log(u / (1.0 - u)); }

  // Integral of h from 0 to x, x in [0, horizon].
  double antiderivative(double x) const {
    const double a1 = alpha1(), a2 = alpha2();
    const double a0 = a1 * a2 / (a2 - a1);
    return a0 * ((1.0 - std::exp(-a1 * x)) / a1 - (1.0 - std::exp(-a2 * x)) / a2);
  }

  double p1_, p2_;
  double alpha_min_, alpha_max_, gap_;
};

// Time of the impulse-response maximum, ln(a2/a1) / (a2 - a1).
inline double peak_time(const TwoExpKernel& k) {
  const double a1 = k.alpha1(), a2 = k.alpha2();
  return std::log(a2 / a1) / (a2 - a1);
}

// ---------------------------------------------------------------------------
// Kernel variant and uniform operations.
// ---------------------------------------------------------------------------

using Kernel =
    std::variant<TruncatedGaussianKernel, GaussianPairKernel, BSplineKernel, TwoExpKernel>;

inline double evaluate(const Kernel& kernel, double t) {
  return std::visit([t](const auto& k) { return k.evaluate(t); }, kernel);
}

inline KernelSupport support(const Kernel& kernel) {
  return std::visit([](const auto& k) { return k.support(); }, kernel);
}

inline double integral(const Kernel& kernel, double a, double b) {
  return std::visit([a, b](const auto& k) { return k.integral(a, b); }, kernel);
}

// Response at time t to a unit pulse placed at the origin. Dirac pulses are
// the convolution identity; rectangles integrate the kernel over a sliding
// window [t - w, t], evaluated in closed form for every kernel type.
inline double pulse_response(const Kernel& kernel, const PulseShape& pulse, double t) {
  if (std::holds_alternative<DiracPulse>(pulse)) return evaluate(kernel, t);
  const double w = std::get<RectanglePulse>(pulse).width;
  return integral(kernel, t - w, t);
}

inline bool is_learnable(const Kernel& kernel) {
  return std::holds_alternative<BSplineKernel>(kernel) ||
         std::holds_alternative<TwoExpKernel>(kernel);
}

// Gradient of g(t) with respect to the kernel's own parameterization:
// B-spline coefficients or two-exponential poles (alpha space). Fixed
// kernels report an empty gradient.
inline std::vector<double> param_gradient(const Kernel& kernel, double t) {
  if (const auto* bs = std::get_if<BSplineKernel>(&kernel)) {
    std::vector<double> g(bs->coefficients().size(), 0.0);
    bs->accumulate_basis(t, 1.0, g);
    return g;
  }
  if (const auto* te = std::get_if<TwoExpKernel>(&kernel)) {
    std::vector<double> g(2, 0.0);
    te->alpha_gradient(t, g[0], g[1]);
    return g;
  }
  return {};
}

// Raw (unconstrained) trainable parameters: identical to coefficients for the
// B-spline; the logistic pre-images of the poles for the two-exponential.
inline size_t raw_param_count(const Kernel& kernel) {
  if (const auto* bs = std::get_if<BSplineKernel>(&kernel)) return bs->coefficients().size();
  if (std::holds_alternative<TwoExpKernel>(kernel)) return 2;
  return 0;
}

inline std::vector<double> raw_params(const Kernel& kernel) {
  if (const auto* bs = std::get_if<BSplineKernel>(&kernel)) return bs->coefficients();
  if (const auto* te = std::get_if<TwoExpKernel>(&kernel)) return {te->raw_p1(), te->raw_p2()};
  return {};
}

inline void set_raw_params(Kernel& kernel, std::span<const double> raw) {
  if (auto* bs = std::get_if<BSplineKernel>(&kernel)) {
    bs->set_coefficients(raw);
    return;
  }
  if (auto* te = std::get_if<TwoExpKernel>(&kernel)) {
    if (raw.size() != 2) throw ConfigError("TwoExpKernel: expected 2 raw parameters");
    te->set_raw(raw[0], raw[1]);
    return;
  }
  throw ConfigError("set_raw_params: kernel is not learnable");
}

// ---------------------------------------------------------------------------
// JSON round trip: {"type": ..., "params": {...}, "support": [t_min, t_max]}.
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json kernel_to_json(const Kernel& kernel) {
  nlohmann::ordered_json j;
  const KernelSupport sup = support(kernel);
  if (const auto* k = std::get_if<TruncatedGaussianKernel>(&kernel)) {
    j["type"] = "truncated_gaussian";
    j["params"] = {{"sigma", k->sigma}};
  } else if (const auto* k = std::get_if<GaussianPairKernel>(&kernel)) {
    j["type"] = "gaussian_pair";
    j["params"] = {{"gain_a", k->gain_a},
                   {"gain_b", k->gain_b},
                   {"t1", k->t1},
                   {"t2", k->t2},
                   {"sigma", k->sigma}};
  } else if (const auto* k = std::get_if<BSplineKernel>(&kernel)) {
    j["type"] = "bspline";
    j["params"] = {{"knot_spacing", k->knot_spacing()}, {"coefficients", k->coefficients()}};
  } else if (const auto* k = std::get_if<TwoExpKernel>(&kernel)) {
    j["type"] = "two_exp";
    j["params"] = {{"alpha1", k->alpha1()},
                   {"alpha2", k->alpha2()},
                   {"alpha_min", k->alpha_min()},
                   {"alpha_max", k->alpha_max()},
                   {"min_gap", k->min_gap()}};
  }
  j["support"] = {sup.t_min, sup.t_max};
  return j;
}

inline Kernel kernel_from_json(const nlohmann::ordered_json& j) {
  const std::string type = j.at("type").get<std::string>();
  const auto& p = j.at("params");
  if (type == "truncated_gaussian") {
    const auto sup = j.at("support").get<std::vector<double>>();
    if (sup.size() != 2) throw ConfigError("kernel: support must be [t_min, t_max]");
    return TruncatedGaussianKernel(p.at("sigma").get<double>(), {sup[0], sup[1]});
  }
  if (type == "gaussian_pair") {
    const auto sup = j.at("support").get<std::vector<double>>();
    if (sup.size() != 2) throw ConfigError("kernel: support must be [t_min, t_max]");
    return GaussianPairKernel(p.at("gain_a").get<double>(), p.at("gain_b").get<double>(),
                              p.at("t1").get<double>(), p.at("t2").get<double>(),
                              p.at("sigma").get<double>(), {sup[0], sup[1]});
  }
  if (type == "bspline") {
    return BSplineKernel(p.at("coefficients").get<std::vector<double>>(),
                         p.at("knot_spacing").get<double>());
  }
  if (type == "two_exp") {
    return TwoExpKernel::from_alphas(
        p.at("alpha1").get<double>(), p.at("alpha2").get<double>(),
        p.value("alpha_min", TwoExpKernel::kDefaultAlphaMin),
        p.value("alpha_max", TwoExpKernel::kDefaultAlphaMax),
        p.value("min_gap", TwoExpKernel::kDefaultMinGap));
  }
  throw ConfigError(str_printf("kernel: unknown type '%s'", type.c_str()));
}

}  // namespace fri
