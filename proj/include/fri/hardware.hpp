#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

#include "fri/common.hpp"
#include "fri/kernels.hpp"
#include "fri/sampler.hpp"

namespace fri {

// Unity-gain Sallen-Key realization of a two-real-pole kernel. The defining
// relations are
//   1/a1 + 1/a2     = C2 (R1 + R2)
//   1/(a1 a2)       = C1 C2 R1 R2
// which for fixed capacitors reduce to a quadratic in the resistances.
struct RcRealization {
  double r1 = 0.0;  // ohms, assigned the larger quadratic root
  double r2 = 0.0;
  double c1 = 0.0;  // farads
  double c2 = 0.0;
  double alpha1 = 0.0;  // implied poles, ascending
  double alpha2 = 0.0;

  void validate() const {
    if (!(r1 > 0) || !(r2 > 0) || !(c1 > 0) || !(c2 > 0)) {
      throw ConfigError("RcRealization: components must be positive");
    }
  }
};

inline std::pair<double, double> rc_to_poles(double r1, double r2, double c1, double c2) {
  if (!(r1 > 0) || !(r2 > 0) || !(c1 > 0) || !(c2 > 0)) {
    throw ConfigError("rc_to_poles: components must be positive");
  }
  // Time constants 1/a are the roots of u^2 - s u + p = 0.
  const double s = c2 * (r1 + r2);
  const double p = c1 * c2 * r1 * r2;
  const double disc = s * s - 4.0 * p;
  if (disc < 0.0) {
    throw NumericError(str_printf(
        "rc_to_poles: complex poles (underdamped stage, discriminant %g); this component set "
        "leaves the two-real-pole family", disc));
  }
  const double u_big = 0.5 * (s + std::sqrt(disc));
  const double u_small = p / u_big;
  return {1.0 / u_big, 1.0 / u_small};  // ascending poles
}

inline RcRealization poles_to_rc(double alpha1, double alpha2, double c1, double c2) {
  if (!(alpha1 > 0) || !(alpha2 > alpha1)) {
    throw ConfigError("poles_to_rc: need 0 < alpha1 < alpha2");
  }
  if (!(c1 > 0) || !(c2 > 0)) throw ConfigError("poles_to_rc: capacitors must be positive");
  const double s = (1.0 / alpha1 + 1.0 / alpha2) / c2;
  const double p = 1.0 / (alpha1 * alpha2 * c1 * c2);
  const double disc = s * s - 4.0 * p;
  if (disc < 0.0) {
    // Real resistances need C1 >= 4 a1 a2 C2 / (a1 + a2)^2.
    const double c1_needed = 4.0 * alpha1 * alpha2 * c2 / ((alpha1 + alpha2) * (alpha1 + alpha2));
    throw NumericError(str_printf(
        "poles_to_rc: no real resistor pair for C1=%g, C2=%g; need C1 >= %g (or lower C2)", c1,
        c2, c1_needed));
  }
  RcRealization out;
  out.r1 = 0.5 * (s + std::sqrt(disc));
  out.r2 = p / out.r1;
  out.c1 = c1;
  out.c2 = c2;
  const auto poles = rc_to_poles(out.r1, out.r2, c1, c2);
  out.alpha1 = poles.first;
  out.alpha2 = poles.second;
  return out;
}

enum class ESeries { E12, E24, E96 };

inline ESeries eseries_from_string(const std::string& s) {
  if (s == "E12" || s == "e12") return ESeries::E12;
  if (s == "E24" || s == "e24") return ESeries::E24;
  if (s == "E96" || s == "e96") return ESeries::E96;
  throw ConfigError(str_printf("unknown E-series '%s' (use E12, E24 or E96)", s.c_str()));
}

inline const std::vector<double>& eseries_table(ESeries series) {
  static const std::vector<double> e12 = {1.0, 1.2, 1.5, 1.8, 2.2, 2.7,
                                          3.3, 3.9, 4.7, 5.6, 6.8, 8.2};
  static const std::vector<double> e24 = {1.0, 1.1, 1.2, 1.3, 1.5, 1.6, 1.8, 2.0,
                                          2.2, 2.4, 2.7, 3.0, 3.3, 3.6, 3.9, 4.3,
                                          4.7, 5.1, 5.6, 6.2, 6.8, 7.5, 8.2, 9.1};
  static const std::vector<double> e96 = {
      1.00, 1.02, 1.05, 1.07, 1.10, 1.13, 1.15, 1.18, 1.21, 1.24, 1.27, 1.30, 1.33, 1.37,
      1.40, 1.43, 1.47, 1.50, 1.54, 1.58, 1.62, 1.65, 1.69, 1.74, 1.78, 1.82, 1.87, 1.91,
      1.96, 2.00, 2.05, 2.10, 2.15, 2.21, 2.26, 2.32, 2.37, 2.43, 2.49, 2.55, 2.61, 2.67,
      2.74, 2.80, 2.87, 2.94, 3.01, 3.09, 3.16, 3.24, 3.32, 3.40, 3.48, 3.57, 3.65, 3.74,
      3.83, 3.92, 4.02, 4.12, 4.22, 4.32, 4.42, 4.53, 4.64, 4.75, 4.87, 4.99, 5.11, 5.23,
      5.36, 5.49, 5.62, 5.76, 5.90, 6.04, 6.19, 6.34, 6.49, 6.65, 6.81, 6.98, 7.15, 7.32,
      7.50, 7.68, 7.87, 8.06, 8.25, 8.45, 8.66, 8.87, 9.09, 9.31, 9.53, 9.76};
  switch (series) {
    case ESeries::E12:
      return e12;
    case ESeries::E24:
      return e24;
    case ESeries::E96:
      return e96;
  }
  return e24;
}

// Nearest standard value by log-scale distance across decades; ties resolve
// to the smaller value.
inline double round_to_series(double value, ESeries series) {
  if (!(value > 0)) throw ConfigError("round_to_series: value must be positive");
  const auto& table = eseries_table(series);
  const double exponent = std::floor(std::log10(value));
  double best = 0.0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int d = -1; d <= 1; ++d) {
    const double decade = std::pow(10.0, exponent + d);
    for (double mantissa : table) {
      const double candidate = mantissa * decade;
      const double dist = std::fabs(std::log(value / candidate));
      if (dist < best_dist) {
        best_dist = dist;
        best = candidate;
      }
    }
  }
  return best;
}

// Linear resampling of a uniform capture onto another grid (bench captures
// land on the encoder's grid this way). Outside the capture span the signal
// is taken as zero.
inline SampleVector resample_linear(const SampleVector& capture, const SampleGrid& target) {
  SampleVector out;
  out.grid = target;
  out.snr_db = capture.snr_db;
  out.values.assign(target.n, 0.0);
  for (size_t i = 0; i < target.n; ++i) {
    const double x = (target.instant(i) - capture.grid.t_start) / capture.grid.t_s;
    if (x < -1e-9 || x > static_cast<double>(capture.grid.n - 1) + 1e-9) continue;
    // Snap to capture nodes so a same-grid resample is the exact identity.
    const double xr = std::round(x);
    if (std::fabs(x - xr) < 1e-9) {
      out.values[i] = capture.values[static_cast<size_t>(xr)];
      continue;
    }
    const size_t lo = std::min(static_cast<size_t>(x), capture.grid.n - 2);
    const double frac = x - static_cast<double>(lo);
    out.values[i] = capture.values[lo] * (1.0 - frac) + capture.values[lo + 1] * frac;
  }
  return out;
}

// Drift and impulse-response deviation of a realized filter against the
// learned poles, plus (when the caller supplies a frozen-encoder evaluator)
// the end-to-end delay NMSE on samples from the drifted kernel.
struct RealizationReport {
  double learned_alpha1 = 0.0;
  double learned_alpha2 = 0.0;
  RcRealization realized;
  double drift1 = 0.0;  // relative, per pole, against the learned values
  double drift2 = 0.0;
  double response_max_dev = 0.0;
  double response_l2_dev = 0.0;
  std::optional<double> encoder_nmse_db;
};

inline RealizationReport realization_report(
    double learned_alpha1, double learned_alpha2, const RcRealization& realized,
    const SampleGrid& grid,
    const std::function<double(const TwoExpKernel&)>& encoder_nmse = nullptr) {
  realized.validate();
  RealizationReport report;
  report.learned_alpha1 = learned_alpha1;
  report.learned_alpha2 = learned_alpha2;
  report.realized = realized;
  report.drift1 = (realized.alpha1 - learned_alpha1) / learned_alpha1;
  report.drift2 = (realized.alpha2 - learned_alpha2) / learned_alpha2;

  // Compare impulse responses on a fine grid over the observation horizon.
  const TwoExpKernel learned = TwoExpKernel::from_alphas(learned_alpha1, learned_alpha2);
  const TwoExpKernel drifted = TwoExpKernel::from_alphas(realized.alpha1, realized.alpha2);
  const double horizon = static_cast<double>(grid.n) * grid.t_s;
  const size_t points = 4096;
  const double dt = horizon / static_cast<double>(points);
  double max_dev = 0.0, l2 = 0.0;
  for (size_t i = 0; i <= points; ++i) {
    const double t = static_cast<double>(i) * dt;
    const double d = drifted.evaluate(t) - learned.evaluate(t);
    max_dev = std::max(max_dev, std::fabs(d));
    l2 += d * d * dt;
  }
  report.response_max_dev = max_dev;
  report.response_l2_dev = std::sqrt(l2);
  if (encoder_nmse) report.encoder_nmse_db = encoder_nmse(drifted);
  return report;
}

inline nlohmann::ordered_json realization_report_to_json(const RealizationReport& r) {
  nlohmann::ordered_json j;
  j["learned"] = {{"alpha1", r.learned_alpha1}, {"alpha2", r.learned_alpha2}};
  j["realized"] = {{"r1_ohm", r.realized.r1},     {"r2_ohm", r.realized.r2},
                   {"c1_farad", r.realized.c1},   {"c2_farad", r.realized.c2},
                   {"alpha1", r.realized.alpha1}, {"alpha2", r.realized.alpha2}};
  j["drift"] = {{"alpha1_rel", r.drift1}, {"alpha2_rel", r.drift2}};
  j["response_deviation"] = {{"max", r.response_max_dev}, {"l2", r.response_l2_dev}};
  if (r.encoder_nmse_db) {
    j["encoder_nmse_db"] = *r.encoder_nmse_db;
  } else {
    j["encoder_nmse_db"] = nullptr;
  }
  return j;
}

}  // namespace fri
