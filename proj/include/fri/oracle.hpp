#pragma once

#include <vector>

#include "fri/amplitude.hpp"
#include "fri/common.hpp"
#include "fri/kernels.hpp"
#include "fri/sampler.hpp"

namespace fri {

// Brute-force reference estimator: enumerate every ordered L-tuple of
// candidate delays on a uniform grid, solve least-squares amplitudes per
// tuple, keep the tuple with the smallest sample-domain MSE. Slow and
// trustworthy; the learning pipeline is validated against it.
struct GridSearchResult {
  std::vector<double> delays;
  std::vector<double> amplitudes;
  double residual = 0.0;  // (1/N) || G a - y ||^2 at the winner
};

namespace detail {

inline uint64_t tuple_count(uint64_t m, uint64_t l) {
  // C(m, l) for l <= 3 without overflow drama.
  if (l == 1) return m;
  if (l == 2) return m * (m - 1) / 2;
  return m * (m - 1) / 2 * (m - 2) / 3;
}

}  // namespace detail

inline GridSearchResult grid_search(const SampleVector& samples, const Kernel& kernel,
                                    const PulseShape& pulse, double tau_min, double tau_max,
                                    size_t order, double tau_grid_step) {
  if (order == 0 || order > 3) {
    throw ConfigError("grid_search: order must be 1..3 (combinatorial guard)");
  }
  if (!(tau_grid_step > 0)) throw ConfigError("grid_search: tau_grid_step must be > 0");
  if (!(tau_max > tau_min)) throw ConfigError("grid_search: empty delay range");
  const size_t m = static_cast<size_t>(std::floor((tau_max - tau_min) / tau_grid_step)) + 1;
  if (detail::tuple_count(m, order) > 10000000ULL) {
    throw ConfigError(str_printf(
        "grid_search: %zu candidates give more than 1e7 tuples; coarsen tau_grid_step", m));
  }

  const size_t n = samples.grid.n;
  const std::vector<double>& y = samples.values;

  // Response column per candidate plus all pairwise Gram entries.
  std::vector<double> cols(m * n);
  std::vector<double> candidates(m);
  for (size_t c = 0; c < m; ++c) {
    candidates[c] = tau_min + static_cast<double>(c) * tau_grid_step;
    for (size_t i = 0; i < n; ++i) {
      cols[c * n + i] = pulse_response(kernel, pulse, samples.grid.instant(i) - candidates[c]);
    }
  }
  std::vector<double> gram(m * m);
  std::vector<double> proj(m);
  for (size_t a = 0; a < m; ++a) {
    for (size_t b = 0; b <= a; ++b) {
      double acc = 0.0;
      for (size_t i = 0; i < n; ++i) acc += cols[a * n + i] * cols[b * n + i];
      gram[a * m + b] = acc;
      gram[b * m + a] = acc;
    }
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += cols[a * n + i] * y[i];
    proj[a] = acc;
  }
  double y_energy = 0.0;
  for (double v : y) y_energy += v * v;

  GridSearchResult best;
  best.residual = std::numeric_limits<double>::infinity();
  std::vector<size_t> idx(order);
  std::vector<double> gtg(order * order), gty(order);

  const auto evaluate_tuple = [&](const std::vector<size_t>& tuple) {
    const size_t l = tuple.size();
    for (size_t r = 0; r < l; ++r) {
      gty[r] = proj[tuple[r]];
      for (size_t c = 0; c < l; ++c) gtg[r * l + c] = gram[tuple[r] * m + tuple[c]];
    }
    std::vector<double> a;
    try {
      a = detail::solve_spd(gtg, gty, l, 1e-12);
    } catch (const NumericError&) {
      return;  // numerically collinear columns; such tuples cannot win anyway
    }
    double residual = y_energy;
    for (size_t r = 0; r < l; ++r) {
      residual -= 2.0 * a[r] * proj[tuple[r]];
      for (size_t c = 0; c < l; ++c) residual += a[r] * a[c] * gram[tuple[r] * m + tuple[c]];
    }
    residual /= static_cast<double>(n);
    if (residual < best.residual) {
      best.residual = residual;
      best.amplitudes = a;
      best.delays.resize(l);
      for (size_t r = 0; r < l; ++r) best.delays[r] = candidates[tuple[r]];
    }
  };

  if (order == 1) {
    for (size_t a = 0; a < m; ++a) evaluate_tuple({a});
  } else if (order == 2) {
    for (size_t a = 0; a < m; ++a) {
      for (size_t b = a + 1; b < m; ++b) evaluate_tuple({a, b});
    }
  } else {
    for (size_t a = 0; a < m; ++a) {
      for (size_t b = a + 1; b < m; ++b) {
        for (size_t c = b + 1; c < m; ++c) evaluate_tuple({a, b, c});
      }
    }
  }
  best.residual = std::max(best.residual, 0.0);  // guard tiny negative round-off
  return best;
}

// Residual of an explicit (delays, amplitudes) guess under the same forward
// model; lets tests verify the argmin property of grid_search.
inline double sample_domain_residual(const SampleVector& samples, const Kernel& kernel,
                                     const PulseShape& pulse, const std::vector<double>& delays,
                                     const std::vector<double>& amplitudes) {
  const size_t n = samples.grid.n;
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double pred = 0.0;
    for (size_t l = 0; l < delays.size(); ++l) {
      pred += amplitudes[l] * pulse_response(kernel, pulse, samples.grid.instant(i) - delays[l]);
    }
    const double d = pred - samples.values[i];
    acc += d * d;
  }
  return acc / static_cast<double>(n);
}

}  // namespace fri
