#pragma once

#include <cmath>
#include <vector>

#include "fri/common.hpp"
#include "fri/kernels.hpp"
#include "fri/sampler.hpp"

namespace fri {

// Amplitude recovery for known (estimated) delays. The model is linear in
// the amplitudes: y[n] = sum_l a_l * G[n,l] with
// G[n,l] = pulse_response(kernel, pulse, t_n - tau_l). Samples must be the
// raw (unnormalized) measurements.
struct AmplitudeProblem {
  SampleVector samples;
  std::vector<double> delays;
  Kernel kernel;
  PulseShape pulse = DiracPulse{};

  void validate() const {
    if (delays.empty()) throw ConfigError("AmplitudeProblem: need at least one delay");
    if (samples.values.size() != samples.grid.n) {
      throw ConfigError("AmplitudeProblem: sample/grid size mismatch");
    }
    if (samples.grid.n < delays.size()) {
      throw ConfigError(str_printf("AmplitudeProblem: N=%zu < L=%zu", samples.grid.n,
                                   delays.size()));
    }
    for (size_t i = 0; i < delays.size(); ++i) {
      for (size_t j = i + 1; j < delays.size(); ++j) {
        if (std::fabs(delays[i] - delays[j]) < 1e-12) {
          throw NumericError(str_printf(
              "AmplitudeProblem: delays %zu and %zu collide at %.12g (design matrix is "
              "rank-deficient)",
              i, j, delays[i]));
        }
      }
    }
  }
};

// Row-major N x L design matrix.
inline std::vector<double> design_matrix(const AmplitudeProblem& problem) {
  const size_t n = problem.samples.grid.n;
  const size_t l = problem.delays.size();
  std::vector<double> g(n * l);
  for (size_t i = 0; i < n; ++i) {
    const double t = problem.samples.grid.instant(i);
    for (size_t j = 0; j < l; ++j) {
      g[i * l + j] = pulse_response(problem.kernel, problem.pulse, t - problem.delays[j]);
    }
  }
  return g;
}

namespace detail {

// Cholesky solve of (A + ridge I) x = b for a small symmetric system.
inline std::vector<double> solve_spd(std::vector<double> a, std::vector<double> b, size_t n,
                                     double ridge) {
  for (size_t i = 0; i < n; ++i) a[i * n + i] += ridge;
  // in-place lower Cholesky
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j <= i; ++j) {
      double sum = a[i * n + j];
      for (size_t k = 0; k < j; ++k) sum -= a[i * n + k] * a[j * n + k];
      if (i == j) {
        if (!(sum > 0.0)) {
          throw NumericError("solve_spd: matrix not positive definite (degenerate delays?)");
        }
        a[i * n + j] = std::sqrt(sum);
      } else {
        a[i * n + j] = sum / a[j * n + j];
      }
    }
  }
  for (size_t i = 0; i < n; ++i) {  // forward
    double sum = b[i];
    for (size_t k = 0; k < i; ++k) sum -= a[i * n + k] * b[k];
    b[i] = sum / a[i * n + i];
  }
  for (size_t i = n; i-- > 0;) {  // backward
    double sum = b[i];
    for (size_t k = i + 1; k < n; ++k) sum -= a[k * n + i] * b[k];
    b[i] = sum / a[i * n + i];
  }
  return b;
}

}  // namespace detail

inline constexpr double kAmplitudeRidge = 1e-10;

// Closed-form least squares through the normal equations; the tiny ridge
// keeps near-collisions solvable instead of silently exploding.
inline std::vector<double> estimate_amplitudes_ls(const AmplitudeProblem& problem) {
  problem.validate();
  const size_t n = problem.samples.grid.n;
  const size_t l = problem.delays.size();
  const std::vector<double> g = design_matrix(problem);
  std::vector<double> gtg(l * l, 0.0), gty(l, 0.0);
  for (size_t i = 0; i < n; ++i) {
    for (size_t r = 0; r < l; ++r) {
      gty[r] += g[i * l + r] * problem.samples.values[i];
      for (size_t c = 0; c <= r; ++c) gtg[r * l + c] += g[i * l + r] * g[i * l + c];
    }
  }
  for (size_t r = 0; r < l; ++r) {
    for (size_t c = r + 1; c < l; ++c) gtg[r * l + c] = gtg[c * l + r];
  }
  return detail::solve_spd(std::move(gtg), std::move(gty), l, kAmplitudeRidge);
}

inline double amplitude_mse(const AmplitudeProblem& problem, const std::vector<double>& g,
                            const std::vector<double>& a) {
  const size_t n = problem.samples.grid.n;
  const size_t l = problem.delays.size();
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double pred = 0.0;
    for (size_t j = 0; j < l; ++j) pred += g[i * l + j] * a[j];
    const double d = pred - problem.samples.values[i];
    acc += d * d;
  }
  return acc / static_cast<double>(n);
}

// Largest eigenvalue of G^T G by power iteration; used to pick a stable
// gradient-descent step size.
inline double suggest_gd_step(const AmplitudeProblem& problem) {
  const size_t n = problem.samples.grid.n;
  const size_t l = problem.delays.size();
  const std::vector<double> g = design_matrix(problem);
  std::vector<double> v(l, 1.0 / std::sqrt(static_cast<double>(l)));
  double lambda = 1.0;
  for (int iter = 0; iter < 50; ++iter) {
    std::vector<double> gv(n, 0.0);
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = 0; j < l; ++j) gv[i] += g[i * l + j] * v[j];
    }
    std::vector<double> w(l, 0.0);
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = 0; j < l; ++j) w[j] += g[i * l + j] * gv[i];
    }
    double norm = 0.0;
    for (double x : w) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 1.0;
    lambda = norm;
    for (size_t j = 0; j < l; ++j) v[j] = w[j] / norm;
  }
  // Gradient Lipschitz constant of (1/N)||Ga - y||^2 is 2 lambda / N.
  return 0.9 * static_cast<double>(n) / (2.0 * lambda);
}

struct GdOptions {
  size_t max_steps = 200000;
  double step = 0.0;       // <= 0 selects suggest_gd_step()
  double grad_tol = 1e-12;  // infinity-norm stop on the gradient
};

// Plain gradient descent on the sample-domain MSE from a standard-normal
// start. The objective is a strictly convex quadratic, so with a sane step
// this converges to the least-squares solution.
inline std::vector<double> estimate_amplitudes_gd(const AmplitudeProblem& problem, size_t steps,
                                                  double eta, uint64_t seed,
                                                  double grad_tol = 1e-12) {
  problem.validate();
  const size_t n = problem.samples.grid.n;
  const size_t l = problem.delays.size();
  const std::vector<double> g = design_matrix(problem);
  Rng rng(seed);
  std::vector<double> a(l);
  for (auto& v : a) v = rng.normal();
  if (steps == 0 || eta == 0.0) return a;

  double prev_loss = amplitude_mse(problem, g, a);
  int rising = 0;
  std::vector<double> residual(n), grad(l);
  for (size_t step = 0; step < steps; ++step) {
    for (size_t i = 0; i < n; ++i) {
      double pred = 0.0;
      for (size_t j = 0; j < l; ++j) pred += g[i * l + j] * a[j];
      residual[i] = pred - problem.samples.values[i];
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = 0; j < l; ++j) grad[j] += 2.0 * g[i * l + j] * residual[i];
    }
    double gmax = 0.0;
    for (size_t j = 0; j < l; ++j) {
      grad[j] /= static_cast<double>(n);
      gmax = std::max(gmax, std::fabs(grad[j]));
    }
    if (gmax < grad_tol) break;
    for (size_t j = 0; j < l; ++j) a[j] -= eta * grad[j];

    const double loss = amplitude_mse(problem, g, a);
    rising = loss > prev_loss ? rising + 1 : 0;
    if (rising >= 10) {
      throw NumericError(str_printf(
          "estimate_amplitudes_gd: diverging (loss rose 10 consecutive steps); "
          "reduce eta below %g", eta));
    }
    prev_loss = loss;
  }
  return a;
}

inline std::vector<double> estimate_amplitudes_gd_auto(const AmplitudeProblem& problem,
                                                       uint64_t seed) {
  return estimate_amplitudes_gd(problem, GdOptions{}.max_steps, suggest_gd_step(problem), seed);
}

}  // namespace fri
