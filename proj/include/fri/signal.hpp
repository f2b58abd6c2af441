#pragma once

#include <limits>
#include <optional>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fri/common.hpp"

namespace fri {

// One sparse-pulse signal instance: amplitudes a_l and strictly increasing
// delays tau_l. Delays are sorted at construction and stay sorted; all
// downstream losses and metrics rely on that ordering.
struct FriSignal {
  std::vector<double> amplitudes;
  std::vector<double> delays;

  FriSignal() = default;
  FriSignal(std::vector<double> a, std::vector<double> tau)
      : amplitudes(std::move(a)), delays(std::move(tau)) {
    if (amplitudes.size() != delays.size() || amplitudes.empty()) {
      throw ConfigError("FriSignal: amplitudes and delays must have equal, nonzero length");
    }
    for (size_t i = 1; i < delays.size(); ++i) {
      if (!(delays[i] > delays[i - 1])) {
        throw ConfigError(str_printf(
            "FriSignal: delays must be strictly increasing (delays[%zu]=%g, delays[%zu]=%g)",
            i - 1, delays[i - 1], i, delays[i]));
      }
    }
  }

  size_t order() const { return delays.size(); }
};

struct DiracPulse {};
struct RectanglePulse {
  double width;  // seconds, > 0
};

using PulseShape = std::variant<DiracPulse, RectanglePulse>;

inline PulseShape make_rectangle(double width) {
  if (!(width > 0)) throw ConfigError("RectanglePulse: width must be > 0");
  return RectanglePulse{width};
}

// Parameter ranges for random signal generation. delta_tau_min, when set, is
// a resolution floor enforced by rejection sampling.
struct GenerationRanges {
  double a_min = 0.5;
  double a_max = 10.0;
  double tau_min = -0.48;
  double tau_max = 0.52;
  size_t order = 2;
  std::optional<double> delta_tau_min;

  void validate() const {
    if (!(a_min < a_max)) throw ConfigError("GenerationRanges: a_min must be < a_max");
    if (!(tau_min <= tau_max)) throw ConfigError("GenerationRanges: tau_min must be <= tau_max");
    if (order == 0) throw ConfigError("GenerationRanges: order must be >= 1");
    if (delta_tau_min) {
      if (*delta_tau_min * static_cast<double>(order - 1) > tau_max - tau_min) {
        throw ConfigError(str_printf(
            "GenerationRanges: delta_tau_min=%g infeasible for order %zu on [%g, %g]",
            *delta_tau_min, order, tau_min, tau_max));
      }
    }
  }
};

constexpr int kMaxRejectionAttempts = 10000;

// Amplitudes i.i.d. uniform; delays uniform then sorted. With a resolution
// floor, the delay vector is rejection-sampled (keeps the uniform marginal)
// up to kMaxRejectionAttempts. Exact delay ties are rejected as well.
inline FriSignal draw_signal(const GenerationRanges& ranges, Rng& rng) {
  ranges.validate();
  std::vector<double> amps(ranges.order);
  for (auto& a : amps) a = rng.uniform(ranges.a_min, ranges.a_max);

  const double min_gap = ranges.delta_tau_min.value_or(0.0);
  std::vector<double> delays(ranges.order);
  for (int attempt = 0; attempt < kMaxRejectionAttempts; ++attempt) {
    for (auto& tau : delays) tau = rng.uniform(ranges.tau_min, ranges.tau_max);
    std::sort(delays.begin(), delays.end());
    bool ok = true;
    for (size_t i = 1; i < delays.size(); ++i) {
      const double gap = delays[i] - delays[i - 1];
      if (gap < min_gap || gap <= 0.0) {
        ok = false;
        break;
      }
    }
    if (ok) return FriSignal(std::move(amps), std::move(delays));
  }
  throw InfeasibleDataError(str_printf(
      "draw_signal: no delay draw satisfied min gap %g after %d attempts", min_gap,
      kMaxRejectionAttempts));
}

// Draw with an exact adjacent separation (resolution-sweep cells): tau_1
// uniform in [tau_min, tau_max - gap], tau_2 = tau_1 + gap. Order 2 only.
inline FriSignal draw_signal_exact_gap(const GenerationRanges& ranges, double gap, Rng& rng) {
  ranges.validate();
  if (ranges.order != 2) {
    throw ConfigError("draw_signal_exact_gap: only order 2 is supported");
  }
  if (!(gap > 0) || gap > ranges.tau_max - ranges.tau_min) {
    throw ConfigError(str_printf("draw_signal_exact_gap: gap %g outside (0, %g]", gap,
                                 ranges.tau_max - ranges.tau_min));
  }
  std::vector<double> amps(2);
  for (auto& a : amps) a = rng.uniform(ranges.a_min, ranges.a_max);
  const double t1 = rng.uniform(ranges.tau_min, ranges.tau_max - gap);
  return FriSignal(std::move(amps), {t1, t1 + gap});
}

// Minimum adjacent delay gap. Single-pulse signals have no gap to resolve;
// returns +infinity so sweep code stays uniform.
inline double resolution(const FriSignal& signal) {
  if (signal.order() < 2) return std::numeric_limits<double>::infinity();
  double min_gap = std::numeric_limits<double>::infinity();
  for (size_t i = 1; i < signal.delays.size(); ++i) {
    min_gap = std::min(min_gap, signal.delays[i] - signal.delays[i - 1]);
  }
  return min_gap;
}

inline void to_json(nlohmann::ordered_json& j, const FriSignal& s) {
  j = nlohmann::ordered_json{{"a", s.amplitudes}, {"tau", s.delays}};
}

inline void from_json(const nlohmann::ordered_json& j, FriSignal& s) {
  s = FriSignal(j.at("a").get<std::vector<double>>(),
                j.at("tau").get<std::vector<double>>());
}

}  // namespace fri
