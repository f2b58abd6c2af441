#pragma once

#include <limits>
#include <optional>
#include <vector>

#include <json.hpp>

#include "fri/common.hpp"
#include "fri/kernels.hpp"
#include "fri/signal.hpp"

namespace fri {

inline constexpr double kCleanSnr = std::numeric_limits<double>::infinity();

// Which interval the N uniform samples cover. FullSupport spans the entire
// filtered-signal support [T_g,min + tau_min, T_g,max + tau_max]; DelayRange
// spans only [tau_min, tau_max] (the convention of grid-matched baselines).
enum class GridConvention { FullSupport, DelayRange };

struct SampleGrid {
  size_t n = 0;
  double t_start = 0.0;
  double t_s = 0.0;

  double instant(size_t i) const { return t_start + static_cast<double>(i) * t_s; }
  double t_end() const { return instant(n - 1); }
};

inline void to_json(nlohmann::ordered_json& j, const SampleGrid& g) {
  j = nlohmann::ordered_json{{"n", g.n}, {"t_start", g.t_start}, {"t_s", g.t_s}};
}

inline void from_json(const nlohmann::ordered_json& j, SampleGrid& g) {
  g.n = j.at("n").get<size_t>();
  g.t_start = j.at("t_start").get<double>();
  g.t_s = j.at("t_s").get<double>();
}

inline SampleGrid build_grid(const KernelSupport& kernel_support, double tau_min, double tau_max,
                             size_t n, GridConvention convention = GridConvention::FullSupport) {
  if (n < 2) throw ConfigError("build_grid: need at least 2 samples");
  if (convention == GridConvention::FullSupport) {
    const double start = kernel_support.t_min + tau_min;
    const double span = (kernel_support.t_max + tau_max) - start;
    if (!(span > 0)) throw ConfigError(str_printf("build_grid: non-positive span %g", span));
    return SampleGrid{n, start, span / static_cast<double>(n)};
  }
  // Right-edge convention: instants at tau_min + (i+1) T_s, landing exactly
  // on tau_max. Keeps causal kernels visible for pulses near the top of the
  // delay range.
  const double span = tau_max - tau_min;
  if (!(span > 0)) throw ConfigError(str_printf("build_grid: non-positive span %g", span));
  const double t_s = span / static_cast<double>(n);
  return SampleGrid{n, tau_min + t_s, t_s};
}

struct SampleVector {
  std::vector<double> values;
  SampleGrid grid;
  double snr_db = kCleanSnr;  // +inf means noiseless

  bool is_clean() const { return std::isinf(snr_db); }
};

// Noiseless uniform samples of y(t) = sum_l a_l * (pulse * g)(t - tau_l).
inline SampleVector forward_samples(const FriSignal& signal, const PulseShape& pulse,
                                    const Kernel& kernel, const SampleGrid& grid) {
  SampleVector out;
  out.grid = grid;
  out.values.assign(grid.n, 0.0);
  for (size_t i = 0; i < grid.n; ++i) {
    const double t = grid.instant(i);
    double v = 0.0;
    for (size_t l = 0; l < signal.order(); ++l) {
      v += signal.amplitudes[l] * pulse_response(kernel, pulse, t - signal.delays[l]);
    }
    out.values[i] = v;
  }
  return out;
}

inline double mean_square(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return acc / static_cast<double>(v.size());
}

// White Gaussian noise calibrated per example: noise variance equals
// mean(y^2) / 10^(snr/10). A +inf target is the clean sentinel and leaves
// the samples untouched (and the RNG unconsumed).
inline SampleVector add_noise(const SampleVector& samples, double snr_db, Rng& rng) {
  if (std::isinf(snr_db) && snr_db > 0) return samples;
  if (std::isnan(snr_db)) throw ConfigError("add_noise: snr_db must not be NaN");
  const double power = mean_square(samples.values);
  if (power == 0.0) {
    throw NumericError("add_noise: all-zero sample vector, SNR undefined");
  }
  const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
  SampleVector out = samples;
  for (auto& v : out.values) v += sigma * rng.normal();
  out.snr_db = snr_db;
  return out;
}

// Per-example SNR policy for dataset streams.
struct SnrPolicy {
  enum class Kind { Clean, Fixed, UniformDb } kind = Kind::Fixed;
  double fixed_db = 15.0;
  double lo_db = 5.0;
  double hi_db = 40.0;

  static SnrPolicy clean() { return {Kind::Clean, 0, 0, 0}; }
  static SnrPolicy fixed(double db) { return {Kind::Fixed, db, 0, 0}; }
  static SnrPolicy uniform(double lo, double hi) {
    if (!(lo <= hi)) throw ConfigError("SnrPolicy: lo must be <= hi");
    return {Kind::UniformDb, 0, lo, hi};
  }

  double draw(Rng& rng) const {
    switch (kind) {
      case Kind::Clean:
        return kCleanSnr;
      case Kind::Fixed:
        return fixed_db;
      case Kind::UniformDb:
        return rng.uniform(lo_db, hi_db);
    }
    return kCleanSnr;
  }
};

inline nlohmann::ordered_json snr_policy_to_json(const SnrPolicy& p) {
  switch (p.kind) {
    case SnrPolicy::Kind::Clean:
      return {{"kind", "clean"}};
    case SnrPolicy::Kind::Fixed:
      return {{"kind", "fixed"}, {"db", p.fixed_db}};
    case SnrPolicy::Kind::UniformDb:
      return {{"kind", "uniform"}, {"lo", p.lo_db}, {"hi", p.hi_db}};
  }
  return {};
}

inline SnrPolicy snr_policy_from_json(const nlohmann::ordered_json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "clean") return SnrPolicy::clean();
  if (kind == "fixed") return SnrPolicy::fixed(j.at("db").get<double>());
  if (kind == "uniform") {
    return SnrPolicy::uniform(j.at("lo").get<double>(), j.at("hi").get<double>());
  }
  throw ConfigError(str_printf("snr policy: unknown kind '%s'", kind.c_str()));
}

struct LabeledExample {
  SampleVector samples;
  FriSignal signal;
};

struct DatasetSpec {
  GenerationRanges ranges;
  PulseShape pulse = DiracPulse{};
  SnrPolicy snr;
  std::optional<double> exact_gap;  // resolution-sweep cells: fixed separation
};

// Example i is a pure function of (seed, i): signal draw, SNR draw, then the
// noise vector, all from one derived substream. Streams are therefore
// partitionable across workers and identical however they are consumed.
inline LabeledExample generate_example(const DatasetSpec& spec, const Kernel& kernel,
                                       const SampleGrid& grid, uint64_t seed, uint64_t index) {
  Rng rng = Rng::substream(seed, index);
  FriSignal signal = spec.exact_gap ? draw_signal_exact_gap(spec.ranges, *spec.exact_gap, rng)
                                    : draw_signal(spec.ranges, rng);
  SampleVector clean = forward_samples(signal, spec.pulse, kernel, grid);
  const double snr = spec.snr.draw(rng);
  SampleVector noisy = add_noise(clean, snr, rng);
  return {std::move(noisy), std::move(signal)};
}

class DatasetStream {
 public:
  DatasetStream(DatasetSpec spec, Kernel kernel, SampleGrid grid, uint64_t seed, uint64_t count)
      : spec_(std::move(spec)), kernel_(std::move(kernel)), grid_(grid), seed_(seed),
        count_(count) {
    if (count_ < 1) throw ConfigError("DatasetStream: count must be >= 1");
  }

  uint64_t size() const { return count_; }
  LabeledExample at(uint64_t index) const {
    return generate_example(spec_, kernel_, grid_, seed_, index);
  }

 private:
  DatasetSpec spec_;
  Kernel kernel_;
  SampleGrid grid_;
  uint64_t seed_;
  uint64_t count_;
};

// NDJSON record {"y": ..., "tau": ..., "a": ..., "snr_db": ..., "grid": ...};
// snr_db is null for clean samples.
inline nlohmann::ordered_json example_to_json(const LabeledExample& ex) {
  nlohmann::ordered_json j;
  j["y"] = ex.samples.values;
  j["tau"] = ex.signal.delays;
  j["a"] = ex.signal.amplitudes;
  if (ex.samples.is_clean()) {
    j["snr_db"] = nullptr;
  } else {
    j["snr_db"] = ex.samples.snr_db;
  }
  j["grid"] = ex.samples.grid;
  return j;
}

inline LabeledExample example_from_json(const nlohmann::ordered_json& j) {
  LabeledExample ex;
  ex.samples.values = j.at("y").get<std::vector<double>>();
  ex.signal = FriSignal(j.at("a").get<std::vector<double>>(),
                        j.at("tau").get<std::vector<double>>());
  ex.samples.snr_db = j.at("snr_db").is_null() ? kCleanSnr : j.at("snr_db").get<double>();
  ex.samples.grid = j.at("grid").get<SampleGrid>();
  if (ex.samples.values.size() != ex.samples.grid.n) {
    throw ConfigError("example: sample count does not match grid");
  }
  return ex;
}

}  // namespace fri
