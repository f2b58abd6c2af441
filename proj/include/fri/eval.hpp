#pragma once

#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fri/amplitude.hpp"
#include "fri/hardware.hpp"
#include "fri/metrics.hpp"
#include "fri/reference_results.hpp"
#include "fri/trainer.hpp"

namespace fri {

// One evaluation cell: a (model, SNR[, separation]) combination scored over
// freshly generated trials. nmse_db is the mean of per-trial dB values.
struct NmseCell {
  std::string model_id;
  double snr_db = 0.0;
  std::optional<double> delta_tau;
  std::string target;  // "delays" | "amplitudes"
  double nmse_db = 0.0;
  size_t trials = 0;
};

// Slot-paired NMSE for amplitude vectors: amplitudes belong to delay slots,
// so they are compared without re-sorting.
inline double nmse_db_paired(std::span<const double> truth, std::span<const double> estimate) {
  if (truth.size() != estimate.size() || truth.empty()) {
    throw ConfigError("nmse_db_paired: length mismatch");
  }
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < truth.size(); ++i) {
    num += (truth[i] - estimate[i]) * (truth[i] - estimate[i]);
    den += truth[i] * truth[i];
  }
  if (den == 0.0) throw NumericError("nmse_db_paired: zero-norm truth");
  if (num == 0.0) return kNmseFloorDb;
  return std::max(10.0 * std::log10(num / den), kNmseFloorDb);
}

enum class EvalTarget { Delays, Amplitudes };

namespace detail {

inline constexpr uint64_t kEvalTag = 2;

}  // namespace detail

// Scores one cell. Trials use substreams derived from (seed, cell_salt,
// trial), so sweeps are reproducible and cells independent of ordering.
inline NmseCell run_cell(const ModelBundle& bundle, const std::string& model_id,
                         EvalTarget target, double snr_db, std::optional<double> delta_tau,
                         size_t trials, uint64_t seed, uint64_t cell_salt, int threads) {
  if (trials == 0) throw ConfigError("run_cell: trials must be >= 1");
  ad::set_threads(threads);
  DatasetSpec spec;
  spec.ranges = bundle.config.ranges;
  spec.snr = std::isinf(snr_db) ? SnrPolicy::clean() : SnrPolicy::fixed(snr_db);
  spec.exact_gap = delta_tau;

  std::vector<LabeledExample> examples(trials);
  parallel_for(trials, threads, [&](size_t t0, size_t t1) {
    for (size_t t = t0; t < t1; ++t) {
      examples[t] = generate_example(spec, bundle.kernel, bundle.grid, seed,
                                     detail::tagged_index(detail::kEvalTag,
                                                          cell_salt * 1000003ULL + t));
    }
  });

  std::vector<double> per_trial(trials);
  const size_t chunk = 2048;
  for (size_t base = 0; base < trials; base += chunk) {
    const size_t cur = std::min(chunk, trials - base);
    std::vector<SampleVector> batch(cur);
    for (size_t i = 0; i < cur; ++i) batch[i] = examples[base + i].samples;
    const auto pred = predict_delays(bundle.encoder, batch, /*sort_outputs=*/true);
    for (size_t i = 0; i < cur; ++i) {
      const auto& ex = examples[base + i];
      if (target == EvalTarget::Delays) {
        per_trial[base + i] = nmse_db(ex.signal.delays, pred[i]);
      } else {
        // Near-identical predicted delays would make the design matrix
        // singular; nudge them apart by a sliver of the sampling step.
        std::vector<double> delays = pred[i];
        for (size_t l = 1; l < delays.size(); ++l) {
          if (delays[l] - delays[l - 1] < 1e-9) {
            delays[l] = delays[l - 1] + 1e-6 * bundle.grid.t_s;
          }
        }
        AmplitudeProblem problem{ex.samples, delays, bundle.kernel};
        const auto a = estimate_amplitudes_ls(problem);
        per_trial[base + i] = nmse_db_paired(ex.signal.amplitudes, a);
      }
    }
  }
  NmseCell cell;
  cell.model_id = model_id;
  cell.snr_db = snr_db;
  cell.delta_tau = delta_tau;
  cell.target = target == EvalTarget::Delays ? "delays" : "amplitudes";
  cell.nmse_db = mean_db(per_trial);
  cell.trials = trials;
  return cell;
}

struct NamedBundle {
  std::string id;
  const ModelBundle* bundle;
};

inline std::vector<NmseCell> run_snr_sweep(std::span<const NamedBundle> models,
                                           std::span<const double> snrs, EvalTarget target,
                                           size_t trials, uint64_t seed, int threads) {
  std::vector<NmseCell> cells;
  uint64_t salt = 0;
  for (const auto& model : models) {
    for (double snr : snrs) {
      cells.push_back(run_cell(*model.bundle, model.id, target, snr, std::nullopt, trials, seed,
                               salt++, threads));
    }
  }
  return cells;
}

inline std::vector<NmseCell> run_resolution_sweep(std::span<const NamedBundle> models,
                                                  std::span<const double> delta_taus,
                                                  std::span<const double> snrs, size_t trials,
                                                  uint64_t seed, int threads) {
  std::vector<NmseCell> cells;
  uint64_t salt = 1u << 20;
  for (const auto& model : models) {
    for (double gap : delta_taus) {
      for (double snr : snrs) {
        cells.push_back(run_cell(*model.bundle, model.id, EvalTarget::Delays, snr, gap, trials,
                                 seed, salt++, threads));
      }
    }
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Suites: locally trained models are scored cell by cell and the published
// full-scale reference rows are appended for side-by-side reading.
// ---------------------------------------------------------------------------

inline void append_reference_rows(std::vector<NmseCell>& cells, const char* table) {
  for (const auto& entry : reference_results()) {
    if (std::string_view(entry.table) != table) continue;
    NmseCell cell;
    cell.model_id = std::string("ref:") + entry.method +
                    (std::string_view(entry.table) == "snr_n21_l2"
                         ? ""
                         : str_printf(":n%d_l%d", entry.n_samples, entry.order));
    cell.snr_db = entry.snr_db;
    cell.target = entry.target;
    cell.nmse_db = entry.nmse_db;
    cell.trials = 1000;
    cells.push_back(cell);
  }
}

inline std::vector<NmseCell> suite_table1(std::span<const NamedBundle> models, size_t trials,
                                          uint64_t seed, int threads) {
  const std::vector<double> snrs = {5.0, 15.0, 25.0, 40.0};
  auto cells = run_snr_sweep(models, snrs, EvalTarget::Delays, trials, seed, threads);
  append_reference_rows(cells, "snr_n21_l2");
  return cells;
}

inline std::vector<NmseCell> suite_table2(std::span<const NamedBundle> models, size_t trials,
                                          uint64_t seed, int threads) {
  const std::vector<double> snrs = {5.0, 15.0, 25.0, 40.0};
  auto cells = run_snr_sweep(models, snrs, EvalTarget::Delays, trials, seed, threads);
  const auto amp = run_snr_sweep(models, snrs, EvalTarget::Amplitudes, trials, seed + 1, threads);
  cells.insert(cells.end(), amp.begin(), amp.end());
  append_reference_rows(cells, "sample_budget");
  return cells;
}

inline std::vector<NmseCell> suite_table3(std::span<const NamedBundle> models, size_t trials,
                                          uint64_t seed, int threads) {
  const std::vector<double> snrs = {10.0, 40.0};
  auto cells = run_snr_sweep(models, snrs, EvalTarget::Delays, trials, seed, threads);
  append_reference_rows(cells, "model_order");
  return cells;
}

inline std::vector<NmseCell> suite_resolution(std::span<const NamedBundle> models, size_t trials,
                                              uint64_t seed, int threads) {
  const std::vector<double> gaps = {0.05, 0.06, 0.07, 0.08, 0.09, 0.10};
  const std::vector<double> snrs = {5.0, 15.0, 25.0, 40.0};
  return run_resolution_sweep(models, gaps, snrs, trials, seed, threads);
}

// CSV schema: snr_db, delta_tau, target, nmse_db, trials, model_id.
inline std::string cells_to_csv(std::span<const NmseCell> cells) {
  std::string out = "snr_db,delta_tau,target,nmse_db,trials,model_id\n";
  for (const auto& c : cells) {
    out += str_printf("%g,", c.snr_db);
    if (c.delta_tau) out += str_printf("%g", *c.delta_tau);
    out += str_printf(",%s,%.6f,%zu,%s\n", c.target.c_str(), c.nmse_db, c.trials,
                      c.model_id.c_str());
  }
  return out;
}

// One x/y series file per (model, target[, snr]) curve for external plotting.
inline void write_plotdata(std::span<const NmseCell> cells, const std::string& dir,
                           const std::string& suite) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto sanitize = [](std::string s) {
    for (auto& ch : s) {
      if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
    }
    return s;
  };
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  for (const auto& c : cells) {
    if (c.delta_tau) {
      series[sanitize(suite + "_" + c.model_id + "_" + c.target +
                      str_printf("_snr%g", c.snr_db))]
          .emplace_back(*c.delta_tau, c.nmse_db);
    } else {
      series[sanitize(suite + "_" + c.model_id + "_" + c.target)].emplace_back(c.snr_db,
                                                                               c.nmse_db);
    }
  }
  for (const auto& [name, points] : series) {
    std::ofstream out(fs::path(dir) / (name + ".csv"));
    out << "x,y\n";
    for (const auto& [x, y] : points) out << str_printf("%g,%.6f\n", x, y);
  }
}

// ---------------------------------------------------------------------------
// Simulated bench scenario: rectangular test pulses through a realized
// (possibly drifted) two-pole filter, captured at a fixed rate, resampled to
// the frozen encoder's grid, then decoded.
// ---------------------------------------------------------------------------

struct BenchScenario {
  double rect_width = 0.002;
  std::vector<double> taus = {0.2, 0.5};
  std::vector<double> amps = {1.0, 1.0};
  double capture_rate_hz = 200.0;
  double snr_db = kCleanSnr;
  uint64_t noise_seed = 0;
};

struct BenchResult {
  std::vector<double> predicted_delays;
  std::vector<double> predicted_amplitudes;
  double delay_nmse_db = 0.0;
  double amplitude_nmse_db = 0.0;
  SampleVector capture;
  SampleVector encoder_input;
};

inline BenchResult simulate_bench(const ModelBundle& bundle, const TwoExpKernel& realized,
                                  const BenchScenario& scenario) {
  if (scenario.taus.size() != bundle.encoder.output_length()) {
    throw ConfigError(str_printf("simulate_bench: %zu pulses, encoder expects %zu",
                                 scenario.taus.size(), bundle.encoder.output_length()));
  }
  const FriSignal truth(scenario.amps, scenario.taus);
  const PulseShape pulse = make_rectangle(scenario.rect_width);
  const Kernel kernel{realized};

  // DSO-style uniform capture across the observation window plus the filter
  // tail, then linear resampling onto the encoder grid.
  const double t_s = 1.0 / scenario.capture_rate_hz;
  const double t0 = bundle.grid.t_start - t_s;
  const double t1 = bundle.grid.t_end() + t_s;
  const size_t n = static_cast<size_t>(std::ceil((t1 - t0) / t_s)) + 1;
  SampleGrid capture_grid{n, t0, t_s};
  SampleVector capture = forward_samples(truth, pulse, kernel, capture_grid);
  if (!std::isinf(scenario.snr_db)) {
    Rng rng(scenario.noise_seed);
    capture = add_noise(capture, scenario.snr_db, rng);
  }
  BenchResult result;
  result.capture = capture;
  result.encoder_input = resample_linear(capture, bundle.grid);

  const auto pred = predict_delays(bundle.encoder, std::vector<SampleVector>{result.encoder_input},
                                   /*sort_outputs=*/true);
  result.predicted_delays = pred[0];
  AmplitudeProblem problem{result.encoder_input, result.predicted_delays, kernel, pulse};
  result.predicted_amplitudes = estimate_amplitudes_ls(problem);
  result.delay_nmse_db = nmse_db(truth.delays, result.predicted_delays);
  result.amplitude_nmse_db = nmse_db_paired(truth.amplitudes, result.predicted_amplitudes);
  return result;
}

}  // namespace fri
