// fri-forge: sub-Nyquist sparse-pulse toolkit. Generates synthetic datasets,
// trains delay encoders (optionally jointly with the sampling kernel),
// evaluates them, runs the brute-force reference estimator, recovers
// amplitudes, and maps two-pole kernels to Sallen-Key component values.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fri/amplitude.hpp"
#include "fri/encoder.hpp"
#include "fri/eval.hpp"
#include "fri/hardware.hpp"
#include "fri/kernels.hpp"
#include "fri/metrics.hpp"
#include "fri/oracle.hpp"
#include "fri/sampler.hpp"
#include "fri/signal.hpp"
#include "fri/trainer.hpp"

namespace {

using nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitInfeasible = 4;

int emit_error(int code, const char* kind, const std::string& message) {
  ordered_json j;
  j["error"] = {{"code", code}, {"kind", kind}, {"message", message}};
  std::cerr << j.dump() << "\n";
  return code;
}

ordered_json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw fri::ConfigError("cannot open '" + path + "'");
  try {
    return ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw fri::ConfigError("malformed JSON in '" + path + "': " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw fri::ConfigError("cannot write '" + path + "'");
  out << text;
}

int resolve_thread_flag(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("FRI_FORGE_THREADS")) {
    const int parsed = std::atoi(env);
    if (parsed > 0) return parsed;
  }
  return 1;
}

struct SnrFlags {
  double fixed = std::numeric_limits<double>::quiet_NaN();
  std::string range;  // "lo:hi"
  bool clean = false;

  fri::SnrPolicy resolve() const {
    const bool has_fixed = !std::isnan(fixed);
    const bool has_range = !range.empty();
    if (static_cast<int>(has_fixed) + static_cast<int>(has_range) +
            static_cast<int>(clean) > 1) {
      throw fri::ConfigError("choose one of --snr, --snr-range, --clean");
    }
    if (has_fixed) return fri::SnrPolicy::fixed(fixed);
    if (has_range) {
      const auto colon = range.find(':');
      if (colon == std::string::npos) {
        throw fri::ConfigError("--snr-range expects lo:hi, e.g. 5:40");
      }
      return fri::SnrPolicy::uniform(std::stod(range.substr(0, colon)),
                                     std::stod(range.substr(colon + 1)));
    }
    return fri::SnrPolicy::clean();
  }
  bool any() const { return !std::isnan(fixed) || !range.empty() || clean; }
};

struct RangeFlags {
  double a_min = std::numeric_limits<double>::quiet_NaN();
  double a_max = std::numeric_limits<double>::quiet_NaN();
  double tau_min = std::numeric_limits<double>::quiet_NaN();
  double tau_max = std::numeric_limits<double>::quiet_NaN();
  long long order = -1;
  double delta_tau_min = std::numeric_limits<double>::quiet_NaN();

  void add_to(CLI::App* cmd) {
    cmd->add_option("--a-min", a_min, "Minimum pulse amplitude (default 0.5)");
    cmd->add_option("--a-max", a_max, "Maximum pulse amplitude (default 10)");
    cmd->add_option("--tau-min", tau_min, "Minimum delay in seconds (default -0.48)");
    cmd->add_option("--tau-max", tau_max, "Maximum delay in seconds (default 0.52)");
    cmd->add_option("--order", order, "Number of pulses L (default 2)");
    cmd->add_option("--delta-tau-min", delta_tau_min,
                    "Resolution floor enforced by rejection sampling");
  }

  void apply(fri::GenerationRanges& ranges) const {
    if (!std::isnan(a_min)) ranges.a_min = a_min;
    if (!std::isnan(a_max)) ranges.a_max = a_max;
    if (!std::isnan(tau_min)) ranges.tau_min = tau_min;
    if (!std::isnan(tau_max)) ranges.tau_max = tau_max;
    if (order > 0) ranges.order = static_cast<size_t>(order);
    if (!std::isnan(delta_tau_min)) ranges.delta_tau_min = delta_tau_min;
  }
};

fri::GridConvention parse_convention(const std::string& name) {
  if (name == "full") return fri::GridConvention::FullSupport;
  if (name == "delay") return fri::GridConvention::DelayRange;
  throw fri::ConfigError("--convention must be 'full' or 'delay'");
}

// ---------------------------------------------------------------------------
// kernel dump
// ---------------------------------------------------------------------------

struct KernelDumpArgs {
  std::string config;
  size_t points = 601;
  std::string out;
};

int run_kernel_dump(const KernelDumpArgs& args) {
  const fri::Kernel kernel = fri::kernel_from_json(read_json_file(args.config));
  if (args.points < 2) throw fri::ConfigError("--points must be >= 2");
  const fri::KernelSupport sup = fri::support(kernel);
  std::string csv = "t,g\n";
  for (size_t i = 0; i < args.points; ++i) {
    const double t = sup.t_min + sup.length() * static_cast<double>(i) /
                                     static_cast<double>(args.points - 1);
    csv += fri::str_printf("%.12g,%.12g\n", t, fri::evaluate(kernel, t));
  }
  if (args.out.empty()) {
    std::cout << csv;
  } else {
    write_text_file(args.out, csv);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// encoder info
// ---------------------------------------------------------------------------

int run_encoder_info(const std::string& config_path) {
  const fri::EncoderConfig config =
      fri::encoder_config_from_json(read_json_file(config_path));
  const fri::EncoderModel model = fri::build_encoder(config, 0);
  const auto& realized = model.config();
  std::printf("%-12s %-18s %10s\n", "layer", "shape", "params");
  size_t cin = 1;
  for (size_t i = 0; i < realized.conv_channels.size(); ++i) {
    const size_t cout = realized.conv_channels[i];
    const size_t params = cout * cin * realized.conv_kernel_size + cout;
    std::printf("%-12s [%zu,%zu,%zu]+[%zu] %8zu\n", fri::str_printf("conv%zu", i).c_str(), cout,
                cin, realized.conv_kernel_size, cout, params);
    cin = cout;
  }
  size_t in = realized.conv_channels.back() * realized.input_length;
  std::vector<size_t> fc = realized.mlp_hidden;
  fc.push_back(realized.output_length);
  for (size_t i = 0; i < fc.size(); ++i) {
    std::printf("%-12s [%zu,%zu]+[%zu] %10zu\n", fri::str_printf("fc%zu", i).c_str(), in, fc[i],
                fc[i], in * fc[i] + fc[i]);
    in = fc[i];
  }
  std::printf("total parameters: %zu", model.parameter_count());
  if (config.param_target) {
    std::printf(" (target %zu, within +-10%%)", *config.param_target);
  }
  std::printf("\n");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string kernel;
  size_t n = 21;
  std::string convention = "full";
  size_t count = 0;
  uint64_t seed = 0;
  std::string out;
  SnrFlags snr;
  RangeFlags ranges;
  double exact_gap = std::numeric_limits<double>::quiet_NaN();
  double rect_width = std::numeric_limits<double>::quiet_NaN();
  int threads = 0;
};

int run_generate(const GenerateArgs& args) {
  const fri::Kernel kernel = fri::kernel_from_json(read_json_file(args.kernel));
  fri::DatasetSpec spec;
  args.ranges.apply(spec.ranges);
  spec.snr = args.snr.resolve();
  if (!std::isnan(args.exact_gap)) spec.exact_gap = args.exact_gap;
  if (!std::isnan(args.rect_width)) spec.pulse = fri::make_rectangle(args.rect_width);
  const fri::SampleGrid grid =
      fri::build_grid(fri::support(kernel), spec.ranges.tau_min, spec.ranges.tau_max, args.n,
                      parse_convention(args.convention));
  if (args.count == 0) throw fri::ConfigError("--count must be >= 1");

  const int threads = resolve_thread_flag(args.threads);
  std::vector<std::string> lines(args.count);
  fri::parallel_for(args.count, threads, [&](size_t i0, size_t i1) {
    for (size_t i = i0; i < i1; ++i) {
      const auto ex = fri::generate_example(spec, kernel, grid, args.seed, i);
      lines[i] = fri::example_to_json(ex).dump();
    }
  });
  std::ofstream out(args.out, std::ios::binary);
  if (!out) throw fri::ConfigError("cannot write '" + args.out + "'");
  for (const auto& line : lines) out << line << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string kernel;
  std::string encoder;
  std::string out;
  std::string mode;
  long long epochs = -1;
  long long batch = -1;
  long long examples_per_epoch = -1;
  double lr_phi = std::numeric_limits<double>::quiet_NaN();
  double lr_theta = std::numeric_limits<double>::quiet_NaN();
  double weight_decay = std::numeric_limits<double>::quiet_NaN();
  SnrFlags snr;
  RangeFlags ranges;
  long long seed = -1;
  long long n = -1;
  std::string convention;
  long long holdout = -1;
  long long checkpoint_every = -1;
  int threads = 0;
};

int run_train(const TrainArgs& args) {
  ordered_json file_config;
  if (!args.config.empty()) file_config = read_json_file(args.config);

  fri::TrainConfig config = file_config.contains("train")
                                ? fri::train_config_from_json(file_config.at("train"))
                                : fri::TrainConfig{};
  if (!args.mode.empty()) {
    if (args.mode == "joint") {
      config.mode = fri::TrainMode::Joint;
    } else if (args.mode == "encoder") {
      config.mode = fri::TrainMode::EncoderOnly;
    } else {
      throw fri::ConfigError("--mode must be 'joint' or 'encoder'");
    }
  }
  if (args.epochs > 0) config.epochs = static_cast<size_t>(args.epochs);
  if (args.batch > 0) config.batch_size = static_cast<size_t>(args.batch);
  if (args.examples_per_epoch > 0) {
    config.examples_per_epoch = static_cast<size_t>(args.examples_per_epoch);
  }
  if (!std::isnan(args.lr_phi)) config.lr_phi = args.lr_phi;
  if (!std::isnan(args.lr_theta)) config.lr_theta = args.lr_theta;
  if (!std::isnan(args.weight_decay)) config.weight_decay = args.weight_decay;
  if (args.snr.any()) config.snr = args.snr.resolve();
  args.ranges.apply(config.ranges);
  if (args.seed >= 0) config.seed = static_cast<uint64_t>(args.seed);
  if (args.n > 0) config.grid_n = static_cast<size_t>(args.n);
  if (!args.convention.empty()) config.grid_convention = parse_convention(args.convention);
  if (args.holdout >= 0) config.holdout_size = static_cast<size_t>(args.holdout);
  if (args.checkpoint_every >= 0) {
    config.checkpoint_every = static_cast<size_t>(args.checkpoint_every);
  }
  config.threads = resolve_thread_flag(args.threads);

  ordered_json kernel_json;
  if (!args.kernel.empty()) {
    kernel_json = read_json_file(args.kernel);
  } else if (file_config.contains("kernel")) {
    kernel_json = file_config.at("kernel");
  } else {
    throw fri::ConfigError("train: provide --kernel or a 'kernel' entry in --config");
  }
  fri::Kernel kernel = fri::kernel_from_json(kernel_json);

  ordered_json encoder_json;
  if (!args.encoder.empty()) {
    encoder_json = read_json_file(args.encoder);
  } else if (file_config.contains("encoder")) {
    encoder_json = file_config.at("encoder");
  } else {
    encoder_json = fri::encoder_config_to_json(fri::EncoderConfig{});
  }
  fri::EncoderConfig encoder_config = fri::encoder_config_from_json(encoder_json);
  encoder_config.input_length = config.grid_n;
  encoder_config.output_length = config.ranges.order;
  fri::EncoderModel encoder = fri::build_encoder(encoder_config, config.seed);

  if (args.out.empty()) throw fri::ConfigError("train: --out run directory is required");
  std::filesystem::create_directories(args.out);
  ordered_json resolved;
  resolved["train"] = fri::train_config_to_json(config);
  resolved["kernel"] = fri::kernel_to_json(kernel);
  resolved["encoder"] = fri::encoder_config_to_json(encoder.config());
  write_text_file((std::filesystem::path(args.out) / "config.json").string(),
                  resolved.dump(2) + "\n");

  const fri::TrainReport report = fri::train(config, kernel, encoder, args.out);
  std::printf("trained %zu epochs (%lld steps), best holdout NMSE %.2f dB at epoch %zu\n",
              config.epochs, static_cast<long long>(report.total_steps), report.best_nmse_db,
              report.best_epoch + 1);
  std::printf("run directory: %s\n", args.out.c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string suite;
  std::vector<std::string> models;
  size_t trials = 1000;
  uint64_t seed = 0;
  std::string out;
  int threads = 0;
};

int run_eval(const EvalArgs& args) {
  if (args.models.empty()) throw fri::ConfigError("eval: provide at least one --model run dir");
  std::vector<fri::ModelBundle> bundles;
  bundles.reserve(args.models.size());
  for (const auto& dir : args.models) bundles.push_back(fri::load_bundle(dir));
  std::vector<fri::NamedBundle> named;
  for (size_t i = 0; i < bundles.size(); ++i) {
    std::string id = std::filesystem::path(args.models[i]).filename().string();
    if (id.empty()) id = fri::str_printf("model%zu", i + 1);
    named.push_back({std::move(id), &bundles[i]});
  }
  const int threads = resolve_thread_flag(args.threads);

  std::vector<fri::NmseCell> cells;
  if (args.suite == "table1") {
    cells = fri::suite_table1(named, args.trials, args.seed, threads);
  } else if (args.suite == "table2") {
    cells = fri::suite_table2(named, args.trials, args.seed, threads);
  } else if (args.suite == "table3") {
    cells = fri::suite_table3(named, args.trials, args.seed, threads);
  } else if (args.suite == "resolution") {
    cells = fri::suite_resolution(named, args.trials, args.seed, threads);
  } else {
    throw fri::ConfigError("--suite must be table1, table2, table3 or resolution");
  }

  const std::string csv = fri::cells_to_csv(cells);
  std::cout << csv;
  if (!args.out.empty()) {
    std::filesystem::create_directories(args.out);
    write_text_file((std::filesystem::path(args.out) / (args.suite + ".csv")).string(), csv);
    fri::write_plotdata(cells, (std::filesystem::path(args.out) / "plotdata").string(),
                        args.suite);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// oracle
// ---------------------------------------------------------------------------

struct OracleArgs {
  std::string in;
  std::string kernel;
  double step = 0.002;
  long long order = -1;
  double tau_min = -0.48;
  double tau_max = 0.52;
  double rect_width = std::numeric_limits<double>::quiet_NaN();
  std::string out;
  int threads = 0;
};

int run_oracle(const OracleArgs& args) {
  const fri::Kernel kernel = fri::kernel_from_json(read_json_file(args.kernel));
  const fri::PulseShape pulse = std::isnan(args.rect_width)
                                    ? fri::PulseShape{fri::DiracPulse{}}
                                    : fri::make_rectangle(args.rect_width);
  std::ifstream in(args.in);
  if (!in) throw fri::ConfigError("cannot open '" + args.in + "'");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) lines.push_back(std::move(line));
  }
  std::vector<std::string> out_lines(lines.size());
  const int threads = resolve_thread_flag(args.threads);
  std::exception_ptr failure;
  std::mutex failure_mutex;
  fri::parallel_for(lines.size(), threads, [&](size_t i0, size_t i1) {
    try {
      for (size_t i = i0; i < i1; ++i) {
        ordered_json record = ordered_json::parse(lines[i]);
        const fri::LabeledExample ex = fri::example_from_json(record);
        const size_t order = args.order > 0 ? static_cast<size_t>(args.order)
                                            : ex.signal.order();
        const fri::GridSearchResult result = fri::grid_search(
            ex.samples, kernel, pulse, args.tau_min, args.tau_max, order, args.step);
        record["pred_tau"] = result.delays;
        record["pred_a"] = result.amplitudes;
        record["residual"] = result.residual;
        out_lines[i] = record.dump();
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  });
  if (failure) std::rethrow_exception(failure);
  std::ofstream out(args.out, std::ios::binary);
  if (!out) throw fri::ConfigError("cannot write '" + args.out + "'");
  for (const auto& line : out_lines) out << line << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// amplitudes
// ---------------------------------------------------------------------------

struct AmplitudesArgs {
  std::string in;
  std::string kernel;
  std::string method = "ls";
  size_t steps = 200000;
  double eta = 0.0;
  uint64_t seed = 0;
  std::string delays_field = "pred_tau";
  double rect_width = std::numeric_limits<double>::quiet_NaN();
  std::string out;
};

int run_amplitudes(const AmplitudesArgs& args) {
  if (args.method != "ls" && args.method != "gd") {
    throw fri::ConfigError("--method must be 'ls' or 'gd'");
  }
  const fri::Kernel kernel = fri::kernel_from_json(read_json_file(args.kernel));
  const fri::PulseShape pulse = std::isnan(args.rect_width)
                                    ? fri::PulseShape{fri::DiracPulse{}}
                                    : fri::make_rectangle(args.rect_width);
  std::ifstream in(args.in);
  if (!in) throw fri::ConfigError("cannot open '" + args.in + "'");
  std::ofstream out(args.out, std::ios::binary);
  if (!out) throw fri::ConfigError("cannot write '" + args.out + "'");
  size_t index = 0;
  for (std::string line; std::getline(in, line); ++index) {
    if (line.empty()) continue;
    ordered_json record = ordered_json::parse(line);
    const fri::LabeledExample ex = fri::example_from_json(record);
    if (!record.contains(args.delays_field)) {
      throw fri::ConfigError(fri::str_printf(
          "record %zu has no '%s' field; run the oracle or an encoder first, or pass "
          "--delays-field tau",
          index, args.delays_field.c_str()));
    }
    fri::AmplitudeProblem problem{ex.samples,
                                  record.at(args.delays_field).get<std::vector<double>>(),
                                  kernel, pulse};
    const std::vector<double> amps =
        args.method == "ls"
            ? fri::estimate_amplitudes_ls(problem)
            : fri::estimate_amplitudes_gd(problem, args.steps,
                                          args.eta > 0 ? args.eta
                                                       : fri::suggest_gd_step(problem),
                                          fri::mix_seed(args.seed, index));
    record["pred_a"] = amps;
    record["amplitude_method"] = args.method;
    out << record.dump() << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// hw map / hw simulate-bench
// ---------------------------------------------------------------------------

struct HwMapArgs {
  double alpha1 = 0.0;
  double alpha2 = 0.0;
  double c1 = 1e-6;
  double c2 = 1e-6;
  std::string series = "E24";
  double r1 = std::numeric_limits<double>::quiet_NaN();
  double r2 = std::numeric_limits<double>::quiet_NaN();
};

ordered_json describe_realization(const fri::RcRealization& rc, double alpha1, double alpha2) {
  return ordered_json{{"r1_ohm", rc.r1},
                      {"r2_ohm", rc.r2},
                      {"c1_farad", rc.c1},
                      {"c2_farad", rc.c2},
                      {"alpha1", rc.alpha1},
                      {"alpha2", rc.alpha2},
                      {"drift", {{"alpha1_rel", (rc.alpha1 - alpha1) / alpha1},
                                 {"alpha2_rel", (rc.alpha2 - alpha2) / alpha2}}}};
}

int run_hw_map(const HwMapArgs& args) {
  const fri::ESeries series = fri::eseries_from_string(args.series);
  const fri::RcRealization ideal =
      fri::poles_to_rc(args.alpha1, args.alpha2, args.c1, args.c2);

  fri::RcRealization rounded = ideal;
  rounded.r1 = fri::round_to_series(ideal.r1, series);
  rounded.r2 = fri::round_to_series(ideal.r2, series);
  const auto rounded_poles = fri::rc_to_poles(rounded.r1, rounded.r2, args.c1, args.c2);
  rounded.alpha1 = rounded_poles.first;
  rounded.alpha2 = rounded_poles.second;

  ordered_json j;
  j["poles"] = {{"alpha1", args.alpha1}, {"alpha2", args.alpha2}};
  j["ideal"] = describe_realization(ideal, args.alpha1, args.alpha2);
  j["series"] = args.series;
  j["rounded"] = describe_realization(rounded, args.alpha1, args.alpha2);
  if (!std::isnan(args.r1) || !std::isnan(args.r2)) {
    if (std::isnan(args.r1) || std::isnan(args.r2)) {
      throw fri::ConfigError("provide both --r1 and --r2 to evaluate an override");
    }
    fri::RcRealization chosen;
    chosen.r1 = args.r1;
    chosen.r2 = args.r2;
    chosen.c1 = args.c1;
    chosen.c2 = args.c2;
    const auto poles = fri::rc_to_poles(args.r1, args.r2, args.c1, args.c2);
    chosen.alpha1 = poles.first;
    chosen.alpha2 = poles.second;
    j["override"] = describe_realization(chosen, args.alpha1, args.alpha2);
  }
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

struct HwBenchArgs {
  std::string run;
  double r1 = std::numeric_limits<double>::quiet_NaN();
  double r2 = std::numeric_limits<double>::quiet_NaN();
  double c1 = 1e-6;
  double c2 = 1e-6;
  std::string series = "E24";
  double rect_width = 0.002;
  std::vector<double> taus = {0.2, 0.5};
  std::vector<double> amps = {1.0, 1.0};
  double rate = 200.0;
  double snr = std::numeric_limits<double>::quiet_NaN();
  uint64_t seed = 0;
  std::string out;
};

int run_hw_bench(const HwBenchArgs& args) {
  const fri::ModelBundle bundle = fri::load_bundle(args.run);
  const auto* learned = std::get_if<fri::TwoExpKernel>(&bundle.kernel);
  if (learned == nullptr) {
    throw fri::ConfigError("hw simulate-bench: the run's kernel is not a two-pole kernel");
  }

  fri::RcRealization realized;
  if (!std::isnan(args.r1) && !std::isnan(args.r2)) {
    realized.r1 = args.r1;
    realized.r2 = args.r2;
  } else {
    const fri::ESeries series = fri::eseries_from_string(args.series);
    const fri::RcRealization ideal =
        fri::poles_to_rc(learned->alpha1(), learned->alpha2(), args.c1, args.c2);
    realized.r1 = fri::round_to_series(ideal.r1, series);
    realized.r2 = fri::round_to_series(ideal.r2, series);
  }
  realized.c1 = args.c1;
  realized.c2 = args.c2;
  const auto poles = fri::rc_to_poles(realized.r1, realized.r2, realized.c1, realized.c2);
  realized.alpha1 = poles.first;
  realized.alpha2 = poles.second;

  fri::BenchScenario scenario;
  scenario.rect_width = args.rect_width;
  scenario.taus = args.taus;
  scenario.amps = args.amps;
  scenario.capture_rate_hz = args.rate;
  scenario.snr_db = std::isnan(args.snr) ? fri::kCleanSnr : args.snr;
  scenario.noise_seed = args.seed;

  const fri::TwoExpKernel drifted = fri::TwoExpKernel::from_alphas(
      realized.alpha1, realized.alpha2, learned->alpha_min(), learned->alpha_max(),
      learned->min_gap());
  const fri::RealizationReport report = fri::realization_report(
      learned->alpha1(), learned->alpha2(), realized, bundle.grid,
      [&](const fri::TwoExpKernel& k) {
        return fri::simulate_bench(bundle, k, scenario).delay_nmse_db;
      });
  const fri::BenchResult bench = fri::simulate_bench(bundle, drifted, scenario);

  ordered_json j = fri::realization_report_to_json(report);
  j["bench"] = {{"true_tau", scenario.taus},
                {"true_a", scenario.amps},
                {"pred_tau", bench.predicted_delays},
                {"pred_a", bench.predicted_amplitudes},
                {"delay_nmse_db", bench.delay_nmse_db},
                {"amplitude_nmse_db", bench.amplitude_nmse_db},
                {"capture_rate_hz", scenario.capture_rate_hz},
                {"rect_width_s", scenario.rect_width}};
  const std::string text = j.dump(2) + "\n";
  std::cout << text;
  if (!args.out.empty()) write_text_file(args.out, text);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fri-forge: learnable-kernel sub-Nyquist sampling toolkit"};
  app.require_subcommand(1);

  // kernel dump
  auto* kernel_cmd = app.add_subcommand("kernel", "Kernel utilities");
  kernel_cmd->require_subcommand(1);
  KernelDumpArgs kd;
  auto* dump_cmd = kernel_cmd->add_subcommand("dump", "Emit CSV samples (t, g(t)) of a kernel");
  dump_cmd->add_option("--config", kd.config, "Kernel JSON file")->required();
  dump_cmd->add_option("--points", kd.points, "Number of sample points (default 601)");
  dump_cmd->add_option("--out", kd.out, "Output CSV path (default: stdout)");

  // encoder info
  auto* encoder_cmd = app.add_subcommand("encoder", "Encoder utilities");
  encoder_cmd->require_subcommand(1);
  std::string encoder_info_config;
  auto* info_cmd = encoder_cmd->add_subcommand("info", "Print the layer table and parameter count");
  info_cmd->add_option("--config", encoder_info_config, "Encoder config JSON file")->required();

  // generate
  GenerateArgs gen;
  auto* gen_cmd = app.add_subcommand("generate", "Write a labeled NDJSON dataset");
  gen_cmd->add_option("--kernel", gen.kernel, "Kernel JSON file")->required();
  gen_cmd->add_option("--n", gen.n, "Samples per example (default 21)");
  gen_cmd->add_option("--convention", gen.convention,
                      "Grid convention: 'full' support or 'delay' range (default full)");
  gen_cmd->add_option("--count", gen.count, "Number of examples")->required();
  gen_cmd->add_option("--seed", gen.seed, "Master seed (default 0)");
  gen_cmd->add_option("--out", gen.out, "Output NDJSON path")->required();
  gen_cmd->add_option("--snr", gen.snr.fixed, "Fixed SNR in dB");
  gen_cmd->add_option("--snr-range", gen.snr.range, "Uniform per-example SNR range lo:hi in dB");
  gen_cmd->add_flag("--clean", gen.snr.clean, "Noiseless samples");
  gen.ranges.add_to(gen_cmd);
  gen_cmd->add_option("--exact-gap", gen.exact_gap,
                      "Fix the pulse separation (resolution-sweep cells, order 2)");
  gen_cmd->add_option("--rect-width", gen.rect_width,
                      "Rectangular pulse width in seconds (default: Dirac pulses)");
  gen_cmd->add_option("--threads", gen.threads, "Worker threads (or FRI_FORGE_THREADS)");

  // train
  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train the encoder (optionally jointly with the kernel)");
  train_cmd->add_option("--config", tr.config, "Train config JSON (flags override)");
  train_cmd->add_option("--kernel", tr.kernel, "Kernel JSON file");
  train_cmd->add_option("--encoder", tr.encoder, "Encoder config JSON file");
  train_cmd->add_option("--out", tr.out, "Run directory")->required();
  train_cmd->add_option("--mode", tr.mode, "'joint' or 'encoder' (encoder-only)");
  train_cmd->add_option("--epochs", tr.epochs, "Training epochs");
  train_cmd->add_option("--batch", tr.batch, "Batch size");
  train_cmd->add_option("--examples-per-epoch", tr.examples_per_epoch,
                        "Fresh examples streamed per epoch");
  train_cmd->add_option("--lr-phi", tr.lr_phi, "Encoder learning rate");
  train_cmd->add_option("--lr-theta", tr.lr_theta, "Kernel learning rate");
  train_cmd->add_option("--weight-decay", tr.weight_decay, "Encoder weight decay");
  train_cmd->add_option("--snr", tr.snr.fixed, "Fixed training SNR in dB");
  train_cmd->add_option("--snr-range", tr.snr.range, "Uniform training SNR range lo:hi in dB");
  train_cmd->add_flag("--clean", tr.snr.clean, "Noiseless training samples");
  tr.ranges.add_to(train_cmd);
  train_cmd->add_option("--seed", tr.seed, "Master seed");
  train_cmd->add_option("--n", tr.n, "Samples per example");
  train_cmd->add_option("--convention", tr.convention, "Grid convention: 'full' or 'delay'");
  train_cmd->add_option("--holdout", tr.holdout, "Held-out examples per SNR cell");
  train_cmd->add_option("--checkpoint-every", tr.checkpoint_every,
                        "Extra checkpoint cadence in epochs (0 = off)");
  train_cmd->add_option("--threads", tr.threads, "Worker threads (or FRI_FORGE_THREADS)");

  // eval
  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score trained models and emit result tables");
  eval_cmd->add_option("--suite", ev.suite, "table1 | table2 | table3 | resolution")->required();
  eval_cmd->add_option("--model", ev.models, "Trained run directory (repeatable)")->required();
  eval_cmd->add_option("--trials", ev.trials, "Trials per cell (default 1000)");
  eval_cmd->add_option("--seed", ev.seed, "Evaluation seed (default 0)");
  eval_cmd->add_option("--out", ev.out, "Output directory for CSV + plot data");
  eval_cmd->add_option("--threads", ev.threads, "Worker threads (or FRI_FORGE_THREADS)");

  // oracle
  OracleArgs oa;
  auto* oracle_cmd = app.add_subcommand("oracle", "Brute-force grid-search reference estimator");
  oracle_cmd->add_option("--in", oa.in, "Input NDJSON dataset")->required();
  oracle_cmd->add_option("--kernel", oa.kernel, "Kernel JSON file")->required();
  oracle_cmd->add_option("--step", oa.step, "Candidate delay grid step (default 0.002)");
  oracle_cmd->add_option("--order", oa.order, "Model order (default: from each record)");
  oracle_cmd->add_option("--tau-min", oa.tau_min, "Search range lower edge (default -0.48)");
  oracle_cmd->add_option("--tau-max", oa.tau_max, "Search range upper edge (default 0.52)");
  oracle_cmd->add_option("--rect-width", oa.rect_width,
                         "Rectangular pulse width (default: Dirac pulses)");
  oracle_cmd->add_option("--out", oa.out, "Output NDJSON path")->required();
  oracle_cmd->add_option("--threads", oa.threads, "Worker threads (or FRI_FORGE_THREADS)");

  // amplitudes
  AmplitudesArgs am;
  auto* amp_cmd = app.add_subcommand("amplitudes", "Recover amplitudes for given delays");
  amp_cmd->add_option("--in", am.in, "Input NDJSON dataset with predicted delays")->required();
  amp_cmd->add_option("--kernel", am.kernel, "Kernel JSON file")->required();
  amp_cmd->add_option("--method", am.method, "'ls' (closed form) or 'gd' (gradient descent)");
  amp_cmd->add_option("--steps", am.steps, "Max gradient-descent steps");
  amp_cmd->add_option("--eta", am.eta, "Gradient-descent step size (default: auto)");
  amp_cmd->add_option("--seed", am.seed, "Initialization seed for gd");
  amp_cmd->add_option("--delays-field", am.delays_field,
                      "Record field holding the delays (default pred_tau)");
  amp_cmd->add_option("--rect-width", am.rect_width,
                      "Rectangular pulse width (default: Dirac pulses)");
  amp_cmd->add_option("--out", am.out, "Output NDJSON path")->required();

  // hw
  auto* hw_cmd = app.add_subcommand("hw", "Analog realization of two-pole kernels");
  hw_cmd->require_subcommand(1);
  HwMapArgs hm;
  auto* map_cmd = hw_cmd->add_subcommand("map", "Map poles to Sallen-Key component values");
  map_cmd->add_option("--alpha1", hm.alpha1, "Smaller pole (1/s)")->required();
  map_cmd->add_option("--alpha2", hm.alpha2, "Larger pole (1/s)")->required();
  map_cmd->add_option("--c1", hm.c1, "C1 in farads (default 1e-6)");
  map_cmd->add_option("--c2", hm.c2, "C2 in farads (default 1e-6)");
  map_cmd->add_option("--c", hm.c1, "Shorthand setting both capacitors")
      ->each([&hm](const std::string& v) { hm.c2 = std::stod(v); });
  map_cmd->add_option("--series", hm.series, "Standard value series: E12, E24 or E96");
  map_cmd->add_option("--r1", hm.r1, "Evaluate a chosen R1 instead of the nearest series value");
  map_cmd->add_option("--r2", hm.r2, "Evaluate a chosen R2 instead of the nearest series value");

  HwBenchArgs hb;
  auto* bench_cmd = hw_cmd->add_subcommand(
      "simulate-bench", "Run the square-pulse bench scenario through a realized filter");
  bench_cmd->add_option("--run", hb.run, "Trained two-pole run directory")->required();
  bench_cmd->add_option("--r1", hb.r1, "Realized R1 in ohms (default: nearest series value)");
  bench_cmd->add_option("--r2", hb.r2, "Realized R2 in ohms (default: nearest series value)");
  bench_cmd->add_option("--c1", hb.c1, "C1 in farads (default 1e-6)");
  bench_cmd->add_option("--c2", hb.c2, "C2 in farads (default 1e-6)");
  bench_cmd->add_option("--series", hb.series, "Series for the default rounding (default E24)");
  bench_cmd->add_option("--rect-width", hb.rect_width, "Pulse width in seconds (default 0.002)");
  bench_cmd->add_option("--tau", hb.taus, "True pulse locations (default 0.2 0.5)");
  bench_cmd->add_option("--amp", hb.amps, "True pulse amplitudes (default 1 1)");
  bench_cmd->add_option("--rate", hb.rate, "Capture rate in Hz (default 200)");
  bench_cmd->add_option("--snr", hb.snr, "Capture SNR in dB (default: noiseless)");
  bench_cmd->add_option("--seed", hb.seed, "Capture noise seed");
  bench_cmd->add_option("--out", hb.out, "Also write the JSON report to this path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return emit_error(kExitConfig, "cli", e.what());
  }

  try {
    if (dump_cmd->parsed()) return run_kernel_dump(kd);
    if (info_cmd->parsed()) return run_encoder_info(encoder_info_config);
    if (gen_cmd->parsed()) return run_generate(gen);
    if (train_cmd->parsed()) return run_train(tr);
    if (eval_cmd->parsed()) return run_eval(ev);
    if (oracle_cmd->parsed()) return run_oracle(oa);
    if (amp_cmd->parsed()) return run_amplitudes(am);
    if (map_cmd->parsed()) return run_hw_map(hm);
    if (bench_cmd->parsed()) return run_hw_bench(hb);
    return emit_error(kExitConfig, "cli", "no subcommand selected");
  } catch (const fri::ConfigError& e) {
    return emit_error(kExitConfig, "config", e.what());
  } catch (const fri::InfeasibleDataError& e) {
    return emit_error(kExitInfeasible, "infeasible_data", e.what());
  } catch (const fri::NumericError& e) {
    return emit_error(kExitNumeric, "numeric", e.what());
  } catch (const std::exception& e) {
    return emit_error(kExitNumeric, "internal", e.what());
  }
}
