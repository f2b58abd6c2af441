#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "fri/autodiff.hpp"
#include "fri/common.hpp"
#include "fri/encoder.hpp"
#include "fri/kernels.hpp"
#include "fri/metrics.hpp"
#include "fri/sampler.hpp"

namespace fri {

enum class TrainMode { EncoderOnly, Joint };

struct TrainConfig {
  TrainMode mode = TrainMode::Joint;
  size_t epochs = 50;
  size_t batch_size = 8192;
  size_t examples_per_epoch = 100000;
  double lr_phi = 2e-3;        // encoder learning rate (cosine peak)
  double lr_theta = 2e-3;      // kernel learning rate (cosine peak)
  double lr_min_frac = 0.01;   // cosine floor as a fraction of the peak
  double weight_decay = 1e-2;  // encoder only; kernel parameters get none
  SnrPolicy snr = SnrPolicy::uniform(5.0, 40.0);
  uint64_t seed = 0;
  size_t checkpoint_every = 0;  // extra periodic checkpoints (epochs), 0 = off
  size_t holdout_size = 1000;
  std::vector<double> holdout_snrs = {40.0, 5.0};
  int threads = 1;
  GenerationRanges ranges;
  size_t grid_n = 21;
  GridConvention grid_convention = GridConvention::FullSupport;

  size_t steps_per_epoch() const { return std::max<size_t>(1, examples_per_epoch / batch_size); }

  void validate() const {
    ranges.validate();
    if (epochs == 0 || batch_size == 0 || examples_per_epoch == 0) {
      throw ConfigError("TrainConfig: epochs, batch size and examples per epoch must be >= 1");
    }
    if (!(lr_phi > 0) || !(lr_theta >= 0) || !(lr_min_frac >= 0) || !(lr_min_frac <= 1)) {
      throw ConfigError("TrainConfig: bad learning rates");
    }
  }
};

inline nlohmann::ordered_json train_config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["mode"] = c.mode == TrainMode::Joint ? "joint" : "encoder";
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["examples_per_epoch"] = c.examples_per_epoch;
  j["lr_phi"] = c.lr_phi;
  j["lr_theta"] = c.lr_theta;
  j["lr_min_frac"] = c.lr_min_frac;
  j["weight_decay"] = c.weight_decay;
  j["snr"] = snr_policy_to_json(c.snr);
  j["seed"] = c.seed;
  j["checkpoint_every"] = c.checkpoint_every;
  j["holdout_size"] = c.holdout_size;
  j["holdout_snrs"] = c.holdout_snrs;
  j["ranges"] = {{"a_min", c.ranges.a_min},     {"a_max", c.ranges.a_max},
                 {"tau_min", c.ranges.tau_min}, {"tau_max", c.ranges.tau_max},
                 {"order", c.ranges.order}};
  if (c.ranges.delta_tau_min) j["ranges"]["delta_tau_min"] = *c.ranges.delta_tau_min;
  j["grid"] = {{"n", c.grid_n},
               {"convention",
                c.grid_convention == GridConvention::FullSupport ? "full" : "delay_range"}};
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::ordered_json& j) {
  TrainConfig c;
  const std::string mode = j.value("mode", std::string("joint"));
  if (mode == "joint") {
    c.mode = TrainMode::Joint;
  } else if (mode == "encoder") {
    c.mode = TrainMode::EncoderOnly;
  } else {
    throw ConfigError(str_printf("train config: unknown mode '%s'", mode.c_str()));
  }
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.examples_per_epoch = j.value("examples_per_epoch", c.examples_per_epoch);
  c.lr_phi = j.value("lr_phi", c.lr_phi);
  c.lr_theta = j.value("lr_theta", c.lr_theta);
  c.lr_min_frac = j.value("lr_min_frac", c.lr_min_frac);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  if (j.contains("snr")) c.snr = snr_policy_from_json(j.at("snr"));
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.holdout_size = j.value("holdout_size", c.holdout_size);
  if (j.contains("holdout_snrs")) {
    c.holdout_snrs = j.at("holdout_snrs").get<std::vector<double>>();
  }
  if (j.contains("ranges")) {
    const auto& r = j.at("ranges");
    c.ranges.a_min = r.value("a_min", c.ranges.a_min);
    c.ranges.a_max = r.value("a_max", c.ranges.a_max);
    c.ranges.tau_min = r.value("tau_min", c.ranges.tau_min);
    c.ranges.tau_max = r.value("tau_max", c.ranges.tau_max);
    c.ranges.order = r.value("order", c.ranges.order);
    if (r.contains("delta_tau_min") && !r.at("delta_tau_min").is_null()) {
      c.ranges.delta_tau_min = r.at("delta_tau_min").get<double>();
    }
  }
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    c.grid_n = g.value("n", c.grid_n);
    const std::string conv = g.value("convention", std::string("full"));
    if (conv == "full") {
      c.grid_convention = GridConvention::FullSupport;
    } else if (conv == "delay_range") {
      c.grid_convention = GridConvention::DelayRange;
    } else {
      throw ConfigError(str_printf("train config: unknown grid convention '%s'", conv.c_str()));
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Fixed batch: everything an optimizer step treats as data. Noise vectors and
// normalization scales are computed once at the parameters current when the
// batch is assembled and receive no gradient; the per-step objective is an
// exactly differentiable function of (theta, phi) given this struct.
// ---------------------------------------------------------------------------

struct FixedBatch {
  std::vector<FriSignal> signals;
  SampleGrid grid;
  ad::Tensor design;     // [B, N, P] sample/parameter Jacobian (B-spline path)
  ad::Tensor noise;      // [B, N] additive, fixed
  ad::Tensor inv_scale;  // [B, N] fixed max-abs normalization (rows constant)
  ad::Tensor targets;    // [B, L] ascending true delays
  bool linear_design = false;  // true when `design` drives the forward model
};

namespace detail {

// Substream tags keep train / holdout / evaluation index spaces disjoint.
inline constexpr uint64_t kTrainTag = 0;
inline constexpr uint64_t kHoldoutTag = 1;

inline uint64_t tagged_index(uint64_t tag, uint64_t index) { return (tag << 56) | index; }

// y[b, :] for one example; identical summation order to the graph ops that
// recompute it (matmul over k ascending, or the two-exp loop over l).
inline void clean_samples_linear(const double* design_row, std::span<const double> coeffs,
                                 size_t n, double* out) {
  const size_t p = coeffs.size();
  for (size_t i = 0; i < n; ++i) {
    const double* row = design_row + i * p;
    double acc = 0.0;
    for (size_t k = 0; k < p; ++k) acc += row[k] * coeffs[k];
    out[i] = acc;
  }
}

inline void clean_samples_two_exp(const TwoExpKernel& kernel, const FriSignal& signal,
                                  const SampleGrid& grid, double* out) {
  for (size_t i = 0; i < grid.n; ++i) {
    const double t = grid.instant(i);
    double acc = 0.0;
    for (size_t l = 0; l < signal.order(); ++l) {
      acc += signal.amplitudes[l] * kernel.evaluate(t - signal.delays[l]);
    }
    out[i] = acc;
  }
}

}  // namespace detail

// Draws `batch` examples from seed-derived substreams starting at
// `first_index` and freezes the per-step constants. Thread-parallel and
// bit-identical for any thread count.
inline FixedBatch assemble_fixed_batch(const Kernel& kernel, const SampleGrid& grid,
                                       const GenerationRanges& ranges, const SnrPolicy& snr,
                                       uint64_t seed, uint64_t tag, uint64_t first_index,
                                       size_t batch, int threads) {
  FixedBatch fb;
  fb.grid = grid;
  const size_t n = grid.n;
  const size_t order = ranges.order;
  fb.signals.resize(batch);
  fb.noise = ad::Tensor({batch, n});
  fb.inv_scale = ad::Tensor({batch, n});
  fb.targets = ad::Tensor({batch, order});

  const auto* bspline = std::get_if<BSplineKernel>(&kernel);
  const auto* two_exp = std::get_if<TwoExpKernel>(&kernel);
  fb.linear_design = bspline != nullptr;
  const size_t p = bspline ? bspline->coefficients().size() : 0;
  if (bspline) fb.design = ad::Tensor({batch, n, p});

  std::exception_ptr failure;
  std::mutex failure_mutex;
  parallel_for(batch, threads, [&](size_t b0, size_t b1) {
    try {
      std::vector<double> clean(n);
      for (size_t b = b0; b < b1; ++b) {
        Rng rng = Rng::substream(seed, detail::tagged_index(tag, first_index + b));
        const FriSignal signal = draw_signal(ranges, rng);
        const double snr_db = snr.draw(rng);
        for (size_t l = 0; l < order; ++l) {
          fb.targets.data[b * order + l] = signal.delays[l];
        }
        if (bspline) {
          double* rows = fb.design.ptr() + b * n * p;
          for (size_t i = 0; i < n; ++i) {
            const double t = grid.instant(i);
            std::span<double> row(rows + i * p, p);
            for (size_t l = 0; l < order; ++l) {
              bspline->accumulate_basis(t - signal.delays[l], signal.amplitudes[l], row);
            }
          }
          detail::clean_samples_linear(rows, bspline->coefficients(), n, clean.data());
        } else if (two_exp) {
          detail::clean_samples_two_exp(*two_exp, signal, grid, clean.data());
        } else {
          for (size_t i = 0; i < n; ++i) {
            const double t = grid.instant(i);
            double acc = 0.0;
            for (size_t l = 0; l < order; ++l) {
              acc += signal.amplitudes[l] * pulse_response(kernel, DiracPulse{},
                                                           t - signal.delays[l]);
            }
            clean[i] = acc;
          }
        }

        double* noise_row = fb.noise.ptr() + b * n;
        if (std::isinf(snr_db)) {
          std::fill(noise_row, noise_row + n, 0.0);
        } else {
          const double power = [&] {
            double acc = 0.0;
            for (double v : clean) acc += v * v;
            return acc / static_cast<double>(n);
          }();
          if (power == 0.0) {
            throw NumericError("assemble_fixed_batch: all-zero clean samples, SNR undefined");
          }
          const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
          for (size_t i = 0; i < n; ++i) noise_row[i] = sigma * rng.normal();
        }
        double scale = 0.0;
        for (size_t i = 0; i < n; ++i) {
          scale = std::max(scale, std::fabs(clean[i] + noise_row[i]));
        }
        const double inv = scale == 0.0 ? 1.0 : 1.0 / scale;
        double* inv_row = fb.inv_scale.ptr() + b * n;
        std::fill(inv_row, inv_row + n, inv);
        fb.signals[b] = signal;
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  });
  if (failure) std::rethrow_exception(failure);
  return fb;
}

// Mean over the batch of the per-example l1 delay loss.
inline ad::NodePtr loss_l1(const ad::NodePtr& pred, const ad::NodePtr& target) {
  if (pred->value.shape != target->value.shape) {
    throw ConfigError(str_printf("loss_l1: shape mismatch %s vs %s",
                                 pred->value.shape.str().c_str(),
                                 target->value.shape.str().c_str()));
  }
  const double inv_batch = 1.0 / static_cast<double>(pred->value.shape[0]);
  return ad::multiply(ad::reduce_sum(ad::abs(ad::subtract(pred, target))),
                      ad::constant(ad::Tensor::scalar(inv_batch), "1/B"));
}

// Batch samples as a differentiable function of the kernel's raw parameters:
// a matmul against the frozen design tensor for the B-spline (the model is
// linear in the coefficients), or a custom node with the analytic pole
// gradient for the two-exponential. Fixed noise enters as a constant.
inline ad::NodePtr regenerate_batch_with_gradient(const Kernel& kernel,
                                                  const ad::NodePtr& raw_param_node,
                                                  const FixedBatch& fb) {
  if (fb.linear_design) {
    return ad::matmul(ad::constant(fb.design, "design"), raw_param_node);
  }
  const auto* two_exp = std::get_if<TwoExpKernel>(&kernel);
  if (two_exp == nullptr) {
    throw ConfigError("regenerate_batch_with_gradient: kernel is not learnable");
  }
  // Snapshot with the raw values used for this forward pass.
  TwoExpKernel snapshot = *two_exp;
  snapshot.set_raw(raw_param_node->value.data[0], raw_param_node->value.data[1]);
  const size_t batch = fb.signals.size();
  const size_t n = fb.grid.n;
  ad::Tensor out({batch, n});
  parallel_for(batch, ad::threads(), [&](size_t b0, size_t b1) {
    for (size_t b = b0; b < b1; ++b) {
      detail::clean_samples_two_exp(snapshot, fb.signals[b], fb.grid, out.ptr() + b * n);
    }
  });
  const std::vector<FriSignal>* signals = &fb.signals;
  const SampleGrid grid = fb.grid;
  return ad::make_op(
      std::move(out), {raw_param_node},
      [snapshot, signals, grid, batch, n](ad::Node& self) {
        auto& param = *self.parents[0];
        if (!param.requires_grad) return;
        param.ensure_grad();
        const size_t nblk = std::min<size_t>(16, batch);
        const size_t per = (batch + nblk - 1) / nblk;
        std::vector<std::array<double, 2>> partial(nblk, {0.0, 0.0});
        parallel_for(nblk, ad::threads(), [&](size_t q0, size_t q1) {
          for (size_t q = q0; q < q1; ++q) {
            const size_t rb = q * per, re = std::min(batch, rb + per);
            double acc0 = 0.0, acc1 = 0.0;
            for (size_t b = rb; b < re; ++b) {
              const FriSignal& signal = (*signals)[b];
              for (size_t i = 0; i < n; ++i) {
                const double g = self.grad.data[b * n + i];
                if (g == 0.0) continue;
                const double t = grid.instant(i);
                for (size_t l = 0; l < signal.order(); ++l) {
                  double d0, d1;
                  snapshot.raw_gradient(t - signal.delays[l], d0, d1);
                  acc0 += g * signal.amplitudes[l] * d0;
                  acc1 += g * signal.amplitudes[l] * d1;
                }
              }
            }
            partial[q][0] = acc0;
            partial[q][1] = acc1;
          }
        });
        for (size_t q = 0; q < nblk; ++q) {
          param.grad.data[0] += partial[q][0];
          param.grad.data[1] += partial[q][1];
        }
      },
      "kernel_samples");
}

// The per-step objective. With a trainable kernel the gradient flows through
// the sample generation map; otherwise samples enter as constants computed
// through the very same summation paths (so a joint step with lr_theta = 0
// is bit-identical to an encoder-only step).
inline ad::NodePtr build_objective(const Kernel& kernel, const EncoderModel& encoder,
                                   const FixedBatch& fb, bool kernel_trainable,
                                   ad::NodePtr* kernel_node_out = nullptr) {
  const size_t batch = fb.signals.size();
  const size_t n = fb.grid.n;
  ad::NodePtr samples;
  if (kernel_trainable && is_learnable(kernel)) {
    const auto raw = raw_params(kernel);
    ad::NodePtr node = ad::parameter(ad::Tensor({raw.size()}, raw), "kernel.raw");
    if (kernel_node_out != nullptr && *kernel_node_out != nullptr) {
      node = *kernel_node_out;  // reuse the persistent optimizer-owned node
    } else if (kernel_node_out != nullptr) {
      *kernel_node_out = node;
    }
    samples = regenerate_batch_with_gradient(kernel, node, fb);
  } else if (fb.linear_design) {
    const auto* bspline = std::get_if<BSplineKernel>(&kernel);
    ad::Tensor coeffs({bspline->coefficients().size()}, bspline->coefficients());
    samples = ad::matmul(ad::constant(fb.design, "design"),
                         ad::constant(std::move(coeffs), "kernel.frozen"));
  } else {
    ad::Tensor values({batch, n});
    if (const auto* two_exp = std::get_if<TwoExpKernel>(&kernel)) {
      for (size_t b = 0; b < batch; ++b) {
        detail::clean_samples_two_exp(*two_exp, fb.signals[b], fb.grid, values.ptr() + b * n);
      }
    } else {
      for (size_t b = 0; b < batch; ++b) {
        for (size_t i = 0; i < n; ++i) {
          const double t = fb.grid.instant(i);
          double acc = 0.0;
          const FriSignal& s = fb.signals[b];
          for (size_t l = 0; l < s.order(); ++l) {
            acc += s.amplitudes[l] * pulse_response(kernel, DiracPulse{}, t - s.delays[l]);
          }
          values.data[b * n + i] = acc;
        }
      }
    }
    samples = ad::constant(std::move(values), "samples.frozen");
  }
  auto noisy = ad::add(samples, ad::constant(fb.noise, "noise"));
  auto normalized = ad::multiply(noisy, ad::constant(fb.inv_scale, "inv_scale"));
  auto pred = encoder.forward(normalized);
  return loss_l1(pred, ad::constant(fb.targets, "targets"));
}

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

struct TrainReport {
  std::vector<double> train_loss;  // one entry per epoch
  std::vector<double> holdout_snrs;
  std::vector<std::vector<double>> holdout_nmse_db;  // [snr][epoch]
  size_t best_epoch = 0;
  double best_nmse_db = 0.0;
  nlohmann::ordered_json final_kernel;
  int64_t total_steps = 0;
  double wall_clock_seconds = 0.0;  // reported separately; not part of the
                                    // deterministic artifacts
};

namespace detail {

struct HoldoutSet {
  std::vector<FriSignal> signals;
  std::vector<std::vector<double>> eps;  // unit-variance noise draws
  double snr_db = 0.0;
};

inline HoldoutSet make_holdout(const GenerationRanges& ranges, const SampleGrid& grid,
                               double snr_db, uint64_t seed, uint64_t salt, size_t count) {
  HoldoutSet set;
  set.snr_db = snr_db;
  set.signals.reserve(count);
  set.eps.resize(count);
  for (size_t i = 0; i < count; ++i) {
    Rng rng = Rng::substream(seed, tagged_index(kHoldoutTag, salt * 1000003ULL + i));
    set.signals.push_back(draw_signal(ranges, rng));
    set.eps[i].resize(grid.n);
    for (auto& v : set.eps[i]) v = rng.normal();
  }
  return set;
}

// Mean NMSE (dB over trials) of the current encoder on a paired holdout set,
// with samples regenerated through the current kernel.
inline double evaluate_holdout(const Kernel& kernel, const EncoderModel& encoder,
                               const SampleGrid& grid, const HoldoutSet& set) {
  const size_t count = set.signals.size();
  const size_t n = grid.n;
  std::vector<double> nmse(count);
  const size_t chunk = 2048;
  for (size_t base = 0; base < count; base += chunk) {
    const size_t cur = std::min(chunk, count - base);
    ad::Tensor input({cur, n});
    parallel_for(cur, ad::threads(), [&](size_t b0, size_t b1) {
      for (size_t b = b0; b < b1; ++b) {
        double* row = input.ptr() + b * n;
        const FriSignal& s = set.signals[base + b];
        for (size_t i = 0; i < n; ++i) {
          const double t = grid.instant(i);
          double acc = 0.0;
          for (size_t l = 0; l < s.order(); ++l) {
            acc += s.amplitudes[l] * pulse_response(kernel, DiracPulse{}, t - s.delays[l]);
          }
          row[i] = acc;
        }
        if (!std::isinf(set.snr_db)) {
          double power = 0.0;
          for (size_t i = 0; i < n; ++i) power += row[i] * row[i];
          power /= static_cast<double>(n);
          const double sigma = std::sqrt(power / std::pow(10.0, set.snr_db / 10.0));
          for (size_t i = 0; i < n; ++i) row[i] += sigma * set.eps[base + b][i];
        }
        double scale = 0.0;
        for (size_t i = 0; i < n; ++i) scale = std::max(scale, std::fabs(row[i]));
        const double inv = scale == 0.0 ? 1.0 : 1.0 / scale;
        for (size_t i = 0; i < n; ++i) row[i] *= inv;
      }
    });
    const auto pred = encoder.forward(ad::constant(std::move(input), "holdout"));
    const size_t order = encoder.output_length();
    for (size_t b = 0; b < cur; ++b) {
      std::span<const double> row(pred->value.ptr() + b * order, order);
      nmse[base + b] = nmse_db(set.signals[base + b].delays, row);
    }
  }
  return mean_db(nmse);
}

}  // namespace detail

inline TrainReport train(const TrainConfig& config, Kernel& kernel, EncoderModel& encoder,
                         const std::string& out_dir = "") {
  config.validate();
  if (config.mode == TrainMode::Joint && !is_learnable(kernel)) {
    throw ConfigError("train: joint mode requires a learnable kernel (bspline or two_exp)");
  }
  if (encoder.input_length() != config.grid_n) {
    throw ConfigError(str_printf("train: encoder input length %zu != grid n %zu",
                                 encoder.input_length(), config.grid_n));
  }
  if (encoder.output_length() != config.ranges.order) {
    throw ConfigError(str_printf("train: encoder output length %zu != model order %zu",
                                 encoder.output_length(), config.ranges.order));
  }
  ad::set_threads(config.threads);
  const SampleGrid grid = build_grid(support(kernel), config.ranges.tau_min,
                                     config.ranges.tau_max, config.grid_n,
                                     config.grid_convention);

  const bool joint = config.mode == TrainMode::Joint;
  const size_t steps_per_epoch = config.steps_per_epoch();
  const int64_t total_steps = static_cast<int64_t>(config.epochs * steps_per_epoch);

  std::vector<detail::HoldoutSet> holdouts;
  for (size_t i = 0; i < config.holdout_snrs.size(); ++i) {
    holdouts.push_back(detail::make_holdout(config.ranges, grid, config.holdout_snrs[i],
                                            config.seed, i, config.holdout_size));
  }

  const bool write = !out_dir.empty();
  if (write) std::filesystem::create_directories(out_dir);
  const auto checkpoint_path = [&](const std::string& stem) {
    return (std::filesystem::path(out_dir) / stem).string();
  };
  const auto save_state = [&](const std::string& stem, size_t epoch, double nmse,
                              int64_t step_count) {
    if (!write) return;
    save_encoder_weights(encoder, checkpoint_path(stem + ".bin"));
    nlohmann::ordered_json sidecar;
    sidecar["step_count"] = step_count;
    sidecar["epoch"] = epoch;
    sidecar["holdout_nmse_db"] = nmse;
    sidecar["optimizer"] = {{"name", "adamw"},
                            {"beta1", 0.9},
                            {"beta2", 0.999},
                            {"eps", 1e-8},
                            {"weight_decay", config.weight_decay},
                            {"lr_phi", config.lr_phi},
                            {"lr_theta", config.lr_theta}};
    std::ofstream(checkpoint_path(stem + ".json")) << sidecar.dump(2) << "\n";
    std::ofstream(checkpoint_path("kernel_" + stem.substr(stem.find('_') + 1) + ".json"))
        << kernel_to_json(kernel).dump(2) << "\n";
  };

  TrainReport report;
  report.holdout_snrs = config.holdout_snrs;
  report.holdout_nmse_db.resize(holdouts.size());
  report.total_steps = total_steps;
  report.best_nmse_db = std::numeric_limits<double>::infinity();

  const auto t_begin = std::chrono::steady_clock::now();
  ad::AdamW optimizer;
  auto encoder_params = encoder.parameters();
  ad::NodePtr kernel_node;
  uint64_t example_counter = 0;
  size_t last_saved_epoch = 0;

  for (size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (size_t step = 0; step < steps_per_epoch; ++step) {
      FixedBatch fb = assemble_fixed_batch(kernel, grid, config.ranges, config.snr, config.seed,
                                           detail::kTrainTag, example_counter,
                                           config.batch_size, config.threads);
      example_counter += config.batch_size;

      ad::zero_grads(encoder_params);
      if (kernel_node) kernel_node->zero_grad();
      ad::NodePtr loss = build_objective(kernel, encoder, fb, joint, joint ? &kernel_node : nullptr);
      const double loss_value = loss->value.data[0];
      if (!std::isfinite(loss_value)) {
        throw NumericError(str_printf(
            "train: non-finite loss at epoch %zu step %zu; last good checkpoint is from epoch %zu",
            epoch + 1, step + 1, last_saved_epoch));
      }
      ad::backward(loss);

      optimizer.begin_step();
      const int64_t step_index = optimizer.step_count() - 1;
      const double anneal = ad::cosine_lr(step_index, total_steps, 1.0, config.lr_min_frac);
      optimizer.update(encoder_params, config.lr_phi * anneal, config.weight_decay);
      if (joint) {
        optimizer.update(std::vector<ad::NodePtr>{kernel_node}, config.lr_theta * anneal, 0.0);
        set_raw_params(kernel, kernel_node->value.data);
      }
      epoch_loss += loss_value;
    }
    report.train_loss.push_back(epoch_loss / static_cast<double>(steps_per_epoch));

    for (size_t h = 0; h < holdouts.size(); ++h) {
      report.holdout_nmse_db[h].push_back(
          detail::evaluate_holdout(kernel, encoder, grid, holdouts[h]));
    }
    const double primary = holdouts.empty() ? report.train_loss.back()
                                            : report.holdout_nmse_db[0].back();
    if (primary < report.best_nmse_db) {
      report.best_nmse_db = primary;
      report.best_epoch = epoch;
      save_state("checkpoint_best", epoch, primary, optimizer.step_count());
      last_saved_epoch = epoch + 1;
    }
    if (config.checkpoint_every != 0 && (epoch + 1) % config.checkpoint_every == 0) {
      save_state(str_printf("checkpoint_epoch%04zu", epoch + 1), epoch, primary,
                 optimizer.step_count());
    }
  }
  save_state("checkpoint_final", config.epochs - 1,
             holdouts.empty() ? 0.0 : report.holdout_nmse_db[0].back(), optimizer.step_count());
  report.final_kernel = kernel_to_json(kernel);
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();

  if (write) {
    std::ofstream loss_csv(checkpoint_path("loss.csv"));
    loss_csv << "epoch,train_loss";
    for (double snr : config.holdout_snrs) loss_csv << str_printf(",nmse_db@%g", snr);
    loss_csv << "\n";
    for (size_t e = 0; e < report.train_loss.size(); ++e) {
      loss_csv << str_printf("%zu,%.17g", e + 1, report.train_loss[e]);
      for (size_t h = 0; h < holdouts.size(); ++h) {
        loss_csv << str_printf(",%.17g", report.holdout_nmse_db[h][e]);
      }
      loss_csv << "\n";
    }
    nlohmann::ordered_json rj;
    rj["config"] = train_config_to_json(config);
    rj["train_loss"] = report.train_loss;
    nlohmann::ordered_json traces;
    for (size_t h = 0; h < holdouts.size(); ++h) {
      traces[str_printf("%g", config.holdout_snrs[h])] = report.holdout_nmse_db[h];
    }
    rj["holdout_nmse_db"] = traces;
    rj["best_epoch"] = report.best_epoch;
    rj["best_nmse_db"] = report.best_nmse_db;
    rj["total_steps"] = report.total_steps;
    rj["final_kernel"] = report.final_kernel;
    std::ofstream(checkpoint_path("report.json")) << rj.dump(2) << "\n";
    std::ofstream(checkpoint_path("arch.json"))
        << encoder_architecture_json(encoder).dump(2) << "\n";
    // Wall clock lives outside report.json so identical seeds rewrite
    // byte-identical primary artifacts.
    std::ofstream(checkpoint_path("timing.json"))
        << nlohmann::ordered_json{{"wall_clock_seconds", report.wall_clock_seconds}}.dump(2)
        << "\n";
  }
  return report;
}

// A trained run directory: encoder + kernel + the config it was built with.
struct ModelBundle {
  EncoderModel encoder;
  Kernel kernel;
  TrainConfig config;
  SampleGrid grid;
};

inline ModelBundle load_bundle(const std::string& run_dir, bool best = true) {
  namespace fs = std::filesystem;
  const fs::path dir(run_dir);
  const auto read_json = [](const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw ConfigError(str_printf("load_bundle: cannot open '%s'", p.string().c_str()));
    return nlohmann::ordered_json::parse(in);
  };
  const auto report = read_json(dir / "report.json");
  TrainConfig config = train_config_from_json(report.at("config"));
  EncoderModel encoder = encoder_from_architecture(read_json(dir / "arch.json"), 0);
  const std::string stem = best ? "best" : "final";
  load_encoder_weights(encoder, (dir / ("checkpoint_" + stem + ".bin")).string());
  Kernel kernel = kernel_from_json(read_json(dir / ("kernel_" + stem + ".json")));
  const SampleGrid grid = build_grid(support(kernel), config.ranges.tau_min,
                                     config.ranges.tau_max, config.grid_n,
                                     config.grid_convention);
  return ModelBundle{std::move(encoder), std::move(kernel), std::move(config), grid};
}

}  // namespace fri
