#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "fri/trainer.hpp"
#include "test_util.hpp"

using namespace fri;
using Catch::Approx;

namespace {

EncoderConfig small_encoder_config(size_t n = 21, size_t order = 2) {
  EncoderConfig c;
  c.input_length = n;
  c.output_length = order;
  c.conv_channels = {8, 8};
  c.mlp_hidden = {16};
  c.param_target.reset();
  return c;
}

TrainConfig tiny_train_config(TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  c.epochs = 2;
  c.batch_size = 32;
  c.examples_per_epoch = 64;
  c.holdout_size = 16;
  c.seed = 7;
  return c;
}

BSplineKernel default_bspline() {
  return BSplineKernel::gaussian_init(52, 0.3 / 52.0, 0.038);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("loss_l1: values and subgradient pattern") {
  auto pred = ad::parameter(ad::Tensor({1, 2}, {0.3, 0.1}), "pred");
  auto target = ad::constant(ad::Tensor({1, 2}, {0.2, 0.2}));
  auto loss = loss_l1(pred, target);
  CHECK(loss->value.data[0] == Approx(0.2));
  ad::backward(loss);
  CHECK(pred->grad.data[0] == Approx(1.0));
  CHECK(pred->grad.data[1] == Approx(-1.0));

  auto exact = loss_l1(ad::constant(ad::Tensor({2, 2}, {1, 2, 3, 4})),
                       ad::constant(ad::Tensor({2, 2}, {1, 2, 3, 4})));
  CHECK(exact->value.data[0] == 0.0);
}

TEST_CASE("regenerate_batch_with_gradient: BSpline matches finite differences") {
  Kernel kernel{default_bspline()};
  const SampleGrid grid = build_grid(support(kernel), -0.48, 0.52, 21);
  GenerationRanges ranges;
  const FixedBatch fb = assemble_fixed_batch(kernel, grid, ranges, SnrPolicy::fixed(30.0), 3,
                                             detail::kTrainTag, 0, 4, 1);
  Rng rng(5);
  ad::Tensor mask({4, 21});
  for (auto& v : mask.data) v = rng.uniform(-1.0, 1.0);

  const auto weighted = [&](const Kernel& k) {
    auto raw = raw_params(k);
    auto node = ad::parameter(ad::Tensor({raw.size()}, raw), "kernel.raw");
    auto y = regenerate_batch_with_gradient(k, node, fb);
    auto loss = ad::reduce_sum(ad::multiply(y, ad::constant(mask)));
    return std::pair{loss, node};
  };
  auto [loss, node] = weighted(kernel);
  ad::backward(loss);

  auto coeffs = raw_params(kernel);
  for (size_t k = 10; k < coeffs.size(); k += 17) {
    const double h = 1e-5;
    Kernel up = kernel, down = kernel;
    auto cu = coeffs, cd = coeffs;
    cu[k] += h;
    cd[k] -= h;
    set_raw_params(up, cu);
    set_raw_params(down, cd);
    const double fd =
        (weighted(up).first->value.data[0] - weighted(down).first->value.data[0]) / (2.0 * h);
    if (std::fabs(fd) < 1e-10 && std::fabs(node->grad.data[k]) < 1e-10) continue;
    CHECK(testutil::rel_err(node->grad.data[k], fd) < 1e-5);
  }
}

TEST_CASE("regenerate_batch_with_gradient: TwoExp matches finite differences") {
  Kernel kernel{TwoExpKernel::from_alphas(10.0, 30.0)};
  const SampleGrid grid = build_grid(support(kernel), -0.48, 0.52, 21,
                                     GridConvention::DelayRange);
  GenerationRanges ranges;
  const FixedBatch fb = assemble_fixed_batch(kernel, grid, ranges, SnrPolicy::fixed(25.0), 11,
                                             detail::kTrainTag, 0, 4, 1);
  Rng rng(6);
  ad::Tensor mask({4, 21});
  for (auto& v : mask.data) v = rng.uniform(-1.0, 1.0);

  const auto weighted = [&](const Kernel& k) {
    auto raw = raw_params(k);
    auto node = ad::parameter(ad::Tensor({raw.size()}, raw), "kernel.raw");
    auto y = regenerate_batch_with_gradient(k, node, fb);
    auto loss = ad::reduce_sum(ad::multiply(y, ad::constant(mask)));
    return std::pair{loss, node};
  };
  auto [loss, node] = weighted(kernel);
  ad::backward(loss);

  const auto raw = raw_params(kernel);
  for (size_t i = 0; i < 2; ++i) {
    const double h = 1e-6 * std::max(1.0, std::fabs(raw[i]));
    Kernel up = kernel, down = kernel;
    auto ru = raw, rd = raw;
    ru[i] += h;
    rd[i] -= h;
    set_raw_params(up, ru);
    set_raw_params(down, rd);
    const double fd =
        (weighted(up).first->value.data[0] - weighted(down).first->value.data[0]) / (2.0 * h);
    CHECK(testutil::rel_err(node->grad.data[i], fd) < 1e-4);
  }
}

TEST_CASE("regenerate_batch_with_gradient: zero amplitudes give zero kernel gradient") {
  Kernel kernel{default_bspline()};
  const SampleGrid grid = build_grid(support(kernel), -0.48, 0.52, 21);
  FixedBatch fb;
  fb.grid = grid;
  fb.signals = {FriSignal({0.0, 0.0}, {-0.1, 0.3})};
  const auto* bs = std::get_if<BSplineKernel>(&kernel);
  fb.design = ad::Tensor({1, grid.n, bs->coefficients().size()});
  for (size_t i = 0; i < grid.n; ++i) {
    std::span<double> row(fb.design.ptr() + i * bs->coefficients().size(),
                          bs->coefficients().size());
    for (size_t l = 0; l < 2; ++l) {
      bs->accumulate_basis(grid.instant(i) - fb.signals[0].delays[l], 0.0, row);
    }
  }
  fb.linear_design = true;
  auto node = ad::parameter(ad::Tensor({bs->coefficients().size()}, bs->coefficients()), "raw");
  auto y = regenerate_batch_with_gradient(kernel, node, fb);
  ad::backward(ad::reduce_sum(y));
  for (double g : node->grad.data) CHECK(g == 0.0);
}

TEST_CASE("joint objective gradient passes finite differences end to end") {
  for (int variant = 0; variant < 2; ++variant) {
    Kernel kernel = variant == 0 ? Kernel{default_bspline()}
                                 : Kernel{TwoExpKernel::from_alphas(10.0, 30.0)};
    const auto convention =
        variant == 0 ? GridConvention::FullSupport : GridConvention::DelayRange;
    const SampleGrid grid = build_grid(support(kernel), -0.48, 0.52, 21, convention);
    EncoderModel encoder = build_encoder(small_encoder_config(), 17);
    GenerationRanges ranges;
    const FixedBatch fb = assemble_fixed_batch(kernel, grid, ranges, SnrPolicy::fixed(20.0), 23,
                                               detail::kTrainTag, 0, 8, 1);

    auto params = encoder.parameters();
    ad::zero_grads(params);
    ad::NodePtr kernel_node;
    auto loss = build_objective(kernel, encoder, fb, true, &kernel_node);
    ad::backward(loss);

    const auto loss_at = [&](const Kernel& k) {
      ad::NodePtr node;
      return build_objective(k, encoder, fb, true, &node)->value.data[0];
    };

    // Kernel coordinates.
    const auto raw = raw_params(kernel);
    int checked = 0;
    for (size_t i = 0; i < raw.size(); i += std::max<size_t>(1, raw.size() / 7)) {
      const double h = 1e-5 * std::max(1.0, std::fabs(raw[i]));
      Kernel up = kernel, down = kernel;
      auto ru = raw, rd = raw;
      ru[i] += h;
      rd[i] -= h;
      set_raw_params(up, ru);
      set_raw_params(down, rd);
      const double fd = (loss_at(up) - loss_at(down)) / (2.0 * h);
      const double an = kernel_node->grad.data[i];
      if (std::fabs(fd) < 1e-9 && std::fabs(an) < 1e-9) continue;
      INFO("variant " << variant << " kernel coord " << i);
      CHECK(testutil::rel_err(an, fd) < 1e-3);
      ++checked;
    }
    CHECK(checked > 0);

    // A few encoder coordinates.
    int enc_checked = 0;
    for (const auto& p : params) {
      for (size_t i = 0; i < p->value.numel() && enc_checked < 6; i += 29, ++enc_checked) {
        const double saved = p->value.data[i];
        const double h = 1e-5 * std::max(1.0, std::fabs(saved));
        p->value.data[i] = saved + h;
        const double up = loss_at(kernel);
        p->value.data[i] = saved - h;
        const double down = loss_at(kernel);
        p->value.data[i] = saved;
        const double fd = (up - down) / (2.0 * h);
        if (std::fabs(fd) < 1e-9 && std::fabs(p->grad.data[i]) < 1e-9) continue;
        INFO("variant " << variant << " " << p->label << "[" << i << "]");
        CHECK(testutil::rel_err(p->grad.data[i], fd) < 1e-3);
      }
    }
  }
}

TEST_CASE("encoder-only training freezes the kernel bytes") {
  Kernel kernel{default_bspline()};
  const std::string before = kernel_to_json(kernel).dump();
  EncoderModel encoder = build_encoder(small_encoder_config(), 3);
  train(tiny_train_config(TrainMode::EncoderOnly), kernel, encoder);
  CHECK(kernel_to_json(kernel).dump() == before);
}

TEST_CASE("a joint step with zero kernel rate matches an encoder-only step exactly") {
  TrainConfig one_step = tiny_train_config(TrainMode::EncoderOnly);
  one_step.epochs = 1;
  one_step.examples_per_epoch = one_step.batch_size;
  one_step.holdout_size = 4;

  Kernel kernel_a{default_bspline()};
  EncoderModel encoder_a = build_encoder(small_encoder_config(), 9);
  train(one_step, kernel_a, encoder_a);

  TrainConfig joint = one_step;
  joint.mode = TrainMode::Joint;
  joint.lr_theta = 0.0;
  Kernel kernel_b{default_bspline()};
  EncoderModel encoder_b = build_encoder(small_encoder_config(), 9);
  train(joint, kernel_b, encoder_b);

  CHECK(kernel_to_json(kernel_b).dump() == kernel_to_json(kernel_a).dump());
  const auto named_a = encoder_a.named_parameters();
  const auto named_b = encoder_b.named_parameters();
  for (size_t i = 0; i < named_a.size(); ++i) {
    CHECK(named_a[i].second->value.data == named_b[i].second->value.data);
  }
}

TEST_CASE("training is reproducible for a fixed config and seed") {
  const auto run = [] {
    Kernel kernel{default_bspline()};
    EncoderModel encoder = build_encoder(small_encoder_config(), 4);
    return train(tiny_train_config(TrainMode::Joint), kernel, encoder);
  };
  const TrainReport a = run();
  const TrainReport b = run();
  CHECK(a.train_loss == b.train_loss);
  CHECK(a.holdout_nmse_db == b.holdout_nmse_db);
  CHECK(a.final_kernel.dump() == b.final_kernel.dump());
}

TEST_CASE("joint TwoExp training keeps the pole constraints") {
  Kernel kernel{TwoExpKernel::from_alphas(10.0, 30.0)};
  EncoderModel encoder = build_encoder(small_encoder_config(), 5);
  TrainConfig config = tiny_train_config(TrainMode::Joint);
  config.grid_convention = GridConvention::DelayRange;
  config.lr_theta = 0.05;  // move the poles hard on purpose
  train(config, kernel, encoder);
  const auto& k = std::get<TwoExpKernel>(kernel);
  CHECK(k.alpha1() >= k.alpha_min());
  CHECK(k.alpha2() <= k.alpha_max());
  CHECK(k.alpha2() - k.alpha1() >= k.min_gap());
}

TEST_CASE("one optimizer step at tiny lr does not increase the batch loss") {
  Kernel kernel{default_bspline()};
  const SampleGrid grid = build_grid(support(kernel), -0.48, 0.52, 21);
  GenerationRanges ranges;
  for (int trial = 0; trial < 10; ++trial) {
    EncoderModel encoder = build_encoder(small_encoder_config(), 100 + trial);
    const FixedBatch fb = assemble_fixed_batch(kernel, grid, ranges,
                                               SnrPolicy::uniform(5.0, 40.0), 55,
                                               detail::kTrainTag, trial * 64, 32, 1);
    auto params = encoder.parameters();
    ad::zero_grads(params);
    ad::NodePtr kernel_node;
    auto loss = build_objective(kernel, encoder, fb, true, &kernel_node);
    const double before = loss->value.data[0];
    ad::backward(loss);
    ad::AdamW opt;
    opt.begin_step();
    opt.update(params, 1e-6, 0.0);
    opt.update(std::vector<ad::NodePtr>{kernel_node}, 1e-6, 0.0);
    set_raw_params(kernel, kernel_node->value.data);
    ad::NodePtr unused;
    const double after = build_objective(kernel, encoder, fb, true, &unused)->value.data[0];
    CHECK(after <= before);
  }
}

TEST_CASE("run directory artifacts and bundle round trip") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "fri_train_run";
  fs::remove_all(dir);

  Kernel kernel{default_bspline()};
  EncoderModel encoder = build_encoder(small_encoder_config(), 8);
  TrainConfig config = tiny_train_config(TrainMode::Joint);
  const TrainReport report = train(config, kernel, encoder, dir.string());
  REQUIRE(report.train_loss.size() == config.epochs);
  REQUIRE(report.holdout_nmse_db.size() == 2);

  for (const char* name : {"checkpoint_best.bin", "checkpoint_best.json", "kernel_best.json",
                           "checkpoint_final.bin", "kernel_final.json", "loss.csv",
                           "report.json", "arch.json", "timing.json"}) {
    INFO(name);
    CHECK(fs::exists(dir / name));
  }

  const ModelBundle bundle = load_bundle(dir.string());
  CHECK(bundle.encoder.input_length() == 21);
  CHECK(bundle.config.seed == config.seed);
  CHECK(kernel_to_json(bundle.kernel).dump() ==
        nlohmann::ordered_json::parse(slurp(dir / "kernel_best.json")).dump());

  // Loaded encoder/kernel predict exactly like the in-memory state at the
  // final epoch when the final checkpoint is requested.
  const ModelBundle final_bundle = load_bundle(dir.string(), false);
  GenerationRanges ranges;
  Rng rng(77);
  std::vector<SampleVector> batch;
  for (int i = 0; i < 4; ++i) {
    batch.push_back(forward_samples(draw_signal(ranges, rng), DiracPulse{}, kernel,
                                    final_bundle.grid));
  }
  CHECK(predict_delays(final_bundle.encoder, batch) == predict_delays(encoder, batch));
  fs::remove_all(dir);
}

TEST_CASE("non-finite loss aborts loudly") {
  Kernel kernel{default_bspline()};
  EncoderModel encoder = build_encoder(small_encoder_config(), 8);
  encoder.parameters()[0]->value.data[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(train(tiny_train_config(TrainMode::Joint), kernel, encoder), NumericError);
}

TEST_CASE("joint mode rejects fixed kernels") {
  Kernel kernel{TruncatedGaussianKernel{0.038, {-0.3, 0.3}}};
  EncoderModel encoder = build_encoder(small_encoder_config(), 8);
  CHECK_THROWS_AS(train(tiny_train_config(TrainMode::Joint), kernel, encoder), ConfigError);
}

TEST_CASE("train config JSON round trip") {
  TrainConfig c = tiny_train_config(TrainMode::Joint);
  c.ranges.delta_tau_min = 0.05;
  c.grid_convention = GridConvention::DelayRange;
  const TrainConfig back = train_config_from_json(train_config_to_json(c));
  CHECK(back.mode == c.mode);
  CHECK(back.epochs == c.epochs);
  CHECK(back.ranges.delta_tau_min == c.ranges.delta_tau_min);
  CHECK(back.grid_convention == c.grid_convention);
  CHECK(back.snr.kind == c.snr.kind);
}

TEST_CASE("tiny joint run reduces the training loss") {
  Kernel kernel{default_bspline()};
  EncoderModel encoder = build_encoder(small_encoder_config(), 2);
  TrainConfig config = tiny_train_config(TrainMode::Joint);
  config.epochs = 8;
  config.examples_per_epoch = 256;
  config.batch_size = 64;
  config.holdout_size = 32;
  const TrainReport report = train(config, kernel, encoder);
  CHECK(report.train_loss.back() < report.train_loss.front());
}
