#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "fri/eval.hpp"
#include "test_util.hpp"

using namespace fri;
using Catch::Approx;

namespace {

// A deliberately tiny trained bundle; quality does not matter here.
ModelBundle tiny_bundle(const std::filesystem::path& dir, TrainMode mode = TrainMode::Joint) {
  Kernel kernel{BSplineKernel::gaussian_init(52, 0.3 / 52.0, 0.038)};
  EncoderConfig ec;
  ec.conv_channels = {8, 8};
  ec.mlp_hidden = {16};
  ec.param_target.reset();
  EncoderModel encoder = build_encoder(ec, 3);
  TrainConfig tc;
  tc.mode = mode;
  tc.epochs = 2;
  tc.batch_size = 32;
  tc.examples_per_epoch = 64;
  tc.holdout_size = 8;
  tc.seed = 5;
  train(tc, kernel, encoder, dir.string());
  return load_bundle(dir.string());
}

}  // namespace

TEST_CASE("nmse_db: documented values") {
  CHECK(nmse_db(std::vector<double>{0.2, 0.5}, std::vector<double>{0.2, 0.5}) == kNmseFloorDb);
  const double bench = nmse_db(std::vector<double>{0.2, 0.5}, std::vector<double>{0.202, 0.498});
  CHECK(bench == Approx(-45.6).margin(0.05));
  CHECK(nmse_db(std::vector<double>{0.1, 0.3}, std::vector<double>{0.2, 0.6}) == Approx(0.0));
  CHECK_THROWS_AS(nmse_db(std::vector<double>{0.0, 0.0}, std::vector<double>{0.1, 0.2}),
                  NumericError);
  CHECK_THROWS_AS(nmse_db(std::vector<double>{0.1}, std::vector<double>{0.1, 0.2}), ConfigError);
}

TEST_CASE("nmse_db: sorted-pair convention") {
  // Slot order does not matter; the l-th smallest pairs with the l-th smallest.
  CHECK(nmse_db(std::vector<double>{0.5, 0.2}, std::vector<double>{0.2, 0.5}) == kNmseFloorDb);
  const double a = nmse_db(std::vector<double>{0.1, 0.4}, std::vector<double>{0.42, 0.11});
  const double b = nmse_db(std::vector<double>{0.4, 0.1}, std::vector<double>{0.11, 0.42});
  CHECK(a == b);
}

TEST_CASE("nmse_db: added estimator noise never helps on average") {
  Rng rng(8);
  const std::vector<double> truth = {0.1, 0.35};
  const std::vector<double> estimate = {0.11, 0.34};  // 0.01 systematic error
  const double base = nmse_db(truth, estimate);
  double noisy_sum = 0.0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> jittered = estimate;
    for (auto& v : jittered) v += 0.005 * rng.normal();
    noisy_sum += nmse_db(truth, jittered);
  }
  CHECK(noisy_sum / trials >= base);
}

TEST_CASE("nmse_db_paired keeps amplitude slots aligned") {
  CHECK(nmse_db_paired(std::vector<double>{2.0, 8.0}, std::vector<double>{2.0, 8.0}) ==
        kNmseFloorDb);
  // Swapped slots are a real error for paired vectors.
  CHECK(nmse_db_paired(std::vector<double>{2.0, 8.0}, std::vector<double>{8.0, 2.0}) >
        -10.0);
}

TEST_CASE("reference table spot checks") {
  bool found_best = false, found_l10 = false;
  for (const auto& e : reference_results()) {
    if (std::string_view(e.method) == "learnable_init_gaussian" && e.snr_db == 40.0 &&
        std::string_view(e.table) == "snr_n21_l2") {
      CHECK(e.nmse_db == -60.5);
      found_best = true;
    }
    if (std::string_view(e.table) == "model_order" && e.order == 10 && e.snr_db == 10.0 &&
        std::string_view(e.method) == "fried_net") {
      CHECK(e.nmse_db == -0.02);
      found_l10 = true;
    }
  }
  CHECK(found_best);
  CHECK(found_l10);
}

TEST_CASE("run_cell: deterministic and finite") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "fri_eval_bundle";
  fs::remove_all(dir);
  const ModelBundle bundle = tiny_bundle(dir);

  const NmseCell a = run_cell(bundle, "m", EvalTarget::Delays, 25.0, std::nullopt, 64, 9, 0, 1);
  const NmseCell b = run_cell(bundle, "m", EvalTarget::Delays, 25.0, std::nullopt, 64, 9, 0, 1);
  CHECK(a.nmse_db == b.nmse_db);
  CHECK(std::isfinite(a.nmse_db));
  CHECK(a.trials == 64);

  const NmseCell amp =
      run_cell(bundle, "m", EvalTarget::Amplitudes, 25.0, std::nullopt, 32, 9, 1, 1);
  CHECK(std::isfinite(amp.nmse_db));
  CHECK(amp.target == "amplitudes");

  const NmseCell gap = run_cell(bundle, "m", EvalTarget::Delays, 25.0, 0.07, 32, 9, 2, 1);
  REQUIRE(gap.delta_tau.has_value());
  CHECK(*gap.delta_tau == 0.07);
  fs::remove_all(dir);
}

TEST_CASE("suites emit the documented CSV schema and reference rows") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "fri_eval_bundle2";
  fs::remove_all(dir);
  const ModelBundle bundle = tiny_bundle(dir);
  const std::vector<NamedBundle> models = {{"desk", &bundle}};

  const auto cells = suite_table1(models, 16, 3, 1);
  size_t ours = 0, refs = 0;
  for (const auto& c : cells) {
    if (c.model_id.rfind("ref:", 0) == 0) {
      ++refs;
    } else {
      ++ours;
    }
  }
  CHECK(ours == 4);
  CHECK(refs == 24);

  const std::string csv = cells_to_csv(cells);
  CHECK(csv.rfind("snr_db,delta_tau,target,nmse_db,trials,model_id\n", 0) == 0);
  CHECK(csv.find("ref:learnable_init_gaussian") != std::string::npos);
  CHECK(csv.find("-60.5") != std::string::npos);

  const fs::path plot_dir = fs::temp_directory_path() / "fri_eval_plotdata";
  fs::remove_all(plot_dir);
  write_plotdata(cells, plot_dir.string(), "table1");
  size_t files = 0;
  for (const auto& entry : fs::directory_iterator(plot_dir)) {
    ++files;
    CHECK(entry.path().extension() == ".csv");
  }
  CHECK(files >= 7);  // our curve + six reference curves

  const auto resolution = suite_resolution(models, 4, 3, 1);
  CHECK(resolution.size() == 24);
  for (const auto& c : resolution) CHECK(c.delta_tau.has_value());

  const auto empty_gap = run_resolution_sweep(models, std::vector<double>{},
                                              std::vector<double>{5.0}, 4, 3, 1);
  CHECK(empty_gap.empty());
  fs::remove_all(dir);
  fs::remove_all(plot_dir);
}

TEST_CASE("simulate_bench runs the capture/resample/decode pipeline") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "fri_eval_bench";
  fs::remove_all(dir);

  Kernel kernel{TwoExpKernel::from_alphas(13.23, 24.44)};
  EncoderConfig ec;
  ec.conv_channels = {8, 8};
  ec.mlp_hidden = {16};
  ec.param_target.reset();
  EncoderModel encoder = build_encoder(ec, 3);
  TrainConfig tc;
  tc.mode = TrainMode::Joint;
  tc.epochs = 2;
  tc.batch_size = 32;
  tc.examples_per_epoch = 64;
  tc.holdout_size = 8;
  tc.grid_convention = GridConvention::DelayRange;
  train(tc, kernel, encoder, dir.string());
  const ModelBundle bundle = load_bundle(dir.string());

  const auto [drift_a1, drift_a2] = rc_to_poles(85e3, 36.5e3, 1e-6, 1e-6);
  const TwoExpKernel realized = TwoExpKernel::from_alphas(drift_a1, drift_a2);
  const BenchResult result = simulate_bench(bundle, realized, BenchScenario{});
  REQUIRE(result.predicted_delays.size() == 2);
  CHECK(std::isfinite(result.delay_nmse_db));
  CHECK(std::isfinite(result.amplitude_nmse_db));
  CHECK(result.capture.grid.t_s == Approx(1.0 / 200.0));
  CHECK(result.encoder_input.values.size() == bundle.grid.n);
  // The capture covers the encoder's window.
  CHECK(result.capture.grid.t_start <= bundle.grid.t_start);
  CHECK(result.capture.grid.t_end() >= bundle.grid.t_end());
  fs::remove_all(dir);
}
