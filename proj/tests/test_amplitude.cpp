#include <catch2/catch_amalgamated.hpp>

#include "fri/amplitude.hpp"
#include "test_util.hpp"

using namespace fri;
using Catch::Approx;

namespace {

const Kernel kTestKernel{GaussianPairKernel{1.4, 1.4, -0.2, 0.2, 0.038, {-0.3, 0.3}}};

AmplitudeProblem make_problem(const FriSignal& signal, double snr_db, uint64_t seed) {
  const SampleGrid grid = build_grid({-0.3, 0.3}, -0.48, 0.52, 21);
  SampleVector y = forward_samples(signal, DiracPulse{}, kTestKernel, grid);
  if (!std::isinf(snr_db)) {
    Rng rng(seed);
    y = add_noise(y, snr_db, rng);
  }
  return AmplitudeProblem{std::move(y), signal.delays, kTestKernel};
}

}  // namespace

TEST_CASE("LS recovers exactly for noiseless data at the true delays") {
  const FriSignal truth({2.5, 7.0}, {-0.1, 0.3});
  const auto problem = make_problem(truth, kCleanSnr, 0);
  const auto a = estimate_amplitudes_ls(problem);
  REQUIRE(a.size() == 2);
  CHECK(testutil::rel_err(a[0], 2.5) < 1e-8);
  CHECK(testutil::rel_err(a[1], 7.0) < 1e-8);
}

TEST_CASE("LS of a zero target is zero") {
  auto problem = make_problem(FriSignal({1.0, 1.0}, {-0.1, 0.3}), kCleanSnr, 0);
  std::fill(problem.samples.values.begin(), problem.samples.values.end(), 0.0);
  for (double a : estimate_amplitudes_ls(problem)) CHECK(std::fabs(a) < 1e-12);
}

TEST_CASE("LS scales homogeneously with the samples") {
  auto problem = make_problem(FriSignal({2.0, 4.0}, {-0.2, 0.25}), 20.0, 5);
  const auto base = estimate_amplitudes_ls(problem);
  for (auto& v : problem.samples.values) v *= -3.5;
  const auto scaled = estimate_amplitudes_ls(problem);
  for (size_t i = 0; i < base.size(); ++i) {
    CHECK(scaled[i] == Approx(-3.5 * base[i]).epsilon(1e-12));
  }
}

TEST_CASE("colliding delays are rejected with the pair named") {
  auto problem = make_problem(FriSignal({1.0, 1.0}, {-0.1, 0.3}), kCleanSnr, 0);
  problem.delays = {0.2, 0.2};
  try {
    estimate_amplitudes_ls(problem);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("0 and 1") != std::string::npos);
    CHECK(msg.find("0.2") != std::string::npos);
  }
}

TEST_CASE("GD converges to the LS solution on 100 random problems") {
  Rng rng(100);
  GenerationRanges ranges;
  ranges.delta_tau_min = 0.05;  // keep the Gram matrix well conditioned
  for (int trial = 0; trial < 100; ++trial) {
    const FriSignal truth = draw_signal(ranges, rng);
    const auto problem = make_problem(truth, 25.0, 1000 + trial);
    const auto ls = estimate_amplitudes_ls(problem);
    const auto gd = estimate_amplitudes_gd(problem, 200000, suggest_gd_step(problem),
                                           2000 + trial, 1e-10);
    for (size_t i = 0; i < ls.size(); ++i) {
      CHECK(std::fabs(ls[i] - gd[i]) < 1e-6);
    }
  }
}

TEST_CASE("GD degenerate parameters return the initialization") {
  const auto problem = make_problem(FriSignal({3.0, 1.0}, {-0.15, 0.2}), kCleanSnr, 0);
  Rng ref(77);
  const double a0 = ref.normal(), a1 = ref.normal();
  const auto zero_eta = estimate_amplitudes_gd(problem, 100, 0.0, 77);
  CHECK(zero_eta[0] == a0);
  CHECK(zero_eta[1] == a1);
  const auto zero_steps = estimate_amplitudes_gd(problem, 0, 0.1, 77);
  CHECK(zero_steps[0] == a0);
  CHECK(zero_steps[1] == a1);
}

TEST_CASE("GD diverges loudly when the step is too large") {
  const auto problem = make_problem(FriSignal({3.0, 1.0}, {-0.15, 0.2}), kCleanSnr, 0);
  const double unstable = 50.0 * suggest_gd_step(problem);
  CHECK_THROWS_AS(estimate_amplitudes_gd(problem, 10000, unstable, 3), NumericError);
}

TEST_CASE("LS and GD amplitude accuracy agree within 3 dB at 25 dB SNR") {
  Rng rng(9);
  GenerationRanges ranges;
  ranges.delta_tau_min = 0.05;
  double ls_nmse_sum = 0.0, gd_nmse_ff = 0.0;
  const int trials = 1000;
  for (int trial = 0; trial < trials; ++trial) {
    const FriSignal truth = draw_signal(ranges, rng);
    const auto problem = make_problem(truth, 25.0, 5000 + trial);
    const auto ls = estimate_amplitudes_ls(problem);
    const auto gd = estimate_amplitudes_gd_auto(problem, 9000 + trial);
    double num_ls = 0.0, num_gd = 0.0, den = 0.0;
    for (size_t i = 0; i < ls.size(); ++i) {
      num_ls += (ls[i] - truth.amplitudes[i]) * (ls[i] - truth.amplitudes[i]);
      num_gd += (gd[i] - truth.amplitudes[i]) * (gd[i] - truth.amplitudes[i]);
      den += truth.amplitudes[i] * truth.amplitudes[i];
    }
    ls_nmse_sum += 10.0 * std::log10(std::max(num_ls / den, 1e-15));
    gd_nmse_ff += 10.0 * std::log10(std::max(num_gd / den, 1e-15));
  }
  const double ls_db = ls_nmse_sum / trials;
  const double gd_db = gd_nmse_ff / trials;
  CHECK(std::fabs(ls_db - gd_db) < 3.0);
}
