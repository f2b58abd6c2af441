#include <catch2/catch_amalgamated.hpp>

#include "fri/sampler.hpp"
#include "test_util.hpp"

using namespace fri;
using Catch::Approx;

namespace {

GaussianPairKernel pair_fixed() { return {1.4, 1.4, -0.2, 0.2, 0.038, {-0.3, 0.3}}; }

}  // namespace

TEST_CASE("build_grid: full-support convention reproduces T_s = 0.076") {
  const SampleGrid g = build_grid({-0.3, 0.3}, -0.48, 0.52, 21);
  CHECK(g.t_s == Approx(1.6 / 21.0).margin(1e-15));
  CHECK(std::fabs(g.t_s - 0.076) / 0.076 < 0.005);
  CHECK(g.t_start == Approx(-0.78));

  const SampleGrid g11 = build_grid({-0.3, 0.3}, -0.48, 0.52, 11);
  CHECK(g11.t_s == Approx(1.6 / 11.0).margin(1e-15));
}

TEST_CASE("build_grid: delay-range convention reproduces T_s = 0.048") {
  const SampleGrid g = build_grid({-0.3, 0.3}, -0.48, 0.52, 21, GridConvention::DelayRange);
  CHECK(g.t_s == Approx(1.0 / 21.0).margin(1e-15));
  CHECK(std::fabs(g.t_s - 0.048) / 0.048 < 0.01);
  // Right-edge instants: first at tau_min + T_s, last exactly on tau_max.
  CHECK(g.t_start == Approx(-0.48 + 1.0 / 21.0));
  CHECK(g.t_end() == Approx(0.52));
}

TEST_CASE("build_grid: direct construction and errors") {
  const SampleGrid g = build_grid({0.0, 1.0}, 0.0, 0.0, 2);
  CHECK(g.t_s == Approx(0.5));
  CHECK(g.instant(0) == 0.0);
  CHECK(g.instant(1) == 0.5);
  CHECK_THROWS_AS(build_grid({0.0, 1.0}, 0.0, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(build_grid({0.0, 1.0}, 0.2, 0.2, 4, GridConvention::DelayRange), ConfigError);
}

TEST_CASE("forward_samples: single centered Dirac") {
  const Kernel kernel{TruncatedGaussianKernel{0.038, {-0.3, 0.3}}};
  SampleGrid g{3, -0.3, 0.3};
  const SampleVector y = forward_samples(FriSignal({1.0}, {0.0}), DiracPulse{}, kernel, g);
  CHECK(y.values[1] == 1.0);  // t = 0
  CHECK(y.is_clean());
}

TEST_CASE("forward_samples: scaling and shifting a single pulse") {
  const Kernel kernel{pair_fixed()};
  const SampleGrid g = build_grid({-0.3, 0.3}, -0.48, 0.52, 21);
  const SampleVector y = forward_samples(FriSignal({2.0}, {0.1}), DiracPulse{}, kernel, g);
  for (size_t n = 0; n < g.n; ++n) {
    CHECK(y.values[n] == Approx(2.0 * evaluate(kernel, g.instant(n) - 0.1)).margin(1e-14));
  }
}

TEST_CASE("forward_samples: matches dense convolution + decimation") {
  const Kernel kernel{pair_fixed()};
  const SampleGrid g = build_grid({-0.3, 0.3}, -0.48, 0.52, 21);
  const FriSignal s({1.0, 1.0}, {0.2, 0.5});
  const SampleVector y = forward_samples(s, DiracPulse{}, kernel, g);

  // Dense tabulation of the kernel, sparse convolution with the spike train,
  // then linear interpolation onto the sample instants.
  const double dt = 1e-5;
  const double t0 = g.t_start - 0.05, t1 = g.t_end() + 0.05;
  const size_t m = static_cast<size_t>((t1 - t0) / dt) + 1;
  std::vector<double> dense(m, 0.0);
  for (size_t i = 0; i < m; ++i) {
    const double t = t0 + static_cast<double>(i) * dt;
    for (size_t l = 0; l < s.order(); ++l) {
      dense[i] += s.amplitudes[l] * evaluate(kernel, t - s.delays[l]);
    }
  }
  for (size_t n = 0; n < g.n; ++n) {
    const double x = (g.instant(n) - t0) / dt;
    const size_t i = static_cast<size_t>(x);
    const double frac = x - static_cast<double>(i);
    const double interp = dense[i] * (1.0 - frac) + dense[i + 1] * frac;
    if (std::fabs(interp) > 1e-9) {
      CHECK(testutil::rel_err(y.values[n], interp) < 1e-6);
    } else {
      CHECK(std::fabs(y.values[n]) < 1e-8);
    }
  }
}

TEST_CASE("forward_samples: superposition to machine precision") {
  const Kernel kernel{pair_fixed()};
  const SampleGrid g = build_grid({-0.3, 0.3}, -0.48, 0.52, 21);
  const FriSignal s1({1.3}, {-0.2});
  const FriSignal s2({0.7}, {0.35});
  const double a = 2.25, b = -0.5;
  const FriSignal mix({a * 1.3, b * 0.7}, {-0.2, 0.35});
  const auto y1 = forward_samples(s1, DiracPulse{}, kernel, g);
  const auto y2 = forward_samples(s2, DiracPulse{}, kernel, g);
  const auto ym = forward_samples(mix, DiracPulse{}, kernel, g);
  for (size_t n = 0; n < g.n; ++n) {
    CHECK(ym.values[n] == Approx(a * y1.values[n] + b * y2.values[n]).margin(1e-13));
  }
}

TEST_CASE("forward_samples: shift covariance") {
  const Kernel kernel{pair_fixed()};
  const double delta = 0.13;
  SampleGrid g = build_grid({-0.3, 0.3}, -0.48, 0.52, 21);
  SampleGrid shifted = g;
  shifted.t_start += delta;
  const FriSignal s({2.0, 1.0}, {-0.1, 0.25});
  const FriSignal moved({2.0, 1.0}, {-0.1 + delta, 0.25 + delta});
  const auto y = forward_samples(s, DiracPulse{}, kernel, g);
  const auto y2 = forward_samples(moved, DiracPulse{}, kernel, shifted);
  for (size_t n = 0; n < g.n; ++n) {
    CHECK(y2.values[n] == Approx(y.values[n]).margin(1e-13));
  }
}

TEST_CASE("grid coverage: every pulse overlaps at least two samples") {
  const Kernel kernel{pair_fixed()};
  const SampleGrid g = build_grid({-0.3, 0.3}, -0.48, 0.52, 21);
  REQUIRE(g.t_s < support(kernel).length());
  Rng rng(6);
  for (int i = 0; i < 200; ++i) {
    const double tau = rng.uniform(-0.48, 0.52);
    int covered = 0;
    for (size_t n = 0; n < g.n; ++n) {
      const double lag = g.instant(n) - tau;
      if (lag >= -0.3 && lag <= 0.3) ++covered;
    }
    CHECK(covered >= 2);
  }
}

TEST_CASE("add_noise: clean sentinel passes samples through") {
  const Kernel kernel{pair_fixed()};
  const SampleGrid g = build_grid({-0.3, 0.3}, -0.48, 0.52, 21);
  const auto y = forward_samples(FriSignal({1.0}, {0.0}), DiracPulse{}, kernel, g);
  Rng rng(1);
  const auto noisy = add_noise(y, kCleanSnr, rng);
  CHECK(noisy.values == y.values);
  CHECK(noisy.is_clean());
}

TEST_CASE("add_noise: zero vector is rejected") {
  SampleVector y;
  y.grid = SampleGrid{4, 0.0, 0.1};
  y.values = {0, 0, 0, 0};
  Rng rng(1);
  CHECK_THROWS_AS(add_noise(y, 10.0, rng), NumericError);
}

TEST_CASE("add_noise: realized SNR calibration at 0, 15, 20 and 40 dB") {
  const Kernel kernel{pair_fixed()};
  const SampleGrid g = build_grid({-0.3, 0.3}, -0.48, 0.52, 21);
  const auto clean = forward_samples(FriSignal({3.0, 1.5}, {-0.1, 0.3}), DiracPulse{}, kernel, g);
  const double signal_power = mean_square(clean.values);
  Rng rng(2718);
  for (double target : {0.0, 15.0, 20.0, 40.0}) {
    double noise_energy = 0.0;
    size_t count = 0;
    for (int trial = 0; trial < 100000 / 10; ++trial) {
      const auto noisy = add_noise(clean, target, rng);
      for (size_t n = 0; n < g.n; ++n) {
        const double d = noisy.values[n] - clean.values[n];
        noise_energy += d * d;
        ++count;
      }
    }
    const double realized =
        10.0 * std::log10(signal_power / (noise_energy / static_cast<double>(count)));
    CHECK(std::fabs(realized - target) < 0.1);
  }
}

TEST_CASE("dataset stream: deterministic and policy-faithful") {
  DatasetSpec spec;
  spec.snr = SnrPolicy::fixed(15.0);
  const Kernel kernel{pair_fixed()};
  const SampleGrid g = build_grid({-0.3, 0.3}, -0.48, 0.52, 21);
  DatasetStream stream(spec, kernel, g, 7, 3);
  DatasetStream again(spec, kernel, g, 7, 3);
  for (uint64_t i = 0; i < stream.size(); ++i) {
    const auto a = stream.at(i);
    const auto b = again.at(i);
    CHECK(a.samples.values == b.samples.values);
    CHECK(a.signal.delays == b.signal.delays);
    CHECK(a.samples.snr_db == 15.0);
  }
}

TEST_CASE("dataset stream: resolution-sweep cell has exact separations") {
  DatasetSpec spec;
  spec.snr = SnrPolicy::fixed(30.0);
  spec.exact_gap = 0.07;
  const Kernel kernel{pair_fixed()};
  const SampleGrid g = build_grid({-0.3, 0.3}, -0.48, 0.52, 21);
  DatasetStream stream(spec, kernel, g, 11, 1000);
  for (uint64_t i = 0; i < stream.size(); ++i) {
    const auto ex = stream.at(i);
    CHECK(ex.signal.delays[1] - ex.signal.delays[0] == Approx(0.07).margin(1e-12));
  }
}

TEST_CASE("example NDJSON round trip, including the clean sentinel") {
  const Kernel kernel{pair_fixed()};
  const SampleGrid g = build_grid({-0.3, 0.3}, -0.48, 0.52, 21);
  DatasetSpec spec;
  spec.snr = SnrPolicy::clean();
  const auto ex = generate_example(spec, kernel, g, 5, 0);
  const auto j = example_to_json(ex);
  CHECK(j.at("snr_db").is_null());
  const auto back = example_from_json(j);
  CHECK(back.samples.values == ex.samples.values);
  CHECK(back.samples.is_clean());
  CHECK(back.signal.delays == ex.signal.delays);

  DatasetSpec noisy;
  noisy.snr = SnrPolicy::uniform(5.0, 40.0);
  const auto ex2 = generate_example(noisy, kernel, g, 5, 1);
  const auto back2 = example_from_json(example_to_json(ex2));
  CHECK(back2.samples.snr_db == ex2.samples.snr_db);
}
