#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "fri/encoder.hpp"
#include "test_util.hpp"

using namespace fri;
using Catch::Approx;

namespace {

std::vector<SampleVector> random_batch(size_t count, size_t n, uint64_t seed) {
  Rng rng(seed);
  std::vector<SampleVector> batch(count);
  for (auto& sv : batch) {
    sv.grid = SampleGrid{n, -0.78, 1.6 / static_cast<double>(n)};
    sv.values.resize(n);
    for (auto& v : sv.values) v = rng.uniform(-5.0, 5.0);
  }
  return batch;
}

}  // namespace

TEST_CASE("build_encoder: default config lands on the parameter budget") {
  const EncoderConfig config;  // N=21, L=2, target 115k
  const EncoderModel model = build_encoder(config, 1);
  CHECK(model.parameter_count() >= 103500);
  CHECK(model.parameter_count() <= 126500);
}

TEST_CASE("build_encoder: reduced sample budget keeps the same channel plan") {
  EncoderConfig config;
  config.input_length = 11;
  const EncoderModel model = build_encoder(config, 1);
  CHECK(model.parameter_count() >= 103500);
  CHECK(model.parameter_count() <= 126500);
  CHECK(model.config().conv_channels == std::vector<size_t>{32, 64, 64});
  // Narrower flatten stage -> wider tuned hidden layer than the N=21 build.
  const EncoderModel wide = build_encoder(EncoderConfig{}, 1);
  CHECK(model.config().mlp_hidden[0] > wide.config().mlp_hidden[0]);
}

TEST_CASE("build_encoder: high model order widens the output head") {
  EncoderConfig config;
  config.input_length = 84;
  config.output_length = 10;
  const EncoderModel model = build_encoder(config, 1);
  CHECK(model.parameter_count() >= 103500);
  CHECK(model.parameter_count() <= 126500);
  const auto batch = random_batch(3, 84, 5);
  const auto pred = predict_delays(model, batch);
  REQUIRE(pred.size() == 3);
  CHECK(pred[0].size() == 10);
}

TEST_CASE("build_encoder: unreachable target is an error") {
  EncoderConfig config;
  config.param_target = 1000;  // conv stack alone exceeds this
  CHECK_THROWS_AS(build_encoder(config, 1), ConfigError);
}

TEST_CASE("predict_delays: untrained model emits finite L-vectors") {
  const EncoderModel model = build_encoder(EncoderConfig{}, 3);
  const auto batch = random_batch(8, 21, 9);
  const auto pred = predict_delays(model, batch);
  REQUIRE(pred.size() == 8);
  for (const auto& row : pred) {
    REQUIRE(row.size() == 2);
    for (double v : row) CHECK(std::isfinite(v));
  }
  const auto sorted = predict_delays(model, batch, true);
  for (const auto& row : sorted) CHECK(row[0] <= row[1]);
}

TEST_CASE("predict_delays: batch order permutes outputs identically") {
  const EncoderModel model = build_encoder(EncoderConfig{}, 3);
  auto batch = random_batch(6, 21, 11);
  const auto pred = predict_delays(model, batch);
  std::reverse(batch.begin(), batch.end());
  const auto rev = predict_delays(model, batch);
  for (size_t i = 0; i < batch.size(); ++i) {
    CHECK(rev[i] == pred[batch.size() - 1 - i]);
  }
}

TEST_CASE("predict_delays: rejects mismatched input length") {
  const EncoderModel model = build_encoder(EncoderConfig{}, 3);
  const auto batch = random_batch(2, 11, 1);
  CHECK_THROWS_AS(predict_delays(model, batch), ConfigError);
}

TEST_CASE("encoder loss gradient passes finite differences") {
  EncoderConfig config;
  config.input_length = 9;
  config.output_length = 2;
  config.conv_channels = {4, 6};
  config.mlp_hidden = {10};
  config.param_target.reset();
  const EncoderModel model = build_encoder(config, 21);

  Rng rng(33);
  ad::Tensor input({4, 9});
  for (auto& v : input.data) v = rng.uniform(-1.0, 1.0);
  ad::Tensor target({4, 2});
  for (auto& v : target.data) v = rng.uniform(-0.5, 0.5);

  const auto build = [&] {
    auto pred = model.forward(ad::constant(input));
    auto diff = ad::subtract(pred, ad::constant(target));
    return ad::multiply(ad::reduce_sum(ad::abs(diff)), ad::constant(ad::Tensor::scalar(0.25)));
  };
  auto params = model.parameters();
  ad::zero_grads(params);
  auto loss = build();
  ad::backward(loss);

  int checked = 0;
  for (const auto& p : params) {
    for (size_t i = 0; i < p->value.numel() && checked < 10; i += 17, ++checked) {
      const double saved = p->value.data[i];
      const double h = 1e-5 * std::max(1.0, std::fabs(saved));
      p->value.data[i] = saved + h;
      const double up = build()->value.data[0];
      p->value.data[i] = saved - h;
      const double down = build()->value.data[0];
      p->value.data[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double an = p->grad.data[i];
      if (std::fabs(fd) < 1e-9 && std::fabs(an) < 1e-9) continue;
      INFO(p->label << "[" << i << "]");
      CHECK(testutil::rel_err(an, fd) < 1e-3);
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("encoder weights round trip through the checkpoint container") {
  EncoderConfig config;
  config.conv_channels = {8, 8};
  config.mlp_hidden = {16};
  config.param_target.reset();
  EncoderModel model = build_encoder(config, 5);
  const auto batch = random_batch(4, 21, 2);
  const auto pred = predict_delays(model, batch);

  const auto dir = std::filesystem::temp_directory_path() / "fri_encoder_test";
  std::filesystem::create_directories(dir);
  const auto ckpt = (dir / "weights.bin").string();
  save_encoder_weights(model, ckpt);

  EncoderModel reloaded = encoder_from_architecture(encoder_architecture_json(model), 999);
  load_encoder_weights(reloaded, ckpt);
  CHECK(predict_delays(reloaded, batch) == pred);
  CHECK(reloaded.parameter_count() == model.parameter_count());
  std::filesystem::remove_all(dir);
}

TEST_CASE("normalization is max-abs with a zero-vector guard") {
  CHECK(normalize_scale(std::vector<double>{1.0, -3.0, 2.0}) == 3.0);
  CHECK(normalize_scale(std::vector<double>{0.0, 0.0}) == 1.0);
}
