#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "fri/autodiff.hpp"
#include "fri/common.hpp"
#include "fri/sampler.hpp"

namespace fri {

// Requested architecture: a 1-D conv stack (GELU after each conv), flatten,
// an MLP with GELU hidden layers and a linear head of width L. When
// param_target is set, the hidden widths are rescaled at build time so the
// realized parameter count lands within +-10% of the target.
struct EncoderConfig {
  size_t input_length = 21;
  size_t output_length = 2;
  std::vector<size_t> conv_channels = {32, 64, 64};
  size_t conv_kernel_size = 3;
  std::vector<size_t> mlp_hidden = {256};
  std::optional<size_t> param_target = 115000;

  void validate() const {
    if (input_length < 2) throw ConfigError("EncoderConfig: input_length must be >= 2");
    if (output_length < 1) throw ConfigError("EncoderConfig: output_length must be >= 1");
    if (conv_channels.empty()) throw ConfigError("EncoderConfig: need at least one conv layer");
    for (size_t c : conv_channels) {
      if (c == 0) throw ConfigError("EncoderConfig: conv channel widths must be positive");
    }
    for (size_t h : mlp_hidden) {
      if (h == 0) throw ConfigError("EncoderConfig: mlp widths must be positive");
    }
    if (conv_kernel_size % 2 == 0 || conv_kernel_size == 0) {
      throw ConfigError("EncoderConfig: conv kernel size must be odd");
    }
  }
};

inline nlohmann::ordered_json encoder_config_to_json(const EncoderConfig& c) {
  nlohmann::ordered_json j;
  j["input_length"] = c.input_length;
  j["output_length"] = c.output_length;
  j["conv_channels"] = c.conv_channels;
  j["conv_kernel_size"] = c.conv_kernel_size;
  j["mlp_hidden"] = c.mlp_hidden;
  if (c.param_target) {
    j["param_target"] = *c.param_target;
  } else {
    j["param_target"] = nullptr;
  }
  return j;
}

inline EncoderConfig encoder_config_from_json(const nlohmann::ordered_json& j) {
  EncoderConfig c;
  c.input_length = j.at("input_length").get<size_t>();
  c.output_length = j.at("output_length").get<size_t>();
  c.conv_channels = j.at("conv_channels").get<std::vector<size_t>>();
  c.conv_kernel_size = j.at("conv_kernel_size").get<size_t>();
  c.mlp_hidden = j.at("mlp_hidden").get<std::vector<size_t>>();
  if (j.contains("param_target") && !j.at("param_target").is_null()) {
    c.param_target = j.at("param_target").get<size_t>();
  } else {
    c.param_target.reset();
  }
  c.validate();
  return c;
}

namespace detail {

inline size_t conv_param_count(const EncoderConfig& c) {
  size_t total = 0;
  size_t cin = 1;
  for (size_t cout : c.conv_channels) {
    total += cout * cin * c.conv_kernel_size + cout;
    cin = cout;
  }
  return total;
}

inline size_t mlp_param_count(const EncoderConfig& c, const std::vector<size_t>& hidden) {
  size_t total = 0;
  size_t in = c.conv_channels.back() * c.input_length;
  for (size_t h : hidden) {
    total += in * h + h;
    in = h;
  }
  total += in * c.output_length + c.output_length;
  return total;
}

inline std::vector<size_t> scale_widths(const std::vector<size_t>& widths, double f) {
  std::vector<size_t> out(widths.size());
  for (size_t i = 0; i < widths.size(); ++i) {
    out[i] = std::max<size_t>(1, static_cast<size_t>(std::llround(f * static_cast<double>(widths[i]))));
  }
  return out;
}

// Picks the hidden-width scale whose realized count is closest to the
// target. Counts are monotone in the scale, so bisection plus a local scan
// suffices.
inline std::vector<size_t> tune_hidden_widths(const EncoderConfig& c) {
  if (!c.param_target) return c.mlp_hidden;
  const auto target = static_cast<double>(*c.param_target);
  double lo = 1e-4, hi = 1e4;
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const double count =
        static_cast<double>(mlp_param_count(c, scale_widths(c.mlp_hidden, mid))) +
        static_cast<double>(conv_param_count(c));
    (count < target ? lo : hi) = mid;
  }
  std::vector<size_t> best;
  double best_gap = std::numeric_limits<double>::infinity();
  for (double f : {lo * 0.98, lo, 0.5 * (lo + hi), hi, hi * 1.02}) {
    const auto widths = scale_widths(c.mlp_hidden, f);
    const double count =
        static_cast<double>(conv_param_count(c) + mlp_param_count(c, widths));
    const double gap = std::fabs(count - target);
    if (gap < best_gap) {
      best_gap = gap;
      best = widths;
    }
  }
  return best;
}

}  // namespace detail

// A built model: realized widths plus the parameter tensors. forward()
// expects inputs already normalized (see normalize_samples); predict_delays
// handles normalization itself.
class EncoderModel {
 public:
  struct Layers {
    std::vector<ad::NodePtr> conv_w, conv_b;
    std::vector<ad::NodePtr> fc_w, fc_b;
  };

  EncoderModel(EncoderConfig realized, Layers layers)
      : config_(std::move(realized)), layers_(std::move(layers)) {}

  const EncoderConfig& config() const { return config_; }
  size_t input_length() const { return config_.input_length; }
  size_t output_length() const { return config_.output_length; }

  std::vector<ad::NodePtr> parameters() const {
    std::vector<ad::NodePtr> out;
    for (const auto& w : layers_.conv_w) out.push_back(w);
    for (const auto& b : layers_.conv_b) out.push_back(b);
    for (const auto& w : layers_.fc_w) out.push_back(w);
    for (const auto& b : layers_.fc_b) out.push_back(b);
    return out;
  }

  std::vector<std::pair<std::string, ad::NodePtr>> named_parameters() const {
    std::vector<std::pair<std::string, ad::NodePtr>> out;
    for (size_t i = 0; i < layers_.conv_w.size(); ++i) {
      out.emplace_back(str_printf("conv%zu.w", i), layers_.conv_w[i]);
      out.emplace_back(str_printf("conv%zu.b", i), layers_.conv_b[i]);
    }
    for (size_t i = 0; i < layers_.fc_w.size(); ++i) {
      out.emplace_back(str_printf("fc%zu.w", i), layers_.fc_w[i]);
      out.emplace_back(str_printf("fc%zu.b", i), layers_.fc_b[i]);
    }
    return out;
  }

  size_t parameter_count() const {
    size_t total = 0;
    for (const auto& p : parameters()) total += p->value.numel();
    return total;
  }

  // Graph from normalized input [B, N] to raw delay estimates [B, L].
  // The final layer has no activation.
  ad::NodePtr forward(const ad::NodePtr& input) const {
    if (input->value.shape.rank() != 2 || input->value.shape[1] != config_.input_length) {
      throw ConfigError(str_printf("encoder: input shape %s does not match input length %zu",
                                   input->value.shape.str().c_str(), config_.input_length));
    }
    const size_t batch = input->value.shape[0];
    ad::NodePtr x = ad::reshape(input, {batch, 1, config_.input_length});
    for (size_t i = 0; i < layers_.conv_w.size(); ++i) {
      x = ad::gelu(ad::add(ad::conv1d(x, layers_.conv_w[i]), layers_.conv_b[i]));
    }
    x = ad::flatten(x);
    const size_t n_fc = layers_.fc_w.size();
    for (size_t i = 0; i < n_fc; ++i) {
      x = ad::add(ad::matmul(x, layers_.fc_w[i]), layers_.fc_b[i]);
      if (i + 1 < n_fc) x = ad::gelu(x);
    }
    return x;
  }

 private:
  EncoderConfig config_;
  Layers layers_;
};

inline EncoderModel build_encoder(const EncoderConfig& request, uint64_t seed) {
  request.validate();
  EncoderConfig realized = request;
  realized.mlp_hidden = detail::tune_hidden_widths(request);

  const size_t count =
      detail::conv_param_count(realized) + detail::mlp_param_count(realized, realized.mlp_hidden);
  if (request.param_target) {
    const double target = static_cast<double>(*request.param_target);
    if (std::fabs(static_cast<double>(count) - target) > 0.10 * target) {
      throw ConfigError(str_printf(
          "build_encoder: realized parameter count %zu misses target %zu by more than 10%%; "
          "adjust conv channels or the target",
          count, *request.param_target));
    }
  }

  Rng rng(seed);
  const auto init_tensor = [&rng](ad::Shape shape, size_t fan_in) {
    ad::Tensor t(shape);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.data) v = rng.uniform(-bound, bound);
    return t;
  };

  EncoderModel::Layers layers;
  size_t cin = 1;
  for (size_t i = 0; i < realized.conv_channels.size(); ++i) {
    const size_t cout = realized.conv_channels[i];
    const size_t fan_in = cin * realized.conv_kernel_size;
    layers.conv_w.push_back(ad::parameter(
        init_tensor({cout, cin, realized.conv_kernel_size}, fan_in), str_printf("conv%zu.w", i)));
    layers.conv_b.push_back(
        ad::parameter(ad::Tensor({cout}), str_printf("conv%zu.b", i)));
    cin = cout;
  }
  size_t in = realized.conv_channels.back() * realized.input_length;
  std::vector<size_t> fc_sizes = realized.mlp_hidden;
  fc_sizes.push_back(realized.output_length);
  for (size_t i = 0; i < fc_sizes.size(); ++i) {
    const size_t out = fc_sizes[i];
    layers.fc_w.push_back(
        ad::parameter(init_tensor({in, out}, in), str_printf("fc%zu.w", i)));
    layers.fc_b.push_back(ad::parameter(ad::Tensor({out}), str_printf("fc%zu.b", i)));
    in = out;
  }
  return EncoderModel(std::move(realized), std::move(layers));
}

// Max-abs normalization; all-zero vectors pass through with scale 1. The
// returned scale lets callers keep the raw samples for amplitude recovery.
inline double normalize_scale(std::span<const double> values) {
  double m = 0.0;
  for (double v : values) m = std::max(m, std::fabs(v));
  return m == 0.0 ? 1.0 : m;
}

inline ad::Tensor normalized_input_tensor(std::span<const SampleVector> batch, size_t n) {
  ad::Tensor input({batch.size(), n});
  for (size_t b = 0; b < batch.size(); ++b) {
    if (batch[b].values.size() != n) {
      throw ConfigError(str_printf("encoder: sample length %zu does not match input length %zu",
                                   batch[b].values.size(), n));
    }
    const double inv = 1.0 / normalize_scale(batch[b].values);
    for (size_t i = 0; i < n; ++i) input.data[b * n + i] = batch[b].values[i] * inv;
  }
  return input;
}

// Raw delay estimates for a batch of sample vectors. sort_outputs orders
// each row ascending (evaluation-side convention; training uses raw slots).
inline std::vector<std::vector<double>> predict_delays(const EncoderModel& model,
                                                       std::span<const SampleVector> batch,
                                                       bool sort_outputs = false) {
  if (batch.empty()) return {};
  auto input = ad::constant(normalized_input_tensor(batch, model.input_length()), "samples");
  const ad::NodePtr pred = model.forward(input);
  const size_t out_len = model.output_length();
  std::vector<std::vector<double>> out(batch.size(), std::vector<double>(out_len));
  for (size_t b = 0; b < batch.size(); ++b) {
    for (size_t l = 0; l < out_len; ++l) out[b][l] = pred->value.data[b * out_len + l];
    if (sort_outputs) std::sort(out[b].begin(), out[b].end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence: architecture JSON (exact realized widths; loading never
// re-tunes) plus the flat binary weight container.
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json encoder_architecture_json(const EncoderModel& model) {
  nlohmann::ordered_json j = encoder_config_to_json(model.config());
  j["parameter_count"] = model.parameter_count();
  return j;
}

inline EncoderModel encoder_from_architecture(const nlohmann::ordered_json& arch, uint64_t seed) {
  EncoderConfig c = encoder_config_from_json(arch);
  c.param_target.reset();  // widths in the file are final
  return build_encoder(c, seed);
}

inline void save_encoder_weights(const EncoderModel& model, const std::string& path) {
  std::vector<std::pair<std::string, const ad::Tensor*>> tensors;
  for (const auto& [name, node] : model.named_parameters()) {
    tensors.emplace_back(name, &node->value);
  }
  ad::save_checkpoint(path, tensors);
}

inline void load_encoder_weights(EncoderModel& model, const std::string& path) {
  const auto loaded = ad::load_checkpoint(path);
  auto named = model.named_parameters();
  if (loaded.size() != named.size()) {
    throw ConfigError(str_printf("load_encoder_weights: %zu tensors in file, model has %zu",
                                 loaded.size(), named.size()));
  }
  for (size_t i = 0; i < named.size(); ++i) {
    if (loaded[i].first != named[i].first ||
        !(loaded[i].second.shape == named[i].second->value.shape)) {
      throw ConfigError(str_printf("load_encoder_weights: tensor '%s' does not match model '%s'",
                                   loaded[i].first.c_str(), named[i].first.c_str()));
    }
    named[i].second->value = loaded[i].second;
  }
}

}  // namespace fri
