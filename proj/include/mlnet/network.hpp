#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mlnet/ops.hpp"
#include "mlnet/prior.hpp"
#include "mlnet/rng.hpp"
#include "mlnet/tensor.hpp"

// Feature extraction and encoding networks.
//
// The feature extractor is a 13-layer fully convolutional stack (3x3 kernels,
// stride 1, zero padding 1) in five stages of 2/2/3/3/3 layers. The first
// three stages end in 2x2 stride-2 max pooling; the fourth ends in a 2x2
// stride-1 pool with edge-clamped padding; the fifth has no pooling. Feature
// maps are therefore downsampled by exactly 8. Three taps are exported: the
// outputs of the third and fourth pooling stages and of the last conv layer,
// all sharing the same spatial size. The encoder concatenates the taps,
// applies dropout, a 3x3 convolution with ReLU, and a final 1x1 convolution
// that yields the one-channel pre-prior saliency map.

namespace mlnet {

struct ModelConfig {
  std::array<std::int64_t, 5> stage_channels{64, 128, 256, 512, 512};
  std::int64_t encode_channels = 64;
  std::int64_t input_width = 640;
  std::int64_t input_height = 480;
  double dropout_retain = 0.5;
  std::array<double, 3> channel_means{0.5, 0.5, 0.5};
  bool prior_normalized = true;
  std::uint64_t seed = 0;

  static ModelConfig full_scale() { return ModelConfig{}; }

  // Width-/8 preset sized so every test runs in seconds.
  static ModelConfig desk() {
    ModelConfig cfg;
    cfg.stage_channels = {8, 16, 32, 64, 64};
    cfg.encode_channels = 8;
    cfg.input_width = 64;
    cfg.input_height = 48;
    return cfg;
  }

  std::int64_t tap_width() const { return input_width / 8; }
  std::int64_t tap_height() const { return input_height / 8; }
  std::int64_t prior_width() const { return prior_extent(tap_width()); }
  std::int64_t prior_height() const { return prior_extent(tap_height()); }

  void validate() const {
    if (input_width % 8 != 0 || input_height % 8 != 0) {
      throw ValueError("input size " + std::to_string(input_width) + "x" +
                       std::to_string(input_height) +
                       " must be divisible by 8; pad the input first");
    }
    if (input_width < 8 || input_height < 8) {
      throw ValueError("input size must be at least 8x8");
    }
    for (std::int64_t c : stage_channels) {
      if (c < 1) throw ValueError("stage channel counts must be >= 1");
    }
    if (encode_channels < 1) {
      throw ValueError("encode_channels must be >= 1");
    }
    if (!(dropout_retain > 0.0) || dropout_retain > 1.0) {
      throw ValueError("dropout_retain must lie in (0, 1]");
    }
  }
};

struct ConvLayer {
  std::string name;
  Tensor weight;  // [Co, Ci, k, k]
  Tensor bias;    // [1, Co, 1, 1]
  std::int64_t pad = 1;
};

struct Taps {
  Tensor conv3, conv4, conv5;
};

// A trainable tensor plus its optimizer policy.
struct ParamRef {
  std::string name;
  Tensor tensor;
  bool weight_decay = true;
};

class Model {
 public:
  ModelConfig config;
  std::vector<ConvLayer> features;  // exactly 13
  ConvLayer encode_main;            // 3x3
  ConvLayer encode_out;             // 1x1
  Tensor prior_mask;                // U, excluded from weight decay

  static constexpr int kFeatureConvs = 13;
  // Stage-2 stride-2 pools end after these conv indices; conv 9 is followed
  // by the stride-1 edge-clamped pool.
  static constexpr std::array<int, 3> kPoolAfter{1, 3, 6};
  static constexpr int kSamePoolAfter = 9;

  struct ForwardResult {
    Tensor pre_prior;  // [N, 1, H/8, W/8], before prior multiplication
    Taps taps;
    Tensor concat;     // encoder input
  };

  // Inputs to each feature conv plus the encoder input, captured so a
  // forward pass can be resumed exactly from any layer.
  struct ForwardTrace {
    std::vector<Tensor> conv_inputs;
    Taps taps;
    Tensor concat;
  };

  ForwardResult forward(const Tensor& images, bool training, RngState& rng,
                        Tape* tape = nullptr,
                        ForwardTrace* trace = nullptr) const {
    const Shape s = images.shape();
    if (s.c != 3) {
      throw ShapeError("forward: expected 3 input channels, got " + s.str());
    }
    if (s.h < 8 || s.w < 8) {
      throw ShapeError("forward: input " + s.str() + " too small to pool");
    }
    Taps taps = run_features(images, 0, nullptr, tape, trace);
    ForwardResult r;
    r.taps = taps;
    r.concat =
        concat_channels(tape, {taps.conv3, taps.conv4, taps.conv5});
    if (trace) trace->concat = r.concat;
    r.pre_prior = encode(r.concat, training, rng, tape);
    return r;
  }

  // Encoder: dropout, 3x3 conv + ReLU, 1x1 conv. Public so that analyses can
  // differentiate the map with respect to the encoder input.
  Tensor encode(const Tensor& concat_in, bool training, RngState& rng,
                Tape* tape = nullptr) const {
    Tensor x = dropout(tape, concat_in, config.dropout_retain, rng, training);
    x = conv2d(tape, x, encode_main.weight, encode_main.bias, 1, 1);
    x = relu(tape, x);
    return conv2d(tape, x, encode_out.weight, encode_out.bias, 1, 0);
  }

  // Re-runs the feature stack starting at conv `from`, taking that layer's
  // recorded input from the trace and cached taps for stages before it.
  // With unmodified parameters this reproduces the traced taps bit for bit.
  Taps resume_features(const ForwardTrace& trace, int from) const {
    return run_features(trace.conv_inputs[static_cast<std::size_t>(from)],
                        from, &trace.taps, nullptr, nullptr);
  }

  Tensor upsampled_prior(Tape* tape, std::int64_t map_w,
                         std::int64_t map_h) const {
    return upsample_prior(tape, prior_mask, map_w, map_h,
                          config.prior_normalized);
  }

  // Inference-mode prediction with the prior applied.
  Tensor predict(const Tensor& images) const {
    RngState rng(0);  // no stochastic layers at inference
    ForwardResult f = forward(images, false, rng);
    Tensor v = upsampled_prior(nullptr, f.pre_prior.shape().w,
                               f.pre_prior.shape().h);
    return apply_prior(nullptr, f.pre_prior, v);
  }

  // Deep copy: independent parameter storage, shared nothing.
  Model clone() const {
    Model out;
    out.config = config;
    for (const ConvLayer& l : features) {
      out.features.push_back({l.name, l.weight.clone(), l.bias.clone(), l.pad});
    }
    out.encode_main = {encode_main.name, encode_main.weight.clone(),
                       encode_main.bias.clone(), encode_main.pad};
    out.encode_out = {encode_out.name, encode_out.weight.clone(),
                      encode_out.bias.clone(), encode_out.pad};
    out.prior_mask = prior_mask.clone();
    return out;
  }

  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> out;
    for (ConvLayer& l : features) {
      out.push_back({l.name + ".weight", l.weight, true});
      out.push_back({l.name + ".bias", l.bias, true});
    }
    out.push_back({encode_main.name + ".weight", encode_main.weight, true});
    out.push_back({encode_main.name + ".bias", encode_main.bias, true});
    out.push_back({encode_out.name + ".weight", encode_out.weight, true});
    out.push_back({encode_out.name + ".bias", encode_out.bias, true});
    out.push_back({"prior.U", prior_mask, false});
    return out;
  }

  std::int64_t parameter_count() const {
    std::int64_t total = prior_mask.size();
    for (const ConvLayer& l : features) {
      total += l.weight.size() + l.bias.size();
    }
    total += encode_main.weight.size() + encode_main.bias.size();
    total += encode_out.weight.size() + encode_out.bias.size();
    return total;
  }

  // Per feature-conv parameter counts (weights + biases).
  std::vector<std::int64_t> feature_parameter_counts() const {
    std::vector<std::int64_t> counts;
    for (const ConvLayer& l : features) {
      counts.push_back(l.weight.size() + l.bias.size());
    }
    return counts;
  }

 private:
  // Shared by forward() and resume_features(). `cached` supplies taps from
  // stages before `from`; pass nullptr when starting at conv 0.
  Taps run_features(const Tensor& input, int from, const Taps* cached,
                    Tape* tape, ForwardTrace* trace) const {
    if (trace) {
      trace->conv_inputs.assign(kFeatureConvs, Tensor());
    }
    Taps taps;
    if (cached) {
      taps = *cached;
    }
    Tensor x = input;
    for (int i = from; i < kFeatureConvs; ++i) {
      if (trace) trace->conv_inputs[static_cast<std::size_t>(i)] = x;
      const ConvLayer& l = features[static_cast<std::size_t>(i)];
      x = relu(tape, conv2d(tape, x, l.weight, l.bias, 1, l.pad));
      if (i == kPoolAfter[0] || i == kPoolAfter[1]) {
        x = maxpool2d(tape, x, 2, 2);
      } else if (i == kPoolAfter[2]) {
        x = maxpool2d(tape, x, 2, 2);
        taps.conv3 = x;
      } else if (i == kSamePoolAfter) {
        x = maxpool2d(tape, x, 2, 1, /*same_pad=*/true);
        taps.conv4 = x;
      }
    }
    taps.conv5 = x;
    if (trace) trace->taps = taps;
    return taps;
  }
};

// Builds the model with uniform fan-based initialization: each conv weight
// is drawn from U(-b, b) with b = sqrt(6 / (fan_in + fan_out)); biases start
// at zero and the prior mask at one.
inline Model build_model(const ModelConfig& cfg, RngState& rng) {
  cfg.validate();
  auto init_layer = [&rng](const std::string& name, std::int64_t co,
                           std::int64_t ci, std::int64_t k,
                           std::int64_t pad) {
    ConvLayer l;
    l.name = name;
    l.pad = pad;
    l.weight = Tensor({co, ci, k, k}, /*requires_grad=*/true);
    const double fan_in = static_cast<double>(ci * k * k);
    const double fan_out = static_cast<double>(co * k * k);
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& v : l.weight.values_mut()) {
      v = rng.next_double(-bound, bound);
    }
    l.bias = Tensor({1, co, 1, 1}, /*requires_grad=*/true);
    return l;
  };

  Model m;
  m.config = cfg;
  const std::array<int, 5> stage_sizes{2, 2, 3, 3, 3};
  std::int64_t in_c = 3;
  for (int stage = 0; stage < 5; ++stage) {
    const std::int64_t out_c = cfg.stage_channels[static_cast<std::size_t>(stage)];
    for (int i = 0; i < stage_sizes[static_cast<std::size_t>(stage)]; ++i) {
      const std::string name = "conv" + std::to_string(stage + 1) + "_" +
                               std::to_string(i + 1);
      m.features.push_back(init_layer(name, out_c, in_c, 3, 1));
      in_c = out_c;
    }
  }
  const std::int64_t concat_c = cfg.stage_channels[2] + cfg.stage_channels[3] +
                                cfg.stage_channels[4];
  m.encode_main = init_layer("encode.conv3", cfg.encode_channels, concat_c, 3, 1);
  m.encode_out = init_layer("encode.conv1", 1, cfg.encode_channels, 1, 0);
  m.prior_mask = make_prior_mask(cfg.tap_width(), cfg.tap_height());
  return m;
}

}  // namespace mlnet
