#include "mlnet/network.hpp"

#include <gtest/gtest.h>

#include <vector>

#include "test_util.hpp"

namespace mlnet {
namespace {

using test::random_tensor;

TEST(ModelConfig, DeskPreset) {
  ModelConfig cfg = ModelConfig::desk();
  EXPECT_EQ(cfg.stage_channels, (std::array<std::int64_t, 5>{8, 16, 32, 64, 64}));
  EXPECT_EQ(cfg.encode_channels, 8);
  EXPECT_EQ(cfg.tap_width(), 8);
  EXPECT_EQ(cfg.tap_height(), 6);
  EXPECT_EQ(cfg.prior_width(), 1);
  EXPECT_EQ(cfg.prior_height(), 1);
  cfg.validate();
}

TEST(ModelConfig, FullScaleTapArithmetic) {
  ModelConfig cfg = ModelConfig::full_scale();
  EXPECT_EQ(cfg.tap_width(), 80);
  EXPECT_EQ(cfg.tap_height(), 60);
  EXPECT_EQ(cfg.prior_width(), 8);
  EXPECT_EQ(cfg.prior_height(), 6);
}

TEST(ModelConfig, RejectsSizeNotDivisibleBy8) {
  ModelConfig cfg = ModelConfig::desk();
  cfg.input_width = 60;
  try {
    cfg.validate();
    FAIL() << "expected ValueError";
  } catch (const ValueError& e) {
    EXPECT_NE(std::string(e.what()).find("pad"), std::string::npos);
  }
}

TEST(BuildModel, FreshModelInitialState) {
  RngState rng(40);
  Model m = build_model(ModelConfig::desk(), rng);
  EXPECT_EQ(m.features.size(), 13u);
  for (const ConvLayer& l : m.features) {
    for (double b : l.bias.values()) EXPECT_EQ(b, 0.0);
  }
  for (double b : m.encode_main.bias.values()) EXPECT_EQ(b, 0.0);
  for (double b : m.encode_out.bias.values()) EXPECT_EQ(b, 0.0);
  for (double u : m.prior_mask.values()) EXPECT_EQ(u, 1.0);
  EXPECT_EQ(m.prior_mask.shape(), (Shape{1, 1, 1, 1}));
}

TEST(BuildModel, FullScaleFeatureParamCountsMatchVgg16) {
  RngState rng(41);
  Model m = build_model(ModelConfig::full_scale(), rng);
  const std::vector<std::int64_t> vgg16{
      1792,    36928,   73856,   147584,  295168,  590080, 590080,
      1180160, 2359808, 2359808, 2359808, 2359808, 2359808};
  EXPECT_EQ(m.feature_parameter_counts(), vgg16);
}

TEST(BuildModel, ParameterCountIsPureFunctionOfConfig) {
  RngState r1(1), r2(2);
  Model a = build_model(ModelConfig::desk(), r1);
  Model b = build_model(ModelConfig::desk(), r2);
  EXPECT_EQ(a.parameter_count(), b.parameter_count());
  EXPECT_GT(a.parameter_count(), 0);
}

TEST(Forward, DeskShapes) {
  RngState rng(42);
  Model m = build_model(ModelConfig::desk(), rng);
  RngState drng(1);
  Tensor images = random_tensor({2, 3, 48, 64}, rng, 0.0, 1.0);
  auto f = m.forward(images, false, drng);
  EXPECT_EQ(f.pre_prior.shape(), (Shape{2, 1, 6, 8}));
  EXPECT_EQ(f.taps.conv3.shape(), (Shape{2, 32, 6, 8}));
  EXPECT_EQ(f.taps.conv4.shape(), (Shape{2, 64, 6, 8}));
  EXPECT_EQ(f.taps.conv5.shape(), (Shape{2, 64, 6, 8}));
  EXPECT_EQ(f.concat.shape(), (Shape{2, 160, 6, 8}));
}

TEST(Forward, RejectsWrongChannelCount) {
  RngState rng(43);
  Model m = build_model(ModelConfig::desk(), rng);
  RngState drng(1);
  Tensor images(Shape{1, 1, 48, 64});
  EXPECT_THROW(m.forward(images, false, drng), ShapeError);
}

TEST(Forward, InferenceIsDeterministic) {
  RngState rng(44);
  Model m = build_model(ModelConfig::desk(), rng);
  Tensor images = random_tensor({1, 3, 48, 64}, rng, 0.0, 1.0);
  RngState d1(1), d2(999);  // rng must not matter at inference
  auto f1 = m.forward(images, false, d1);
  auto f2 = m.forward(images, false, d2);
  for (std::int64_t i = 0; i < f1.pre_prior.size(); ++i) {
    EXPECT_EQ(f1.pre_prior.values()[i], f2.pre_prior.values()[i]);
  }
}

TEST(Forward, ZeroEncoderGivesZeroMap) {
  RngState rng(45);
  Model m = build_model(ModelConfig::desk(), rng);
  for (auto& v : m.encode_main.weight.values_mut()) v = 0.0;
  for (auto& v : m.encode_out.weight.values_mut()) v = 0.0;
  RngState drng(1);
  Tensor images = random_tensor({1, 3, 48, 64}, rng, 0.0, 1.0);
  auto f = m.forward(images, false, drng);
  for (double v : f.pre_prior.values()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, BatchIndependence) {
  RngState rng(46);
  Model m = build_model(ModelConfig::desk(), rng);
  Tensor batch = random_tensor({2, 3, 48, 64}, rng, 0.0, 1.0);
  Tensor single0(Shape{1, 3, 48, 64});
  Tensor single1(Shape{1, 3, 48, 64});
  for (std::int64_t i = 0; i < single0.size(); ++i) {
    single0.values_mut()[i] = batch.values()[i];
    single1.values_mut()[i] = batch.values()[single0.size() + i];
  }
  RngState d(1);
  auto fb = m.forward(batch, false, d);
  auto f0 = m.forward(single0, false, d);
  auto f1 = m.forward(single1, false, d);
  const std::int64_t plane = f0.pre_prior.size();
  for (std::int64_t i = 0; i < plane; ++i) {
    EXPECT_EQ(fb.pre_prior.values()[i], f0.pre_prior.values()[i]);
    EXPECT_EQ(fb.pre_prior.values()[plane + i], f1.pre_prior.values()[i]);
  }
}

TEST(Forward, ConcatOrderIsConv3Conv4Conv5) {
  RngState rng(47);
  Model m = build_model(ModelConfig::desk(), rng);
  RngState drng(1);
  Tensor images = random_tensor({1, 3, 48, 64}, rng, 0.0, 1.0);
  auto f = m.forward(images, false, drng);
  const std::int64_t plane = 6 * 8;
  const std::int64_t c3 = f.taps.conv3.shape().c;
  const std::int64_t c4 = f.taps.conv4.shape().c;
  for (std::int64_t c = 0; c < c3; ++c) {
    for (std::int64_t i = 0; i < plane; ++i) {
      EXPECT_EQ(f.concat.values()[c * plane + i],
                f.taps.conv3.values()[c * plane + i]);
    }
  }
  for (std::int64_t c = 0; c < c4; ++c) {
    for (std::int64_t i = 0; i < plane; ++i) {
      EXPECT_EQ(f.concat.values()[(c3 + c) * plane + i],
                f.taps.conv4.values()[c * plane + i]);
    }
  }
  for (std::int64_t c = 0; c < f.taps.conv5.shape().c; ++c) {
    for (std::int64_t i = 0; i < plane; ++i) {
      EXPECT_EQ(f.concat.values()[(c3 + c4 + c) * plane + i],
                f.taps.conv5.values()[c * plane + i]);
    }
  }
}

TEST(Forward, ResumeFromAnyLayerReproducesTaps) {
  RngState rng(48);
  Model m = build_model(ModelConfig::desk(), rng);
  RngState drng(5);
  Tensor images = random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0);
  Model::ForwardTrace trace;
  auto f = m.forward(images, false, drng, nullptr, &trace);
  for (int from = 0; from < Model::kFeatureConvs; ++from) {
    Taps taps = m.resume_features(trace, from);
    for (std::int64_t i = 0; i < taps.conv3.size(); ++i) {
      ASSERT_EQ(taps.conv3.values()[i], f.taps.conv3.values()[i]) << from;
    }
    for (std::int64_t i = 0; i < taps.conv4.size(); ++i) {
      ASSERT_EQ(taps.conv4.values()[i], f.taps.conv4.values()[i]) << from;
    }
    for (std::int64_t i = 0; i < taps.conv5.size(); ++i) {
      ASSERT_EQ(taps.conv5.values()[i], f.taps.conv5.values()[i]) << from;
    }
  }
}

TEST(Forward, TrainingDropoutReproducibleFromSeed) {
  RngState rng(49);
  Model m = build_model(ModelConfig::desk(), rng);
  Tensor images = random_tensor({1, 3, 48, 64}, rng, 0.0, 1.0);
  RngState d1(7), d2(7);
  auto f1 = m.forward(images, true, d1);
  auto f2 = m.forward(images, true, d2);
  for (std::int64_t i = 0; i < f1.pre_prior.size(); ++i) {
    EXPECT_EQ(f1.pre_prior.values()[i], f2.pre_prior.values()[i]);
  }
}

TEST(Predict, AppliesPriorAtInference) {
  RngState rng(50);
  Model m = build_model(ModelConfig::desk(), rng);
  // A non-trivial prior mask value must scale the map.
  m.prior_mask.values_mut()[0] = 0.5;
  Tensor images = random_tensor({1, 3, 48, 64}, rng, 0.0, 1.0);
  RngState d(1);
  auto f = m.forward(images, false, d);
  Tensor pred = m.predict(images);
  ASSERT_EQ(pred.shape(), f.pre_prior.shape());
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    EXPECT_DOUBLE_EQ(pred.values()[i], 0.5 * f.pre_prior.values()[i]);
  }
}

TEST(Parameters, NamesAndDecayPolicy) {
  RngState rng(51);
  Model m = build_model(ModelConfig::desk(), rng);
  auto params = m.parameters();
  ASSERT_EQ(params.size(), 13u * 2 + 4 + 1);
  EXPECT_EQ(params.front().name, "conv1_1.weight");
  EXPECT_EQ(params.back().name, "prior.U");
  EXPECT_FALSE(params.back().weight_decay);
  for (std::size_t i = 0; i + 1 < params.size(); ++i) {
    EXPECT_TRUE(params[i].weight_decay);
  }
}

}  // namespace
}  // namespace mlnet
