#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "mlnet/checkpoint.hpp"
#include "mlnet/config.hpp"
#include "mlnet/dataset.hpp"
#include "mlnet/pnm.hpp"
#include "mlnet/preprocess.hpp"
#include "test_util.hpp"

namespace mlnet {
namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("mlnet_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

PnmImage test_image(std::int64_t w, std::int64_t h, int channels,
                    std::uint64_t seed) {
  PnmImage img;
  img.width = w;
  img.height = h;
  img.channels = channels;
  img.pixels.resize(static_cast<std::size_t>(img.count()));
  RngState rng(seed);
  for (auto& px : img.pixels) {
    px = static_cast<std::uint8_t>(rng.next_below(256));
  }
  return img;
}

TEST(Pnm, BinaryRoundTripIsLossless) {
  for (int channels : {1, 3}) {
    PnmImage img = test_image(13, 7, channels, 120);
    const auto bytes = encode_pnm(img, true);
    PnmImage back = parse_pnm(bytes);
    EXPECT_EQ(back, img);
  }
}

TEST(Pnm, AsciiRoundTripIsLossless) {
  for (int channels : {1, 3}) {
    PnmImage img = test_image(9, 5, channels, 121);
    const auto bytes = encode_pnm(img, false);
    PnmImage back = parse_pnm(bytes);
    EXPECT_EQ(back, img);
  }
}

TEST(Pnm, FileRoundTrip) {
  TempDir dir;
  PnmImage img = test_image(16, 12, 3, 122);
  write_pnm(dir.path / "x.ppm", img);
  EXPECT_EQ(read_pnm(dir.path / "x.ppm"), img);
}

TEST(Pnm, ParsesCommentsAndAsciiSamples) {
  const std::string text =
      "P2\n# a comment\n3 2\n# another\n255\n0 10 20\n30 40 50\n";
  PnmImage img = parse_pnm(
      {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  EXPECT_EQ(img.width, 3);
  EXPECT_EQ(img.height, 2);
  EXPECT_EQ(img.channels, 1);
  EXPECT_EQ(img.pixels[5], 50);
}

TEST(Pnm, ErrorsCarryByteOffsets) {
  const std::string bad_magic = "P7\n1 1\n255\n\0";
  try {
    parse_pnm({reinterpret_cast<const std::uint8_t*>(bad_magic.data()),
               bad_magic.size()});
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("byte 0"), std::string::npos);
  }

  const std::string truncated = "P5\n4 4\n255\nab";  // needs 16 bytes
  try {
    parse_pnm({reinterpret_cast<const std::uint8_t*>(truncated.data()),
               truncated.size()});
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("truncated"), std::string::npos);
    EXPECT_NE(what.find("16"), std::string::npos);
  }

  const std::string deep_maxval = "P5\n2 2\n65535\n";
  try {
    parse_pnm({reinterpret_cast<const std::uint8_t*>(deep_maxval.data()),
               deep_maxval.size()});
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("8-bit"), std::string::npos);
  }
}

TEST(Preprocess, AlreadyFourThirdsJustResizes) {
  PnmImage img = test_image(800, 600, 3, 123);
  auto pre = preprocess(img, 64, 48);
  EXPECT_EQ(pre.transform.pad_left, 0);
  EXPECT_EQ(pre.transform.pad_top, 0);
  EXPECT_EQ(pre.transform.padded_w, 800);
  EXPECT_EQ(pre.tensor.shape(), (Shape{1, 3, 48, 64}));
}

TEST(Preprocess, SquareImageGetsSymmetricColumns) {
  PnmImage img = test_image(600, 600, 1, 124);
  auto pre = preprocess(img, 64, 48);
  EXPECT_EQ(pre.transform.padded_w, 800);
  EXPECT_EQ(pre.transform.padded_h, 600);
  EXPECT_EQ(pre.transform.pad_left, 100);
  EXPECT_EQ(pre.transform.pad_top, 0);
}

TEST(Preprocess, TallImageGetsRows) {
  PnmImage img = test_image(300, 600, 1, 125);
  auto pre = preprocess(img, 64, 48);
  EXPECT_EQ(pre.transform.padded_w, 800);
  EXPECT_EQ(pre.transform.pad_left, 250);
}

TEST(Preprocess, ConstantImageStaysConstant) {
  PnmImage img;
  img.width = 640;
  img.height = 480;  // already 4:3: no padding, so constancy is preserved
  img.channels = 1;
  img.pixels.assign(static_cast<std::size_t>(img.count()), 128);
  auto pre = preprocess(img, 64, 48, {0.0, 0.0, 0.0});
  const double want = 128.0 / 255.0;
  for (double v : pre.tensor.values()) {
    EXPECT_NEAR(v, want, 1e-12);
  }
}

TEST(Preprocess, UpscaleAlsoPreservesConstants) {
  PnmImage img;
  img.width = 16;
  img.height = 12;
  img.channels = 1;
  img.pixels.assign(static_cast<std::size_t>(img.count()), 77);
  auto pre = preprocess(img, 64, 48, {0.0, 0.0, 0.0});
  for (double v : pre.tensor.values()) {
    EXPECT_NEAR(v, 77.0 / 255.0, 1e-12);
  }
}

TEST(Preprocess, MeansAreSubtractedPerChannel) {
  PnmImage img;
  img.width = 32;
  img.height = 24;
  img.channels = 3;
  img.pixels.assign(static_cast<std::size_t>(img.count()), 255);
  auto pre = preprocess(img, 32, 24, {0.5, 0.25, 0.0});
  EXPECT_NEAR(pre.tensor(0, 0, 0, 0), 0.5, 1e-12);
  EXPECT_NEAR(pre.tensor(0, 1, 0, 0), 0.75, 1e-12);
  EXPECT_NEAR(pre.tensor(0, 2, 0, 0), 1.0, 1e-12);
}

TEST(Preprocess, RejectsBadTarget) {
  PnmImage img = test_image(10, 10, 1, 126);
  EXPECT_THROW(preprocess(img, 64, 64), ValueError);   // not 4:3
  EXPECT_THROW(preprocess(img, 100, 75), ValueError);  // not /8
}

TEST(Preprocess, CoordinateRoundTripWithinHalfPixel) {
  PnmImage img = test_image(600, 600, 1, 127);
  auto pre = preprocess(img, 64, 48);
  for (double x : {0.0, 123.0, 599.0}) {
    for (double y : {0.0, 310.0, 599.0}) {
      auto [xi, yi] = pre.transform.to_input(x, y);
      auto [xo, yo] = pre.transform.to_original(xi, yi);
      EXPECT_NEAR(xo, x, 0.5);
      EXPECT_NEAR(yo, y, 0.5);
      EXPECT_GE(xi, -0.5);
      EXPECT_LE(xi, 63.5);
    }
  }
}

TEST(PreprocessMap, PadAndResizeToTapGrid) {
  PnmImage img = test_image(600, 600, 1, 128);
  auto pre = preprocess(img, 64, 48);
  PnmImage gt;
  gt.width = 600;
  gt.height = 600;
  gt.channels = 1;
  gt.pixels.assign(600 * 600, 200);
  SaliencyMap m = preprocess_map(gt, 8, 6, pre.transform);
  EXPECT_EQ(m.rows, 6);
  EXPECT_EQ(m.cols, 8);
  // Padded columns dilute the constant; interior columns keep it.
  EXPECT_NEAR(m.at(3, 4), 200.0 / 255.0, 1e-9);
  EXPECT_LT(m.at(3, 0), 200.0 / 255.0);
  Tensor t = map_to_target(m);
  double mx = 0.0;
  for (double v : t.values()) mx = std::max(mx, v);
  EXPECT_DOUBLE_EQ(mx, 1.0);
}

TEST(FixationMap, BlurAndNormalization) {
  FixationSet fix = {{3, 3}, {3, 3}, {0, 0}};
  SaliencyMap sharp = fixation_map(fix, 7, 7, 0.0);
  EXPECT_EQ(sharp.at(3, 3), 1.0);       // double fixation, max-normalized
  EXPECT_EQ(sharp.at(0, 0), 0.5);
  SaliencyMap blurred = fixation_map(fix, 7, 7, 1.0);
  EXPECT_EQ(blurred.at(3, 3), 1.0);
  EXPECT_GT(blurred.at(3, 4), 0.0);
  SaliencyMap again = fixation_map(fix, 7, 7, 1.0);
  for (std::int64_t i = 0; i < blurred.size(); ++i) {
    EXPECT_EQ(blurred.v[static_cast<std::size_t>(i)],
              again.v[static_cast<std::size_t>(i)]);
  }
  EXPECT_THROW(fixation_map({{9, 0}}, 7, 7, 0.0), DataError);
}

TEST(Checkpoint, SaveLoadForwardBitIdentity) {
  TempDir dir;
  RngState rng(130);
  ModelConfig cfg = ModelConfig::desk();
  cfg.input_width = 32;
  cfg.input_height = 24;
  cfg.seed = 5;
  Model m = build_model(cfg, rng);
  // Perturb away from the fresh initialization.
  for (auto& v : m.encode_out.weight.values_mut()) v += 0.25;
  m.prior_mask.values_mut()[0] = 0.75;

  const fs::path path = dir.path / "model.ckpt";
  save_checkpoint(m, path, nullptr, 42);
  Checkpoint loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.run_seed, 42u);
  EXPECT_EQ(loaded.model.config.input_width, 32);

  Tensor image = test::random_tensor({1, 3, 24, 32}, rng, 0.0, 1.0);
  Tensor a = m.predict(image);
  Tensor b = loaded.model.predict(image);
  ASSERT_EQ(a.shape(), b.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.values()[i], b.values()[i]);
  }
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  RngState rng(131);
  ModelConfig cfg = ModelConfig::desk();
  cfg.input_width = 32;
  cfg.input_height = 24;
  Model m = build_model(cfg, rng);
  SgdNesterov opt(m.parameters(), {});
  const auto bytes1 = serialize_checkpoint(m, &opt, 7);
  Checkpoint loaded = deserialize_checkpoint(bytes1);
  ASSERT_TRUE(loaded.optimizer_options.has_value());
  SgdNesterov opt2(loaded.model.parameters(), *loaded.optimizer_options);
  opt2.velocities() = loaded.optimizer_velocities;
  const auto bytes2 = serialize_checkpoint(loaded.model, &opt2, loaded.run_seed);
  EXPECT_EQ(bytes1, bytes2);
}

TEST(Checkpoint, CorruptMagicAndTruncationRejected) {
  RngState rng(132);
  ModelConfig cfg = ModelConfig::desk();
  cfg.input_width = 32;
  cfg.input_height = 24;
  Model m = build_model(cfg, rng);
  auto bytes = serialize_checkpoint(m);

  auto corrupt = bytes;
  corrupt[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(corrupt), DataError);

  auto truncated = bytes;
  truncated.resize(truncated.size() / 2);
  try {
    deserialize_checkpoint(truncated);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
}

TEST(Config, DefaultsMatchTrainingRecipe) {
  RunConfig cfg = parse_config_text("");
  EXPECT_EQ(cfg.loss.alpha, 1.1);
  EXPECT_EQ(cfg.loss.batch_size, 10);
  EXPECT_EQ(cfg.optimizer.learning_rate, 1e-3);
  EXPECT_EQ(cfg.optimizer.momentum, 0.9);
  EXPECT_EQ(cfg.optimizer.weight_decay, 5e-4);
  EXPECT_TRUE(cfg.lambda_auto);
  EXPECT_EQ(cfg.model.stage_channels,
            (std::array<std::int64_t, 5>{64, 128, 256, 512, 512}));
  // Full scale: prior mask 8x6, lambda 1/48.
  EXPECT_NEAR(cfg.resolved_loss().lambda, 1.0 / 48.0, 1e-15);
}

TEST(Config, DeskPresetAndOverrides) {
  RunConfig cfg = parse_config_text(
      "preset = desk\n"
      "seed = 9\n"
      "alpha = 1.2\n"
      "lambda = 0.5\n"
      "stage_channels = 4, 8, 16, 32, 32\n"
      "dropout_retain = 1.0\n");
  EXPECT_EQ(cfg.model.input_width, 64);
  EXPECT_EQ(cfg.model.seed, 9u);
  EXPECT_EQ(cfg.loss.alpha, 1.2);
  EXPECT_FALSE(cfg.lambda_auto);
  EXPECT_EQ(cfg.resolved_loss().lambda, 0.5);
  EXPECT_EQ(cfg.model.stage_channels,
            (std::array<std::int64_t, 5>{4, 8, 16, 32, 32}));
  EXPECT_EQ(cfg.model.dropout_retain, 1.0);
}

TEST(Config, UnknownKeyListsValidOnes) {
  try {
    parse_config_text("learning_rat = 0.1\n");
    FAIL() << "expected ValueError";
  } catch (const ValueError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("unknown config key 'learning_rat'"),
              std::string::npos);
    EXPECT_NE(what.find("learning_rate"), std::string::npos);
    EXPECT_NE(what.find("alpha"), std::string::npos);
  }
}

TEST(Config, MalformedValuesRejected) {
  EXPECT_THROW(parse_config_text("alpha = abc\n"), ValueError);
  EXPECT_THROW(parse_config_text("batch_size = 2.5\n"), ValueError);
  EXPECT_THROW(parse_config_text("stage_channels = 1,2,3\n"), ValueError);
  EXPECT_THROW(parse_config_text("just a line\n"), ValueError);
}

TEST(FixationCsv, RoundTripAndErrors) {
  TempDir dir;
  FixationSet fix = {{0, 1}, {5, 3}, {2, 2}};
  const fs::path path = dir.path / "f.csv";
  write_fixation_csv(path, fix);
  EXPECT_EQ(read_fixation_csv(path), fix);

  std::ofstream bad(dir.path / "bad.csv");
  bad << "1,2\nnot a line\n";
  bad.close();
  try {
    read_fixation_csv(dir.path / "bad.csv");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos);
  }
}

TEST(Dataset, ScanAndTrainLoading) {
  TempDir dir;
  fs::create_directories(dir.path / "images");
  fs::create_directories(dir.path / "maps");
  fs::create_directories(dir.path / "fixations");

  RunConfig cfg = parse_config_text("preset = desk\n");
  for (int k = 0; k < 2; ++k) {
    const std::string stem = "img" + std::to_string(k);
    write_pnm(dir.path / "images" / (stem + ".ppm"),
              test_image(80, 60, 3, 140 + static_cast<std::uint64_t>(k)));
    PnmImage gt;
    gt.width = 80;
    gt.height = 60;
    gt.channels = 1;
    gt.pixels.assign(80 * 60, 0);
    gt.pixels[30 * 80 + 40] = 255;
    write_pnm(dir.path / "maps" / (stem + ".pgm"), gt);
    write_fixation_csv(dir.path / "fixations" / (stem + ".csv"),
                       {{30, 40}});
  }

  auto entries = scan_dataset(dir.path);
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[0].stem, "img0");
  EXPECT_TRUE(entries[0].map.has_value());
  EXPECT_TRUE(entries[0].fixations.has_value());

  auto items = load_train_dataset(dir.path, cfg);
  ASSERT_EQ(items.size(), 2u);
  EXPECT_EQ(items[0].image.shape(), (Shape{1, 3, 48, 64}));
  EXPECT_EQ(items[0].target.shape(), (Shape{1, 1, 6, 8}));
  double mx = 0.0;
  for (double v : items[0].target.values()) mx = std::max(mx, v);
  EXPECT_DOUBLE_EQ(mx, 1.0);
}

TEST(Dataset, MissingMapNamesStem) {
  TempDir dir;
  fs::create_directories(dir.path / "images");
  write_pnm(dir.path / "images" / "lonely.ppm", test_image(80, 60, 3, 150));
  RunConfig cfg = parse_config_text("preset = desk\n");
  try {
    load_train_dataset(dir.path, cfg);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("lonely"), std::string::npos);
  }
}

TEST(Dataset, TargetsFromBlurredFixations) {
  TempDir dir;
  fs::create_directories(dir.path / "images");
  fs::create_directories(dir.path / "fixations");
  write_pnm(dir.path / "images" / "a.ppm", test_image(640, 480, 3, 151));
  write_fixation_csv(dir.path / "fixations" / "a.csv", {{240, 320}});
  RunConfig cfg = parse_config_text(
      "preset = desk\ngt_from_fixations = true\nblur_sigma = 16\n");
  auto items = load_train_dataset(dir.path, cfg);
  ASSERT_EQ(items.size(), 1u);
  // Blob centered mid-map, max 1 at the fixation cell.
  EXPECT_DOUBLE_EQ(items[0].target(0, 0, 3, 4), 1.0);
  EXPECT_GT(items[0].target(0, 0, 2, 4), 0.0);
}

}  // namespace
}  // namespace mlnet
