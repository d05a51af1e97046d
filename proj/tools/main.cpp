// mlnet command-line interface: train, predict, evaluate, importance and
// gradcheck over the library. Exit codes: 0 success, 1 usage error, 2 data
// error, 3 numeric error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mlnet/mlnet.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct TrainArgs {
  std::string data, config, out, log;
  std::int64_t epochs = 1;
  std::int64_t steps = -1;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int run_train(const TrainArgs& args) {
  mlnet::RunConfig cfg = mlnet::load_config(args.config);
  if (args.seed_given) cfg.model.seed = args.seed;
  cfg.model.validate();

  auto data = mlnet::load_train_dataset(args.data, cfg);
  mlnet::RngState init_rng(cfg.model.seed);
  mlnet::Model model = mlnet::build_model(cfg.model, init_rng);
  std::cout << "parameters = " << model.parameter_count() << "\n";
  std::cout << "images = " << data.size() << "\n";

  mlnet::LossConfig loss_cfg = cfg.resolved_loss();
  mlnet::SgdNesterov opt(model.parameters(), cfg.optimizer);
  mlnet::RngState train_rng = mlnet::RngState(cfg.model.seed).derive(1);

  std::vector<mlnet::TrainLogEntry> log;
  if (args.steps >= 0) {
    log = mlnet::train_steps(model, data, loss_cfg, opt, args.steps,
                             train_rng, &std::cout);
  } else {
    log = mlnet::train(model, data, loss_cfg, opt, args.epochs, train_rng,
                       &std::cout);
  }
  if (!args.log.empty()) {
    std::ofstream lf(args.log, std::ios::trunc);
    if (!lf) throw mlnet::DataError("cannot write log " + args.log);
    lf << std::setprecision(17);
    for (const auto& e : log) {
      lf << "step " << e.step << " loss " << e.loss << "\n";
    }
  }
  mlnet::save_checkpoint(model, args.out, &opt, cfg.model.seed);
  std::cout << "saved " << args.out << "\n";
  return kExitOk;
}

struct PredictArgs {
  std::string ckpt, image, out;
  bool upscale = false;
};

int run_predict(const PredictArgs& args) {
  mlnet::Checkpoint ckpt = mlnet::load_checkpoint(args.ckpt);
  const mlnet::ModelConfig& cfg = ckpt.model.config;
  mlnet::PnmImage img = mlnet::read_pnm(args.image);
  auto pre = mlnet::preprocess(img, cfg.input_width, cfg.input_height,
                               cfg.channel_means);
  mlnet::Tensor map = ckpt.model.predict(pre.tensor);

  std::int64_t rows = map.shape().h, cols = map.shape().w;
  std::vector<double> values(map.values().begin(), map.values().end());
  if (args.upscale) {
    values = mlnet::detail::resize_plane(values, rows, cols,
                                         cfg.input_height, cfg.input_width);
    rows = cfg.input_height;
    cols = cfg.input_width;
  }
  double mx = 0.0;
  for (double& v : values) {
    if (v < 0.0) v = 0.0;
    mx = std::max(mx, v);
  }
  if (!(mx > 0.0)) {
    throw mlnet::NumericError("prediction is non-positive everywhere");
  }
  mlnet::PnmImage out_img;
  out_img.width = cols;
  out_img.height = rows;
  out_img.channels = 1;
  out_img.pixels.resize(static_cast<std::size_t>(rows * cols));
  for (std::size_t i = 0; i < out_img.pixels.size(); ++i) {
    out_img.pixels[i] =
        static_cast<std::uint8_t>(std::lround(values[i] / mx * 255.0));
  }
  mlnet::write_pnm(args.out, out_img);
  std::cout << "wrote " << args.out << " (" << cols << "x" << rows << ")\n";
  return kExitOk;
}

struct EvaluateArgs {
  std::string pred, gt, fix, pool, report;
  std::uint64_t seed = 0;
  std::int64_t splits = 100;
};

mlnet::SaliencyMap gray_map(const fs::path& path) {
  mlnet::PnmImage img = mlnet::read_pnm(path);
  if (img.channels != 1) {
    throw mlnet::DataError("map " + path.string() + " must be grayscale");
  }
  mlnet::SaliencyMap m(img.height, img.width);
  for (std::int64_t i = 0; i < m.size(); ++i) {
    m.v[static_cast<std::size_t>(i)] =
        static_cast<double>(img.pixels[static_cast<std::size_t>(i)]) / 255.0;
  }
  return m;
}

int run_evaluate(const EvaluateArgs& args) {
  if (!fs::is_directory(args.pred)) {
    throw mlnet::DataError("prediction directory " + args.pred +
                           " does not exist");
  }
  std::vector<mlnet::EvalItem> items;
  std::vector<fs::path> pred_files;
  for (const auto& e : fs::directory_iterator(args.pred)) {
    if (e.is_regular_file()) pred_files.push_back(e.path());
  }
  std::sort(pred_files.begin(), pred_files.end());
  if (pred_files.empty()) {
    throw mlnet::DataError("prediction directory " + args.pred + " is empty");
  }
  for (const fs::path& p : pred_files) {
    mlnet::EvalItem item;
    item.name = p.stem().string();
    item.prediction = gray_map(p);
    for (const char* ext : {".pgm", ".pnm", ".ppm"}) {
      const fs::path gt_path = fs::path(args.gt) / (item.name + ext);
      if (fs::exists(gt_path)) {
        item.ground_truth = gray_map(gt_path);
        break;
      }
    }
    const fs::path fix_path = fs::path(args.fix) / (item.name + ".csv");
    if (fs::exists(fix_path)) {
      item.fixations = mlnet::read_fixation_csv(fix_path);
    }
    items.push_back(std::move(item));
  }

  std::optional<std::vector<mlnet::FixationSet>> explicit_pool;
  if (!args.pool.empty()) {
    std::vector<mlnet::FixationSet> pool;
    for (const auto& e : fs::directory_iterator(args.pool)) {
      if (e.is_regular_file() && e.path().extension() == ".csv") {
        pool.push_back(mlnet::read_fixation_csv(e.path()));
      }
    }
    if (pool.empty()) {
      throw mlnet::DataError("pool directory " + args.pool +
                             " has no fixation csv files");
    }
    explicit_pool = std::move(pool);
  }

  mlnet::MetricConfig cfg;
  cfg.seed = args.seed;
  cfg.auc_splits = args.splits;
  auto report = mlnet::evaluate_dataset(
      items, cfg, explicit_pool ? &*explicit_pool : nullptr);

  if (!args.report.empty()) {
    std::ofstream out(args.report, std::ios::trunc);
    if (!out) throw mlnet::DataError("cannot write report " + args.report);
    if (fs::path(args.report).extension() == ".json") {
      out << report.to_json().dump(2) << "\n";
    } else {
      out << report.to_text();
    }
  }
  std::cout << std::setprecision(17);
  auto line = [](const char* k, const std::optional<double>& v) {
    if (v) std::cout << "mean." << k << " = " << *v << "\n";
  };
  std::cout << "images = " << report.per_image.size() << "\n";
  line("similarity", report.aggregate.similarity);
  line("cc", report.aggregate.cc);
  line("nss", report.aggregate.nss);
  line("auc_judd", report.aggregate.auc_judd);
  line("auc_borji", report.aggregate.auc_borji);
  line("auc_shuffled", report.aggregate.auc_shuffled);
  line("emd", report.aggregate.emd);
  return kExitOk;
}

struct ImportanceArgs {
  std::string ckpt, data, target = "both", report;
};

int run_importance(const ImportanceArgs& args) {
  mlnet::Checkpoint ckpt = mlnet::load_checkpoint(args.ckpt);
  const mlnet::ModelConfig& cfg = ckpt.model.config;
  auto entries = mlnet::scan_dataset(args.data);
  std::vector<mlnet::Tensor> images;
  for (const auto& entry : entries) {
    mlnet::PnmImage img = mlnet::read_pnm(entry.image);
    images.push_back(mlnet::preprocess(img, cfg.input_width, cfg.input_height,
                                       cfg.channel_means)
                         .tensor);
  }
  mlnet::ImportanceProfile profile;
  profile.sample_count = static_cast<std::int64_t>(images.size());
  profile.seed = cfg.seed;
  if (args.target == "mean" || args.target == "both") {
    profile.mean_target = mlnet::importance_triple(
        ckpt.model, images, mlnet::ImportanceTarget::Mean);
  }
  if (args.target == "variance" || args.target == "both") {
    profile.variance_target = mlnet::importance_triple(
        ckpt.model, images, mlnet::ImportanceTarget::Variance);
  }
  std::cout << profile.to_text();
  if (!args.report.empty()) {
    std::ofstream out(args.report, std::ios::trunc);
    if (!out) throw mlnet::DataError("cannot write report " + args.report);
    if (fs::path(args.report).extension() == ".json") {
      out << profile.to_json().dump(2) << "\n";
    } else {
      out << profile.to_text();
    }
  }
  return kExitOk;
}

struct GradcheckArgs {
  std::string config;
  std::uint64_t seed = 0;
  double epsilon = 1e-4;
  double threshold = 1e-4;
  std::int64_t probe_w = 16, probe_h = 12;
  bool inference = false;
};

int run_gradcheck(const GradcheckArgs& args) {
  mlnet::RunConfig cfg = mlnet::load_config(args.config);
  cfg.model.validate();
  mlnet::RngState rng(args.seed);
  mlnet::Model model = mlnet::build_model(cfg.model, rng);
  mlnet::GradCheckOptions opt;
  opt.epsilon = args.epsilon;
  opt.threshold = args.threshold;
  opt.probe_w = args.probe_w;
  opt.probe_h = args.probe_h;
  opt.training = !args.inference;
  mlnet::GradCheckResult r =
      mlnet::gradcheck_model(model, cfg.resolved_loss(), opt);
  std::cout << std::setprecision(6);
  std::cout << "gradcheck: checked " << r.checked
            << " parameters, max rel err " << r.max_rel_err << " (threshold "
            << r.threshold << ")\n";
  std::cout << "worst " << r.worst_param << "[" << r.worst_index << "] ad "
            << r.worst_ad << " fd " << r.worst_fd << "\n";
  std::cout << "loss " << r.loss << ", " << r.seconds << " s\n";
  std::cout << (r.passed() ? "PASS" : "FAIL") << "\n";
  return r.passed() ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-level saliency prediction network"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a model on a dataset");
  train->add_option("--data", train_args.data, "dataset root directory")
      ->required();
  train->add_option("--config", train_args.config, "key = value config file")
      ->required();
  train->add_option("--out", train_args.out, "output checkpoint path")
      ->required();
  train->add_option("--epochs", train_args.epochs, "number of epochs");
  train->add_option("--steps", train_args.steps,
                    "exact number of steps (overrides --epochs)");
  auto* train_seed = train->add_option("--seed", train_args.seed, "run seed");
  train->add_option("--log", train_args.log, "also write the log to a file");

  PredictArgs predict_args;
  auto* predict =
      app.add_subcommand("predict", "Predict a saliency map for one image");
  predict->add_option("--ckpt", predict_args.ckpt, "checkpoint")->required();
  predict->add_option("--image", predict_args.image, "input image (PNM)")
      ->required();
  predict->add_option("--out", predict_args.out, "output map (PGM)")
      ->required();
  predict->add_flag("--upscale-to-input", predict_args.upscale,
                    "bilinear-upsample the map to the network input size");

  EvaluateArgs eval_args;
  auto* evaluate =
      app.add_subcommand("evaluate", "Score predictions against ground truth");
  evaluate->add_option("--pred", eval_args.pred, "predicted maps directory")
      ->required();
  evaluate->add_option("--gt", eval_args.gt, "ground-truth maps directory")
      ->required();
  evaluate->add_option("--fix", eval_args.fix, "fixation csv directory")
      ->required();
  evaluate->add_option("--pool", eval_args.pool,
                       "fixation pool for shuffled AUC (defaults to the "
                       "other images' fixations)");
  evaluate->add_option("--seed", eval_args.seed, "sampling seed");
  evaluate->add_option("--splits", eval_args.splits,
                       "AUC sampling rounds (default 100)");
  evaluate->add_option("--report", eval_args.report,
                       "report file (.json for JSON, else text)");

  ImportanceArgs imp_args;
  auto* importance = app.add_subcommand(
      "importance", "Per-level feature importance of a trained model");
  importance->add_option("--ckpt", imp_args.ckpt, "checkpoint")->required();
  importance->add_option("--data", imp_args.data, "dataset root directory")
      ->required();
  importance
      ->add_option("--target", imp_args.target,
                   "statistic to differentiate: mean, variance or both")
      ->check(CLI::IsMember({"mean", "variance", "both"}));
  importance->add_option("--report", imp_args.report,
                         "report file (.json for JSON, else text)");

  GradcheckArgs gc_args;
  auto* gradcheck = app.add_subcommand(
      "gradcheck", "Finite-difference check of every parameter gradient");
  gradcheck->add_option("--config", gc_args.config, "config file")->required();
  gradcheck->add_option("--seed", gc_args.seed, "model seed");
  gradcheck->add_option("--epsilon", gc_args.epsilon,
                        "finite-difference step (default 1e-4)");
  gradcheck->add_option("--threshold", gc_args.threshold,
                        "max relative error to pass (default 1e-4)");
  gradcheck->add_option("--probe-width", gc_args.probe_w, "probe image width");
  gradcheck->add_option("--probe-height", gc_args.probe_h,
                        "probe image height");
  gradcheck->add_flag("--inference", gc_args.inference,
                      "check the dropout-free inference path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return kExitUsage;
  }

  try {
    train_args.seed_given = train_seed->count() > 0;
    if (train->parsed()) return run_train(train_args);
    if (predict->parsed()) return run_predict(predict_args);
    if (evaluate->parsed()) return run_evaluate(eval_args);
    if (importance->parsed()) return run_importance(imp_args);
    if (gradcheck->parsed()) return run_gradcheck(gc_args);
  } catch (const mlnet::ValueError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const mlnet::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const mlnet::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitUsage;
}
