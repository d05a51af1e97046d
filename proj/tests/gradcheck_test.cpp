#include "mlnet/gradcheck.hpp"

#include <gtest/gtest.h>

namespace mlnet {
namespace {

// Narrow model so a full per-parameter sweep stays fast. Seeds picked away
// from relu/argmax kink points (the probe scan keeps a healthy margin
// between every live preactivation and the +/- epsilon window).
ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.stage_channels = {4, 4, 4, 4, 4};
  cfg.encode_channels = 4;
  cfg.input_width = 16;
  cfg.input_height = 16;
  cfg.seed = 0;
  return cfg;
}

GradCheckOptions tiny_options() {
  GradCheckOptions opt;
  opt.data_seed = 304;
  return opt;
}

TEST(GradCheck, TinyModelEveryParameterPasses) {
  ModelConfig cfg = tiny_config();
  RngState rng(cfg.seed);
  Model m = build_model(cfg, rng);
  LossConfig loss;
  loss.lambda = default_lambda(m.prior_mask);
  GradCheckResult r = gradcheck_model(m, loss, tiny_options());
  EXPECT_EQ(r.checked, m.parameter_count());
  EXPECT_LT(r.max_rel_err, 1e-4)
      << "worst " << r.worst_param << "[" << r.worst_index << "] ad "
      << r.worst_ad << " fd " << r.worst_fd;
  EXPECT_TRUE(r.passed());
}

TEST(GradCheck, InferenceModeAlsoPasses) {
  ModelConfig cfg = tiny_config();
  RngState rng(cfg.seed);
  Model m = build_model(cfg, rng);
  LossConfig loss;
  loss.lambda = default_lambda(m.prior_mask);
  GradCheckOptions opt = tiny_options();
  opt.training = false;
  GradCheckResult r = gradcheck_model(m, loss, opt);
  EXPECT_LT(r.max_rel_err, 1e-4)
      << "worst " << r.worst_param << "[" << r.worst_index << "] ad "
      << r.worst_ad << " fd " << r.worst_fd;
}

TEST(GradCheck, DeterministicMaxError) {
  ModelConfig cfg = tiny_config();
  RngState rng(cfg.seed);
  Model m = build_model(cfg, rng);
  LossConfig loss;
  loss.lambda = default_lambda(m.prior_mask);
  GradCheckResult a = gradcheck_model(m, loss, tiny_options());
  GradCheckResult b = gradcheck_model(m, loss, tiny_options());
  EXPECT_EQ(a.max_rel_err, b.max_rel_err);
  EXPECT_EQ(a.loss, b.loss);
}

TEST(GradCheck, ReportsDiagnostics) {
  ModelConfig cfg = tiny_config();
  RngState rng(cfg.seed);
  Model m = build_model(cfg, rng);
  LossConfig loss;
  loss.lambda = default_lambda(m.prior_mask);
  GradCheckResult r = gradcheck_model(m, loss, tiny_options());
  EXPECT_FALSE(r.worst_param.empty());
  EXPECT_GE(r.worst_index, 0);
  EXPECT_GT(r.loss, 0.0);
  EXPECT_GT(r.seconds, 0.0);
}

}  // namespace
}  // namespace mlnet
