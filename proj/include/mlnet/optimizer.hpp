#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mlnet/network.hpp"
#include "mlnet/tensor.hpp"

namespace mlnet {

// Stochastic gradient descent with Nesterov momentum, the lookahead folded
// into the update:
//   v <- mu * v - lr * (g + wd * p)
//   p <- p + mu * v - lr * (g + wd * p)
// Weight decay is skipped for parameters flagged weight_decay = false (the
// prior mask U).
class SgdNesterov {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double momentum = 0.9;
    double weight_decay = 5e-4;
  };

  SgdNesterov(std::vector<ParamRef> params, Options opt)
      : params_(std::move(params)), opt_(opt) {
    for (const ParamRef& p : params_) {
      velocity_.emplace_back(static_cast<std::size_t>(p.tensor.size()), 0.0);
    }
  }

  const Options& options() const { return opt_; }
  std::int64_t step_count() const { return steps_; }
  const std::vector<ParamRef>& params() const { return params_; }

  std::vector<std::vector<double>>& velocities() { return velocity_; }
  const std::vector<std::vector<double>>& velocities() const {
    return velocity_;
  }

  void zero_grad() {
    for (ParamRef& p : params_) p.tensor.drop_grad();
  }

  // Applies one update. All gradients are validated before any parameter is
  // touched, so a non-finite gradient aborts the step cleanly.
  void step() {
    for (const ParamRef& p : params_) {
      if (!p.tensor.has_grad()) {
        throw Error("gradient not populated for parameter " + p.name);
      }
      for (double g : p.tensor.grad()) {
        if (!std::isfinite(g)) {
          throw NumericError("non-finite gradient in parameter " + p.name +
                             "; step aborted");
        }
      }
    }
    const double lr = opt_.learning_rate;
    const double mu = opt_.momentum;
    for (std::size_t k = 0; k < params_.size(); ++k) {
      ParamRef& p = params_[k];
      const double wd = p.weight_decay ? opt_.weight_decay : 0.0;
      auto vals = p.tensor.values_mut();
      auto grads = p.tensor.grad();
      auto& vel = velocity_[k];
      for (std::size_t i = 0; i < vel.size(); ++i) {
        const double geff = grads[i] + wd * vals[i];
        vel[i] = mu * vel[i] - lr * geff;
        vals[i] = vals[i] + mu * vel[i] - lr * geff;
      }
    }
    ++steps_;
  }

 private:
  std::vector<ParamRef> params_;
  std::vector<std::vector<double>> velocity_;
  Options opt_;
  std::int64_t steps_ = 0;
};

}  // namespace mlnet
