#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mlnet/ops.hpp"
#include "mlnet/prior.hpp"
#include "mlnet/tensor.hpp"

// Training loss: mean over the minibatch of
//   || (phi_i / max(phi_i) - y_i) / (alpha - y_i) ||^2
// where phi_i is the prior-multiplied prediction, plus the regularizer
// lambda * || 1 - U ||^2 that penalizes the prior mask for drifting from its
// all-ones initial value. Predictions are normalized by their per-sample
// maximum, so the loss is invariant to positive rescaling; the deviation
// weight 1/(alpha - y_i) emphasizes pixels with high ground-truth value.

namespace mlnet {

struct LossConfig {
  double alpha = 1.1;
  double lambda = 0.0;
  std::int64_t batch_size = 10;
  // The max-normalization subgradient path; disabling it treats each
  // sample's maximum as a constant during backward.
  bool grad_through_max = true;

  void validate() const {
    if (!(alpha > 1.0)) {
      throw ValueError("alpha must exceed the maximum ground-truth value 1");
    }
    if (lambda < 0.0) throw ValueError("lambda must be non-negative");
    if (batch_size < 1) throw ValueError("batch size must be positive");
  }
};

// The default lambda of 1/(w'*h') for a given prior mask.
inline double default_lambda(const Tensor& prior_mask) {
  return 1.0 / static_cast<double>(prior_mask.size());
}

inline Tensor compute_loss(Tape* tape, const Tensor& pre_prior_maps,
                           const Tensor& V, const Tensor& targets,
                           const Tensor& U, const LossConfig& cfg) {
  cfg.validate();
  const Shape ps = pre_prior_maps.shape();
  if (!(targets.shape() == ps)) {
    throw ShapeError("compute_loss: targets " + targets.shape().str() +
                     " do not match predictions " + ps.str());
  }
  const std::int64_t N = ps.n;
  const std::int64_t plane = ps.c * ps.h * ps.w;

  Tensor phi = apply_prior(tape, pre_prior_maps, V);

  Tensor acc;
  for (std::int64_t i = 0; i < N; ++i) {
    Tensor phi_i = slice_batch(tape, phi, i);
    Tensor max_i = reduce(tape, phi_i, ReduceOp::Max);
    if (!(max_i.item() > 0.0)) {
      throw NumericError(
          "sample " + std::to_string(i) +
          " has a non-positive prediction maximum (" +
          std::to_string(max_i.item()) + "); cannot max-normalize");
    }
    if (!cfg.grad_through_max) {
      max_i = Tensor::scalar(max_i.item());  // detached constant
    }
    Tensor normed = div_scalar(tape, phi_i, max_i);

    const double* y = targets.values().data() + i * plane;
    std::vector<double> inv_weight(static_cast<std::size_t>(plane));
    for (std::int64_t k = 0; k < plane; ++k) {
      inv_weight[static_cast<std::size_t>(k)] = 1.0 / (cfg.alpha - y[k]);
    }
    Tensor diff = sub_const(tape, normed, {y, static_cast<std::size_t>(plane)});
    Tensor weighted = mul_const(tape, diff, inv_weight);
    Tensor ssq = sum_squares(tape, weighted);
    acc = i == 0 ? ssq : add(tape, acc, ssq);
  }
  Tensor data_term = scale(tape, acc, 1.0 / static_cast<double>(N));

  Tensor reg = sum_squares(tape, rsub_const(tape, 1.0, U));
  Tensor reg_term = scale(tape, reg, cfg.lambda);
  return add(tape, data_term, reg_term);
}

}  // namespace mlnet
