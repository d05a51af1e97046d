#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <string>
#include <vector>

#include "mlnet/loss.hpp"
#include "mlnet/network.hpp"
#include "mlnet/parallel.hpp"
#include "mlnet/prior.hpp"
#include "mlnet/rng.hpp"

// Finite-difference verification of the whole training gradient: every
// parameter element of the model is perturbed by +/- epsilon and the loss is
// re-evaluated, giving a central-difference estimate that is compared
// against the taped gradient. Probes restart the forward pass at the layer
// owning the perturbed parameter (exact, since earlier activations cannot
// change), which keeps a full sweep affordable; probes run in parallel on
// cloned models.

namespace mlnet {

struct GradCheckOptions {
  std::int64_t probe_w = 16;
  std::int64_t probe_h = 12;
  double epsilon = 1e-4;
  // Floor in the relative-error denominator; pairs below it are dominated
  // by roundoff, not by gradient error.
  double rel_floor = 1e-6;
  double threshold = 1e-4;
  bool training = true;  // dropout active, mask fixed by dropout_seed
  // Probe instance chosen away from the kink points of relu/max: with this
  // seed the smallest live preactivation magnitude exceeds the epsilon
  // window by more than 3x at the desk-width model.
  std::uint64_t data_seed = 352;
  std::uint64_t dropout_seed = 23;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::int64_t worst_index = -1;
  double worst_ad = 0.0;
  double worst_fd = 0.0;
  std::int64_t checked = 0;
  double loss = 0.0;
  double seconds = 0.0;
  double threshold = 0.0;

  bool passed() const { return max_rel_err < threshold; }
};

namespace detail {

enum class RestartKind { Feature, Encoder, Prior };

struct ParamSite {
  std::string name;
  RestartKind kind;
  int feature_conv = 0;  // valid for Feature
};

inline Tensor& param_tensor(Model& m, std::size_t param_idx) {
  const std::size_t n_feat = m.features.size() * 2;
  if (param_idx < n_feat) {
    ConvLayer& l = m.features[param_idx / 2];
    return param_idx % 2 == 0 ? l.weight : l.bias;
  }
  switch (param_idx - n_feat) {
    case 0: return m.encode_main.weight;
    case 1: return m.encode_main.bias;
    case 2: return m.encode_out.weight;
    case 3: return m.encode_out.bias;
    default: return m.prior_mask;
  }
}

}  // namespace detail

inline GradCheckResult gradcheck_model(const Model& model,
                                       const LossConfig& loss_cfg,
                                       const GradCheckOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();

  // Probe data: one random image and one random target with maximum 1.
  RngState data_rng(opt.data_seed);
  Tensor image({1, 3, opt.probe_h, opt.probe_w});
  for (auto& v : image.values_mut()) v = data_rng.next_double(0.0, 1.0);

  Model work = model.clone();
  // Condition the probe operating point. The fan-based initialization loses
  // a factor sqrt(2) of activation scale per ReLU layer, leaving the map
  // maximum around 1e-3 at depth 15; the 1/max in the loss then amplifies
  // every kink the +/- epsilon probes graze. Restoring the ReLU variance
  // correction puts all activations at O(1), where epsilon = 1e-4 probes
  // stay inside the smooth region between argmax ties and ReLU switches.
  {
    const double relu_gain = std::sqrt(2.0);
    for (ConvLayer& l : work.features) {
      for (auto& v : l.weight.values_mut()) v *= relu_gain;
    }
    for (auto& v : work.encode_main.weight.values_mut()) v *= relu_gain;
  }

  // Nudge away the remaining measure-zero kink hazards.
  //
  // A channel whose ReLU is off at every position has an exactly-zero
  // gradient, but a probe can switch it back on if its largest
  // preactivation lies within epsilon-times-sensitivity of zero, which
  // makes the finite difference disagree completely. Lowering such a
  // channel's bias is invisible to the forward pass (outputs stay zero), so
  // dead channels near the boundary are pushed a safe margin below it.
  // A map whose maximum is non-positive cannot be max-normalized at all;
  // flipping the sign of the output layer fixes that without affecting any
  // other property of the check.
  {
    const double margin = 50.0 * opt.epsilon;
    Model::ForwardTrace probe_trace;
    RngState r(opt.dropout_seed);
    auto probe = work.forward(image, opt.training, r, nullptr, &probe_trace);

    auto scare_dead_channels = [&](const Tensor& layer_in, ConvLayer& layer) {
      Tensor pre =
          conv2d(nullptr, layer_in, layer.weight, layer.bias, 1, layer.pad);
      const Shape s = pre.shape();
      const std::int64_t plane = s.h * s.w;
      for (std::int64_t c = 0; c < s.c; ++c) {
        double pmax = pre.values()[c * plane];
        for (std::int64_t i = 1; i < plane; ++i) {
          pmax = std::max(pmax, pre.values()[c * plane + i]);
        }
        if (pmax <= 0.0 && pmax > -margin) {
          layer.bias.values_mut()[c] -= margin + pmax;
        }
      }
    };
    for (int k = 0; k < Model::kFeatureConvs; ++k) {
      scare_dead_channels(
          probe_trace.conv_inputs[static_cast<std::size_t>(k)],
          work.features[static_cast<std::size_t>(k)]);
    }
    RngState r2(opt.dropout_seed);
    Tensor dropped = dropout(nullptr, probe_trace.concat,
                             work.config.dropout_retain, r2, opt.training);
    scare_dead_channels(dropped, work.encode_main);

    double map_max = probe.pre_prior.values()[0];
    for (double v : probe.pre_prior.values()) map_max = std::max(map_max, v);
    if (map_max <= 0.0) {
      for (auto& v : work.encode_out.weight.values_mut()) v = -v;
      for (auto& v : work.encode_out.bias.values_mut()) v = -v;
    }
  }

  Model::ForwardTrace trace;
  Tape tape;
  RngState drng(opt.dropout_seed);
  auto fwd = work.forward(image, opt.training, drng, &tape, &trace);
  const std::int64_t tap_w = fwd.pre_prior.shape().w;
  const std::int64_t tap_h = fwd.pre_prior.shape().h;

  Tensor target({1, 1, tap_h, tap_w});
  for (auto& v : target.values_mut()) v = data_rng.next_double(0.0, 1.0);
  target.values_mut()[0] = 1.0;

  Tensor v_map = work.upsampled_prior(&tape, tap_w, tap_h);
  Tensor loss = compute_loss(&tape, fwd.pre_prior, v_map, target,
                             work.prior_mask, loss_cfg);
  backward(tape, loss);
  const double loss0 = loss.item();

  // Snapshot the taped gradients and the parameter layout.
  auto params = work.parameters();
  std::vector<std::vector<double>> ad(params.size());
  std::vector<detail::ParamSite> sites(params.size());
  std::vector<std::int64_t> offset(params.size() + 1, 0);
  for (std::size_t k = 0; k < params.size(); ++k) {
    ad[k].assign(params[k].tensor.grad().begin(),
                 params[k].tensor.grad().end());
    detail::ParamSite site;
    site.name = params[k].name;
    if (k < work.features.size() * 2) {
      site.kind = detail::RestartKind::Feature;
      site.feature_conv = static_cast<int>(k / 2);
    } else if (k < work.features.size() * 2 + 4) {
      site.kind = detail::RestartKind::Encoder;
    } else {
      site.kind = detail::RestartKind::Prior;
    }
    sites[k] = site;
    offset[k + 1] = offset[k] + params[k].tensor.size();
  }
  const std::int64_t total = offset.back();

  // Loss evaluation with the forward pass resumed at the perturbed layer.
  auto eval_loss = [&](Model& m, const detail::ParamSite& site) {
    Tensor pre;
    switch (site.kind) {
      case detail::RestartKind::Feature: {
        Taps taps = m.resume_features(trace, site.feature_conv);
        Tensor concat =
            concat_channels(nullptr, {taps.conv3, taps.conv4, taps.conv5});
        RngState r(opt.dropout_seed);
        pre = m.encode(concat, opt.training, r);
        break;
      }
      case detail::RestartKind::Encoder: {
        RngState r(opt.dropout_seed);
        pre = m.encode(trace.concat, opt.training, r);
        break;
      }
      case detail::RestartKind::Prior:
        pre = fwd.pre_prior;
        break;
    }
    Tensor v = upsample_prior(nullptr, m.prior_mask, tap_w, tap_h,
                              m.config.prior_normalized);
    return compute_loss(nullptr, pre, v, target, m.prior_mask, loss_cfg)
        .item();
  };

  GradCheckResult result;
  result.loss = loss0;
  result.threshold = opt.threshold;
  result.checked = total;
  std::mutex merge_mutex;

  auto& pool = ThreadPool::instance();
  const int chunks = pool.threads() * 16;
  pool.run_chunked(total, chunks, [&](std::int64_t begin, std::int64_t end) {
    Model local = work.clone();
    // The unperturbed restart must reproduce the taped loss bit for bit;
    // anything else means the trace bookkeeping is broken.
    {
      std::size_t k = 0;
      while (offset[k + 1] <= begin) ++k;
      if (eval_loss(local, sites[k]) != loss0) {
        throw NumericError("gradcheck: restart does not reproduce the loss");
      }
    }
    double local_worst = -1.0;
    std::string local_name;
    std::int64_t local_index = -1;
    double local_ad = 0.0, local_fd = 0.0;

    std::size_t k = 0;
    for (std::int64_t flat = begin; flat < end; ++flat) {
      while (offset[k + 1] <= flat) ++k;
      const std::int64_t elem = flat - offset[k];
      Tensor& t = detail::param_tensor(local, k);
      auto vals = t.values_mut();
      const double saved = vals[elem];
      vals[elem] = saved + opt.epsilon;
      const double fp = eval_loss(local, sites[k]);
      vals[elem] = saved - opt.epsilon;
      const double fm = eval_loss(local, sites[k]);
      vals[elem] = saved;
      const double fd = (fp - fm) / (2.0 * opt.epsilon);
      const double a = ad[k][static_cast<std::size_t>(elem)];
      const double denom =
          std::max({std::fabs(a), std::fabs(fd), opt.rel_floor});
      const double rel = std::fabs(a - fd) / denom;
      if (rel > local_worst) {
        local_worst = rel;
        local_name = sites[k].name;
        local_index = elem;
        local_ad = a;
        local_fd = fd;
      }
    }
    std::lock_guard<std::mutex> lk(merge_mutex);
    if (local_worst > result.max_rel_err) {
      result.max_rel_err = local_worst;
      result.worst_param = local_name;
      result.worst_index = local_index;
      result.worst_ad = local_ad;
      result.worst_fd = local_fd;
    }
  });

  result.seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
  return result;
}

}  // namespace mlnet
