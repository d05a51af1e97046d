#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlnet/loss.hpp"
#include "mlnet/network.hpp"
#include "mlnet/prior.hpp"

// First-order feature-importance analysis. For each image the gradient of a
// scalar statistic (mean or variance) of the final saliency map is taken
// with respect to the encoder input, i.e. the concatenated conv3/conv4/conv5
// activations. Elementwise absolute gradients are averaged over the images,
// reduced to one scalar per level, and L1-normalized across the three
// levels.

namespace mlnet {

enum class ImportanceTarget { Mean, Variance };

inline const char* to_string(ImportanceTarget t) {
  return t == ImportanceTarget::Mean ? "mean" : "variance";
}

struct ImportanceTriple {
  // Relative importances of conv3 / conv4 / conv5; non-negative, sums to 1.
  std::array<double, 3> levels{};
};

struct ImportanceProfile {
  std::optional<ImportanceTriple> mean_target;
  std::optional<ImportanceTriple> variance_target;
  std::int64_t sample_count = 0;
  std::uint64_t seed = 0;

  std::string to_text() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "samples = " << sample_count << "\n";
    os << "seed = " << seed << "\n";
    auto row = [&os](const char* name, const ImportanceTriple& t) {
      os << name << ".conv3 = " << t.levels[0] << "\n";
      os << name << ".conv4 = " << t.levels[1] << "\n";
      os << name << ".conv5 = " << t.levels[2] << "\n";
    };
    if (mean_target) row("mean", *mean_target);
    if (variance_target) row("variance", *variance_target);
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["samples"] = sample_count;
    j["seed"] = seed;
    auto triple = [](const ImportanceTriple& t) {
      return nlohmann::json{{"conv3", t.levels[0]},
                            {"conv4", t.levels[1]},
                            {"conv5", t.levels[2]}};
    };
    if (mean_target) j["mean"] = triple(*mean_target);
    if (variance_target) j["variance"] = triple(*variance_target);
    return j;
  }
};

struct ImportanceOptions {
  bool use_prior = true;  // multiply the upsampled prior into the map
};

// Computes one target's triple over a set of [1,3,H,W] images. Dropout is
// disabled (inference path); per-image contributions are accumulated in
// dataset order.
inline ImportanceTriple importance_triple(const Model& model,
                                          const std::vector<Tensor>& images,
                                          ImportanceTarget target,
                                          const ImportanceOptions& opt = {}) {
  if (images.empty()) {
    throw ValueError("feature_importance: empty dataset");
  }
  const std::array<std::int64_t, 3> level_channels{
      model.config.stage_channels[2], model.config.stage_channels[3],
      model.config.stage_channels[4]};

  std::array<double, 3> acc{};
  std::array<std::int64_t, 3> entries{};
  for (const Tensor& image : images) {
    Tape tape;
    RngState rng(0);  // dropout disabled during analysis
    auto fwd = model.forward(image, /*training=*/false, rng, &tape);
    Tensor map = fwd.pre_prior;
    if (opt.use_prior) {
      Tensor v = model.upsampled_prior(&tape, map.shape().w, map.shape().h);
      map = apply_prior(&tape, map, v);
    }
    Tensor stat = reduce(&tape, map,
                         target == ImportanceTarget::Mean
                             ? ReduceOp::Mean
                             : ReduceOp::Variance);
    backward(tape, stat);

    const Shape cs = fwd.concat.shape();
    const std::int64_t plane = cs.h * cs.w;
    auto g = fwd.concat.grad();
    std::int64_t offset = 0;
    for (int level = 0; level < 3; ++level) {
      const std::int64_t block =
          level_channels[static_cast<std::size_t>(level)] * plane;
      double sum_abs = 0.0;
      for (std::int64_t k = 0; k < block; ++k) {
        sum_abs += std::fabs(g[offset + k]);
      }
      acc[static_cast<std::size_t>(level)] += sum_abs;
      entries[static_cast<std::size_t>(level)] = block;
      offset += block;
    }
  }

  ImportanceTriple out;
  double total = 0.0;
  for (int level = 0; level < 3; ++level) {
    const double raw =
        acc[static_cast<std::size_t>(level)] /
        (static_cast<double>(images.size()) *
         static_cast<double>(entries[static_cast<std::size_t>(level)]));
    out.levels[static_cast<std::size_t>(level)] = raw;
    total += raw;
  }
  if (!(total > 0.0)) {
    throw NumericError(
        "feature_importance: all-level gradients vanish; nothing to "
        "normalize");
  }
  for (double& v : out.levels) v /= total;
  return out;
}

inline ImportanceProfile feature_importance(const Model& model,
                                            const std::vector<Tensor>& images,
                                            ImportanceTarget target,
                                            const ImportanceOptions& opt = {}) {
  ImportanceProfile profile;
  profile.sample_count = static_cast<std::int64_t>(images.size());
  profile.seed = model.config.seed;
  if (target == ImportanceTarget::Mean) {
    profile.mean_target = importance_triple(model, images, target, opt);
  } else {
    profile.variance_target = importance_triple(model, images, target, opt);
  }
  return profile;
}

}  // namespace mlnet
