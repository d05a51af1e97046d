#pragma once

#include <cstdint>
#include <cstring>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "mlnet/loss.hpp"
#include "mlnet/network.hpp"
#include "mlnet/optimizer.hpp"
#include "mlnet/rng.hpp"

namespace mlnet {

// One training example: an image [1,3,H,W] and its target saliency map
// [1,1,H/8,W/8] with values in [0,1] and per-map maximum > 0.
struct TrainItem {
  std::string name;
  Tensor image;
  Tensor target;
};

struct TrainLogEntry {
  std::int64_t step = 0;
  double loss = 0.0;
};

namespace detail {

inline void check_train_item(const TrainItem& item) {
  if (item.image.shape().n != 1 || item.image.shape().c != 3) {
    throw ShapeError("training image " + item.name + " must be [1,3,H,W], got " +
                     item.image.shape().str());
  }
  if (item.target.shape().n != 1 || item.target.shape().c != 1) {
    throw ShapeError("training target " + item.name +
                     " must be [1,1,h,w], got " + item.target.shape().str());
  }
  double mx = 0.0;
  for (double v : item.target.values()) mx = std::max(mx, v);
  if (!(mx > 0.0)) {
    throw DataError("training target " + item.name + " has no positive value");
  }
}

}  // namespace detail

// Runs `steps` SGD steps, each on a minibatch of cfg.batch_size examples
// sampled uniformly with replacement. All randomness (sampling and dropout)
// is drawn from `rng`, so a fixed seed reproduces the run bit for bit. Log
// lines "step <n> loss <value>" go to `out` when provided.
inline std::vector<TrainLogEntry> train_steps(
    Model& model, const std::vector<TrainItem>& data, const LossConfig& cfg,
    SgdNesterov& opt, std::int64_t steps, RngState& rng,
    std::ostream* out = nullptr) {
  cfg.validate();
  if (data.empty()) throw ValueError("train: empty dataset");
  for (const TrainItem& item : data) detail::check_train_item(item);

  const Shape img_shape = data.front().image.shape();
  const Shape tgt_shape = data.front().target.shape();
  const std::int64_t N = cfg.batch_size;
  const std::int64_t img_block = img_shape.count();
  const std::int64_t tgt_block = tgt_shape.count();

  std::vector<TrainLogEntry> log;
  log.reserve(static_cast<std::size_t>(steps));
  for (std::int64_t s = 0; s < steps; ++s) {
    Tensor images({N, img_shape.c, img_shape.h, img_shape.w});
    Tensor targets({N, tgt_shape.c, tgt_shape.h, tgt_shape.w});
    for (std::int64_t i = 0; i < N; ++i) {
      const auto pick = static_cast<std::size_t>(
          rng.next_below(static_cast<std::uint64_t>(data.size())));
      std::memcpy(images.values_mut().data() + i * img_block,
                  data[pick].image.values().data(),
                  static_cast<std::size_t>(img_block) * sizeof(double));
      std::memcpy(targets.values_mut().data() + i * tgt_block,
                  data[pick].target.values().data(),
                  static_cast<std::size_t>(tgt_block) * sizeof(double));
    }

    opt.zero_grad();
    Tape tape;
    auto fwd = model.forward(images, /*training=*/true, rng, &tape);
    Tensor v = model.upsampled_prior(&tape, fwd.pre_prior.shape().w,
                                     fwd.pre_prior.shape().h);
    Tensor loss =
        compute_loss(&tape, fwd.pre_prior, v, targets, model.prior_mask, cfg);
    backward(tape, loss);
    opt.step();

    TrainLogEntry entry{opt.step_count(), loss.item()};
    log.push_back(entry);
    if (out) {
      (*out) << "step " << entry.step << " loss " << std::setprecision(17)
             << entry.loss << "\n";
    }
  }
  return log;
}

// Epoch-based wrapper; one epoch is ceil(|data| / batch_size) sampled steps.
inline std::vector<TrainLogEntry> train(Model& model,
                                        const std::vector<TrainItem>& data,
                                        const LossConfig& cfg, SgdNesterov& opt,
                                        std::int64_t epochs, RngState& rng,
                                        std::ostream* out = nullptr) {
  if (data.empty()) throw ValueError("train: empty dataset");
  const std::int64_t per_epoch =
      (static_cast<std::int64_t>(data.size()) + cfg.batch_size - 1) /
      cfg.batch_size;
  return train_steps(model, data, cfg, opt, epochs * per_epoch, rng, out);
}

}  // namespace mlnet
