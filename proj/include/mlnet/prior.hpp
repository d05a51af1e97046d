#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "mlnet/ops.hpp"
#include "mlnet/tensor.hpp"

// Learned coarse prior mask and its upsampling to the predicted map's size.
// The mask U (shape [1,1,h',w']) is interpolated onto the w x h target by a
// separable tent kernel k(d) = max(0, spacing - |d|) evaluated on a uniform
// sampling grid; normalized mode divides each axis by its spacing so that the
// interior kernel weights form a partition of unity and a constant mask
// upsamples to the same constant.

namespace mlnet {

inline std::int64_t prior_extent(std::int64_t tap_extent) {
  return std::max<std::int64_t>(1, tap_extent / 10);
}

// All-ones trainable mask for a w x h prediction map.
inline Tensor make_prior_mask(std::int64_t map_w, std::int64_t map_h) {
  return Tensor::full({1, 1, prior_extent(map_h), prior_extent(map_w)}, 1.0,
                      /*requires_grad=*/true);
}

// Uniformly spaced grid coordinates (half-pixel centered) of the mask cells
// inside the target map: x_i = (i + 0.5) * (w / w') - 0.5.
inline std::vector<double> prior_grid_axis(std::int64_t target,
                                           std::int64_t mask) {
  const double spacing =
      static_cast<double>(target) / static_cast<double>(mask);
  std::vector<double> coords(static_cast<std::size_t>(mask));
  for (std::int64_t i = 0; i < mask; ++i) {
    coords[static_cast<std::size_t>(i)] =
        (static_cast<double>(i) + 0.5) * spacing - 0.5;
  }
  return coords;
}

namespace detail {

// Per output pixel, the (mask index, kernel weight) pairs with positive
// weight. Pixel coordinates are clamped to the grid hull, so edge pixels
// take the nearest cell's value and no sample is read beyond the grid.
struct AxisWeights {
  std::vector<std::pair<std::int32_t, double>> entries;
  std::vector<std::int32_t> offsets;  // size target+1
};

inline AxisWeights prior_axis_weights(std::int64_t target, std::int64_t mask,
                                      bool normalized) {
  const double spacing =
      static_cast<double>(target) / static_cast<double>(mask);
  const std::vector<double> centers = prior_grid_axis(target, mask);
  AxisWeights aw;
  aw.offsets.reserve(static_cast<std::size_t>(target) + 1);
  aw.offsets.push_back(0);
  for (std::int64_t p = 0; p < target; ++p) {
    const double coord = std::clamp(static_cast<double>(p), centers.front(),
                                    centers.back());
    // Tent support is |d| < spacing: at most the two nearest cells.
    const std::int64_t near =
        std::clamp<std::int64_t>(
            static_cast<std::int64_t>(std::floor((coord + 0.5) / spacing)), 0,
            mask - 1);
    for (std::int64_t i = std::max<std::int64_t>(0, near - 1);
         i <= std::min<std::int64_t>(mask - 1, near + 1); ++i) {
      double wgt = spacing - std::fabs(coord - centers[static_cast<std::size_t>(i)]);
      if (wgt > 0.0) {
        if (normalized) wgt /= spacing;
        aw.entries.emplace_back(static_cast<std::int32_t>(i), wgt);
      }
    }
    aw.offsets.push_back(static_cast<std::int32_t>(aw.entries.size()));
  }
  return aw;
}

}  // namespace detail

// Upsample the mask U to a [1,1,h,w] map V per the separable tent kernel,
// differentiable with respect to U. V_{x,y} = sum_{i,j} U_{j,i} kx(x - x_i)
// ky(y - y_j), evaluated at integer pixel centers.
inline Tensor upsample_prior(Tape* tape, const Tensor& U, std::int64_t w,
                             std::int64_t h, bool normalized = true) {
  const Shape us = U.shape();
  if (us.n != 1 || us.c != 1) {
    throw ShapeError("upsample_prior: mask must be [1,1,h',w'], got " +
                     us.str());
  }
  if (w < us.w || h < us.h) {
    throw ShapeError("upsample_prior: target " + std::to_string(w) + "x" +
                     std::to_string(h) + " smaller than mask " + us.str());
  }

  auto wx = std::make_shared<detail::AxisWeights>(
      detail::prior_axis_weights(w, us.w, normalized));
  auto wy = std::make_shared<detail::AxisWeights>(
      detail::prior_axis_weights(h, us.h, normalized));

  Tensor out({1, 1, h, w});
  const double* up = U.values().data();
  double* vp = out.values_mut().data();
  const std::int64_t mask_w = us.w;
  for (std::int64_t py = 0; py < h; ++py) {
    for (std::int64_t px = 0; px < w; ++px) {
      double acc = 0.0;
      for (std::int32_t ey = wy->offsets[py]; ey < wy->offsets[py + 1]; ++ey) {
        const auto& [j, wgt_y] = wy->entries[static_cast<std::size_t>(ey)];
        for (std::int32_t ex = wx->offsets[px]; ex < wx->offsets[px + 1];
             ++ex) {
          const auto& [i, wgt_x] = wx->entries[static_cast<std::size_t>(ex)];
          acc += up[j * mask_w + i] * wgt_x * wgt_y;
        }
      }
      vp[py * w + px] = acc;
    }
  }

  if (detail::want_grad(tape, {&U})) {
    out.set_requires_grad(true);
    Tensor u = U, v = out;
    tape->record({u, v}, [u, v, wx, wy, w, h, mask_w]() mutable {
      const double* gv = v.grad().data();
      double* gu = u.grad_mut().data();
      for (std::int64_t py = 0; py < h; ++py) {
        for (std::int64_t px = 0; px < w; ++px) {
          const double g = gv[py * w + px];
          if (g == 0.0) continue;
          for (std::int32_t ey = wy->offsets[py]; ey < wy->offsets[py + 1];
               ++ey) {
            const auto& [j, wgt_y] = wy->entries[static_cast<std::size_t>(ey)];
            for (std::int32_t ex = wx->offsets[px]; ex < wx->offsets[px + 1];
                 ++ex) {
              const auto& [i, wgt_x] =
                  wx->entries[static_cast<std::size_t>(ex)];
              gu[j * mask_w + i] += g * wgt_x * wgt_y;
            }
          }
        }
      }
    });
  }
  return out;
}

// Pixel-wise application of the upsampled prior to the predicted map
// (V broadcast over the batch). Differentiable in both factors.
inline Tensor apply_prior(Tape* tape, const Tensor& pre_prior_map,
                          const Tensor& V) {
  const Shape ms = pre_prior_map.shape(), vs = V.shape();
  if (ms.h != vs.h || ms.w != vs.w || ms.c != vs.c) {
    throw ShapeError("apply_prior: map " + ms.str() +
                     " and prior " + vs.str() + " differ in size");
  }
  return mul(tape, pre_prior_map, V);
}

}  // namespace mlnet
