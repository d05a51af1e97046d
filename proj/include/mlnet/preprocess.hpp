#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "mlnet/metrics.hpp"
#include "mlnet/pnm.hpp"
#include "mlnet/tensor.hpp"

// Input preprocessing: zero-pad the shorter relative side symmetrically to a
// 4:3 aspect ratio, resize to the network input size (area averaging when
// shrinking, half-pixel-centered bilinear when enlarging), scale to [0,1]
// and subtract per-channel means. The applied transform is recorded so
// predictions and fixations can be mapped between original-image and
// network-input coordinates.

namespace mlnet {

struct PreprocessTransform {
  std::int64_t orig_w = 0, orig_h = 0;
  std::int64_t padded_w = 0, padded_h = 0;
  std::int64_t pad_left = 0, pad_top = 0;
  std::int64_t out_w = 0, out_h = 0;

  // Original pixel-center coordinates -> network-input coordinates.
  std::pair<double, double> to_input(double x, double y) const {
    const double sx = static_cast<double>(out_w) / static_cast<double>(padded_w);
    const double sy = static_cast<double>(out_h) / static_cast<double>(padded_h);
    return {(x + static_cast<double>(pad_left) + 0.5) * sx - 0.5,
            (y + static_cast<double>(pad_top) + 0.5) * sy - 0.5};
  }

  std::pair<double, double> to_original(double xi, double yi) const {
    const double sx = static_cast<double>(out_w) / static_cast<double>(padded_w);
    const double sy = static_cast<double>(out_h) / static_cast<double>(padded_h);
    return {(xi + 0.5) / sx - 0.5 - static_cast<double>(pad_left),
            (yi + 0.5) / sy - 0.5 - static_cast<double>(pad_top)};
  }
};

namespace detail {

// Resizes one axis of a row-major plane. Area averaging with exact
// fractional coverage when shrinking; half-pixel bilinear with edge clamp
// when enlarging. Both preserve constant inputs.
inline std::vector<double> resize_rows(const std::vector<double>& src,
                                       std::int64_t rows, std::int64_t cols,
                                       std::int64_t new_rows) {
  if (new_rows == rows) return src;
  std::vector<double> dst(static_cast<std::size_t>(new_rows * cols), 0.0);
  if (new_rows < rows) {
    const double ratio = static_cast<double>(rows) / static_cast<double>(new_rows);
    for (std::int64_t r = 0; r < new_rows; ++r) {
      const double lo = static_cast<double>(r) * ratio;
      const double hi = static_cast<double>(r + 1) * ratio;
      const std::int64_t first = static_cast<std::int64_t>(std::floor(lo));
      const std::int64_t last =
          std::min(rows - 1, static_cast<std::int64_t>(std::ceil(hi)) - 1);
      for (std::int64_t s = first; s <= last; ++s) {
        const double cover = std::min(hi, static_cast<double>(s + 1)) -
                             std::max(lo, static_cast<double>(s));
        if (cover <= 0.0) continue;
        const double w = cover / ratio;
        for (std::int64_t c = 0; c < cols; ++c) {
          dst[static_cast<std::size_t>(r * cols + c)] +=
              w * src[static_cast<std::size_t>(s * cols + c)];
        }
      }
    }
  } else {
    const double ratio = static_cast<double>(rows) / static_cast<double>(new_rows);
    for (std::int64_t r = 0; r < new_rows; ++r) {
      const double pos = (static_cast<double>(r) + 0.5) * ratio - 0.5;
      const double clamped =
          std::clamp(pos, 0.0, static_cast<double>(rows - 1));
      const std::int64_t s0 = static_cast<std::int64_t>(std::floor(clamped));
      const std::int64_t s1 = std::min(rows - 1, s0 + 1);
      const double t = clamped - static_cast<double>(s0);
      for (std::int64_t c = 0; c < cols; ++c) {
        dst[static_cast<std::size_t>(r * cols + c)] =
            (1.0 - t) * src[static_cast<std::size_t>(s0 * cols + c)] +
            t * src[static_cast<std::size_t>(s1 * cols + c)];
      }
    }
  }
  return dst;
}

inline std::vector<double> transpose_plane(const std::vector<double>& src,
                                           std::int64_t rows,
                                           std::int64_t cols) {
  std::vector<double> dst(src.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) {
      dst[static_cast<std::size_t>(c * rows + r)] =
          src[static_cast<std::size_t>(r * cols + c)];
    }
  }
  return dst;
}

inline std::vector<double> resize_plane(std::vector<double> plane,
                                        std::int64_t rows, std::int64_t cols,
                                        std::int64_t new_rows,
                                        std::int64_t new_cols) {
  plane = resize_rows(plane, rows, cols, new_rows);
  plane = transpose_plane(plane, new_rows, cols);
  plane = resize_rows(plane, cols, new_rows, new_cols);
  return transpose_plane(plane, new_cols, new_rows);
}

}  // namespace detail

struct PreprocessedImage {
  Tensor tensor;  // [1,3,H,W], mean-subtracted
  PreprocessTransform transform;
};

inline PreprocessedImage preprocess(
    const PnmImage& img, std::int64_t target_w, std::int64_t target_h,
    const std::array<double, 3>& channel_means = {0.5, 0.5, 0.5}) {
  if (target_w * 3 != target_h * 4) {
    throw ValueError("preprocess: target " + std::to_string(target_w) + "x" +
                     std::to_string(target_h) + " is not 4:3");
  }
  if (target_w % 8 != 0 || target_h % 8 != 0) {
    throw ValueError("preprocess: target size must be divisible by 8");
  }

  PreprocessTransform tf;
  tf.orig_w = img.width;
  tf.orig_h = img.height;
  tf.out_w = target_w;
  tf.out_h = target_h;
  tf.padded_w = img.width;
  tf.padded_h = img.height;
  if (img.width * 3 < img.height * 4) {
    tf.padded_w = (img.height * 4 + 2) / 3;
    tf.pad_left = (tf.padded_w - img.width) / 2;
  } else if (img.width * 3 > img.height * 4) {
    tf.padded_h = (img.width * 3 + 3) / 4;
    tf.pad_top = (tf.padded_h - img.height) / 2;
  }

  PreprocessedImage out;
  out.transform = tf;
  out.tensor = Tensor({1, 3, target_h, target_w});
  std::vector<double> plane(
      static_cast<std::size_t>(tf.padded_h * tf.padded_w));
  for (std::int64_t ch = 0; ch < 3; ++ch) {
    std::fill(plane.begin(), plane.end(), 0.0);
    const int src_ch = img.channels == 3 ? static_cast<int>(ch) : 0;
    for (std::int64_t y = 0; y < img.height; ++y) {
      for (std::int64_t x = 0; x < img.width; ++x) {
        const std::uint8_t px =
            img.pixels[static_cast<std::size_t>((y * img.width + x) *
                                                    img.channels +
                                                src_ch)];
        plane[static_cast<std::size_t>((y + tf.pad_top) * tf.padded_w + x +
                                       tf.pad_left)] =
            static_cast<double>(px) / 255.0;
      }
    }
    auto resized = detail::resize_plane(plane, tf.padded_h, tf.padded_w,
                                        target_h, target_w);
    double* dst = out.tensor.values_mut().data() + ch * target_h * target_w;
    for (std::int64_t i = 0; i < target_h * target_w; ++i) {
      dst[i] = resized[static_cast<std::size_t>(i)] -
               channel_means[static_cast<std::size_t>(ch)];
    }
  }
  return out;
}

// Grayscale 8-bit map -> [0,1] values, padded and area-resized the same way
// as its image, at an arbitrary output resolution (typically the tap size).
inline SaliencyMap preprocess_map(const PnmImage& img, std::int64_t out_w,
                                  std::int64_t out_h,
                                  const PreprocessTransform& tf) {
  if (img.channels != 1) {
    throw DataError("ground-truth map must be grayscale, got " +
                    std::to_string(img.channels) + " channels");
  }
  if (img.width != tf.orig_w || img.height != tf.orig_h) {
    throw DataError("map size " + std::to_string(img.width) + "x" +
                    std::to_string(img.height) +
                    " does not match its image " + std::to_string(tf.orig_w) +
                    "x" + std::to_string(tf.orig_h));
  }
  std::vector<double> plane(
      static_cast<std::size_t>(tf.padded_h * tf.padded_w), 0.0);
  for (std::int64_t y = 0; y < img.height; ++y) {
    for (std::int64_t x = 0; x < img.width; ++x) {
      plane[static_cast<std::size_t>((y + tf.pad_top) * tf.padded_w + x +
                                     tf.pad_left)] =
          static_cast<double>(
              img.pixels[static_cast<std::size_t>(y * img.width + x)]) /
          255.0;
    }
  }
  auto resized =
      detail::resize_plane(plane, tf.padded_h, tf.padded_w, out_h, out_w);
  SaliencyMap m(out_h, out_w);
  m.v = std::move(resized);
  return m;
}

// Training target: ground-truth map at the tap resolution, max-normalized.
inline Tensor map_to_target(const SaliencyMap& m) {
  Tensor t({1, 1, m.rows, m.cols});
  double mx = 0.0;
  for (double v : m.v) mx = std::max(mx, v);
  if (!(mx > 0.0)) {
    throw DataError("ground-truth map has no positive value");
  }
  for (std::int64_t i = 0; i < m.size(); ++i) {
    t.values_mut()[i] = m.v[static_cast<std::size_t>(i)] / mx;
  }
  return t;
}

// Renders fixations as a map: unit impulses, optional truncated Gaussian
// blur (radius 3*sigma), then max-normalization. Deterministic.
inline SaliencyMap fixation_map(const FixationSet& fix, std::int64_t rows,
                                std::int64_t cols, double sigma) {
  if (fix.empty()) throw ValueError("fixation_map: empty fixation set");
  SaliencyMap m(rows, cols);
  for (const Fixation& f : fix) {
    if (f.row < 0 || f.row >= rows || f.col < 0 || f.col >= cols) {
      throw DataError("fixation (" + std::to_string(f.row) + "," +
                      std::to_string(f.col) + ") outside " +
                      std::to_string(rows) + "x" + std::to_string(cols));
    }
    m.at(f.row, f.col) += 1.0;
  }
  if (sigma > 0.0) {
    const std::int64_t radius =
        static_cast<std::int64_t>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double ksum = 0.0;
    for (std::int64_t k = -radius; k <= radius; ++k) {
      const double w = std::exp(-static_cast<double>(k * k) /
                                (2.0 * sigma * sigma));
      kernel[static_cast<std::size_t>(k + radius)] = w;
      ksum += w;
    }
    for (double& w : kernel) w /= ksum;
    // Separable blur with zero boundary.
    SaliencyMap tmp(rows, cols);
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t c = 0; c < cols; ++c) {
        double acc = 0.0;
        for (std::int64_t k = -radius; k <= radius; ++k) {
          const std::int64_t cc = c + k;
          if (cc >= 0 && cc < cols) {
            acc += kernel[static_cast<std::size_t>(k + radius)] * m.at(r, cc);
          }
        }
        tmp.at(r, c) = acc;
      }
    }
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t c = 0; c < cols; ++c) {
        double acc = 0.0;
        for (std::int64_t k = -radius; k <= radius; ++k) {
          const std::int64_t rr = r + k;
          if (rr >= 0 && rr < rows) {
            acc += kernel[static_cast<std::size_t>(k + radius)] * tmp.at(rr, c);
          }
        }
        m.at(r, c) = acc;
      }
    }
  }
  double mx = 0.0;
  for (double v : m.v) mx = std::max(mx, v);
  for (double& v : m.v) v /= mx;
  return m;
}

}  // namespace mlnet
