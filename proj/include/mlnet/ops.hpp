#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <span>
#include <vector>

#include "mlnet/parallel.hpp"
#include "mlnet/rng.hpp"
#include "mlnet/tensor.hpp"

// Taped tensor operations. Every op computes its forward value eagerly and,
// when a tape is supplied and some input requires a gradient, records a
// closure that accumulates d(output)/d(input) during backward(). Passing
// tape == nullptr runs the same forward without recording (inference).

namespace mlnet {

namespace detail {

inline bool want_grad(Tape* tape, std::initializer_list<const Tensor*> ins) {
  if (!tape) return false;
  for (const Tensor* t : ins) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

inline std::int64_t ceil_div_nonneg(std::int64_t a, std::int64_t b) {
  return a <= 0 ? 0 : (a + b - 1) / b;
}

// Eight-accumulator dot product; the fixed association order keeps results
// deterministic while letting the compiler pipeline the multiplies.
inline double dot8(const double* a, const double* b, std::int64_t k) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
  std::int64_t i = 0;
  for (; i + 8 <= k; i += 8) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
    s4 += a[i + 4] * b[i + 4];
    s5 += a[i + 5] * b[i + 5];
    s6 += a[i + 6] * b[i + 6];
    s7 += a[i + 7] * b[i + 7];
  }
  for (; i < k; ++i) s0 += a[i] * b[i];
  return ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d

// 2-D convolution (cross-correlation) with zero padding.
//   input   [N, Ci, H, W]
//   weights [Co, Ci, kh, kw]
//   bias    [1, Co, 1, 1]
// Output spatial size is floor((H + 2*padding - kh)/stride) + 1 per axis.
inline Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& weights,
                     const Tensor& bias, std::int64_t stride,
                     std::int64_t padding) {
  const Shape xs = input.shape();
  const Shape ws = weights.shape();
  if (xs.c != ws.c) {
    throw ShapeError("conv2d: input channels " + xs.str() +
                     " do not match weights " + ws.str());
  }
  if (bias.shape() != Shape{1, ws.n, 1, 1}) {
    throw ShapeError("conv2d: bias shape " + bias.shape().str() +
                     " must be [1," + std::to_string(ws.n) + ",1,1]");
  }
  if (stride < 1) throw ValueError("conv2d: stride must be positive");
  if (padding < 0) throw ValueError("conv2d: padding must be non-negative");

  const std::int64_t N = xs.n, Ci = xs.c, H = xs.h, W = xs.w;
  const std::int64_t Co = ws.n, kh = ws.h, kw = ws.w;
  const std::int64_t Ho = (H + 2 * padding - kh) / stride + 1;
  const std::int64_t Wo = (W + 2 * padding - kw) / stride + 1;
  if (Ho < 1 || Wo < 1) {
    throw ShapeError("conv2d: kernel " + ws.str() + " does not fit input " +
                     xs.str());
  }

  Tensor out({N, Co, Ho, Wo});
  const double* xp = input.values().data();
  const double* wp = weights.values().data();
  const double* bp = bias.values().data();
  double* yp = out.values_mut().data();

  const std::int64_t s = stride, p = padding;
  const std::int64_t patch = Ci * kh * kw;

  // Small outputs go through an im2col scratch buffer: each output pixel
  // becomes one contiguous dot product against a weight row, which is far
  // friendlier to the pipeline than the short strided loops below.
  if (patch * Ho * Wo <= (std::int64_t{1} << 22)) {
    parallel_for(N, 1, [&](std::int64_t nb, std::int64_t ne) {
      thread_local std::vector<double> scratch;
      scratch.assign(static_cast<std::size_t>(Ho * Wo * patch), 0.0);
      for (std::int64_t n = nb; n < ne; ++n) {
        for (std::int64_t oy = 0; oy < Ho; ++oy) {
          for (std::int64_t ox = 0; ox < Wo; ++ox) {
            double* row = scratch.data() + (oy * Wo + ox) * patch;
            std::int64_t at = 0;
            for (std::int64_t ci = 0; ci < Ci; ++ci) {
              const double* xc = xp + ((n * Ci + ci) * H) * W;
              for (std::int64_t ky = 0; ky < kh; ++ky) {
                const std::int64_t iy = oy * s + ky - p;
                for (std::int64_t kx = 0; kx < kw; ++kx) {
                  const std::int64_t ix = ox * s + kx - p;
                  row[at++] = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                  ? xc[iy * W + ix]
                                  : 0.0;
                }
              }
            }
          }
        }
        for (std::int64_t co = 0; co < Co; ++co) {
          const double* wrow = wp + co * patch;
          double* yrow = yp + ((n * Co + co) * Ho) * Wo;
          for (std::int64_t px = 0; px < Ho * Wo; ++px) {
            yrow[px] = bp[co] +
                       detail::dot8(wrow, scratch.data() + px * patch, patch);
          }
        }
      }
    });
  } else {
  auto forward_piece = [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t nc = begin; nc < end; ++nc) {
      const std::int64_t n = nc / Co;
      const std::int64_t co = nc % Co;
      double* ybase = yp + ((n * Co + co) * Ho) * Wo;
      std::fill(ybase, ybase + Ho * Wo, bp[co]);
      for (std::int64_t ci = 0; ci < Ci; ++ci) {
        const double* xc = xp + ((n * Ci + ci) * H) * W;
        const double* wc = wp + ((co * Ci + ci) * kh) * kw;
        for (std::int64_t ky = 0; ky < kh; ++ky) {
          for (std::int64_t kx = 0; kx < kw; ++kx) {
            const double wv = wc[ky * kw + kx];
            const std::int64_t oy_lo = detail::ceil_div_nonneg(p - ky, s);
            const std::int64_t oy_hi =
                std::min(Ho - 1, (H - 1 - ky + p) / s);
            const std::int64_t ox_lo = detail::ceil_div_nonneg(p - kx, s);
            const std::int64_t ox_hi =
                std::min(Wo - 1, (W - 1 - kx + p) / s);
            for (std::int64_t oy = oy_lo; oy <= oy_hi; ++oy) {
              const double* xrow = xc + (oy * s + ky - p) * W + (kx - p);
              double* yrow = ybase + oy * Wo;
              if (s == 1) {
                for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) {
                  yrow[ox] += wv * xrow[ox];
                }
              } else {
                for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) {
                  yrow[ox] += wv * xrow[ox * s];
                }
              }
            }
          }
        }
      }
    }
  };
  parallel_for(N * Co, std::max<std::int64_t>(1, 4096 / (Ho * Wo + 1)),
               forward_piece);
  }

  if (detail::want_grad(tape, {&input, &weights, &bias})) {
    out.set_requires_grad(true);
    Tensor x = input, w = weights, b = bias, y = out;
    tape->record({x, w, b, y}, [x, w, b, y, s, p]() mutable {
      const Shape xsh = x.shape(), wsh = w.shape(), ysh = y.shape();
      const std::int64_t N = xsh.n, Ci = xsh.c, H = xsh.h, W = xsh.w;
      const std::int64_t Co = wsh.n, kh = wsh.h, kw = wsh.w;
      const std::int64_t Ho = ysh.h, Wo = ysh.w;
      const double* gy = y.grad().data();
      const double* xp = x.values().data();
      const double* wp = w.values().data();
      const bool need_gx = x.requires_grad();
      const bool need_gw = w.requires_grad();
      const bool need_gb = b.requires_grad();
      double* gx = need_gx ? x.grad_mut().data() : nullptr;

      // Per-sample partials for the reduced gradients keep the result
      // independent of how samples are distributed over threads.
      const std::int64_t wcount = Co * Ci * kh * kw;
      std::vector<double> gw_part(
          need_gw ? static_cast<std::size_t>(N * wcount) : 0, 0.0);
      std::vector<double> gb_part(
          need_gb ? static_cast<std::size_t>(N * Co) : 0, 0.0);

      parallel_for(N, 1, [&](std::int64_t nb, std::int64_t ne) {
        for (std::int64_t n = nb; n < ne; ++n) {
          for (std::int64_t co = 0; co < Co; ++co) {
            const double* gyb = gy + ((n * Co + co) * Ho) * Wo;
            if (need_gb) {
              double acc = 0.0;
              for (std::int64_t i = 0; i < Ho * Wo; ++i) acc += gyb[i];
              gb_part[static_cast<std::size_t>(n * Co + co)] += acc;
            }
            for (std::int64_t ci = 0; ci < Ci; ++ci) {
              const double* xc = xp + ((n * Ci + ci) * H) * W;
              double* gxc = need_gx ? gx + ((n * Ci + ci) * H) * W : nullptr;
              const double* wc = wp + ((co * Ci + ci) * kh) * kw;
              double* gwc =
                  need_gw ? gw_part.data() + n * wcount +
                                ((co * Ci + ci) * kh) * kw
                          : nullptr;
              for (std::int64_t ky = 0; ky < kh; ++ky) {
                for (std::int64_t kx = 0; kx < kw; ++kx) {
                  const std::int64_t oy_lo = detail::ceil_div_nonneg(p - ky, s);
                  const std::int64_t oy_hi =
                      std::min(Ho - 1, (H - 1 - ky + p) / s);
                  const std::int64_t ox_lo = detail::ceil_div_nonneg(p - kx, s);
                  const std::int64_t ox_hi =
                      std::min(Wo - 1, (W - 1 - kx + p) / s);
                  double wacc = 0.0;
                  const double wv = wc[ky * kw + kx];
                  for (std::int64_t oy = oy_lo; oy <= oy_hi; ++oy) {
                    const std::int64_t row_off = (oy * s + ky - p) * W + (kx - p);
                    const double* xrow = xc + row_off;
                    const double* gyrow = gyb + oy * Wo;
                    if (need_gw) {
                      for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) {
                        wacc += gyrow[ox] * xrow[ox * s];
                      }
                    }
                    if (need_gx) {
                      double* gxrow = gxc + row_off;
                      for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) {
                        gxrow[ox * s] += wv * gyrow[ox];
                      }
                    }
                  }
                  if (need_gw) gwc[ky * kw + kx] += wacc;
                }
              }
            }
          }
        }
      });

      if (need_gw) {
        double* gw = w.grad_mut().data();
        for (std::int64_t n = 0; n < N; ++n) {
          const double* part = gw_part.data() + n * wcount;
          for (std::int64_t i = 0; i < wcount; ++i) gw[i] += part[i];
        }
      }
      if (need_gb) {
        double* gb = b.grad_mut().data();
        for (std::int64_t n = 0; n < N; ++n) {
          for (std::int64_t co = 0; co < Co; ++co) {
            gb[co] += gb_part[static_cast<std::size_t>(n * Co + co)];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// maxpool2d

// Max pooling. With same_pad (stride must be 1) the window anchored at each
// pixel is clamped at the bottom/right edges, so the spatial size is
// preserved; this equals padding with a -inf sentinel. Gradient is routed to
// the first argmax in row-major window order.
inline Tensor maxpool2d(Tape* tape, const Tensor& input, std::int64_t kernel,
                        std::int64_t stride, bool same_pad = false) {
  if (kernel < 1) throw ValueError("maxpool2d: kernel must be positive");
  if (stride < 1) throw ValueError("maxpool2d: stride must be positive");
  if (stride > kernel) {
    throw ValueError("maxpool2d: stride " + std::to_string(stride) +
                     " larger than kernel " + std::to_string(kernel) +
                     " would discard input");
  }
  if (same_pad && stride != 1) {
    throw ValueError("maxpool2d: same_pad requires stride 1");
  }
  const Shape xs = input.shape();
  const std::int64_t N = xs.n, C = xs.c, H = xs.h, W = xs.w;
  const std::int64_t Ho = same_pad ? H : (H - kernel) / stride + 1;
  const std::int64_t Wo = same_pad ? W : (W - kernel) / stride + 1;
  if (Ho < 1 || Wo < 1) {
    throw ShapeError("maxpool2d: kernel " + std::to_string(kernel) +
                     " does not fit input " + xs.str());
  }

  Tensor out({N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(out.size()));
  const double* xp = input.values().data();
  double* yp = out.values_mut().data();
  std::int64_t* ap = argmax->data();

  parallel_for(N * C, 4, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t nc = begin; nc < end; ++nc) {
      const double* xc = xp + nc * H * W;
      double* yc = yp + nc * Ho * Wo;
      std::int64_t* ac = ap + nc * Ho * Wo;
      for (std::int64_t oy = 0; oy < Ho; ++oy) {
        for (std::int64_t ox = 0; ox < Wo; ++ox) {
          const std::int64_t y0 = oy * stride;
          const std::int64_t x0 = ox * stride;
          const std::int64_t y1 = std::min(y0 + kernel, H);
          const std::int64_t x1 = std::min(x0 + kernel, W);
          double best = xc[y0 * W + x0];
          std::int64_t best_at = y0 * W + x0;
          for (std::int64_t iy = y0; iy < y1; ++iy) {
            for (std::int64_t ix = x0; ix < x1; ++ix) {
              const double v = xc[iy * W + ix];
              if (v > best) {
                best = v;
                best_at = iy * W + ix;
              }
            }
          }
          yc[oy * Wo + ox] = best;
          ac[oy * Wo + ox] = nc * H * W + best_at;
        }
      }
    }
  });

  if (detail::want_grad(tape, {&input})) {
    out.set_requires_grad(true);
    Tensor x = input, y = out;
    tape->record({x, y}, [x, y, argmax]() mutable {
      const double* gy = y.grad().data();
      double* gx = x.grad_mut().data();
      const std::int64_t count = y.size();
      const auto& am = *argmax;
      for (std::int64_t i = 0; i < count; ++i) {
        gx[am[static_cast<std::size_t>(i)]] += gy[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// relu

inline Tensor relu(Tape* tape, const Tensor& input) {
  Tensor out(input.shape());
  const double* xp = input.values().data();
  double* yp = out.values_mut().data();
  const std::int64_t count = input.size();
  for (std::int64_t i = 0; i < count; ++i) {
    yp[i] = xp[i] > 0.0 ? xp[i] : 0.0;
  }
  if (detail::want_grad(tape, {&input})) {
    out.set_requires_grad(true);
    Tensor x = input, y = out;
    tape->record({x, y}, [x, y]() mutable {
      const double* gy = y.grad().data();
      const double* xv = x.values().data();
      double* gx = x.grad_mut().data();
      const std::int64_t n = x.size();
      for (std::int64_t i = 0; i < n; ++i) {
        if (xv[i] > 0.0) gx[i] += gy[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// dropout

// Inverted dropout: at training time each element survives with probability
// retain_prob and is scaled by 1/retain_prob; at inference the op is the
// identity. Mask draws consume the rng sequentially in element order.
inline Tensor dropout(Tape* tape, const Tensor& input, double retain_prob,
                      RngState& rng, bool training) {
  if (!(retain_prob > 0.0) || retain_prob > 1.0) {
    throw ValueError("dropout: retain probability " +
                     std::to_string(retain_prob) + " outside (0, 1]");
  }
  if (!training || retain_prob == 1.0) return input;

  Tensor out(input.shape());
  auto factor = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(input.size()));
  const double inv = 1.0 / retain_prob;
  const double* xp = input.values().data();
  double* yp = out.values_mut().data();
  double* fp = factor->data();
  const std::int64_t count = input.size();
  for (std::int64_t i = 0; i < count; ++i) {
    const double f = rng.next_double() < retain_prob ? inv : 0.0;
    fp[i] = f;
    yp[i] = f * xp[i];
  }
  if (detail::want_grad(tape, {&input})) {
    out.set_requires_grad(true);
    Tensor x = input, y = out;
    tape->record({x, y}, [x, y, factor]() mutable {
      const double* gy = y.grad().data();
      double* gx = x.grad_mut().data();
      const double* fp = factor->data();
      const std::int64_t n = x.size();
      for (std::int64_t i = 0; i < n; ++i) gx[i] += fp[i] * gy[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// concat_channels

inline Tensor concat_channels(Tape* tape, const std::vector<Tensor>& inputs) {
  if (inputs.empty()) throw ValueError("concat_channels: no inputs");
  const Shape first = inputs.front().shape();
  std::int64_t ctotal = 0;
  for (const Tensor& t : inputs) {
    const Shape s = t.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: input " + s.str() +
                       " does not match " + first.str());
    }
    ctotal += s.c;
  }
  Tensor out({first.n, ctotal, first.h, first.w});
  const std::int64_t plane = first.h * first.w;
  double* yp = out.values_mut().data();
  for (std::int64_t n = 0; n < first.n; ++n) {
    double* dst = yp + n * ctotal * plane;
    for (const Tensor& t : inputs) {
      const std::int64_t block = t.shape().c * plane;
      std::memcpy(dst, t.values().data() + n * block,
                  static_cast<std::size_t>(block) * sizeof(double));
      dst += block;
    }
  }

  bool any_grad = false;
  for (const Tensor& t : inputs) any_grad |= t.requires_grad();
  if (tape && any_grad) {
    out.set_requires_grad(true);
    std::vector<Tensor> rec = inputs;
    rec.push_back(out);
    Tensor y = out;
    std::vector<Tensor> ins = inputs;
    tape->record(std::move(rec), [ins, y, ctotal, plane]() mutable {
      const double* gy = y.grad().data();
      const std::int64_t N = y.shape().n;
      for (std::int64_t n = 0; n < N; ++n) {
        const double* src = gy + n * ctotal * plane;
        for (Tensor& t : ins) {
          const std::int64_t block = t.shape().c * plane;
          if (t.requires_grad()) {
            double* gt = t.grad_mut().data() + n * block;
            for (std::int64_t i = 0; i < block; ++i) gt[i] += src[i];
          }
          src += block;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reduce

enum class ReduceOp { Sum, Mean, Variance, Max };

// Full reduction to a scalar tensor. Variance is the population variance
// (divisor = element count). Max routes its gradient to the first argmax in
// row-major order.
inline Tensor reduce(Tape* tape, const Tensor& input, ReduceOp op) {
  const std::int64_t count = input.size();
  if (count == 0) throw ValueError("reduce: empty tensor");
  const double* xp = input.values().data();

  double value = 0.0;
  std::int64_t max_at = 0;
  double mean = 0.0;
  switch (op) {
    case ReduceOp::Sum:
    case ReduceOp::Mean: {
      double acc = 0.0;
      for (std::int64_t i = 0; i < count; ++i) acc += xp[i];
      value = op == ReduceOp::Sum ? acc : acc / static_cast<double>(count);
      break;
    }
    case ReduceOp::Variance: {
      double acc = 0.0;
      for (std::int64_t i = 0; i < count; ++i) acc += xp[i];
      mean = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::int64_t i = 0; i < count; ++i) {
        const double d = xp[i] - mean;
        sq += d * d;
      }
      value = sq / static_cast<double>(count);
      break;
    }
    case ReduceOp::Max: {
      double best = xp[0];
      for (std::int64_t i = 1; i < count; ++i) {
        if (xp[i] > best) {
          best = xp[i];
          max_at = i;
        }
      }
      value = best;
      break;
    }
  }

  Tensor out = Tensor::scalar(value);
  if (detail::want_grad(tape, {&input})) {
    out.set_requires_grad(true);
    Tensor x = input, y = out;
    tape->record({x, y}, [x, y, op, max_at, mean]() mutable {
      const double g = y.grad()[0];
      double* gx = x.grad_mut().data();
      const double* xv = x.values().data();
      const std::int64_t n = x.size();
      switch (op) {
        case ReduceOp::Sum:
          for (std::int64_t i = 0; i < n; ++i) gx[i] += g;
          break;
        case ReduceOp::Mean: {
          const double gi = g / static_cast<double>(n);
          for (std::int64_t i = 0; i < n; ++i) gx[i] += gi;
          break;
        }
        case ReduceOp::Variance: {
          const double scale = 2.0 * g / static_cast<double>(n);
          for (std::int64_t i = 0; i < n; ++i) {
            gx[i] += scale * (xv[i] - mean);
          }
          break;
        }
        case ReduceOp::Max:
          gx[max_at] += g;
          break;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise and scalar plumbing

// Elementwise product. `b` may have batch extent 1 with otherwise matching
// shape, in which case it is broadcast over the batch of `a`.
inline Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  const Shape as = a.shape(), bs = b.shape();
  const bool broadcast = bs.n == 1 && as.n != 1;
  if (!(as == bs ||
        (broadcast && bs.c == as.c && bs.h == as.h && bs.w == as.w))) {
    throw ShapeError("mul: shapes " + as.str() + " and " + bs.str() +
                     " do not match");
  }
  Tensor out(as);
  const std::int64_t block = as.c * as.h * as.w;
  const double* ap = a.values().data();
  const double* bp = b.values().data();
  double* yp = out.values_mut().data();
  for (std::int64_t n = 0; n < as.n; ++n) {
    const double* brow = broadcast ? bp : bp + n * block;
    for (std::int64_t i = 0; i < block; ++i) {
      yp[n * block + i] = ap[n * block + i] * brow[i];
    }
  }
  if (detail::want_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, y = out;
    tape->record({ta, tb, y}, [ta, tb, y, broadcast, block]() mutable {
      const double* gy = y.grad().data();
      const double* av = ta.values().data();
      const double* bv = tb.values().data();
      const std::int64_t N = ta.shape().n;
      if (ta.requires_grad()) {
        double* ga = ta.grad_mut().data();
        for (std::int64_t n = 0; n < N; ++n) {
          const double* brow = broadcast ? bv : bv + n * block;
          for (std::int64_t i = 0; i < block; ++i) {
            ga[n * block + i] += gy[n * block + i] * brow[i];
          }
        }
      }
      if (tb.requires_grad()) {
        double* gb = tb.grad_mut().data();
        for (std::int64_t n = 0; n < N; ++n) {
          double* brow = broadcast ? gb : gb + n * block;
          for (std::int64_t i = 0; i < block; ++i) {
            brow[i] += gy[n * block + i] * av[n * block + i];
          }
        }
      }
    });
  }
  return out;
}

inline Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("add: shapes " + a.shape().str() + " and " +
                     b.shape().str() + " do not match");
  }
  Tensor out(a.shape());
  const double* ap = a.values().data();
  const double* bp = b.values().data();
  double* yp = out.values_mut().data();
  const std::int64_t n = a.size();
  for (std::int64_t i = 0; i < n; ++i) yp[i] = ap[i] + bp[i];
  if (detail::want_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, y = out;
    tape->record({ta, tb, y}, [ta, tb, y]() mutable {
      const double* gy = y.grad().data();
      const std::int64_t n = y.size();
      if (ta.requires_grad()) {
        double* ga = ta.grad_mut().data();
        for (std::int64_t i = 0; i < n; ++i) ga[i] += gy[i];
      }
      if (tb.requires_grad()) {
        double* gb = tb.grad_mut().data();
        for (std::int64_t i = 0; i < n; ++i) gb[i] += gy[i];
      }
    });
  }
  return out;
}

// out = x - c for a constant array c (no gradient into c).
inline Tensor sub_const(Tape* tape, const Tensor& x,
                        std::span<const double> c) {
  if (static_cast<std::int64_t>(c.size()) != x.size()) {
    throw ShapeError("sub_const: constant size " + std::to_string(c.size()) +
                     " does not match tensor " + x.shape().str());
  }
  Tensor out(x.shape());
  const double* xp = x.values().data();
  double* yp = out.values_mut().data();
  const std::int64_t n = x.size();
  for (std::int64_t i = 0; i < n; ++i) yp[i] = xp[i] - c[i];
  if (detail::want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, y = out;
    tape->record({tx, y}, [tx, y]() mutable {
      const double* gy = y.grad().data();
      double* gx = tx.grad_mut().data();
      const std::int64_t n = y.size();
      for (std::int64_t i = 0; i < n; ++i) gx[i] += gy[i];
    });
  }
  return out;
}

// out = x .* c for a constant array c.
inline Tensor mul_const(Tape* tape, const Tensor& x,
                        std::span<const double> c) {
  if (static_cast<std::int64_t>(c.size()) != x.size()) {
    throw ShapeError("mul_const: constant size " + std::to_string(c.size()) +
                     " does not match tensor " + x.shape().str());
  }
  Tensor out(x.shape());
  const double* xp = x.values().data();
  double* yp = out.values_mut().data();
  const std::int64_t n = x.size();
  for (std::int64_t i = 0; i < n; ++i) yp[i] = xp[i] * c[i];
  if (detail::want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, y = out;
    std::vector<double> cc(c.begin(), c.end());
    tape->record({tx, y}, [tx, y, cc = std::move(cc)]() mutable {
      const double* gy = y.grad().data();
      double* gx = tx.grad_mut().data();
      const std::int64_t n = y.size();
      for (std::int64_t i = 0; i < n; ++i) gx[i] += gy[i] * cc[i];
    });
  }
  return out;
}

// out = c - x elementwise for a scalar constant c.
inline Tensor rsub_const(Tape* tape, double c, const Tensor& x) {
  Tensor out(x.shape());
  const double* xp = x.values().data();
  double* yp = out.values_mut().data();
  const std::int64_t n = x.size();
  for (std::int64_t i = 0; i < n; ++i) yp[i] = c - xp[i];
  if (detail::want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, y = out;
    tape->record({tx, y}, [tx, y]() mutable {
      const double* gy = y.grad().data();
      double* gx = tx.grad_mut().data();
      const std::int64_t n = y.size();
      for (std::int64_t i = 0; i < n; ++i) gx[i] -= gy[i];
    });
  }
  return out;
}

// out = c * x for a scalar constant c.
inline Tensor scale(Tape* tape, const Tensor& x, double c) {
  Tensor out(x.shape());
  const double* xp = x.values().data();
  double* yp = out.values_mut().data();
  const std::int64_t n = x.size();
  for (std::int64_t i = 0; i < n; ++i) yp[i] = c * xp[i];
  if (detail::want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, y = out;
    tape->record({tx, y}, [tx, y, c]() mutable {
      const double* gy = y.grad().data();
      double* gx = tx.grad_mut().data();
      const std::int64_t n = y.size();
      for (std::int64_t i = 0; i < n; ++i) gx[i] += c * gy[i];
    });
  }
  return out;
}

// out = x / m where m is a scalar tensor; differentiable in both. The
// gradient into m is -sum(g .* x) / m^2, i.e. the max-normalization
// subgradient path when m came from reduce(..., Max).
inline Tensor div_scalar(Tape* tape, const Tensor& x, const Tensor& m) {
  if (m.size() != 1) {
    throw ShapeError("div_scalar: divisor must be scalar, got " +
                     m.shape().str());
  }
  const double mv = m.item();
  Tensor out(x.shape());
  const double* xp = x.values().data();
  double* yp = out.values_mut().data();
  const std::int64_t n = x.size();
  for (std::int64_t i = 0; i < n; ++i) yp[i] = xp[i] / mv;
  if (detail::want_grad(tape, {&x, &m})) {
    out.set_requires_grad(true);
    Tensor tx = x, tm = m, y = out;
    tape->record({tx, tm, y}, [tx, tm, y, mv]() mutable {
      const double* gy = y.grad().data();
      const double* xv = tx.values().data();
      const std::int64_t n = y.size();
      if (tx.requires_grad()) {
        double* gx = tx.grad_mut().data();
        for (std::int64_t i = 0; i < n; ++i) gx[i] += gy[i] / mv;
      }
      if (tm.requires_grad()) {
        double dot = 0.0;
        for (std::int64_t i = 0; i < n; ++i) dot += gy[i] * xv[i];
        tm.grad_mut()[0] -= dot / (mv * mv);
      }
    });
  }
  return out;
}

// Sum of squared elements, as a scalar tensor.
inline Tensor sum_squares(Tape* tape, const Tensor& x) {
  const double* xp = x.values().data();
  const std::int64_t n = x.size();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) acc += xp[i] * xp[i];
  Tensor out = Tensor::scalar(acc);
  if (detail::want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, y = out;
    tape->record({tx, y}, [tx, y]() mutable {
      const double g = y.grad()[0];
      const double* xv = tx.values().data();
      double* gx = tx.grad_mut().data();
      const std::int64_t n = tx.size();
      for (std::int64_t i = 0; i < n; ++i) gx[i] += (2.0 * xv[i]) * g;
    });
  }
  return out;
}

// Single sample [1,C,H,W] out of a batch; backward scatters into that sample.
inline Tensor slice_batch(Tape* tape, const Tensor& x, std::int64_t i) {
  const Shape s = x.shape();
  if (i < 0 || i >= s.n) {
    throw ShapeError("slice_batch: index " + std::to_string(i) +
                     " out of range for " + s.str());
  }
  const std::int64_t block = s.c * s.h * s.w;
  Tensor out({1, s.c, s.h, s.w});
  std::memcpy(out.values_mut().data(), x.values().data() + i * block,
              static_cast<std::size_t>(block) * sizeof(double));
  if (detail::want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, y = out;
    tape->record({tx, y}, [tx, y, i, block]() mutable {
      const double* gy = y.grad().data();
      double* gx = tx.grad_mut().data() + i * block;
      for (std::int64_t k = 0; k < block; ++k) gx[k] += gy[k];
    });
  }
  return out;
}

}  // namespace mlnet
