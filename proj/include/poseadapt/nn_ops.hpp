#pragma once

#include <Eigen/Core>

#include <cmath>
#include <vector>

#include "poseadapt/autodiff.hpp"
#include "poseadapt/geometry.hpp"

namespace poseadapt {

namespace detail {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

}  // namespace detail

// ---------------------------------------------------------------------------
// Dense linear algebra.
// ---------------------------------------------------------------------------

inline Value matmul(const Value& a, const Value& b) {
  const Tensor& ta = a.val();
  const Tensor& tb = b.val();
  if (ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0]) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(ta.shape()) + " x " +
                                shape_str(tb.shape()));
  }
  const auto m = ta.shape()[0], k = ta.shape()[1], n = tb.shape()[1];
  Tensor out({m, n});
  detail::ECMap A(ta.data(), m, k);
  detail::ECMap B(tb.data(), k, n);
  detail::EMap(out.data(), m, n).noalias() = A * B;

  auto na = a.node();
  auto nb = b.node();
  return make_op(std::move(out), {a, b}, [na, nb, m, k, n](detail::Node& self) {
    detail::ECMap G(self.grad.data(), m, n);
    if (na->requires_grad) {
      detail::ECMap B(nb->value.data(), k, n);
      detail::EMap(na->ensure_grad().data(), m, k).noalias() += G * B.transpose();
    }
    if (nb->requires_grad) {
      detail::ECMap A(na->value.data(), m, k);
      detail::EMap(nb->ensure_grad().data(), k, n).noalias() += A.transpose() * G;
    }
  });
}

inline Value transpose(const Value& a) {
  const Tensor& ta = a.val();
  if (ta.rank() != 2) throw std::invalid_argument("transpose: expected rank 2, got " + shape_str(ta.shape()));
  const auto m = ta.shape()[0], n = ta.shape()[1];
  Tensor out({n, m});
  detail::EMap(out.data(), n, m) = detail::ECMap(ta.data(), m, n).transpose();
  auto na = a.node();
  return make_op(std::move(out), {a}, [na, m, n](detail::Node& self) {
    if (!na->requires_grad) return;
    detail::EMap(na->ensure_grad().data(), m, n) +=
        detail::ECMap(self.grad.data(), n, m).transpose();
  });
}

// ---------------------------------------------------------------------------
// Softmax.
// ---------------------------------------------------------------------------

// Numerically stable softmax along one axis.
inline Value softmax(const Value& a, std::size_t axis) {
  const Tensor& ta = a.val();
  if (axis >= ta.rank()) {
    throw std::invalid_argument("softmax: axis " + std::to_string(axis) + " out of range for " +
                                shape_str(ta.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= ta.shape()[d];
  for (std::size_t d = axis + 1; d < ta.rank(); ++d) inner *= ta.shape()[d];
  const std::size_t n = ta.shape()[axis];

  Tensor out(ta.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      double mx = ta[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, ta[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        double e = std::exp(ta[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
    }
  }

  auto na = a.node();
  return make_op(std::move(out), {a}, [na, outer, inner, n](detail::Node& self) {
    if (!na->requires_grad) return;
    Tensor& dst = na->ensure_grad();
    const Tensor& g = self.grad;
    const Tensor& s = self.value;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * n * inner + i;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * s[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          dst[base + j * inner] += s[base + j * inner] * (g[base + j * inner] - dot);
        }
      }
    }
  });
}

// Softmax jointly over the last two (spatial) axes.
inline Value spatial_softmax(const Value& a) {
  const Shape& s = a.shape();
  if (s.size() < 2) {
    throw std::invalid_argument("spatial_softmax: need at least 2 axes, got " + shape_str(s));
  }
  Shape flat(s.begin(), s.end() - 2);
  flat.push_back(s[s.size() - 2] * s[s.size() - 1]);
  return reshape(softmax(reshape(a, flat), flat.size() - 1), s);
}

// ---------------------------------------------------------------------------
// 2D convolution (stride, symmetric zero padding).
// ---------------------------------------------------------------------------

namespace detail {

inline void im2col(const double* x, std::size_t cin, std::size_t h, std::size_t w, std::size_t kh,
                   std::size_t kw, std::size_t stride, std::size_t pad, std::size_t ho,
                   std::size_t wo, double* col) {
  // col is [cin*kh*kw, ho*wo] row-major.
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        double* row = col + ((c * kh + ki) * kw + kj) * ho * wo;
        for (std::size_t oi = 0; oi < ho; ++oi) {
          const long ii = static_cast<long>(oi * stride + ki) - static_cast<long>(pad);
          if (ii < 0 || ii >= static_cast<long>(h)) {
            for (std::size_t oj = 0; oj < wo; ++oj) row[oi * wo + oj] = 0.0;
            continue;
          }
          const double* src = x + (c * h + ii) * w;
          for (std::size_t oj = 0; oj < wo; ++oj) {
            const long jj = static_cast<long>(oj * stride + kj) - static_cast<long>(pad);
            row[oi * wo + oj] = (jj < 0 || jj >= static_cast<long>(w)) ? 0.0 : src[jj];
          }
        }
      }
    }
  }
}

inline void col2im_accum(const double* col, std::size_t cin, std::size_t h, std::size_t w,
                         std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad,
                         std::size_t ho, std::size_t wo, double* x) {
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const double* row = col + ((c * kh + ki) * kw + kj) * ho * wo;
        for (std::size_t oi = 0; oi < ho; ++oi) {
          const long ii = static_cast<long>(oi * stride + ki) - static_cast<long>(pad);
          if (ii < 0 || ii >= static_cast<long>(h)) continue;
          double* dst = x + (c * h + ii) * w;
          for (std::size_t oj = 0; oj < wo; ++oj) {
            const long jj = static_cast<long>(oj * stride + kj) - static_cast<long>(pad);
            if (jj >= 0 && jj < static_cast<long>(w)) dst[jj] += row[oi * wo + oj];
          }
        }
      }
    }
  }
}

}  // namespace detail

// x: [B,Cin,H,W], w: [Cout,Cin,kh,kw], b: [Cout] (may be undefined for no bias).
inline Value conv2d(const Value& x, const Value& w, const Value& b, std::size_t stride = 1,
                    std::size_t pad = 0) {
  const Tensor& tx = x.val();
  const Tensor& tw = w.val();
  if (tx.rank() != 4 || tw.rank() != 4 || tx.shape()[1] != tw.shape()[1]) {
    throw std::invalid_argument("conv2d: incompatible shapes " + shape_str(tx.shape()) + " vs " +
                                shape_str(tw.shape()));
  }
  const std::size_t bsz = tx.shape()[0], cin = tx.shape()[1], h = tx.shape()[2], wdt = tx.shape()[3];
  const std::size_t cout = tw.shape()[0], kh = tw.shape()[2], kw = tw.shape()[3];
  if (h + 2 * pad < kh || wdt + 2 * pad < kw) {
    throw std::invalid_argument("conv2d: kernel larger than padded input");
  }
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::size_t wo = (wdt + 2 * pad - kw) / stride + 1;
  const bool has_bias = b.defined();
  if (has_bias && b.val().size() != cout) {
    throw std::invalid_argument("conv2d: bias shape " + shape_str(b.val().shape()) +
                                " does not match " + std::to_string(cout) + " output channels");
  }

  const std::size_t krows = cin * kh * kw;
  Tensor out({bsz, cout, ho, wo});
  std::vector<double> col(krows * ho * wo);
  detail::ECMap W(tw.data(), cout, krows);
  for (std::size_t n = 0; n < bsz; ++n) {
    detail::im2col(tx.data() + n * cin * h * wdt, cin, h, wdt, kh, kw, stride, pad, ho, wo,
                   col.data());
    detail::ECMap C(col.data(), krows, ho * wo);
    detail::EMap O(out.data() + n * cout * ho * wo, cout, ho * wo);
    O.noalias() = W * C;
    if (has_bias) {
      const double* pb = b.val().data();
      for (std::size_t c = 0; c < cout; ++c) O.row(c).array() += pb[c];
    }
  }

  auto nx = x.node();
  auto nw = w.node();
  auto nb = has_bias ? b.node() : nullptr;
  std::vector<Value> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return make_op(std::move(out), std::move(inputs),
                 [nx, nw, nb, bsz, cin, h, wdt, cout, kh, kw, stride, pad, ho, wo,
                  krows](detail::Node& self) {
    const Tensor& g = self.grad;
    std::vector<double> col(krows * ho * wo);
    detail::ECMap W(nw->value.data(), cout, krows);
    for (std::size_t n = 0; n < bsz; ++n) {
      detail::ECMap G(g.data() + n * cout * ho * wo, cout, ho * wo);
      if (nw->requires_grad || nb) {
        if (nw->requires_grad) {
          detail::im2col(nx->value.data() + n * cin * h * wdt, cin, h, wdt, kh, kw, stride, pad,
                         ho, wo, col.data());
          detail::ECMap C(col.data(), krows, ho * wo);
          detail::EMap(nw->ensure_grad().data(), cout, krows).noalias() += G * C.transpose();
        }
        if (nb && nb->requires_grad) {
          // Sequential accumulation: Eigen's vectorized redux orders the sum
          // by the buffer's SIMD alignment, which varies with the allocation
          // and breaks bit-exact reruns.
          double* db = nb->ensure_grad().data();
          const double* gp = g.data() + n * cout * ho * wo;
          for (std::size_t c = 0; c < cout; ++c) {
            double acc = 0.0;
            const double* row = gp + c * ho * wo;
            for (std::size_t i = 0; i < ho * wo; ++i) acc += row[i];
            db[c] += acc;
          }
        }
      }
      if (nx->requires_grad) {
        detail::EMap C(col.data(), krows, ho * wo);
        C.noalias() = W.transpose() * G;
        detail::col2im_accum(col.data(), cin, h, wdt, kh, kw, stride, pad, ho, wo,
                             nx->ensure_grad().data() + n * cin * h * wdt);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Pooling and upsampling.
// ---------------------------------------------------------------------------

// Max pooling with square kernel; ties go to the smallest row-major index.
inline Value maxpool2d(const Value& x, std::size_t k, std::size_t stride) {
  const Tensor& tx = x.val();
  if (tx.rank() != 4) throw std::invalid_argument("maxpool2d: expected [B,C,H,W], got " + shape_str(tx.shape()));
  const std::size_t bsz = tx.shape()[0], c = tx.shape()[1], h = tx.shape()[2], w = tx.shape()[3];
  if (h < k || w < k) throw std::invalid_argument("maxpool2d: kernel larger than input");
  const std::size_t ho = (h - k) / stride + 1, wo = (w - k) / stride + 1;

  Tensor out({bsz, c, ho, wo});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t n = 0; n < bsz * c; ++n) {
    const double* plane = tx.data() + n * h * w;
    for (std::size_t oi = 0; oi < ho; ++oi) {
      for (std::size_t oj = 0; oj < wo; ++oj) {
        double best = -1e308;
        std::size_t best_idx = 0;
        for (std::size_t ki = 0; ki < k; ++ki) {
          for (std::size_t kj = 0; kj < k; ++kj) {
            const std::size_t idx = (oi * stride + ki) * w + oj * stride + kj;
            if (plane[idx] > best) {
              best = plane[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t o = (n * ho + oi) * wo + oj;
        out[o] = best;
        argmax[o] = n * h * w + best_idx;
      }
    }
  }

  auto nx = x.node();
  return make_op(std::move(out), {x}, [nx, argmax = std::move(argmax)](detail::Node& self) {
    if (!nx->requires_grad) return;
    Tensor& dst = nx->ensure_grad();
    const Tensor& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) dst[argmax[i]] += g[i];
  });
}

inline Value upsample_nearest2d(const Value& x, std::size_t factor) {
  const Tensor& tx = x.val();
  if (tx.rank() != 4) throw std::invalid_argument("upsample_nearest2d: expected [B,C,H,W], got " + shape_str(tx.shape()));
  const std::size_t nc = tx.shape()[0] * tx.shape()[1], h = tx.shape()[2], w = tx.shape()[3];
  const std::size_t ho = h * factor, wo = w * factor;
  Tensor out({tx.shape()[0], tx.shape()[1], ho, wo});
  for (std::size_t n = 0; n < nc; ++n) {
    const double* src = tx.data() + n * h * w;
    double* dst = out.data() + n * ho * wo;
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) dst[i * wo + j] = src[(i / factor) * w + j / factor];
    }
  }
  auto nx = x.node();
  return make_op(std::move(out), {x}, [nx, nc, h, w, factor, ho, wo](detail::Node& self) {
    if (!nx->requires_grad) return;
    Tensor& dst = nx->ensure_grad();
    const Tensor& g = self.grad;
    for (std::size_t n = 0; n < nc; ++n) {
      const double* gs = g.data() + n * ho * wo;
      double* d = dst.data() + n * h * w;
      for (std::size_t i = 0; i < ho; ++i) {
        for (std::size_t j = 0; j < wo; ++j) d[(i / factor) * w + j / factor] += gs[i * wo + j];
      }
    }
  });
}

// Bilinear upsampling with half-pixel centers and edge clamping.
inline Value upsample_bilinear2d(const Value& x, std::size_t factor) {
  const Tensor& tx = x.val();
  if (tx.rank() != 4) throw std::invalid_argument("upsample_bilinear2d: expected [B,C,H,W], got " + shape_str(tx.shape()));
  const std::size_t nc = tx.shape()[0] * tx.shape()[1], h = tx.shape()[2], w = tx.shape()[3];
  const std::size_t ho = h * factor, wo = w * factor;

  // Per output row/col: source taps and weights (shared across channels).
  auto make_taps = [factor](std::size_t out_n, std::size_t in_n) {
    std::vector<std::size_t> lo(out_n), hi(out_n);
    std::vector<double> t(out_n);
    for (std::size_t i = 0; i < out_n; ++i) {
      double src = (static_cast<double>(i) + 0.5) / static_cast<double>(factor) - 0.5;
      src = std::max(0.0, std::min(src, static_cast<double>(in_n - 1)));
      const std::size_t l = static_cast<std::size_t>(src);
      lo[i] = l;
      hi[i] = std::min(l + 1, in_n - 1);
      t[i] = src - static_cast<double>(l);
    }
    return std::tuple(lo, hi, t);
  };
  auto [rlo, rhi, rt] = make_taps(ho, h);
  auto [clo, chi, ct] = make_taps(wo, w);

  Tensor out({tx.shape()[0], tx.shape()[1], ho, wo});
  for (std::size_t n = 0; n < nc; ++n) {
    const double* src = tx.data() + n * h * w;
    double* dst = out.data() + n * ho * wo;
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        const double a = src[rlo[i] * w + clo[j]], b = src[rlo[i] * w + chi[j]];
        const double c = src[rhi[i] * w + clo[j]], d = src[rhi[i] * w + chi[j]];
        dst[i * wo + j] = (1 - rt[i]) * ((1 - ct[j]) * a + ct[j] * b) +
                          rt[i] * ((1 - ct[j]) * c + ct[j] * d);
      }
    }
  }

  auto nx = x.node();
  return make_op(std::move(out), {x},
                 [nx, nc, h, w, ho, wo, rlo = std::move(rlo), rhi = std::move(rhi),
                  rt = std::move(rt), clo = std::move(clo), chi = std::move(chi),
                  ct = std::move(ct)](detail::Node& self) {
    if (!nx->requires_grad) return;
    Tensor& dst = nx->ensure_grad();
    const Tensor& g = self.grad;
    for (std::size_t n = 0; n < nc; ++n) {
      const double* gs = g.data() + n * ho * wo;
      double* d = dst.data() + n * h * w;
      for (std::size_t i = 0; i < ho; ++i) {
        for (std::size_t j = 0; j < wo; ++j) {
          const double gv = gs[i * wo + j];
          d[rlo[i] * w + clo[j]] += (1 - rt[i]) * (1 - ct[j]) * gv;
          d[rlo[i] * w + chi[j]] += (1 - rt[i]) * ct[j] * gv;
          d[rhi[i] * w + clo[j]] += rt[i] * (1 - ct[j]) * gv;
          d[rhi[i] * w + chi[j]] += rt[i] * ct[j] * gv;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Affine warping of grid-shaped values (bilinear gather, zero padding).
// ---------------------------------------------------------------------------

// maps[n] sends an output pixel (x,y) to its source location in x's grid.
// The warp is linear in x, so the pullback is the exact transpose scatter.
inline Value warp_affine(const Value& x, const std::vector<Affine2>& maps) {
  const Tensor& tx = x.val();
  if (tx.rank() != 4) throw std::invalid_argument("warp_affine: expected [B,C,H,W], got " + shape_str(tx.shape()));
  const std::size_t bsz = tx.shape()[0], ch = tx.shape()[1], h = tx.shape()[2], w = tx.shape()[3];
  if (maps.size() != bsz) {
    throw std::invalid_argument("warp_affine: " + std::to_string(maps.size()) + " maps for batch " +
                                std::to_string(bsz));
  }

  // Precompute taps: per sample, per output pixel, 4 source indices + weights.
  struct Tap {
    std::int32_t idx[4];
    double wgt[4];
  };
  auto taps = std::make_shared<std::vector<Tap>>(bsz * h * w);
  for (std::size_t n = 0; n < bsz; ++n) {
    const Affine2& mp = maps[n];
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        Vec2 s = mp.apply({static_cast<double>(j), static_cast<double>(i)});
        Tap t{};
        const double fx = std::floor(s.x), fy = std::floor(s.y);
        const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
        const double ax = s.x - fx, ay = s.y - fy;
        const double wts[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
        const long xs[4] = {x0, x0 + 1, x0, x0 + 1};
        const long ys[4] = {y0, y0, y0 + 1, y0 + 1};
        for (int q = 0; q < 4; ++q) {
          const bool inside = xs[q] >= 0 && xs[q] < static_cast<long>(w) && ys[q] >= 0 &&
                              ys[q] < static_cast<long>(h);
          t.idx[q] = inside ? static_cast<std::int32_t>(ys[q] * w + xs[q]) : -1;
          t.wgt[q] = wts[q];
        }
        (*taps)[(n * h + i) * w + j] = t;
      }
    }
  }

  Tensor out(tx.shape());
  for (std::size_t n = 0; n < bsz; ++n) {
    for (std::size_t c = 0; c < ch; ++c) {
      const double* src = tx.data() + (n * ch + c) * h * w;
      double* dst = out.data() + (n * ch + c) * h * w;
      const Tap* tp = taps->data() + n * h * w;
      for (std::size_t p = 0; p < h * w; ++p) {
        double v = 0.0;
        for (int q = 0; q < 4; ++q) {
          if (tp[p].idx[q] >= 0) v += tp[p].wgt[q] * src[tp[p].idx[q]];
        }
        dst[p] = v;
      }
    }
  }

  auto nx = x.node();
  return make_op(std::move(out), {x}, [nx, taps, bsz, ch, h, w](detail::Node& self) {
    if (!nx->requires_grad) return;
    Tensor& dst = nx->ensure_grad();
    const Tensor& g = self.grad;
    for (std::size_t n = 0; n < bsz; ++n) {
      for (std::size_t c = 0; c < ch; ++c) {
        const double* gs = g.data() + (n * ch + c) * h * w;
        double* d = dst.data() + (n * ch + c) * h * w;
        const Tap* tp = taps->data() + n * h * w;
        for (std::size_t p = 0; p < h * w; ++p) {
          for (int q = 0; q < 4; ++q) {
            if (tp[p].idx[q] >= 0) d[tp[p].idx[q]] += tp[p].wgt[q] * gs[p];
          }
        }
      }
    }
  });
}

}  // namespace poseadapt
