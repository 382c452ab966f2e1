#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "poseadapt/autodiff.hpp"
#include "poseadapt/nn_ops.hpp"
#include "poseadapt/pose.hpp"

namespace poseadapt {

// Affine relation between a heatmap grid and its image frame:
// image = grid * scale + offset (both axes). With an integer downscale factor
// s and pixel-center alignment, offset = (s-1)/2.
struct HeatmapFrame {
  double scale = 1.0;
  double offset = 0.0;

  static HeatmapFrame downscale(std::size_t factor) {
    return {static_cast<double>(factor), (static_cast<double>(factor) - 1.0) / 2.0};
  }
  Vec2 to_grid(Vec2 img) const { return {(img.x - offset) / scale, (img.y - offset) / scale}; }
  Vec2 to_image(Vec2 grid) const { return {grid.x * scale + offset, grid.y * scale + offset}; }
};

struct RenderedHeatmaps {
  Tensor maps;                            // [K,H,W]
  std::vector<std::uint8_t> in_frame;     // per channel: keypoint inside the grid
};

// Peak-normalized Gaussian per channel: exp(-||u - y_k||^2 / (2 sigma^2)),
// value 1 at the keypoint. Coordinates are in the heatmap grid frame.
// Channels whose keypoint falls outside the grid are all-zero and flagged.
inline RenderedHeatmaps render_gaussian(const std::vector<Vec2>& coords, double sigma,
                                        std::size_t h, std::size_t w) {
  if (sigma <= 0.0) throw std::invalid_argument("render_gaussian: sigma must be positive");
  RenderedHeatmaps out{Tensor({coords.size(), h, w}), std::vector<std::uint8_t>(coords.size(), 0)};
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t k = 0; k < coords.size(); ++k) {
    const Vec2 y = coords[k];
    if (!std::isfinite(y.x) || !std::isfinite(y.y)) {
      throw std::invalid_argument("render_gaussian: non-finite keypoint " + std::to_string(k));
    }
    const bool inside = y.x >= 0.0 && y.x <= static_cast<double>(w - 1) && y.y >= 0.0 &&
                        y.y <= static_cast<double>(h - 1);
    out.in_frame[k] = inside ? 1 : 0;
    if (!inside) continue;
    double* plane = out.maps.data() + k * h * w;
    for (std::size_t i = 0; i < h; ++i) {
      const double dy = static_cast<double>(i) - y.y;
      for (std::size_t j = 0; j < w; ++j) {
        const double dx = static_cast<double>(j) - y.x;
        plane[i * w + j] = std::exp(-(dx * dx + dy * dy) * inv);
      }
    }
  }
  return out;
}

struct DecodedPose {
  std::vector<Vec2> coords;       // grid-frame (x = column, y = row)
  std::vector<double> confidence; // value at the maximum
};

// Per-channel argmax; ties and the all-zero channel resolve to the smallest
// row-major index.
inline DecodedPose argmax_decode(const Tensor& maps) {
  if (maps.rank() != 3) {
    throw std::invalid_argument("argmax_decode: expected [K,H,W], got " + shape_str(maps.shape()));
  }
  const std::size_t k = maps.shape()[0], h = maps.shape()[1], w = maps.shape()[2];
  DecodedPose out;
  out.coords.resize(k);
  out.confidence.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    const double* plane = maps.data() + c * h * w;
    std::size_t best = 0;
    for (std::size_t i = 1; i < h * w; ++i) {
      if (plane[i] > plane[best]) best = i;
    }
    out.coords[c] = {static_cast<double>(best % w), static_cast<double>(best / w)};
    out.confidence[c] = plane[best];
  }
  return out;
}

// Per-channel argmax refined by the rectified-mass centroid of the
// (2*radius+1)^2 window around the peak. Unlike a global expectation this is
// robust to secondary modes elsewhere in the map, while still recovering the
// sub-pixel position of a near-Gaussian peak; with a coarse grid (e.g. 4 image
// pixels per cell) that refinement decides matches near tight PCK thresholds.
// Falls back to the integer peak when the window carries no positive mass.
inline DecodedPose decode_subpixel(const Tensor& maps, int radius = 2) {
  if (maps.rank() != 3) {
    throw std::invalid_argument("decode_subpixel: expected [K,H,W], got " + shape_str(maps.shape()));
  }
  if (radius < 0) throw std::invalid_argument("decode_subpixel: radius must be >= 0");
  const std::size_t k = maps.shape()[0], h = maps.shape()[1], w = maps.shape()[2];
  DecodedPose out;
  out.coords.resize(k);
  out.confidence.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    const double* plane = maps.data() + c * h * w;
    std::size_t best = 0;
    for (std::size_t i = 1; i < h * w; ++i) {
      if (plane[i] > plane[best]) best = i;
    }
    const long px = static_cast<long>(best % w), py = static_cast<long>(best / w);
    const long x0 = std::max(0L, px - radius), x1 = std::min(static_cast<long>(w) - 1, px + radius);
    const long y0 = std::max(0L, py - radius), y1 = std::min(static_cast<long>(h) - 1, py + radius);
    double mass = 0.0, cx = 0.0, cy = 0.0;
    for (long y = y0; y <= y1; ++y) {
      for (long x = x0; x <= x1; ++x) {
        const double v = std::max(plane[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)], 0.0);
        mass += v;
        cx += v * static_cast<double>(x);
        cy += v * static_cast<double>(y);
      }
    }
    out.coords[c] = mass > 0.0 ? Vec2{cx / mass, cy / mass}
                               : Vec2{static_cast<double>(px), static_cast<double>(py)};
    out.confidence[c] = plane[best];
  }
  return out;
}

/// How the marginalized heatmap is renormalized into a probability
// distribution before taking the expected index.
//
// `Mass` rectifies the marginal and divides by its sum. For heatmaps whose
// content is (approximately) a rendered Gaussian, the expectation then equals
// the true sub-pixel coordinate up to border truncation, so interior
// keypoints are recovered to well under 0.1 px. This is the default used
// throughout the pipeline.
//
// `Exp` exponentiates the marginal (a literal softmax). Because rendered
// heatmaps are bounded by 1, this distribution is nearly flat and its
// expectation is strongly biased toward the grid center; sharpening it merely
// degenerates toward hard argmax, which cannot resolve sub-pixel positions.
// Kept as an explicit alternative for comparison runs.
enum class SoftArgmaxMode { Mass, Exp };

// Differentiable separable soft-argmax on [B,K,H,W]: marginalize over the
// other axis, renormalize to a probability distribution, then take the
// expected index. Returns [B,K,2] with x (column) first.
inline Value soft_argmax(const Value& heatmaps, SoftArgmaxMode mode = SoftArgmaxMode::Mass) {
  const Shape& s = heatmaps.shape();
  if (s.size() != 4) {
    throw std::invalid_argument("soft_argmax: expected [B,K,H,W], got " + shape_str(s));
  }
  const std::size_t b = s[0], k = s[1], h = s[2], w = s[3];

  Tensor xs({w}), ys({h});
  for (std::size_t j = 0; j < w; ++j) xs[j] = static_cast<double>(j);
  for (std::size_t i = 0; i < h; ++i) ys[i] = static_cast<double>(i);

  auto renormalize = [mode](Value marginal) {
    if (mode == SoftArgmaxMode::Exp) return softmax(marginal, 2);
    Value m = relu(std::move(marginal));
    return m / clamp_min(sum(m, {2}, true), 1e-8);
  };

  Value mx = renormalize(sum(heatmaps, {2}));                        // [B,K,W]
  Value ex = sum(mx * Value::constant(std::move(xs)), {2}, true);    // [B,K,1]
  Value my = renormalize(sum(heatmaps, {3}));                        // [B,K,H]
  Value ey = sum(my * Value::constant(std::move(ys)), {2}, true);    // [B,K,1]
  return reshape(concat({ex, ey}, 2), {b, k, 2});
}

}  // namespace poseadapt
