#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "poseadapt/geometry.hpp"
#include "poseadapt/heatmap.hpp"
#include "poseadapt/image.hpp"
#include "poseadapt/nn_ops.hpp"
#include "poseadapt/rng.hpp"

namespace poseadapt {

// Sampling ranges for one view. Angles in degrees, translation as a fraction
// of image size, scale/contrast as multiplicative ranges around 1.
struct AugmentRanges {
  double rot_deg = 0.0;
  double trans_frac = 0.0;
  double shear = 0.0;
  double scale_lo = 1.0, scale_hi = 1.0;
  double blur_sigma_max = 0.0;
  double brightness_max = 0.0;
  double contrast_lo = 1.0, contrast_hi = 1.0;
};

// The two views may use different ranges (teacher view 1, student view 2);
// the default configuration keeps them identical.
struct AugmentConfig {
  AugmentRanges view1;
  AugmentRanges view2;
};

// One concrete augmentation: an invertible affine (original image frame ->
// view frame) plus non-invertible photometrics.
struct AugmentSpec {
  Affine2 fwd = Affine2::identity();
  double blur_sigma = 0.0;
  double brightness = 0.0;
  double contrast = 1.0;
};

inline AugmentSpec sample_spec(Rng& rng, const AugmentRanges& r, std::size_t img_w,
                               std::size_t img_h) {
  const double cx = (static_cast<double>(img_w) - 1.0) / 2.0;
  const double cy = (static_cast<double>(img_h) - 1.0) / 2.0;
  const double rot = rng.uniform(-r.rot_deg, r.rot_deg) * 3.14159265358979323846 / 180.0;
  const double tx = rng.uniform(-r.trans_frac, r.trans_frac) * static_cast<double>(img_w);
  const double ty = rng.uniform(-r.trans_frac, r.trans_frac) * static_cast<double>(img_h);
  const double sh = rng.uniform(-r.shear, r.shear);
  const double sc = rng.uniform(r.scale_lo, r.scale_hi);

  AugmentSpec spec;
  // Rotation/scale/shear about the image center, then translation.
  spec.fwd = Affine2::translation(tx, ty)
                 .compose(Affine2::translation(cx, cy))
                 .compose(Affine2::rotation(rot))
                 .compose(Affine2::scaling(sc, sc))
                 .compose(Affine2::shear(sh))
                 .compose(Affine2::translation(-cx, -cy));
  if (std::fabs(spec.fwd.det()) <= 1e-6) {
    throw std::invalid_argument("sample_spec: sampled affine is not invertible");
  }
  spec.blur_sigma = rng.uniform(0.0, r.blur_sigma_max);
  spec.brightness = rng.uniform(-r.brightness_max, r.brightness_max);
  spec.contrast = rng.uniform(r.contrast_lo, r.contrast_hi);
  return spec;
}

inline std::pair<AugmentSpec, AugmentSpec> sample_pair(Rng& rng, const AugmentConfig& cfg,
                                                       std::size_t img_w, std::size_t img_h) {
  AugmentSpec s1 = sample_spec(rng, cfg.view1, img_w, img_h);
  AugmentSpec s2 = sample_spec(rng, cfg.view2, img_w, img_h);
  return {s1, s2};
}

// Augmented view: affine warp (gather by fwd^-1) followed by photometrics.
inline Image apply_augment(const AugmentSpec& spec, const Image& img) {
  Image out = warp_image(img, spec.fwd.inverse());
  if (spec.blur_sigma > 1e-12) out = gaussian_blur(out, spec.blur_sigma);
  if (std::fabs(spec.brightness) > 1e-12 || std::fabs(spec.contrast - 1.0) > 1e-12) {
    out = adjust_photometric(out, spec.brightness, spec.contrast);
  }
  return out;
}

// Keypoint coordinates move by the forward affine.
inline Vec2 map_point(const AugmentSpec& spec, Vec2 p) { return spec.fwd.apply(p); }

// Gather maps for warping grid-shaped data (heatmaps, features) living on a
// grid related to the image by `frame`. warp_affine gathers: out(p)=in(M(p)).
//   - applying the augmentation to a grid map:  M = conj(fwd)^-1
//   - applying the inverse augmentation (A~):   M = conj(fwd)
inline Affine2 grid_forward_gather(const AugmentSpec& spec, const HeatmapFrame& frame) {
  return spec.fwd.conjugate_to_grid(frame.scale, frame.offset).inverse();
}

inline Affine2 grid_inverse_gather(const AugmentSpec& spec, const HeatmapFrame& frame) {
  return spec.fwd.conjugate_to_grid(frame.scale, frame.offset);
}

// 0/1 mask over the destination grid marking pixels whose gathered source
// location lies inside the source grid (bilinear support fully defined).
inline Tensor warp_validity_mask(const Affine2& gather, std::size_t h, std::size_t w) {
  Tensor mask({h, w});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const Vec2 s = gather.apply({static_cast<double>(j), static_cast<double>(i)});
      const bool ok = s.x >= 0.0 && s.x <= static_cast<double>(w - 1) && s.y >= 0.0 &&
                      s.y <= static_cast<double>(h - 1);
      mask.at2(i, j) = ok ? 1.0 : 0.0;
    }
  }
  return mask;
}

}  // namespace poseadapt
