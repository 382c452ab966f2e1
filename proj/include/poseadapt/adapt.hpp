#pragma once

// Mean-Teacher source-free adaptation: prediction-space self-training,
// feature cross-correlation consistency, and the pose-prior regularizer.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <utility>
#include <vector>

#include "poseadapt/adam.hpp"
#include "poseadapt/augment.hpp"
#include "poseadapt/eval.hpp"
#include "poseadapt/heatmap.hpp"
#include "poseadapt/model.hpp"
#include "poseadapt/prior.hpp"
#include "poseadapt/rng.hpp"
#include "poseadapt/synth.hpp"

namespace poseadapt {

struct AdaptConfig {
  double alpha = 0.999;    // teacher EMA smoothing
  double p = 0.5;          // pseudo-label keep ratio over (image, keypoint) pairs
  double lambda1 = 1e-3;   // weight of the feature consistency term
  double lambda2 = 1e-6;   // weight of the pose-prior term
  double gamma = 5e-3;     // off-diagonal weight inside the feature loss
  double lr = 1e-3;
  std::size_t epochs = 30;
  std::vector<std::size_t> lr_drops = {5, 20};
  double lr_drop_factor = 0.1;
  std::size_t batch = 16;
  double pseudo_sigma = 1.0;  // rendered pseudo-label width, heatmap grid pixels
  double delta_min = 1e-6;    // degenerate-bone guard for the prior term
  AugmentConfig augment;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("adapt config: p must be in (0, 1]");
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
      throw std::invalid_argument("adapt config: alpha must be in [0, 1]");
    }
    if (batch < 2) throw std::invalid_argument("adapt config: batch must be >= 2");
    if (!(lr > 0.0)) throw std::invalid_argument("adapt config: lr must be positive");
    if (!(pseudo_sigma > 0.0)) {
      throw std::invalid_argument("adapt config: pseudo_sigma must be positive");
    }
    if (!(gamma >= 0.0)) throw std::invalid_argument("adapt config: gamma must be >= 0");
    if (!(lr_drop_factor > 0.0)) {
      throw std::invalid_argument("adapt config: lr_drop_factor must be positive");
    }
  }
};

// Teacher pseudo-labels for one batch: rendered Gaussian heatmaps for the
// kept (image, keypoint) pairs, all other channels zero.
struct PseudoLabels {
  Tensor heatmaps;        // [B,K,h,w]
  Tensor keep;            // [B,K], 0/1
  std::size_t kept = 0;   // == ceil(p * B * K)
  double tau = 0.0;       // confidence of the weakest kept pair (batch percentile)
};

// Rank all (image, keypoint) pairs by their maximum activation (descending,
// ties by index) and keep exactly ceil(p * B * K); the kept keypoints are
// re-rendered as unit-peak Gaussians at their argmax positions.
inline PseudoLabels make_pseudo_labels(const Tensor& teacher_maps, double p, double sigma) {
  if (teacher_maps.rank() != 4) {
    throw std::invalid_argument("make_pseudo_labels: expected [B,K,H,W], got " +
                                shape_str(teacher_maps.shape()));
  }
  if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("make_pseudo_labels: p must be in (0, 1]");
  const std::size_t b = teacher_maps.shape()[0], k = teacher_maps.shape()[1];
  const std::size_t h = teacher_maps.shape()[2], w = teacher_maps.shape()[3];

  PseudoLabels out;
  out.heatmaps = Tensor({b, k, h, w});
  out.keep = Tensor({b, k});

  std::vector<DecodedPose> decoded(b);
  std::vector<std::pair<double, std::size_t>> ranked;  // (confidence, flat index)
  ranked.reserve(b * k);
  for (std::size_t i = 0; i < b; ++i) {
    Tensor sample({k, h, w});
    std::copy(teacher_maps.data() + i * k * h * w, teacher_maps.data() + (i + 1) * k * h * w,
              sample.data());
    decoded[i] = argmax_decode(sample);
    for (std::size_t j = 0; j < k; ++j) ranked.emplace_back(decoded[i].confidence[j], i * k + j);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& c) {
    if (a.first != c.first) return a.first > c.first;
    return a.second < c.second;
  });

  const std::size_t m = std::min<std::size_t>(
      b * k, static_cast<std::size_t>(std::ceil(p * static_cast<double>(b * k))));
  out.kept = m;
  out.tau = ranked[m - 1].first;
  for (std::size_t r = 0; r < m; ++r) out.keep[ranked[r].second] = 1.0;

  for (std::size_t i = 0; i < b; ++i) {
    const RenderedHeatmaps rendered = render_gaussian(decoded[i].coords, sigma, h, w);
    for (std::size_t j = 0; j < k; ++j) {
      if (out.keep[i * k + j] == 0.0) continue;
      if (!rendered.in_frame[j]) {
        // Argmax positions are grid cells, so this cannot trigger; guard anyway.
        out.keep[i * k + j] = 0.0;
        --out.kept;
        continue;
      }
      std::copy(rendered.maps.data() + j * h * w, rendered.maps.data() + (j + 1) * h * w,
                out.heatmaps.data() + (i * k + j) * h * w);
    }
  }
  return out;
}

struct OutLossResult {
  Value loss;
  std::size_t valid_pixels = 0;  // sum over the batch of per-sample valid counts
  bool empty = false;            // keep-mask empty: loss fixed at 0
};

// Prediction-space consistency: both stacks are inverse-warped to the original
// frame, and the squared error of each kept keypoint is averaged over the
// pixels where both warps are valid, then over the batch:
//   (1/B) sum_b sum_k keep[b,k] * sum_{valid px} diff^2 / max(1, |V_b|).
// Gradients flow to the student stack only (the pseudo-labels are constants).
inline OutLossResult loss_out(const Tensor& pseudo, const Value& student,
                              const std::vector<AugmentSpec>& view1,
                              const std::vector<AugmentSpec>& view2, const Tensor& keep,
                              const HeatmapFrame& frame) {
  const Shape& s = student.shape();
  if (s.size() != 4) {
    throw std::invalid_argument("loss_out: expected [B,K,H,W], got " + shape_str(s));
  }
  if (pseudo.shape() != s) throw std::invalid_argument("loss_out: stack shape mismatch");
  const std::size_t b = s[0], k = s[1], h = s[2], w = s[3];
  if (view1.size() != b || view2.size() != b) {
    throw std::invalid_argument("loss_out: one augmentation spec per sample required");
  }
  if (keep.shape() != Shape{b, k}) throw std::invalid_argument("loss_out: keep-mask shape mismatch");

  std::vector<Affine2> g1(b), g2(b);
  for (std::size_t i = 0; i < b; ++i) {
    g1[i] = grid_inverse_gather(view1[i], frame);
    g2[i] = grid_inverse_gather(view2[i], frame);
  }

  OutLossResult res;
  Tensor wt({b, k, h, w});
  std::size_t total_kept = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const Tensor v1 = warp_validity_mask(g1[i], h, w);
    const Tensor v2 = warp_validity_mask(g2[i], h, w);
    Tensor both({h, w});
    double count = 0.0;
    for (std::size_t px = 0; px < h * w; ++px) {
      both[px] = v1[px] * v2[px];
      count += both[px];
    }
    res.valid_pixels += static_cast<std::size_t>(count);
    const double scale = 1.0 / (static_cast<double>(b) * std::max(1.0, count));
    for (std::size_t j = 0; j < k; ++j) {
      if (keep[i * k + j] == 0.0) continue;
      ++total_kept;
      double* dst = wt.data() + (i * k + j) * h * w;
      for (std::size_t px = 0; px < h * w; ++px) dst[px] = both[px] * scale;
    }
  }
  if (total_kept == 0) {
    res.loss = Value::constant(0.0);
    res.empty = true;
    return res;
  }
  Value aligned_teacher = warp_affine(Value::constant(pseudo), g1);
  Value aligned_student = warp_affine(student, g2);
  res.loss = sum(square(aligned_teacher - aligned_student) * Value::constant(std::move(wt)));
  return res;
}

struct FeatLossResult {
  Value loss;
  std::size_t zero_variance = 0;  // feature columns whose denominator hit the guard
};

// Barlow-Twins-style redundancy reduction between pooled, batch-normalized
// teacher features z_t and student features z_s (both [B,F]):
//   C_ij = sum_b zt_bi zs_bj / sqrt(sum_b zt_bi^2 * sum_b zs_bj^2)
//   loss = sum_i (1 - C_ii)^2 + gamma * sum_{i != j} C_ij^2.
// The denominator is guarded at 1e-12, so zero-variance columns contribute
// exactly 0 to C. Gradients reach the student branch only when the teacher
// branch was built without gradient tracking (EMA teacher), which is how the
// adaptation step calls it.
inline FeatLossResult loss_feat(const Value& z_teacher, const Value& z_student,
                                double gamma = 5e-3) {
  const Shape& st = z_teacher.shape();
  if (st.size() != 2 || z_student.shape() != st) {
    throw std::invalid_argument("loss_feat: expected matching [B,F] matrices");
  }
  if (st[0] < 2) throw std::invalid_argument("loss_feat: batch must be >= 2");
  const std::size_t f = st[1];

  Value num = matmul(transpose(z_teacher), z_student);                    // [F,F]
  Value sq_t = sum(z_teacher * z_teacher, {0}, true);                     // [1,F]
  Value sq_s = sum(z_student * z_student, {0}, true);                     // [1,F]
  Value den = sqrt(clamp_min(matmul(transpose(sq_t), sq_s), 1e-24));      // [F,F], floor 1e-12
  Value c = num / den;

  FeatLossResult res;
  for (std::size_t j = 0; j < f; ++j) {
    if (sq_t.val()[j] <= 1e-24 || sq_s.val()[j] <= 1e-24) ++res.zero_variance;
  }

  Tensor eye({f, f}), off({f, f});
  for (std::size_t i = 0; i < f; ++i) {
    for (std::size_t j = 0; j < f; ++j) {
      eye[i * f + j] = i == j ? 1.0 : 0.0;
      off[i * f + j] = i == j ? 0.0 : 1.0;
    }
  }
  Value eye_v = Value::constant(std::move(eye));
  Value diag_term = sum(square((eye_v - c) * eye_v));
  Value off_term = sum(square(c * Value::constant(std::move(off))));
  res.loss = diag_term + gamma * off_term;
  return res;
}

struct StepBreakdown {
  double l_out = 0.0;    // unweighted consistency term
  double l_feat = 0.0;   // unweighted feature term
  double l_prior = 0.0;  // unweighted prior term
  double total = 0.0;    // l_out + lambda1 * l_feat + lambda2 * l_prior
  double kept_fraction = 0.0;
  double tau = 0.0;
  std::size_t prior_excluded = 0;
  std::size_t feat_zero_variance = 0;
  bool empty_keep_mask = false;
};

// One adaptation run's mutable state: student, EMA teacher, optimizer,
// augmentation stream, and step counter. Both networks start as copies of the
// source model.
class AdaptState {
 public:
  AdaptState(const PoseNet& source, const PriorModel* prior, AdaptConfig cfg)
      : cfg_(std::move(cfg)),
        student_(PoseNet::from_checkpoint(source.to_checkpoint(), /*trainable=*/true)),
        teacher_(source.clone_detached()),
        prior_(prior),
        opt_(student_.params(), cfg_.lr),
        rng_(Rng(cfg_.seed).fork(0x41'44'50'31)) {
    cfg_.validate();
    if (cfg_.lambda2 != 0.0 && prior_ == nullptr) {
      throw std::invalid_argument("adapt: lambda2 != 0 requires a trained prior");
    }
    if (prior_ != nullptr && prior_->trainable()) {
      throw std::invalid_argument("adapt: prior parameters must be frozen");
    }
  }

  // One optimization step on a batch of raw target images: build two
  // augmented views, pseudo-label with the teacher, combine the three loss
  // terms on the student, take an Adam step, then EMA-update the teacher.
  StepBreakdown step(const std::vector<Image>& batch) {
    const ModelConfig& mc = student_.config();
    const std::size_t b = batch.size();
    if (b < 2) throw std::invalid_argument("adapt_step: batch must be >= 2");
    const std::size_t img = mc.image_size, k = mc.keypoints;

    std::vector<AugmentSpec> a1(b), a2(b);
    Tensor view1({b, mc.in_channels, img, img});
    Tensor view2({b, mc.in_channels, img, img});
    Tensor raw({b, mc.in_channels, img, img});
    for (std::size_t i = 0; i < b; ++i) {
      const Image& x = batch[i];
      if (x.w != img || x.h != img || x.c != mc.in_channels) {
        throw std::invalid_argument("adapt_step: image does not match the model input size");
      }
      const auto pair = sample_pair(rng_, cfg_.augment, x.w, x.h);
      a1[i] = pair.first;
      a2[i] = pair.second;
      const Image i1 = apply_augment(a1[i], x);
      const Image i2 = apply_augment(a2[i], x);
      std::copy(i1.pix.begin(), i1.pix.end(), view1.data() + i * i1.pix.size());
      std::copy(i2.pix.begin(), i2.pix.end(), view2.data() + i * i2.pix.size());
      if (cfg_.lambda2 != 0.0) {
        std::copy(x.pix.begin(), x.pix.end(), raw.data() + i * x.pix.size());
      }
    }

    const auto teacher_out = teacher_.forward(Value::constant(std::move(view1)));
    const PseudoLabels pl = make_pseudo_labels(teacher_out.heatmaps.val(), cfg_.p,
                                               cfg_.pseudo_sigma);
    const auto student_out = student_.forward(Value::constant(std::move(view2)));

    const OutLossResult lo = loss_out(pl.heatmaps, student_out.heatmaps, a1, a2, pl.keep,
                                      mc.frame());
    if (lo.empty) ++empty_mask_events_;

    StepBreakdown bd;
    bd.kept_fraction = static_cast<double>(pl.kept) / static_cast<double>(b * k);
    bd.tau = pl.tau;
    bd.empty_keep_mask = lo.empty;

    Value total = lo.loss;
    bd.l_out = lo.loss.val()[0];

    if (cfg_.lambda1 != 0.0) {
      const HeatmapFrame ff = HeatmapFrame::downscale(img / mc.feature_grid());
      const std::size_t fg = mc.feature_grid();
      std::vector<Affine2> f1(b), f2(b);
      Tensor m1({b, 1, fg, fg}), m2({b, 1, fg, fg});
      for (std::size_t i = 0; i < b; ++i) {
        f1[i] = grid_inverse_gather(a1[i], ff);
        f2[i] = grid_inverse_gather(a2[i], ff);
        const Tensor v1 = warp_validity_mask(f1[i], fg, fg);
        const Tensor v2 = warp_validity_mask(f2[i], fg, fg);
        std::copy(v1.data(), v1.data() + fg * fg, m1.data() + i * fg * fg);
        std::copy(v2.data(), v2.data() + fg * fg, m2.data() + i * fg * fg);
      }
      const Value zt = pool_and_normalize(warp_affine(teacher_out.features, f1), m1);
      const Value zs = pool_and_normalize(warp_affine(student_out.features, f2), m2);
      const FeatLossResult lf = loss_feat(zt, zs, cfg_.gamma);
      bd.l_feat = lf.loss.val()[0];
      bd.feat_zero_variance = lf.zero_variance;
      total = total + cfg_.lambda1 * lf.loss;
    }

    if (cfg_.lambda2 != 0.0) {
      const auto raw_out = student_.forward(Value::constant(std::move(raw)));
      const PriorLossResult lp = prior_loss(raw_out.heatmaps, *prior_, cfg_.delta_min);
      bd.l_prior = lp.loss.val()[0];
      bd.prior_excluded = lp.excluded;
      total = total + cfg_.lambda2 * lp.loss;
    }

    bd.total = total.val()[0];
    if (!std::isfinite(bd.total) || !std::isfinite(bd.l_out) || !std::isfinite(bd.l_feat) ||
        !std::isfinite(bd.l_prior)) {
      std::ostringstream msg;
      msg << "adapt_step: non-finite loss at step " << t_ << " (L_out=" << bd.l_out
          << ", L_feat=" << bd.l_feat << ", L_prior=" << bd.l_prior << ", total=" << bd.total
          << ")";
      throw std::runtime_error(msg.str());
    }

    opt_.zero_grad();
    backward(total);
    opt_.step();
    ema_update(teacher_, student_, cfg_.alpha);
    ++t_;
    return bd;
  }

  const PoseNet& student() const { return student_; }
  const PoseNet& teacher() const { return teacher_; }
  const AdaptConfig& config() const { return cfg_; }
  Adam& optimizer() { return opt_; }
  std::size_t t() const { return t_; }
  std::size_t empty_mask_events() const { return empty_mask_events_; }

 private:
  AdaptConfig cfg_;
  PoseNet student_;
  PoseNet teacher_;
  const PriorModel* prior_;
  Adam opt_;
  Rng rng_;
  std::size_t t_ = 0;
  std::size_t empty_mask_events_ = 0;
};

inline StepBreakdown adapt_step(AdaptState& state, const std::vector<Image>& batch) {
  return state.step(batch);
}

struct AdaptStepRow {
  std::size_t step = 0;
  double l_out = 0.0, l_feat = 0.0, l_prior = 0.0, total = 0.0;
  double kept_fraction = 0.0;
};

struct AdaptEpochRow {
  std::size_t epoch = 0;
  double lr = 0.0;
  double student_pck = std::numeric_limits<double>::quiet_NaN();
  double teacher_pck = std::numeric_limits<double>::quiet_NaN();
};

struct AdaptResult {
  PoseNet student;
  PoseNet teacher;
  std::vector<AdaptStepRow> trace;    // one row per optimization step
  std::vector<AdaptEpochRow> epochs;  // evaluation-only metrics
  std::size_t empty_mask_events = 0;
};

// Full adaptation loop over unlabeled target images. `target_eval` is a
// labeled held-out split used only for per-epoch PCK reporting; it is never
// trained on (pass an empty dataset to skip evaluation). `prior` may be null
// when cfg.lambda2 == 0.
inline AdaptResult run_adaptation(const PoseNet& source, const PriorModel* prior,
                                  const std::vector<Image>& target_train,
                                  const ImageDataset& target_eval, const AdaptConfig& cfg) {
  cfg.validate();
  AdaptState state(source, prior, cfg);
  const std::size_t n = target_train.size();
  if (cfg.epochs > 0 && n < cfg.batch) {
    throw std::invalid_argument("run_adaptation: fewer target images than one batch");
  }

  Rng order_rng = Rng(cfg.seed).fork(0x41'44'50'32);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  AdaptResult res;
  const std::size_t iters = cfg.epochs == 0 ? 0 : n / cfg.batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = scheduled_lr(cfg.lr, cfg.lr_drops, cfg.lr_drop_factor, epoch);
    state.optimizer().set_lr(lr);
    shuffle_indices(order, order_rng);
    for (std::size_t it = 0; it < iters; ++it) {
      std::vector<Image> batch(cfg.batch);
      for (std::size_t i = 0; i < cfg.batch; ++i) {
        batch[i] = target_train[order[it * cfg.batch + i]];
      }
      const StepBreakdown bd = state.step(batch);
      res.trace.push_back({state.t(), bd.l_out, bd.l_feat, bd.l_prior, bd.total,
                           bd.kept_fraction});
    }
    AdaptEpochRow row;
    row.epoch = epoch;
    row.lr = lr;
    if (target_eval.size() > 0) {
      row.student_pck = evaluate_pck(state.student(), target_eval).avg;
      row.teacher_pck = evaluate_pck(state.teacher(), target_eval).avg;
    }
    res.epochs.push_back(row);
  }
  res.student = state.student();
  res.teacher = state.teacher();
  res.empty_mask_events = state.empty_mask_events();
  return res;
}

}  // namespace poseadapt
