#pragma once

// Supervised training of the pose network on a labeled (source) domain.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "poseadapt/adam.hpp"
#include "poseadapt/augment.hpp"
#include "poseadapt/eval.hpp"
#include "poseadapt/heatmap.hpp"
#include "poseadapt/model.hpp"
#include "poseadapt/rng.hpp"
#include "poseadapt/synth.hpp"

namespace poseadapt {

struct TrainSourceConfig {
  ModelConfig model;
  double lr = 1e-3;
  std::size_t epochs = 30;
  std::vector<std::size_t> lr_drops = {5, 20};
  double lr_drop_factor = 0.1;
  std::size_t batch = 16;
  double sigma = 1.0;     // supervision Gaussian width, heatmap grid pixels
  AugmentRanges augment;  // identity by default
  std::uint64_t seed = 1;

  void validate() const {
    if (batch == 0) throw std::invalid_argument("train config: batch must be positive");
    if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be positive");
    if (!(sigma > 0.0)) throw std::invalid_argument("train config: sigma must be positive");
    if (!(lr_drop_factor > 0.0)) {
      throw std::invalid_argument("train config: lr_drop_factor must be positive");
    }
  }
};

struct TrainEpochRow {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;     // mean batch loss over the epoch
  double val_pck = std::numeric_limits<double>::quiet_NaN();
};

struct TrainSourceResult {
  PoseNet model;
  std::vector<TrainEpochRow> epochs;
};

// Heatmap-regression training: per sample, the image is augmented, the
// keypoints are moved by the same affine and rendered as Gaussian targets on
// the heatmap grid; channels whose target falls off-grid (or is unlabeled)
// are excluded from the loss. The loss is the mean squared error over the
// pixels of all supervised channels. `val` may be empty (no per-epoch PCK).
inline TrainSourceResult train_source(const ImageDataset& train, const ImageDataset& val,
                                      const TrainSourceConfig& cfg) {
  cfg.validate();
  const std::size_t n = train.size();
  if (n == 0) throw std::invalid_argument("train_source: empty training set");
  if (train.poses.size() != n) throw std::invalid_argument("train_source: image/pose mismatch");

  const std::size_t k = cfg.model.keypoints, hm = cfg.model.heatmap_size;
  const std::size_t img = cfg.model.image_size;
  const HeatmapFrame frame = cfg.model.frame();

  PoseNet net = PoseNet::init(cfg.model, cfg.seed);
  Adam opt(net.params(), cfg.lr);
  Rng aug_rng = Rng(cfg.seed).fork(0x50'52'43'31);
  Rng order_rng = Rng(cfg.seed).fork(0x50'52'43'32);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  TrainSourceResult res;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_lr(scheduled_lr(cfg.lr, cfg.lr_drops, cfg.lr_drop_factor, epoch));
    shuffle_indices(order, order_rng);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + cfg.batch <= n || (start == 0 && n < cfg.batch);
         start += cfg.batch) {
      const std::size_t bs = std::min(cfg.batch, n - start);
      Tensor in({bs, cfg.model.in_channels, img, img});
      Tensor gt({bs, k, hm, hm});
      Tensor wt({bs, k, hm, hm});
      std::size_t supervised = 0;

      std::vector<std::vector<std::uint8_t>> flags(bs);
      for (std::size_t i = 0; i < bs; ++i) {
        const std::size_t idx = order[start + i];
        const Image& src = train.images[idx];
        const AugmentSpec spec = sample_spec(aug_rng, cfg.augment, src.w, src.h);
        const Image view = apply_augment(spec, src);
        std::copy(view.pix.begin(), view.pix.end(), in.data() + i * view.pix.size());

        std::vector<Vec2> grid_coords(k);
        for (std::size_t j = 0; j < k; ++j) {
          grid_coords[j] = frame.to_grid(map_point(spec, train.poses[idx].coords[j]));
        }
        RenderedHeatmaps rendered = render_gaussian(grid_coords, cfg.sigma, hm, hm);
        std::copy(rendered.maps.data(), rendered.maps.data() + rendered.maps.size(),
                  gt.data() + i * k * hm * hm);
        for (std::size_t j = 0; j < k; ++j) {
          if (rendered.in_frame[j] && train.poses[idx].visibility[j]) {
            ++supervised;
            flags[i].push_back(1);
          } else {
            flags[i].push_back(0);
          }
        }
      }
      if (supervised == 0) continue;  // nothing to learn from this batch

      const double scale = 1.0 / (static_cast<double>(supervised) * static_cast<double>(hm * hm));
      for (std::size_t i = 0; i < bs; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          if (!flags[i][j]) continue;
          double* dst = wt.data() + (i * k + j) * hm * hm;
          std::fill(dst, dst + hm * hm, scale);
        }
      }

      Value out = net.forward(Value::constant(std::move(in))).heatmaps;
      Value loss = sum(square(out - Value::constant(std::move(gt))) *
                       Value::constant(std::move(wt)));
      opt.zero_grad();
      backward(loss);
      opt.step();
      loss_sum += loss.val()[0];
      ++batches;
    }

    TrainEpochRow row;
    row.epoch = epoch;
    row.lr = opt.lr();
    row.loss = batches ? loss_sum / static_cast<double>(batches)
                       : std::numeric_limits<double>::quiet_NaN();
    if (val.size() > 0) row.val_pck = evaluate_pck(net, val).avg;
    res.epochs.push_back(row);
  }
  res.model = std::move(net);
  return res;
}

}  // namespace poseadapt
