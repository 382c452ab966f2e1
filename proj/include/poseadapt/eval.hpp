#pragma once

// Batched pose prediction and PCK evaluation for heatmap models.

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "poseadapt/heatmap.hpp"
#include "poseadapt/image.hpp"
#include "poseadapt/metrics.hpp"
#include "poseadapt/model.hpp"
#include "poseadapt/synth.hpp"

namespace poseadapt {

// Stack the images selected by `indices` into one [N,C,H,W] batch tensor.
inline Tensor stack_images(const std::vector<Image>& images, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("stack_images: empty index list");
  const Image& first = images.at(indices[0]);
  Tensor out({indices.size(), first.c, first.h, first.w});
  const std::size_t plane = first.c * first.h * first.w;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Image& img = images.at(indices[i]);
    if (img.c != first.c || img.h != first.h || img.w != first.w) {
      throw std::invalid_argument("stack_images: mixed image sizes in one batch");
    }
    std::copy(img.pix.begin(), img.pix.end(), out.data() + i * plane);
  }
  return out;
}

// Run the network over the images and decode sub-pixel keypoint coordinates,
// returned in the image pixel frame. Pose ids are left empty for the caller.
inline std::vector<Pose2D> predict_poses(const PoseNet& net, const std::vector<Image>& images,
                                         std::size_t batch = 32, int decode_radius = 2) {
  if (batch == 0) throw std::invalid_argument("predict_poses: batch must be positive");
  const HeatmapFrame frame = net.config().frame();
  const std::size_t k = net.config().keypoints;
  std::vector<Pose2D> out(images.size());
  for (std::size_t start = 0; start < images.size(); start += batch) {
    const std::size_t n = std::min(batch, images.size() - start);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = start + i;
    const Tensor maps = net.forward(Value::constant(stack_images(images, idx))).heatmaps.val();
    const std::size_t kh = maps.shape()[2], kw = maps.shape()[3], per_sample = k * kh * kw;
    for (std::size_t i = 0; i < n; ++i) {
      Tensor sample({k, kh, kw});
      std::copy(maps.data() + i * per_sample, maps.data() + (i + 1) * per_sample, sample.data());
      const DecodedPose dec = decode_subpixel(sample, decode_radius);
      Pose2D& p = out[start + i];
      p.coords.resize(k);
      p.visibility.assign(k, 1);
      for (std::size_t j = 0; j < k; ++j) p.coords[j] = frame.to_image(dec.coords[j]);
    }
  }
  return out;
}

// PCK of the network's predictions against the dataset labels. The threshold
// is `fraction` of the model's input image size.
inline PckResult evaluate_pck(const PoseNet& net, const ImageDataset& ds, double fraction = 0.05,
                              std::size_t batch = 32) {
  if (ds.images.size() != ds.poses.size()) {
    throw std::invalid_argument("evaluate_pck: image/pose count mismatch");
  }
  if (ds.images.empty()) throw std::invalid_argument("evaluate_pck: empty dataset");
  std::vector<Pose2D> pred = predict_poses(net, ds.images, batch);
  for (std::size_t i = 0; i < pred.size(); ++i) pred[i].id = ds.poses[i].id;
  return pck(pred, ds.poses, fraction, static_cast<double>(net.config().image_size));
}

}  // namespace poseadapt
