#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "poseadapt/adam.hpp"
#include "poseadapt/autodiff.hpp"
#include "poseadapt/checkpoint.hpp"
#include "poseadapt/heatmap.hpp"
#include "poseadapt/nn_ops.hpp"
#include "poseadapt/rng.hpp"

namespace poseadapt {

// Desk-scale heatmap regressor f = Dec . Enc.
//   Enc: three stride-2 3x3 conv blocks + one stride-1 block -> F-channel map
//        (64x64 input -> 8x8 features with the defaults)
//   Dec: nearest x2 upsample + 3x3 conv, then a linear 3x3 conv to K heatmaps
//        (8x8 -> 16x16 with the defaults)
// The encoder output is the feature tap used for the correlation loss.
struct ModelConfig {
  std::size_t image_size = 64;
  std::size_t in_channels = 1;
  std::size_t heatmap_size = 16;
  std::size_t keypoints = 13;
  std::size_t c1 = 16, c2 = 32, c3 = 64;  // encoder widths
  std::size_t feat_channels = 64;         // F, encoder output
  std::size_t dec_channels = 32;

  std::size_t feature_grid() const { return image_size / 8; }
  HeatmapFrame frame() const { return HeatmapFrame::downscale(image_size / heatmap_size); }

  void validate() const {
    // The encoder downsamples by 8; the decoder upsamples once by 2.
    if (image_size % 8 != 0 || image_size / 8 * 2 != heatmap_size) {
      throw std::invalid_argument("model config: heatmap_size must equal image_size/4");
    }
  }
};

class PoseNet {
 public:
  PoseNet() = default;

  static PoseNet init(const ModelConfig& cfg, std::uint64_t seed, bool trainable = true) {
    PoseNet net;
    net.cfg_ = cfg;
    Rng rng(seed);
    auto add_conv = [&](const std::string& name, std::size_t cout, std::size_t cin, std::size_t k,
                        bool zero_init = false) {
      Tensor w({cout, cin, k, k});
      if (!zero_init) {
        // He fan-in scaling.
        const double std_dev = std::sqrt(2.0 / static_cast<double>(cin * k * k));
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, std_dev);
      }
      net.names_.push_back(name + ".w");
      net.params_.push_back(Value::leaf(std::move(w), trainable));
      net.names_.push_back(name + ".b");
      net.params_.push_back(Value::leaf(Tensor({cout}), trainable));
    };
    add_conv("enc1", cfg.c1, cfg.in_channels, 3);
    add_conv("enc2", cfg.c2, cfg.c1, 3);
    add_conv("enc3", cfg.c3, cfg.c2, 3);
    add_conv("enc4", cfg.feat_channels, cfg.c3, 3);
    add_conv("dec1", cfg.dec_channels, cfg.feat_channels, 3);
    add_conv("dec2", cfg.keypoints, cfg.dec_channels, 3);
    return net;
  }

  const ModelConfig& config() const { return cfg_; }
  const std::vector<Value>& params() const { return params_; }
  std::vector<Value>& params() { return params_; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  struct Output {
    Value heatmaps;  // [B,K,hm,hm]
    Value features;  // [B,F,fg,fg]
  };

  Output forward(const Value& images) const {
    const Shape& s = images.shape();
    if (s.size() != 4 || s[1] != cfg_.in_channels || s[2] != cfg_.image_size ||
        s[3] != cfg_.image_size) {
      throw std::invalid_argument("forward: expected [B," + std::to_string(cfg_.in_channels) +
                                  "," + std::to_string(cfg_.image_size) + "," +
                                  std::to_string(cfg_.image_size) + "], got " + shape_str(s));
    }
    Value x = relu(conv2d(images, params_[0], params_[1], 2, 1));
    x = relu(conv2d(x, params_[2], params_[3], 2, 1));
    x = relu(conv2d(x, params_[4], params_[5], 2, 1));
    Value feat = relu(conv2d(x, params_[6], params_[7], 1, 1));
    Value d = upsample_nearest2d(feat, 2);
    d = relu(conv2d(d, params_[8], params_[9], 1, 1));
    Value hm = conv2d(d, params_[10], params_[11], 1, 1);
    return {hm, feat};
  }

  // Teacher copy: identical values, gradient-free leaves.
  PoseNet clone_detached() const {
    PoseNet net;
    net.cfg_ = cfg_;
    net.names_ = names_;
    for (const auto& p : params_) net.params_.push_back(Value::leaf(p.val(), false));
    return net;
  }

  void copy_params_from(const PoseNet& other) {
    if (other.params_.size() != params_.size()) {
      throw std::invalid_argument("copy_params_from: parameter list mismatch");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      require_same_shape(params_[i].val(), other.params_[i].val(), "copy_params_from");
      params_[i].mutable_val() = other.params_[i].val();
    }
  }

  Checkpoint to_checkpoint(nlohmann::json meta = {}) const {
    Checkpoint c;
    for (std::size_t i = 0; i < params_.size(); ++i) c.arrays.emplace(names_[i], params_[i].val());
    meta["model"] = {{"image_size", cfg_.image_size},     {"in_channels", cfg_.in_channels},
                     {"heatmap_size", cfg_.heatmap_size}, {"keypoints", cfg_.keypoints},
                     {"c1", cfg_.c1},                     {"c2", cfg_.c2},
                     {"c3", cfg_.c3},                     {"feat_channels", cfg_.feat_channels},
                     {"dec_channels", cfg_.dec_channels}};
    c.meta = std::move(meta);
    return c;
  }

  static PoseNet from_checkpoint(const Checkpoint& c, bool trainable = false) {
    const auto& m = c.meta.at("model");
    ModelConfig cfg;
    cfg.image_size = m.at("image_size");
    cfg.in_channels = m.at("in_channels");
    cfg.heatmap_size = m.at("heatmap_size");
    cfg.keypoints = m.at("keypoints");
    cfg.c1 = m.at("c1");
    cfg.c2 = m.at("c2");
    cfg.c3 = m.at("c3");
    cfg.feat_channels = m.at("feat_channels");
    cfg.dec_channels = m.at("dec_channels");
    PoseNet net = PoseNet::init(cfg, 0, trainable);
    for (std::size_t i = 0; i < net.params_.size(); ++i) {
      net.params_[i].mutable_val() = c.arrays.at(net.names_[i]);
    }
    return net;
  }

 private:
  ModelConfig cfg_;
  std::vector<Value> params_;
  std::vector<std::string> names_;
};

// theta~ <- alpha * theta~ + (1 - alpha) * theta, elementwise.
inline void ema_update(PoseNet& teacher, const PoseNet& student, double alpha) {
  auto& tp = teacher.params();
  const auto& sp = student.params();
  if (tp.size() != sp.size()) throw std::invalid_argument("ema_update: parameter list mismatch");
  for (std::size_t i = 0; i < tp.size(); ++i) {
    Tensor& t = tp[i].mutable_val();
    const Tensor& s = sp[i].val();
    require_same_shape(t, s, "ema_update");
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = alpha * t[j] + (1.0 - alpha) * s[j];
  }
}

// Spatial average over (optionally masked) feature maps, then per-feature
// mean subtraction across the batch: [B,F,h,w] -> [B,F], columns zero-mean.
inline Value pool_and_normalize(const Value& features, const Tensor& mask = Tensor()) {
  const Shape& s = features.shape();
  if (s.size() != 4) {
    throw std::invalid_argument("pool_and_normalize: expected [B,F,h,w], got " + shape_str(s));
  }
  if (s[0] < 2) throw std::invalid_argument("pool_and_normalize: batch must be >= 2");
  Value pooled;
  if (mask.empty()) {
    pooled = mean(features, {2, 3});  // [B,F]
  } else {
    if (mask.rank() != 4 || mask.shape()[0] != s[0] || mask.shape()[1] != 1 ||
        mask.shape()[2] != s[2] || mask.shape()[3] != s[3]) {
      throw std::invalid_argument("pool_and_normalize: mask must be [B,1,h,w]");
    }
    Value m = Value::constant(mask);
    Value num = sum(features * m, {2, 3});                    // [B,F]
    Value den = clamp_min(sum(m, {2, 3}), 1.0);               // [B,1]
    pooled = num / den;
  }
  return pooled - mean(pooled, {0}, true);
}

}  // namespace poseadapt
