#pragma once

// Neural pose prior g: the pose manifold is represented as the zero-level set
// of an unsigned distance field over orientation-pose space. A hierarchical
// per-bone encoder follows the skeleton (each bone sees its orientation and
// its parent's code), a plain MLP decodes the concatenated codes to a
// non-negative distance, and training uses L1 regression onto kNN-labeled
// distances with a curriculum that phases in near-manifold corruptions.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "poseadapt/adam.hpp"
#include "poseadapt/autodiff.hpp"
#include "poseadapt/checkpoint.hpp"
#include "poseadapt/heatmap.hpp"
#include "poseadapt/knn.hpp"
#include "poseadapt/nn_ops.hpp"
#include "poseadapt/pose.hpp"
#include "poseadapt/rng.hpp"
#include "poseadapt/skeleton.hpp"
#include "poseadapt/vonmises.hpp"

namespace poseadapt {

struct PriorConfig {
  std::size_t code_dim = 6;     // d, per-bone code size
  std::size_t enc_hidden = 32;  // encoder hidden width (2-layer MLP)
  std::size_t dec_hidden = 128; // decoder hidden width (5-layer MLP)
};

class PriorModel {
 public:
  PriorModel() = default;

  static PriorModel init(const Skeleton& sk, const PriorConfig& cfg, std::uint64_t seed,
                         bool trainable = true) {
    sk.validate();
    PriorModel m;
    m.sk_ = sk;
    m.cfg_ = cfg;
    m.trainable_ = trainable;
    Rng rng(seed);
    auto add_linear = [&](const std::string& name, std::size_t out, std::size_t in) {
      Tensor w({out, in});
      const double std_dev = std::sqrt(2.0 / static_cast<double>(in));
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, std_dev);
      m.names_.push_back(name + ".w");
      m.params_.push_back(Value::leaf(std::move(w), trainable));
      m.names_.push_back(name + ".b");
      m.params_.push_back(Value::leaf(Tensor({out}), trainable));
    };
    for (std::size_t l = 0; l < sk.bone_count(); ++l) {
      const std::size_t in = sk.parent[l] < 0 ? 2 : 2 + cfg.code_dim;
      add_linear("enc" + std::to_string(l) + ".l1", cfg.enc_hidden, in);
      add_linear("enc" + std::to_string(l) + ".l2", cfg.code_dim, cfg.enc_hidden);
    }
    const std::size_t p = cfg.code_dim * sk.bone_count();
    add_linear("dec.l1", cfg.dec_hidden, p);
    add_linear("dec.l2", cfg.dec_hidden, cfg.dec_hidden);
    add_linear("dec.l3", cfg.dec_hidden, cfg.dec_hidden);
    add_linear("dec.l4", cfg.dec_hidden, cfg.dec_hidden);
    add_linear("dec.l5", 1, cfg.dec_hidden);
    return m;
  }

  const Skeleton& skeleton() const { return sk_; }
  const PriorConfig& config() const { return cfg_; }
  bool trainable() const { return trainable_; }
  const std::vector<Value>& params() const { return params_; }
  std::vector<Value>& params() { return params_; }
  const std::vector<std::string>& names() const { return names_; }

  // Hierarchical pose code p = [v_1 | ... | v_L] on a [B,L,2] orientation
  // batch. Bones are stored root-first, so every parent code exists before
  // its children read it.
  Value encode_batch(const Value& thetas) const {
    const Shape& s = thetas.shape();
    if (s.size() != 3 || s[1] != sk_.bone_count() || s[2] != 2) {
      throw std::invalid_argument("encode_batch: expected [B," +
                                  std::to_string(sk_.bone_count()) + ",2], got " + shape_str(s));
    }
    const std::size_t b = s[0];
    std::vector<Value> codes(sk_.bone_count());
    for (std::size_t l = 0; l < sk_.bone_count(); ++l) {
      Value th = reshape(slice(thetas, 1, l, 1), {b, 2});
      Value x = sk_.parent[l] < 0 ? th : concat({th, codes[static_cast<std::size_t>(sk_.parent[l])]}, 1);
      codes[l] = linear(relu(linear(x, enc_w(l, 0), enc_b(l, 0))), enc_w(l, 1), enc_b(l, 1));
    }
    return concat(codes, 1);  // [B, d*L]
  }

  // Unsigned distance g(theta) >= 0 for a [B,L,2] orientation batch -> [B,1].
  Value score_batch(const Value& thetas) const {
    Value h = encode_batch(thetas);
    const std::size_t base = sk_.bone_count() * 4;
    for (int i = 0; i < 4; ++i) {
      h = relu(linear(h, params_[base + 2 * static_cast<std::size_t>(i)],
                      params_[base + 2 * static_cast<std::size_t>(i) + 1]));
    }
    return softplus(linear(h, params_[base + 8], params_[base + 9]));
  }

  // Pose-level entry points (validated, non-differentiable).
  Tensor encode(const OrientationPose& pose) const {
    Tensor t = pose_tensor(pose);
    Tensor p = encode_batch(Value::constant(std::move(t))).val();
    return Tensor(Shape{p.size()}, p.vec());
  }

  double score(const OrientationPose& pose) const {
    Tensor t = pose_tensor(pose);
    return score_batch(Value::constant(std::move(t))).val()[0];
  }

  Checkpoint to_checkpoint(nlohmann::json meta = {}) const {
    Checkpoint c;
    for (std::size_t i = 0; i < params_.size(); ++i) c.arrays.emplace(names_[i], params_[i].val());
    meta["prior"] = {{"code_dim", cfg_.code_dim},
                     {"enc_hidden", cfg_.enc_hidden},
                     {"dec_hidden", cfg_.dec_hidden},
                     {"skeleton", skeleton_to_json(sk_)}};
    c.meta = std::move(meta);
    return c;
  }

  static PriorModel from_checkpoint(const Checkpoint& c, bool trainable = false) {
    const auto& j = c.meta.at("prior");
    PriorConfig cfg;
    cfg.code_dim = j.at("code_dim");
    cfg.enc_hidden = j.at("enc_hidden");
    cfg.dec_hidden = j.at("dec_hidden");
    PriorModel m = init(skeleton_from_json(j.at("skeleton")), cfg, 0, trainable);
    for (std::size_t i = 0; i < m.params_.size(); ++i) {
      const Tensor& stored = c.arrays.at(m.names_[i]);
      require_same_shape(m.params_[i].val(), stored, "prior from_checkpoint");
      m.params_[i].mutable_val() = stored;
    }
    return m;
  }

 private:
  static Value linear(const Value& x, const Value& w, const Value& b) {
    return matmul(x, transpose(w)) + b;
  }
  const Value& enc_w(std::size_t l, std::size_t layer) const { return params_[l * 4 + layer * 2]; }
  const Value& enc_b(std::size_t l, std::size_t layer) const {
    return params_[l * 4 + layer * 2 + 1];
  }
  Tensor pose_tensor(const OrientationPose& pose) const {
    if (pose.theta.size() != sk_.bone_count()) {
      throw std::invalid_argument("prior: pose has " + std::to_string(pose.theta.size()) +
                                  " bones, skeleton has " + std::to_string(sk_.bone_count()));
    }
    pose.validate();
    Tensor t({1, sk_.bone_count(), 2});
    for (std::size_t l = 0; l < sk_.bone_count(); ++l) {
      t.at3(0, l, 0) = pose.theta[l].x;
      t.at3(0, l, 1) = pose.theta[l].y;
    }
    return t;
  }

  Skeleton sk_;
  PriorConfig cfg_;
  bool trainable_ = true;
  std::vector<Value> params_;
  std::vector<std::string> names_;
};

// --------------------------------------------------------------------------
// Corruption: Von-Mises angular noise in polar coordinates.
// --------------------------------------------------------------------------

// `Componentwise` perturbs arccos(x) and arcsin(y) with independent noise and
// renormalizes the result to unit length (the reassembled vector is not unit
// in general). `SingleAngle` rotates the bone's polar angle by one noise draw
// and is exactly norm-preserving.
enum class CorruptMode { Componentwise, SingleAngle };

inline OrientationPose corrupt(const OrientationPose& pose, Rng& rng, double kappa,
                               CorruptMode mode = CorruptMode::Componentwise) {
  OrientationPose out = pose;
  for (auto& th : out.theta) {
    if (mode == CorruptMode::SingleAngle) {
      const double phi = std::atan2(th.y, th.x) + sample_vonmises(rng, 0.0, kappa);
      th = {std::cos(phi), std::sin(phi)};
      continue;
    }
    const double u1 = std::acos(std::min(1.0, std::max(-1.0, th.x)));
    const double u2 = std::asin(std::min(1.0, std::max(-1.0, th.y)));
    for (int attempt = 0; attempt < 100; ++attempt) {
      const double n1 = sample_vonmises(rng, 0.0, kappa);
      const double n2 = sample_vonmises(rng, 0.0, kappa);
      const Vec2 cand{std::cos(u1 + n1), std::sin(u2 + n2)};
      const double norm = cand.norm();
      if (norm >= 1e-9) {
        th = {cand.x / norm, cand.y / norm};
        break;
      }
      // Numerically annihilated vector: draw fresh noise (overwhelmingly
      // unlikely; the original orientation survives if all attempts fail).
    }
  }
  return out;
}

// --------------------------------------------------------------------------
// Curriculum training.
// --------------------------------------------------------------------------

struct TrainPriorConfig {
  PriorConfig arch;
  std::size_t epochs = 30;
  std::size_t batch = 64;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  std::size_t per_clean = 3;              // corrupted samples per clean pose
  std::vector<double> kappas = {2, 4, 8}; // widest to tightest noise
  std::size_t kprime = 500;
  std::size_t k = 5;
  bool exact_knn = false;
  CorruptMode corrupt_mode = CorruptMode::Componentwise;
};

struct TrainPriorResult {
  PriorModel model;
  std::vector<double> loss_trace;  // per-epoch mean L1 loss
};

// L1 regression of g onto labeled distances. Epochs are split into thirds
// with the near-manifold (largest-kappa) share of the corrupted half at
// 0% / 25% / 50%; the remainder splits evenly across the other noise levels.
inline TrainPriorResult train_prior(const std::vector<OrientationPose>& clean,
                                    const Skeleton& sk, const TrainPriorConfig& cfg) {
  if (clean.empty()) throw std::invalid_argument("train_prior: clean pose set is empty");
  if (cfg.kappas.empty()) throw std::invalid_argument("train_prior: need at least one kappa");
  const std::size_t bones = sk.bone_count();
  Rng rng(cfg.seed);

  // Corruption pools, one per kappa, labeled against the clean set.
  PoseKnn index(clean);
  const std::size_t nk = cfg.kappas.size();
  std::vector<std::vector<LabeledPose>> pools(nk);
  for (const auto& base : clean) {
    for (std::size_t c = 0; c < cfg.per_clean; ++c) {
      const std::size_t ki = rng.uniform_index(nk);
      OrientationPose bad = corrupt(base, rng, cfg.kappas[ki], cfg.corrupt_mode);
      pools[ki].push_back({bad, index.label(bad, cfg.kprime, cfg.k, cfg.exact_knn)});
    }
  }
  for (std::size_t ki = 0; ki < nk; ++ki) {
    if (pools[ki].empty()) {
      // Tiny clean sets can starve a pool; backfill with one corruption so
      // curriculum draws stay well-defined.
      OrientationPose bad = corrupt(clean[0], rng, cfg.kappas[ki], cfg.corrupt_mode);
      pools[ki].push_back({bad, index.label(bad, cfg.kprime, cfg.k, cfg.exact_knn)});
    }
  }

  PriorModel model = PriorModel::init(sk, cfg.arch, rng.next_u64());
  Adam opt(model.params(), cfg.lr);
  const std::size_t total = clean.size() * (1 + cfg.per_clean);
  const std::size_t steps = std::max<std::size_t>(1, total / cfg.batch);
  const std::size_t near = nk - 1;  // largest kappa = tightest, near-manifold
  std::vector<double> trace;
  trace.reserve(cfg.epochs);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::size_t third = std::min<std::size_t>(2, epoch * 3 / std::max<std::size_t>(1, cfg.epochs));
    const double near_share = 0.25 * static_cast<double>(third);
    double epoch_loss = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      const std::size_t n_clean = cfg.batch / 2;
      const std::size_t n_corr = cfg.batch - n_clean;
      const auto n_near = static_cast<std::size_t>(std::llround(near_share * static_cast<double>(n_corr)));
      Tensor th({cfg.batch, bones, 2});
      Tensor lab({cfg.batch, 1});
      for (std::size_t i = 0; i < cfg.batch; ++i) {
        const OrientationPose* p = nullptr;
        double d = 0.0;
        if (i < n_clean) {
          p = &clean[rng.uniform_index(clean.size())];
        } else {
          std::size_t ki;
          if (i < n_clean + n_near) {
            ki = near;
          } else if (nk == 1) {
            ki = 0;
          } else {
            ki = rng.uniform_index(near);  // even split over the far pools
          }
          const LabeledPose& lp = pools[ki][rng.uniform_index(pools[ki].size())];
          p = &lp.pose;
          d = lp.distance;
        }
        for (std::size_t l = 0; l < bones; ++l) {
          th.at3(i, l, 0) = p->theta[l].x;
          th.at3(i, l, 1) = p->theta[l].y;
        }
        lab.at2(i, 0) = d;
      }
      Value loss = mean(abs(model.score_batch(Value::constant(std::move(th))) -
                            Value::constant(std::move(lab))));
      const double lv = loss.val()[0];
      if (!std::isfinite(lv)) {
        throw std::runtime_error("train_prior: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", step " + std::to_string(step) +
                                 " after " + std::to_string(trace.size()) + " finished epochs");
      }
      epoch_loss += lv;
      opt.zero_grad();
      backward(loss);
      opt.step();
    }
    trace.push_back(epoch_loss / static_cast<double>(steps));
  }
  return {std::move(model), std::move(trace)};
}

// --------------------------------------------------------------------------
// Adaptation regularizer L_prior.
// --------------------------------------------------------------------------

struct PriorLossResult {
  Value loss;             // mean prior score over scored samples
  std::size_t excluded;   // samples dropped for degenerate bones
};

// Mean of g(T(coords)) over the batch, for differentiable [B,K,2] keypoint
// coordinates. The prior must be frozen; samples whose coordinates produce a
// degenerate bone are excluded from the mean (and counted) rather than
// contaminating the gradient.
inline PriorLossResult prior_loss_coords(const Value& coords, const PriorModel& prior,
                                         double delta_min = 1e-6) {
  if (prior.trainable()) {
    throw std::invalid_argument("prior_loss: prior parameters must be frozen");
  }
  const Skeleton& sk = prior.skeleton();
  const Tensor& cv = coords.val();
  const std::size_t b = cv.shape()[0], kp = cv.shape()[1];

  Tensor mask({b, 1});
  std::size_t excluded = 0;
  std::vector<Vec2> sample(kp);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < kp; ++j) sample[j] = {cv.at3(i, j, 0), cv.at3(i, j, 1)};
    const bool bad = has_degenerate_bone(sample, sk, delta_min);
    mask.at2(i, 0) = bad ? 0.0 : 1.0;
    excluded += bad ? 1 : 0;
  }
  if (excluded == b) {
    return {Value::constant(0.0), excluded};
  }
  Value scores = prior.score_batch(coords_to_orientations(coords, sk, delta_min));  // [B,1]
  Value loss = sum(scores * Value::constant(std::move(mask))) /
               static_cast<double>(b - excluded);
  return {loss, excluded};
}

// Mean of g(T(soft_argmax(h))) over the batch.
inline PriorLossResult prior_loss(const Value& heatmaps, const PriorModel& prior,
                                  double delta_min = 1e-6,
                                  SoftArgmaxMode mode = SoftArgmaxMode::Mass) {
  return prior_loss_coords(soft_argmax(heatmaps, mode), prior, delta_min);
}

}  // namespace poseadapt
