#pragma once

// Run configuration: one JSON document describing every pipeline stage (data
// generation, source training, prior training, adaptation, ablation) so a
// single --config file drives all commands and can be hashed for provenance.
//
// Parsing starts from the built-in defaults and overrides whatever keys are
// present; serialization always emits the fully resolved document, so the
// hash of a loaded config is independent of which keys the file spelled out.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "poseadapt/adapt.hpp"
#include "poseadapt/augment.hpp"
#include "poseadapt/model.hpp"
#include "poseadapt/prior.hpp"
#include "poseadapt/synth.hpp"
#include "poseadapt/train.hpp"

namespace poseadapt {

// ---------------------------------------------------------------------------
// Config blocks without a home elsewhere
// ---------------------------------------------------------------------------

struct DataConfig {
  DomainSpec source = default_source_domain();
  ShiftConfig shift;             // how the target domain differs
  std::size_t aux_count = 5000;  // pose-only auxiliary set size
  std::uint64_t aux_seed = 77;
};

struct AblateConfig {
  std::vector<double> p_grid = {0.1, 0.3, 0.5, 0.7, 0.9};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
};

struct RunConfig {
  ModelConfig model;
  DataConfig data;
  TrainSourceConfig train;
  TrainPriorConfig prior;
  AdaptConfig adapt;
  AblateConfig ablate;

  void validate() const {
    model.validate();
    train.validate();
    adapt.validate();
    if (data.aux_count == 0) throw std::invalid_argument("config: data.aux_count must be positive");
    if (prior.epochs == 0) throw std::invalid_argument("config: prior.epochs must be positive");
    if (prior.batch == 0) throw std::invalid_argument("config: prior.batch must be positive");
    if (ablate.p_grid.empty() || ablate.seeds.empty()) {
      throw std::invalid_argument("config: ablate grids must be non-empty");
    }
    for (double p : ablate.p_grid) {
      if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("config: ablate p values must be in (0,1]");
    }
  }
};

// ---------------------------------------------------------------------------
// JSON round trip
// ---------------------------------------------------------------------------

namespace detail {

// Override-if-present helpers: absent keys keep the default already in place.
template <typename T>
inline void get_to_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

inline void get_range_if(const nlohmann::json& j, const char* key, double& lo, double& hi) {
  if (j.contains(key)) {
    lo = j.at(key).at(0).get<double>();
    hi = j.at(key).at(1).get<double>();
  }
}

}  // namespace detail

inline nlohmann::json model_config_to_json(const ModelConfig& m) {
  return {{"image_size", m.image_size}, {"in_channels", m.in_channels},
          {"heatmap_size", m.heatmap_size}, {"keypoints", m.keypoints},
          {"c1", m.c1}, {"c2", m.c2}, {"c3", m.c3},
          {"feat_channels", m.feat_channels}, {"dec_channels", m.dec_channels}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig m;
  detail::get_to_if(j, "image_size", m.image_size);
  detail::get_to_if(j, "in_channels", m.in_channels);
  detail::get_to_if(j, "heatmap_size", m.heatmap_size);
  detail::get_to_if(j, "keypoints", m.keypoints);
  detail::get_to_if(j, "c1", m.c1);
  detail::get_to_if(j, "c2", m.c2);
  detail::get_to_if(j, "c3", m.c3);
  detail::get_to_if(j, "feat_channels", m.feat_channels);
  detail::get_to_if(j, "dec_channels", m.dec_channels);
  return m;
}

inline nlohmann::json augment_ranges_to_json(const AugmentRanges& a) {
  return {{"rot_deg", a.rot_deg},
          {"trans_frac", a.trans_frac},
          {"shear", a.shear},
          {"scale", {a.scale_lo, a.scale_hi}},
          {"blur_sigma_max", a.blur_sigma_max},
          {"brightness_max", a.brightness_max},
          {"contrast", {a.contrast_lo, a.contrast_hi}}};
}

inline AugmentRanges augment_ranges_from_json(const nlohmann::json& j) {
  AugmentRanges a;
  detail::get_to_if(j, "rot_deg", a.rot_deg);
  detail::get_to_if(j, "trans_frac", a.trans_frac);
  detail::get_to_if(j, "shear", a.shear);
  detail::get_range_if(j, "scale", a.scale_lo, a.scale_hi);
  detail::get_to_if(j, "blur_sigma_max", a.blur_sigma_max);
  detail::get_to_if(j, "brightness_max", a.brightness_max);
  detail::get_range_if(j, "contrast", a.contrast_lo, a.contrast_hi);
  return a;
}

inline nlohmann::json data_config_to_json(const DataConfig& d) {
  return {{"source", domain_spec_to_json(d.source)},
          {"shift", {{"appearance", d.shift.appearance},
                     {"pose_range", d.shift.pose_range},
                     {"seed_offset", d.shift.seed_offset}}},
          {"aux_count", d.aux_count},
          {"aux_seed", d.aux_seed}};
}

inline DataConfig data_config_from_json(const nlohmann::json& j) {
  DataConfig d;
  if (j.contains("source")) {
    // The domain-spec parser wants the full document; splice partial
    // overrides onto the serialized defaults first (deep merge).
    nlohmann::json full = domain_spec_to_json(d.source);
    full.merge_patch(j.at("source"));
    d.source = domain_spec_from_json(full);
  }
  if (j.contains("shift")) {
    const auto& s = j.at("shift");
    detail::get_to_if(s, "appearance", d.shift.appearance);
    detail::get_to_if(s, "pose_range", d.shift.pose_range);
    detail::get_to_if(s, "seed_offset", d.shift.seed_offset);
  }
  detail::get_to_if(j, "aux_count", d.aux_count);
  detail::get_to_if(j, "aux_seed", d.aux_seed);
  return d;
}

inline nlohmann::json train_config_to_json(const TrainSourceConfig& t) {
  return {{"lr", t.lr},
          {"epochs", t.epochs},
          {"lr_drops", t.lr_drops},
          {"lr_drop_factor", t.lr_drop_factor},
          {"batch", t.batch},
          {"sigma", t.sigma},
          {"augment", augment_ranges_to_json(t.augment)},
          {"seed", t.seed}};
}

inline TrainSourceConfig train_config_from_json(const nlohmann::json& j, const ModelConfig& model) {
  TrainSourceConfig t;
  t.model = model;
  detail::get_to_if(j, "lr", t.lr);
  detail::get_to_if(j, "epochs", t.epochs);
  detail::get_to_if(j, "lr_drops", t.lr_drops);
  detail::get_to_if(j, "lr_drop_factor", t.lr_drop_factor);
  detail::get_to_if(j, "batch", t.batch);
  detail::get_to_if(j, "sigma", t.sigma);
  if (j.contains("augment")) t.augment = augment_ranges_from_json(j.at("augment"));
  detail::get_to_if(j, "seed", t.seed);
  return t;
}

inline nlohmann::json prior_train_config_to_json(const TrainPriorConfig& p) {
  return {{"code_dim", p.arch.code_dim},
          {"enc_hidden", p.arch.enc_hidden},
          {"dec_hidden", p.arch.dec_hidden},
          {"epochs", p.epochs},
          {"batch", p.batch},
          {"lr", p.lr},
          {"seed", p.seed},
          {"per_clean", p.per_clean},
          {"kappas", p.kappas},
          {"kprime", p.kprime},
          {"k", p.k},
          {"exact_knn", p.exact_knn}};
}

inline TrainPriorConfig prior_train_config_from_json(const nlohmann::json& j) {
  TrainPriorConfig p;
  detail::get_to_if(j, "code_dim", p.arch.code_dim);
  detail::get_to_if(j, "enc_hidden", p.arch.enc_hidden);
  detail::get_to_if(j, "dec_hidden", p.arch.dec_hidden);
  detail::get_to_if(j, "epochs", p.epochs);
  detail::get_to_if(j, "batch", p.batch);
  detail::get_to_if(j, "lr", p.lr);
  detail::get_to_if(j, "seed", p.seed);
  detail::get_to_if(j, "per_clean", p.per_clean);
  detail::get_to_if(j, "kappas", p.kappas);
  detail::get_to_if(j, "kprime", p.kprime);
  detail::get_to_if(j, "k", p.k);
  detail::get_to_if(j, "exact_knn", p.exact_knn);
  return p;
}

inline nlohmann::json adapt_config_to_json(const AdaptConfig& a) {
  return {{"alpha", a.alpha},
          {"p", a.p},
          {"lambda1", a.lambda1},
          {"lambda2", a.lambda2},
          {"gamma", a.gamma},
          {"lr", a.lr},
          {"epochs", a.epochs},
          {"lr_drops", a.lr_drops},
          {"lr_drop_factor", a.lr_drop_factor},
          {"batch", a.batch},
          {"pseudo_sigma", a.pseudo_sigma},
          {"delta_min", a.delta_min},
          {"augment", {{"view1", augment_ranges_to_json(a.augment.view1)},
                       {"view2", augment_ranges_to_json(a.augment.view2)}}},
          {"seed", a.seed}};
}

inline AdaptConfig adapt_config_from_json(const nlohmann::json& j) {
  AdaptConfig a;
  detail::get_to_if(j, "alpha", a.alpha);
  detail::get_to_if(j, "p", a.p);
  detail::get_to_if(j, "lambda1", a.lambda1);
  detail::get_to_if(j, "lambda2", a.lambda2);
  detail::get_to_if(j, "gamma", a.gamma);
  detail::get_to_if(j, "lr", a.lr);
  detail::get_to_if(j, "epochs", a.epochs);
  detail::get_to_if(j, "lr_drops", a.lr_drops);
  detail::get_to_if(j, "lr_drop_factor", a.lr_drop_factor);
  detail::get_to_if(j, "batch", a.batch);
  detail::get_to_if(j, "pseudo_sigma", a.pseudo_sigma);
  detail::get_to_if(j, "delta_min", a.delta_min);
  if (j.contains("augment")) {
    const auto& g = j.at("augment");
    if (g.contains("view1")) a.augment.view1 = augment_ranges_from_json(g.at("view1"));
    if (g.contains("view2")) a.augment.view2 = augment_ranges_from_json(g.at("view2"));
  }
  detail::get_to_if(j, "seed", a.seed);
  return a;
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  return {{"model", model_config_to_json(c.model)},
          {"data", data_config_to_json(c.data)},
          {"train", train_config_to_json(c.train)},
          {"prior", prior_train_config_to_json(c.prior)},
          {"adapt", adapt_config_to_json(c.adapt)},
          {"ablate", {{"p_grid", c.ablate.p_grid}, {"seeds", c.ablate.seeds}}}};
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("data")) c.data = data_config_from_json(j.at("data"));
  c.train = j.contains("train") ? train_config_from_json(j.at("train"), c.model)
                                : train_config_from_json(nlohmann::json::object(), c.model);
  if (j.contains("prior")) c.prior = prior_train_config_from_json(j.at("prior"));
  if (j.contains("adapt")) c.adapt = adapt_config_from_json(j.at("adapt"));
  if (j.contains("ablate")) {
    const auto& a = j.at("ablate");
    detail::get_to_if(a, "p_grid", c.ablate.p_grid);
    detail::get_to_if(a, "seeds", c.ablate.seeds);
  }
  c.validate();
  return c;
}

// Canonical serialized form: key-sorted (nlohmann objects iterate sorted),
// two-space indent, trailing newline. Hashes of a config are hashes of this.
inline std::string config_canonical(const RunConfig& c) {
  return config_to_json(c).dump(2) + "\n";
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config: parse error in " + path + ": " + e.what());
  }
  try {
    return config_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config: invalid value in " + path + ": " + e.what());
  }
}

}  // namespace poseadapt
