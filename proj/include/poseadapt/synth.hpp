#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "poseadapt/image.hpp"
#include "poseadapt/pose.hpp"
#include "poseadapt/rng.hpp"
#include "poseadapt/skeleton.hpp"

namespace poseadapt {

// ---------------------------------------------------------------------------
// Domain specification: a forward-kinematics pose generator plus a stick-
// figure renderer, enough to stand in for a labeled 2D pose dataset.
// ---------------------------------------------------------------------------

struct Range {
  double lo = 0.0, hi = 0.0;

  // lo + (hi-lo)*u: exact lo when the range has zero width.
  double sample(Rng& rng) const { return lo + (hi - lo) * rng.uniform(); }
  bool contains(double v, double eps = 1e-9) const { return v >= lo - eps && v <= hi + eps; }
};

// Per-bone angle windows are RELATIVE to the parent bone's absolute angle
// (the root bone's window is absolute); lengths are in pixels. Forward
// kinematics places bone l's distal endpoint from its already-placed anchor.
struct PoseGenSpec {
  Range root_x, root_y;        // root keypoint position box
  std::vector<Range> angles;   // radians, one per bone
  std::vector<Range> lengths;  // pixels, one per bone
  double margin = 2.0;         // keypoints stay this far inside the frame

  void validate(const Skeleton& sk) const {
    if (angles.size() != sk.bone_count() || lengths.size() != sk.bone_count()) {
      throw std::invalid_argument("pose gen: need one angle and one length range per bone");
    }
    for (const auto& r : lengths) {
      if (r.lo <= 0.0) throw std::invalid_argument("pose gen: bone lengths must be positive");
    }
  }
};

// Grayscale stick-figure renderer parameters. Intensities are in [0,1].
struct RenderSpec {
  std::size_t image_size = 64;
  double limb_thickness = 2.2;  // stroke diameter, px
  double joint_radius = 1.6;    // joint disk radius, px
  double fg = 0.12;             // limb intensity
  double bg = 0.94;             // background intensity
  double texture_amp = 0.0;     // sinusoidal background texture amplitude
  double texture_freq = 3.0;    // texture cycles across the image
  double clutter = 0.0;         // expected distractor strokes per image (Poisson)
  double blur_sigma = 0.0;
  double noise = 0.0;           // iid Gaussian pixel noise sigma
  double contrast = 1.0;        // photometric transfer, applied last
  double brightness = 0.0;
};

struct DomainSpec {
  PoseGenSpec pose;
  RenderSpec render;
  std::size_t train_count = 2000;
  std::size_t test_count = 500;
  std::uint64_t seed = 1;
  // Recorded shift magnitudes (0 for a base domain; set by make_shifted_pair).
  double shift_appearance = 0.0;
  double shift_pose_range = 0.0;
};

// ---------------------------------------------------------------------------
// Pose sampling
// ---------------------------------------------------------------------------

namespace detail {

// One forward-kinematics draw; the caller checks frame containment.
inline Pose2D fk_draw(const Skeleton& sk, const PoseGenSpec& gen, Rng& rng) {
  const std::size_t k = sk.keypoint_count(), l = sk.bone_count();
  Pose2D p;
  p.coords.assign(k, {0.0, 0.0});
  p.visibility.assign(k, 1);
  std::vector<std::uint8_t> placed(k, 0);

  const std::size_t root_kp = sk.bones[0].b;
  p.coords[root_kp] = {gen.root_x.sample(rng), gen.root_y.sample(rng)};
  placed[root_kp] = 1;

  std::vector<double> abs_angle(l, 0.0);
  for (std::size_t i = 0; i < l; ++i) {
    const double rel = gen.angles[i].sample(rng);
    const double len = gen.lengths[i].sample(rng);
    abs_angle[i] = (sk.parent[i] < 0 ? 0.0 : abs_angle[static_cast<std::size_t>(sk.parent[i])]) +
                   rel;
    const std::size_t anchor = sk.bones[i].b, distal = sk.bones[i].a;
    if (!placed[anchor]) {
      throw std::invalid_argument("pose gen: bone " + std::to_string(i) +
                                  " anchors on an unplaced keypoint (skeleton is not a "
                                  "forward-kinematics chain)");
    }
    p.coords[distal] = {p.coords[anchor].x + len * std::cos(abs_angle[i]),
                        p.coords[anchor].y + len * std::sin(abs_angle[i])};
    placed[distal] = 1;
  }
  return p;
}

inline bool in_frame(const Pose2D& p, double margin, double image_size) {
  const double hi = image_size - 1.0 - margin;
  for (const auto& c : p.coords) {
    if (c.x < margin || c.x > hi || c.y < margin || c.y > hi) return false;
  }
  return true;
}

// Knuth's product-of-uniforms Poisson sampler; fine for the small means used
// for clutter counts.
inline std::size_t sample_poisson(Rng& rng, double mean) {
  if (mean <= 0.0) return 0;
  const double limit = std::exp(-mean);
  std::size_t n = 0;
  double prod = rng.uniform();
  while (prod > limit) {
    ++n;
    prod *= rng.uniform();
  }
  return n;
}

// Distance from point q to segment [a,b].
inline double segment_distance(Vec2 q, Vec2 a, Vec2 b) {
  const Vec2 d = b - a;
  const double len2 = d.x * d.x + d.y * d.y;
  double t = len2 > 0.0 ? ((q.x - a.x) * d.x + (q.y - a.y) * d.y) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const Vec2 c{a.x + t * d.x, a.y + t * d.y};
  return (q - c).norm();
}

// Anti-aliased stroke: inside radius r the pixel takes `shade`, with a 1 px
// linear coverage ramp. Pixels outside the ramp are left untouched exactly.
inline void draw_capsule(Image& img, Vec2 a, Vec2 b, double r, double shade) {
  const double reach = r + 1.0;
  const long x0 = std::max(0L, static_cast<long>(std::floor(std::min(a.x, b.x) - reach)));
  const long x1 = std::min(static_cast<long>(img.w) - 1,
                           static_cast<long>(std::ceil(std::max(a.x, b.x) + reach)));
  const long y0 = std::max(0L, static_cast<long>(std::floor(std::min(a.y, b.y) - reach)));
  const long y1 = std::min(static_cast<long>(img.h) - 1,
                           static_cast<long>(std::ceil(std::max(a.y, b.y) + reach)));
  for (long y = y0; y <= y1; ++y) {
    for (long x = x0; x <= x1; ++x) {
      const double d =
          segment_distance({static_cast<double>(x), static_cast<double>(y)}, a, b);
      const double cov = std::clamp(0.5 + (r - d), 0.0, 1.0);
      if (cov > 0.0) {
        double& v = img.at(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
        v += cov * (shade - v);
      }
    }
  }
}

}  // namespace detail

// Forward-kinematics pose with every keypoint inside the frame; resamples the
// whole pose up to 100 times before declaring the spec infeasible.
inline Pose2D sample_pose(const Skeleton& sk, const PoseGenSpec& gen, std::size_t image_size,
                          Rng& rng) {
  gen.validate(sk);
  for (int attempt = 0; attempt < 100; ++attempt) {
    Pose2D p = detail::fk_draw(sk, gen, rng);
    if (detail::in_frame(p, gen.margin, static_cast<double>(image_size))) return p;
  }
  throw std::runtime_error("sample_pose: no in-frame pose after 100 attempts (infeasible spec)");
}

// Anti-aliased stick figure over the configured background. Layer order:
// textured background, clutter strokes, figure limbs and joint disks, blur,
// pixel noise, photometric transfer. Every stage with a zero/identity setting
// is skipped entirely so that it cannot perturb pixel values.
inline Image render(const Pose2D& pose, const Skeleton& sk, const RenderSpec& spec, Rng& rng) {
  const std::size_t n = spec.image_size;
  Image img(n, n, 1, spec.bg);

  if (spec.texture_amp > 0.0) {
    const double dir = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double cx = std::cos(dir), cy = std::sin(dir);
    const double scale = 2.0 * 3.14159265358979323846 * spec.texture_freq / static_cast<double>(n);
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        img.at(0, y, x) =
            spec.bg + spec.texture_amp *
                          std::sin(scale * (cx * static_cast<double>(x) +
                                            cy * static_cast<double>(y)) +
                                   phase);
      }
    }
  }

  const std::size_t strokes = detail::sample_poisson(rng, spec.clutter);
  for (std::size_t i = 0; i < strokes; ++i) {
    const Vec2 a{rng.uniform(0.0, static_cast<double>(n - 1)),
                 rng.uniform(0.0, static_cast<double>(n - 1))};
    const double ang = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double len = rng.uniform(3.0, 14.0);
    const Vec2 b{a.x + len * std::cos(ang), a.y + len * std::sin(ang)};
    const double r = 0.5 * rng.uniform(0.6, 2.0);
    const double shade = rng.uniform(0.0, 1.0);
    detail::draw_capsule(img, a, b, r, shade);
  }

  for (const auto& bone : sk.bones) {
    detail::draw_capsule(img, pose.coords[bone.b], pose.coords[bone.a],
                         0.5 * spec.limb_thickness, spec.fg);
  }
  for (const auto& c : pose.coords) detail::draw_capsule(img, c, c, spec.joint_radius, spec.fg);

  if (spec.blur_sigma > 0.0) img = gaussian_blur(img, spec.blur_sigma);
  if (spec.noise > 0.0) {
    for (double& v : img.pix) v = std::clamp(v + rng.normal(0.0, spec.noise), 0.0, 1.0);
  }
  if (spec.contrast != 1.0 || spec.brightness != 0.0) {
    img = adjust_photometric(img, spec.brightness, spec.contrast);
  }
  return img;
}

// ---------------------------------------------------------------------------
// Domain presets and shifts
// ---------------------------------------------------------------------------

// Humanlike articulation windows for the default 13-keypoint skeleton on a
// 64x64 frame (y grows downward). Angles are relative to the parent bone.
inline DomainSpec default_source_domain() {
  DomainSpec d;
  d.pose.root_x = {26.0, 38.0};
  d.pose.root_y = {10.0, 16.0};
  d.pose.angles = {
      {2.00, 2.30},    // head->lsho (root, absolute)
      {-1.25, -0.95},  // head->rsho
      {0.10, 0.70},    // lsho->lelb
      {-0.30, 0.60},   // lelb->lwri
      {-0.70, -0.10},  // rsho->relb
      {-0.60, 0.30},   // relb->rwri
      {-0.50, -0.30},  // lsho->lhip (torso)
      {0.30, 0.50},    // rsho->rhip (torso)
      {-0.25, 0.45},   // lhip->lkne
      {-0.35, 0.35},   // lkne->lank
      {-0.45, 0.25},   // rhip->rkne
      {-0.35, 0.35},   // rkne->rank
  };
  d.pose.lengths = {{6.0, 8.0},   {6.0, 8.0},   {7.0, 9.0},  {7.0, 9.0},
                    {7.0, 9.0},   {7.0, 9.0},   {12.0, 15.0}, {12.0, 15.0},
                    {8.0, 10.0},  {8.0, 10.0},  {8.0, 10.0}, {8.0, 10.0}};
  d.render.blur_sigma = 0.4;
  d.render.noise = 0.01;
  return d;
}

// Axes along which a target domain may differ from the source.
struct ShiftConfig {
  double appearance = 1.0;        // 0 = none, 1 = the shipped "strong" preset
  double pose_range = 0.0;        // radians; alternating-sign offset per angle window
  std::uint64_t seed_offset = 1;  // target draws come from a different stream
};

// Target spec differing from the source only along the configured axes; the
// applied magnitudes are recorded on the returned target spec.
inline std::pair<DomainSpec, DomainSpec> make_shifted_pair(const DomainSpec& src,
                                                           const ShiftConfig& shift) {
  DomainSpec tgt = src;
  tgt.seed = src.seed + shift.seed_offset;
  tgt.shift_appearance = shift.appearance;
  tgt.shift_pose_range = shift.pose_range;

  const double a = shift.appearance;
  if (a != 0.0) {
    RenderSpec& r = tgt.render;
    r.limb_thickness += 1.8 * a;
    r.fg += 0.38 * a;
    r.bg -= 0.14 * a;
    r.texture_amp += 0.22 * a;
    r.clutter += 7.0 * a;
    r.blur_sigma += 0.9 * a;
    r.noise += 0.04 * a;
    r.contrast -= 0.30 * a;
    r.brightness += 0.05 * a;
  }
  if (shift.pose_range != 0.0) {
    for (std::size_t l = 0; l < tgt.pose.angles.size(); ++l) {
      const double delta = (l % 2 == 0 ? 1.0 : -1.0) * shift.pose_range;
      tgt.pose.angles[l].lo += delta;
      tgt.pose.angles[l].hi += delta;
    }
  }
  return {src, tgt};
}

// ---------------------------------------------------------------------------
// JSON round trip (dataset provenance and run configuration)
// ---------------------------------------------------------------------------

inline nlohmann::json range_to_json(const Range& r) { return {r.lo, r.hi}; }
inline Range range_from_json(const nlohmann::json& j) { return {j.at(0), j.at(1)}; }

inline nlohmann::json domain_spec_to_json(const DomainSpec& d) {
  nlohmann::json angles = nlohmann::json::array(), lengths = nlohmann::json::array();
  for (const auto& r : d.pose.angles) angles.push_back(range_to_json(r));
  for (const auto& r : d.pose.lengths) lengths.push_back(range_to_json(r));
  return {
      {"pose",
       {{"root_x", range_to_json(d.pose.root_x)},
        {"root_y", range_to_json(d.pose.root_y)},
        {"angles", angles},
        {"lengths", lengths},
        {"margin", d.pose.margin}}},
      {"render",
       {{"image_size", d.render.image_size},
        {"limb_thickness", d.render.limb_thickness},
        {"joint_radius", d.render.joint_radius},
        {"fg", d.render.fg},
        {"bg", d.render.bg},
        {"texture_amp", d.render.texture_amp},
        {"texture_freq", d.render.texture_freq},
        {"clutter", d.render.clutter},
        {"blur_sigma", d.render.blur_sigma},
        {"noise", d.render.noise},
        {"contrast", d.render.contrast},
        {"brightness", d.render.brightness}}},
      {"train_count", d.train_count},
      {"test_count", d.test_count},
      {"seed", d.seed},
      {"shift_appearance", d.shift_appearance},
      {"shift_pose_range", d.shift_pose_range}};
}

inline DomainSpec domain_spec_from_json(const nlohmann::json& j) {
  DomainSpec d;
  const auto& p = j.at("pose");
  d.pose.root_x = range_from_json(p.at("root_x"));
  d.pose.root_y = range_from_json(p.at("root_y"));
  for (const auto& r : p.at("angles")) d.pose.angles.push_back(range_from_json(r));
  for (const auto& r : p.at("lengths")) d.pose.lengths.push_back(range_from_json(r));
  d.pose.margin = p.at("margin");
  const auto& r = j.at("render");
  d.render.image_size = r.at("image_size");
  d.render.limb_thickness = r.at("limb_thickness");
  d.render.joint_radius = r.at("joint_radius");
  d.render.fg = r.at("fg");
  d.render.bg = r.at("bg");
  d.render.texture_amp = r.at("texture_amp");
  d.render.texture_freq = r.at("texture_freq");
  d.render.clutter = r.at("clutter");
  d.render.blur_sigma = r.at("blur_sigma");
  d.render.noise = r.at("noise");
  d.render.contrast = r.at("contrast");
  d.render.brightness = r.at("brightness");
  d.train_count = j.at("train_count");
  d.test_count = j.at("test_count");
  d.seed = j.at("seed");
  d.shift_appearance = j.at("shift_appearance");
  d.shift_pose_range = j.at("shift_pose_range");
  return d;
}

// ---------------------------------------------------------------------------
// Dataset generation and loading
// ---------------------------------------------------------------------------

struct ImageDataset {
  std::vector<Image> images;
  std::vector<Pose2D> poses;  // grid: image pixel frame

  std::size_t size() const { return images.size(); }
};

namespace detail {

inline std::string sample_id(const std::string& prefix, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%05zu", prefix.c_str(), index);
  return buf;
}

}  // namespace detail

// Pose-only export set (no image data); each sample gets its own forked
// stream so the set is independent of generation order.
inline std::vector<Pose2D> sample_pose_set(const Skeleton& sk, const PoseGenSpec& gen,
                                           std::size_t image_size, std::size_t count,
                                           std::uint64_t seed,
                                           const std::string& id_prefix = "pose_") {
  const Rng base(seed);
  std::vector<Pose2D> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = base.fork(i);
    Pose2D p = sample_pose(sk, gen, image_size, rng);
    p.id = detail::sample_id(id_prefix, i);
    out.push_back(std::move(p));
  }
  return out;
}

// Write one split: img_#####.pgm per sample plus poses.jsonl. Per-sample
// forked streams keep the output independent of iteration order.
inline std::vector<Pose2D> write_split(const std::string& dir, const Skeleton& sk,
                                       const DomainSpec& d, std::size_t count,
                                       std::uint64_t split_salt) {
  std::filesystem::create_directories(dir);
  const Rng base = Rng(d.seed).fork(split_salt);
  std::vector<Pose2D> poses;
  poses.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = base.fork(i);
    Pose2D p = sample_pose(sk, d.pose, d.render.image_size, rng);
    p.id = detail::sample_id("img_", i);
    const Image img = render(p, sk, d.render, rng);
    write_pnm(dir + "/" + p.id + ".pgm", img);
    poses.push_back(std::move(p));
  }
  save_poses(dir + "/poses.jsonl", poses);
  return poses;
}

// dir/train, dir/test, dir/spec.json. Rendering never perturbs the label
// coordinates: the returned poses are the sampled ones verbatim.
inline void generate_domain(const Skeleton& sk, const DomainSpec& d, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_split(dir + "/train", sk, d, d.train_count, 0xA);
  write_split(dir + "/test", sk, d, d.test_count, 0xB);
  std::ofstream os(dir + "/spec.json", std::ios::binary);
  if (!os) throw std::runtime_error("generate_domain: cannot open " + dir + "/spec.json");
  os << domain_spec_to_json(d).dump(2) << "\n";
}

inline ImageDataset load_split(const std::string& dir) {
  ImageDataset ds;
  ds.poses = load_poses(dir + "/poses.jsonl");
  ds.images.reserve(ds.poses.size());
  for (const auto& p : ds.poses) ds.images.push_back(read_pnm(dir + "/" + p.id + ".pgm"));
  return ds;
}

// Label-free loader: every .pgm in the directory, sorted by filename. This is
// the only way adaptation ingests target data — it never opens a label file.
inline std::vector<Image> load_images(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw std::runtime_error("load_images: no such directory: " + dir);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".pgm") {
      names.push_back(e.path().filename().string());
    }
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw std::runtime_error("load_images: no .pgm images in " + dir);
  std::vector<Image> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(read_pnm((fs::path(dir) / n).string()));
  return out;
}

}  // namespace poseadapt
