#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "poseadapt/autodiff.hpp"
#include "poseadapt/geometry.hpp"
#include "poseadapt/skeleton.hpp"

namespace poseadapt {

// K keypoint locations in a stated pixel frame.
struct Pose2D {
  std::string id;
  std::vector<Vec2> coords;
  std::vector<std::uint8_t> visibility;  // 1 = labeled/visible

  void validate(std::size_t k) const {
    if (coords.size() != k || visibility.size() != k) {
      throw std::invalid_argument("pose " + id + ": expected " + std::to_string(k) +
                                  " keypoints, got " + std::to_string(coords.size()));
    }
    for (const auto& c : coords) {
      if (!std::isfinite(c.x) || !std::isfinite(c.y)) {
        throw std::invalid_argument("pose " + id + ": non-finite coordinate");
      }
    }
  }
};

// L unit bone vectors; the scale- and translation-free pose representation.
struct OrientationPose {
  std::vector<Vec2> theta;

  void validate() const {
    for (std::size_t l = 0; l < theta.size(); ++l) {
      if (std::fabs(theta[l].norm() - 1.0) > 1e-3) {
        throw std::invalid_argument("orientation pose: bone " + std::to_string(l) +
                                    " is not unit length");
      }
    }
  }

  // Flat [theta_1 | ... | theta_L] layout used for L2 distances in pose space.
  std::vector<double> flat() const {
    std::vector<double> v;
    v.reserve(theta.size() * 2);
    for (const auto& t : theta) {
      v.push_back(t.x);
      v.push_back(t.y);
    }
    return v;
  }
};

inline double pose_space_distance(const OrientationPose& a, const OrientationPose& b) {
  double s = 0.0;
  for (std::size_t l = 0; l < a.theta.size(); ++l) {
    const double dx = a.theta[l].x - b.theta[l].x;
    const double dy = a.theta[l].y - b.theta[l].y;
    s += dx * dx + dy * dy;
  }
  return std::sqrt(s);
}

// theta_l = (u^a - u^b)/||u^a - u^b||, the map T(.) from coordinates to the
// orientation pose space.
inline OrientationPose pose_to_orientations(const std::vector<Vec2>& coords, const Skeleton& sk,
                                            double delta_min = 1e-6) {
  OrientationPose out;
  out.theta.reserve(sk.bone_count());
  for (std::size_t l = 0; l < sk.bone_count(); ++l) {
    const Vec2 d = coords[sk.bones[l].a] - coords[sk.bones[l].b];
    const double n = d.norm();
    if (n <= delta_min) {
      throw std::invalid_argument("degenerate bone " + std::to_string(l) + " (" +
                                  sk.names[sk.bones[l].a] + "-" + sk.names[sk.bones[l].b] + ")");
    }
    out.theta.push_back({d.x / n, d.y / n});
  }
  return out;
}

// Differentiable T(.) on a [B,K,2] coordinate batch -> [B,L,2]. The caller is
// expected to have screened out degenerate bones (see has_degenerate_bone).
inline Value coords_to_orientations(const Value& coords, const Skeleton& sk,
                                    double delta_min = 1e-6) {
  if (coords.shape().size() != 3 || coords.shape()[2] != 2) {
    throw std::invalid_argument("coords_to_orientations: expected [B,K,2], got " +
                                shape_str(coords.shape()));
  }
  std::vector<Value> thetas;
  thetas.reserve(sk.bone_count());
  for (std::size_t l = 0; l < sk.bone_count(); ++l) {
    Value d = slice(coords, 1, sk.bones[l].a, 1) - slice(coords, 1, sk.bones[l].b, 1);  // [B,1,2]
    // Clamp the squared length before the square root: sqrt'(0) is infinite,
    // so guarding after the root would still turn a zero-length bone into a
    // NaN gradient (0 * inf) even though the clamp blocks the path.
    Value n = sqrt(clamp_min(sum(square(d), {2}, true), delta_min * delta_min));  // [B,1,1]
    thetas.push_back(d / n);
  }
  return concat(thetas, 1);  // [B,L,2]
}

// True if any bone of this sample is shorter than delta_min.
inline bool has_degenerate_bone(const std::vector<Vec2>& coords, const Skeleton& sk,
                                double delta_min = 1e-6) {
  for (const auto& b : sk.bones) {
    if ((coords[b.a] - coords[b.b]).norm() <= delta_min) return true;
  }
  return false;
}

// --------------------------------------------------------------------------
// Pose files: one JSON record per line (id, K x 2 coords, visibility).
// --------------------------------------------------------------------------

inline nlohmann::json pose_to_json(const Pose2D& p) {
  nlohmann::json coords = nlohmann::json::array();
  for (const auto& c : p.coords) coords.push_back({c.x, c.y});
  return {{"id", p.id}, {"coords", coords}, {"vis", p.visibility}};
}

inline Pose2D pose_from_json(const nlohmann::json& j) {
  Pose2D p;
  p.id = j.at("id").get<std::string>();
  for (const auto& c : j.at("coords")) p.coords.push_back({c.at(0), c.at(1)});
  p.visibility = j.at("vis").get<std::vector<std::uint8_t>>();
  return p;
}

inline void save_poses(const std::string& path, const std::vector<Pose2D>& poses) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_poses: cannot open " + path);
  for (const auto& p : poses) os << pose_to_json(p).dump() << "\n";
  if (!os) throw std::runtime_error("save_poses: write failed for " + path);
}

inline std::vector<Pose2D> load_poses(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_poses: cannot open " + path);
  std::vector<Pose2D> poses;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    poses.push_back(pose_from_json(nlohmann::json::parse(line)));
  }
  return poses;
}

}  // namespace poseadapt
