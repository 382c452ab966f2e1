#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace poseadapt {

// A bone is an ordered keypoint pair: the orientation vector points from the
// anchor joint b toward the distal joint a.
struct Bone {
  std::size_t a = 0;  // distal end
  std::size_t b = 0;  // anchor (proximal) end
};

// Kinematic tree over bones. Bones are stored root-first: parent[l] < l for
// every non-root bone, so a single forward pass visits parents before
// children.
struct Skeleton {
  std::vector<std::string> names;  // K keypoint labels
  std::vector<Bone> bones;         // L ordered pairs
  std::vector<int> parent;         // per bone; -1 for the root bone

  std::size_t keypoint_count() const { return names.size(); }
  std::size_t bone_count() const { return bones.size(); }

  void validate() const {
    const std::size_t k = names.size(), l = bones.size();
    if (k == 0 || l == 0) throw std::invalid_argument("skeleton: empty");
    if (parent.size() != l) throw std::invalid_argument("skeleton: parent map size mismatch");
    std::size_t roots = 0;
    for (std::size_t i = 0; i < l; ++i) {
      if (bones[i].a >= k || bones[i].b >= k || bones[i].a == bones[i].b) {
        throw std::invalid_argument("skeleton: bone " + std::to_string(i) +
                                    " has invalid endpoints");
      }
      if (parent[i] < 0) {
        ++roots;
      } else if (static_cast<std::size_t>(parent[i]) >= i) {
        // parent[l] < l guarantees acyclicity and root-first order.
        throw std::invalid_argument("skeleton: bone " + std::to_string(i) +
                                    " must appear after its parent");
      }
    }
    if (roots != 1) throw std::invalid_argument("skeleton: expected exactly one root bone");
  }
};

// 13 keypoints / 12 bones: head, shoulders, elbows, wrists, hips, knees,
// ankles. The tree roots at the head→left-shoulder bone and branches at the
// shoulders (arms, torso sides) and hips (legs).
inline Skeleton default_skeleton() {
  Skeleton s;
  s.names = {"head",  "lsho", "rsho", "lelb", "relb", "lwri", "rwri",
             "lhip",  "rhip", "lkne", "rkne", "lank", "rank"};
  //          bone:    a (distal), b (anchor)      parent
  s.bones = {{1, 0},   // 0  head->lsho            root
             {2, 0},   // 1  head->rsho            0
             {3, 1},   // 2  lsho->lelb            0
             {5, 3},   // 3  lelb->lwri            2
             {4, 2},   // 4  rsho->relb            1
             {6, 4},   // 5  relb->rwri            4
             {7, 1},   // 6  lsho->lhip (torso L)  0
             {8, 2},   // 7  rsho->rhip (torso R)  1
             {9, 7},   // 8  lhip->lkne            6
             {11, 9},  // 9  lkne->lank            8
             {10, 8},  // 10 rhip->rkne            7
             {12, 10}};// 11 rkne->rank            10
  s.parent = {-1, 0, 0, 2, 1, 4, 0, 1, 6, 8, 7, 10};
  s.validate();
  return s;
}

// Report groups matching the usual keypoint-table columns.
inline std::vector<std::pair<std::string, std::vector<std::size_t>>> keypoint_groups() {
  return {{"Sld.", {1, 2}},  {"Elb.", {3, 4}},  {"Wrist", {5, 6}},
          {"Hip", {7, 8}},   {"Knee", {9, 10}}, {"Ankle", {11, 12}}};
}

inline nlohmann::json skeleton_to_json(const Skeleton& s) {
  nlohmann::json bones = nlohmann::json::array();
  for (const auto& b : s.bones) bones.push_back({b.a, b.b});
  return {{"names", s.names}, {"bones", bones}, {"parents", s.parent}};
}

inline Skeleton skeleton_from_json(const nlohmann::json& j) {
  Skeleton s;
  s.names = j.at("names").get<std::vector<std::string>>();
  for (const auto& b : j.at("bones")) s.bones.push_back({b.at(0), b.at(1)});
  s.parent = j.at("parents").get<std::vector<int>>();
  s.validate();
  return s;
}

}  // namespace poseadapt
