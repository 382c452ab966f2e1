#pragma once

// Distance labeling for corrupted poses: approximate candidate generation via
// a coarse product-quantization code over pose space, followed by exact L2
// re-ranking. The label is the mean of the k smallest exact distances; poses
// that appear verbatim in the clean set are labeled exactly 0.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "poseadapt/pose.hpp"

namespace poseadapt {

// A pose paired with its labeled distance from the pose manifold.
struct LabeledPose {
  OrientationPose pose;
  double distance = 0.0;
};

class PoseKnn {
 public:
  explicit PoseKnn(std::vector<OrientationPose> clean_set, std::size_t sectors = 8)
      : poses_(std::move(clean_set)), sectors_(sectors) {
    if (poses_.empty()) throw std::invalid_argument("PoseKnn: clean set is empty");
    if (sectors_ < 2) throw std::invalid_argument("PoseKnn: need at least 2 sectors");
    bones_ = poses_[0].theta.size();
    const std::size_t n = poses_.size();
    codes_.resize(n * bones_);
    for (std::size_t i = 0; i < n; ++i) {
      if (poses_[i].theta.size() != bones_) {
        throw std::invalid_argument("PoseKnn: inconsistent bone counts in clean set");
      }
      for (std::size_t l = 0; l < bones_; ++l) {
        codes_[i * bones_ + l] = sector_of(poses_[i].theta[l]);
      }
    }
    // Symmetric code-to-code table: squared distance between unit vectors at
    // the sector center angles, d^2 = 2 - 2 cos(delta).
    lut_.resize(sectors_ * sectors_);
    const double step = 2.0 * M_PI / static_cast<double>(sectors_);
    for (std::size_t a = 0; a < sectors_; ++a) {
      for (std::size_t b = 0; b < sectors_; ++b) {
        lut_[a * sectors_ + b] = 2.0 - 2.0 * std::cos(step * (static_cast<double>(a) -
                                                              static_cast<double>(b)));
      }
    }
  }

  std::size_t size() const { return poses_.size(); }
  std::size_t bone_count() const { return bones_; }

  // Mean of the k smallest exact L2 distances among k' coarse candidates
  // (k' >= |clean set| or exact=true degrades to exhaustive search).
  double label(const OrientationPose& query, std::size_t kprime = 500, std::size_t k = 5,
               bool exact = false) const {
    const std::size_t n = poses_.size();
    if (k == 0) throw std::invalid_argument("PoseKnn: k must be >= 1");
    if (n < k) throw std::invalid_argument("PoseKnn: clean set smaller than k");
    if (query.theta.size() != bones_) {
      throw std::invalid_argument("PoseKnn: query bone count mismatch");
    }
    kprime = std::max(kprime, k);

    std::vector<std::uint32_t> cand;
    if (exact || kprime >= n) {
      cand.resize(n);
      std::iota(cand.begin(), cand.end(), 0u);
    } else {
      // Coarse scan: sum of per-bone table lookups, smallest k' kept
      // (ties broken toward the smaller index for determinism).
      std::vector<std::uint8_t> qcodes(bones_);
      for (std::size_t l = 0; l < bones_; ++l) qcodes[l] = sector_of(query.theta[l]);
      std::vector<std::pair<double, std::uint32_t>> coarse(n);
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        const std::uint8_t* row = &codes_[i * bones_];
        for (std::size_t l = 0; l < bones_; ++l) s += lut_[qcodes[l] * sectors_ + row[l]];
        coarse[i] = {s, static_cast<std::uint32_t>(i)};
      }
      std::nth_element(coarse.begin(), coarse.begin() + static_cast<std::ptrdiff_t>(kprime - 1),
                       coarse.end());
      cand.reserve(kprime);
      for (std::size_t i = 0; i < kprime; ++i) cand.push_back(coarse[i].second);
    }

    // Exact re-rank within the candidates, using the canonical pose-space
    // distance so results agree bit-for-bit with any exhaustive scan.
    std::vector<double> dist(cand.size());
    for (std::size_t c = 0; c < cand.size(); ++c) {
      dist[c] = pose_space_distance(query, poses_[cand[c]]);
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    if (dist[0] == 0.0) return 0.0;  // verbatim member of the clean set
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) sum += dist[i];
    return sum / static_cast<double>(k);
  }

 private:
  std::uint8_t sector_of(const Vec2& t) const {
    const double a = std::atan2(t.y, t.x);  // (-pi, pi]
    auto s = static_cast<long>((a + M_PI) / (2.0 * M_PI) * static_cast<double>(sectors_));
    if (s < 0) s = 0;
    if (s >= static_cast<long>(sectors_)) s = static_cast<long>(sectors_) - 1;
    return static_cast<std::uint8_t>(s);
  }

  std::vector<OrientationPose> poses_;
  std::size_t sectors_;
  std::size_t bones_ = 0;
  std::vector<std::uint8_t> codes_;   // [N, L]
  std::vector<double> lut_;           // [sectors, sectors]
};

inline std::vector<LabeledPose> label_distances(const std::vector<OrientationPose>& queries,
                                                const std::vector<OrientationPose>& clean_set,
                                                std::size_t kprime = 500, std::size_t k = 5,
                                                bool exact = false) {
  PoseKnn index(clean_set);
  std::vector<LabeledPose> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back({q, index.label(q, kprime, k, exact)});
  return out;
}

}  // namespace poseadapt
