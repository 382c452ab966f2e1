#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "poseadapt/pose.hpp"
#include "poseadapt/skeleton.hpp"

namespace poseadapt {

struct PckResult {
  std::vector<double> per_keypoint;                      // ratio per keypoint
  std::vector<std::pair<std::string, double>> groups;    // named group ratios
  double avg = 0.0;                                      // pooled over all keypoints
};

// PCK@fraction: a keypoint counts as correct iff its L2 error is at most
// fraction * image_size. Ground-truth-invisible keypoints are excluded.
inline PckResult pck(const std::vector<Pose2D>& pred, const std::vector<Pose2D>& gt,
                     double fraction, double image_size) {
  if (pred.size() != gt.size()) throw std::invalid_argument("pck: list length mismatch");
  if (pred.empty()) throw std::invalid_argument("pck: empty evaluation set");
  const std::size_t k = gt.front().coords.size();
  const double thresh = fraction * image_size;

  std::vector<std::size_t> correct(k, 0), total(k, 0);
  for (std::size_t n = 0; n < gt.size(); ++n) {
    for (std::size_t i = 0; i < k; ++i) {
      if (!gt[n].visibility[i]) continue;
      ++total[i];
      const Vec2 d = pred[n].coords[i] - gt[n].coords[i];
      if (d.norm() <= thresh) ++correct[i];
    }
  }

  PckResult r;
  r.per_keypoint.resize(k, 0.0);
  std::size_t all_c = 0, all_t = 0;
  for (std::size_t i = 0; i < k; ++i) {
    r.per_keypoint[i] = total[i] ? static_cast<double>(correct[i]) / total[i] : 0.0;
    all_c += correct[i];
    all_t += total[i];
  }
  if (all_t == 0) throw std::invalid_argument("pck: no visible keypoints to evaluate");
  r.avg = static_cast<double>(all_c) / static_cast<double>(all_t);

  for (const auto& [label, members] : keypoint_groups()) {
    std::size_t gc = 0, gtot = 0;
    for (std::size_t i : members) {
      if (i < k) {
        gc += correct[i];
        gtot += total[i];
      }
    }
    r.groups.emplace_back(label, gtot ? static_cast<double>(gc) / gtot : 0.0);
  }
  return r;
}

// Area under the ROC curve for separating two score samples, where positives
// are expected to score HIGHER than negatives. Ties contribute 1/2
// (Mann-Whitney U statistic).
inline double auc(const std::vector<double>& negatives, const std::vector<double>& positives) {
  if (negatives.empty() || positives.empty()) throw std::invalid_argument("auc: empty sample");
  std::vector<std::pair<double, int>> all;  // (score, is_positive)
  all.reserve(negatives.size() + positives.size());
  for (double s : negatives) all.emplace_back(s, 0);
  for (double s : positives) all.emplace_back(s, 1);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  // Sum of positive ranks with midranks for ties.
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) {
      if (all[t].second) rank_sum += midrank;
    }
    i = j;
  }
  const double np = static_cast<double>(positives.size());
  const double nn = static_cast<double>(negatives.size());
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("mean_of: empty");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace poseadapt
