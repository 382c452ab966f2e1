#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "poseadapt/autodiff.hpp"

namespace poseadapt {

struct GradCheckResult {
  double max_rel_err = 0.0;    // worst relative error across all checked entries
  double max_abs_err = 0.0;    // worst absolute error
  std::size_t worst_input = 0; // which leaf held the worst entry
  std::size_t worst_index = 0; // flat index of the worst entry
  double analytic = 0.0;       // analytic gradient at the worst entry
  double numeric = 0.0;        // central-difference estimate at the worst entry
};

// Central-difference check of d(scalar f)/d(leaves).
//
// rel_err = |a - n| / max(|a|, |n|, floor); the floor keeps near-zero
// gradients from blowing up the ratio on pure rounding noise.
inline GradCheckResult grad_check(const std::function<Value(const std::vector<Value>&)>& f,
                                  std::vector<Value> leaves, double eps = 1e-5,
                                  double floor_ = 1e-6) {
  Value loss = f(leaves);
  if (loss.size() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
  for (auto& leaf : leaves) leaf.zero_grad();
  backward(loss);

  GradCheckResult r;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    if (!leaves[li].requires_grad()) continue;
    const Tensor analytic = leaves[li].grad();
    Tensor& x = leaves[li].mutable_val();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + eps;
      const double fp = f(leaves).val()[0];
      x[i] = saved - eps;
      const double fm = f(leaves).val()[0];
      x[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[i];
      const double abs_err = std::fabs(a - numeric);
      const double rel_err = abs_err / std::max({std::fabs(a), std::fabs(numeric), floor_});
      if (rel_err > r.max_rel_err) {
        r.max_rel_err = rel_err;
        r.max_abs_err = abs_err;
        r.worst_input = li;
        r.worst_index = i;
        r.analytic = a;
        r.numeric = numeric;
      }
    }
  }
  return r;
}

}  // namespace poseadapt
