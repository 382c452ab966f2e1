#pragma once

#include <cmath>
#include <stdexcept>

namespace poseadapt {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  double norm() const { return std::sqrt(x * x + y * y); }
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline Vec2 operator*(Vec2 a, double s) { return {s * a.x, s * a.y}; }
inline double norm(Vec2 a) { return a.norm(); }

// 2x3 affine map: p' = A p + t, stored row-major [a b tx; c d ty].
struct Affine2 {
  double m[6] = {1, 0, 0, 0, 1, 0};

  static Affine2 identity() { return {}; }

  static Affine2 translation(double tx, double ty) { return {{1, 0, tx, 0, 1, ty}}; }

  static Affine2 rotation(double radians) {
    const double c = std::cos(radians), s = std::sin(radians);
    return {{c, -s, 0, s, c, 0}};
  }

  static Affine2 scaling(double sx, double sy) { return {{sx, 0, 0, 0, sy, 0}}; }

  // Horizontal shear: x' = x + k*y.
  static Affine2 shear(double k) { return {{1, k, 0, 0, 1, 0}}; }

  Vec2 apply(Vec2 p) const {
    return {m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5]};
  }

  double det() const { return m[0] * m[4] - m[1] * m[3]; }

  Affine2 inverse() const {
    const double d = det();
    if (std::abs(d) <= 1e-6) throw std::invalid_argument("Affine2: not invertible, |det| <= 1e-6");
    const double ia = m[4] / d, ib = -m[1] / d, ic = -m[3] / d, id = m[0] / d;
    return {{ia, ib, -(ia * m[2] + ib * m[5]), ic, id, -(ic * m[2] + id * m[5])}};
  }

  // Composition: (this ∘ o)(p) = this(o(p)).
  Affine2 compose(const Affine2& o) const {
    return {{m[0] * o.m[0] + m[1] * o.m[3], m[0] * o.m[1] + m[1] * o.m[4],
             m[0] * o.m[2] + m[1] * o.m[5] + m[2], m[3] * o.m[0] + m[4] * o.m[3],
             m[3] * o.m[1] + m[4] * o.m[4], m[3] * o.m[2] + m[4] * o.m[5] + m[5]}};
  }

  // Same map expressed in a grid whose pixel p_grid maps to image pixel
  // scale*p_grid + offset on both axes: G^-1 ∘ this ∘ G.
  Affine2 conjugate_to_grid(double scale, double offset) const {
    Affine2 g{{scale, 0, offset, 0, scale, offset}};
    return g.inverse().compose(*this).compose(g);
  }
};

}  // namespace poseadapt
