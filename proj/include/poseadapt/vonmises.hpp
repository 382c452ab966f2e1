#pragma once

// Von-Mises distribution: density, Bessel normalizer, and rejection sampling.

#include <cmath>
#include <stdexcept>

#include "poseadapt/rng.hpp"

namespace poseadapt {

// Modified Bessel function of the first kind, order zero, via its power
// series I0(x) = sum_m ((x/2)^(2m) / (m!)^2). Converges quickly for the
// moderate arguments used here (kappa <= a few hundred).
inline double bessel_i0(double x) {
  const double q = x * x / 4.0;
  double term = 1.0, sum = 1.0;
  for (int m = 1; m < 1000; ++m) {
    term *= q / (static_cast<double>(m) * static_cast<double>(m));
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return sum;
}

// f(n | mu, kappa) = exp(kappa cos(n - mu)) / (2 pi I0(kappa))
inline double vonmises_density(double n, double mu, double kappa) {
  if (kappa < 0) throw std::invalid_argument("vonmises_density: kappa must be >= 0");
  return std::exp(kappa * std::cos(n - mu)) / (2.0 * M_PI * bessel_i0(kappa));
}

namespace detail {
inline double wrap_angle(double a) {
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a < 0) a += 2.0 * M_PI;
  return a - M_PI;
}
}  // namespace detail

// Best-Fisher (1979) wrapped-Cauchy rejection sampler. Returns an angle in
// (-pi, pi] distributed as VM(mu, kappa); kappa ~ 0 degrades gracefully to
// the uniform circle.
inline double sample_vonmises(Rng& rng, double mu, double kappa) {
  if (kappa < 0) throw std::invalid_argument("sample_vonmises: kappa must be >= 0");
  if (kappa < 1e-8) return detail::wrap_angle(mu + rng.uniform(-M_PI, M_PI));

  const double tau = 1.0 + std::sqrt(1.0 + 4.0 * kappa * kappa);
  const double rho = (tau - std::sqrt(2.0 * tau)) / (2.0 * kappa);
  const double r = (1.0 + rho * rho) / (2.0 * rho);

  double f = 0.0;
  for (;;) {
    const double u1 = rng.uniform();
    const double u2 = rng.uniform();
    const double z = std::cos(M_PI * u1);
    f = (1.0 + r * z) / (r + z);
    const double c = kappa * (r - f);
    if (c * (2.0 - c) - u2 > 0.0) break;
    if (u2 > 0.0 && std::log(c / u2) + 1.0 - c >= 0.0) break;
  }
  const double u3 = rng.uniform();
  const double angle = (u3 < 0.5 ? -1.0 : 1.0) * std::acos(std::min(1.0, std::max(-1.0, f)));
  return detail::wrap_angle(mu + angle);
}

}  // namespace poseadapt
