#pragma once

// Test-only oracles, kept independent of the library implementation paths
// they check. The normal CDF here is computed by adaptive Simpson quadrature
// of the density, not via erfc.

#include <cmath>
#include <functional>
#include <vector>

namespace testutil {

inline double simpson(const std::function<double(double)>& f, double a, double b) {
  const double m = 0.5 * (a + b);
  return (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b));
}

inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                               double eps, double whole, int depth) {
  const double m = 0.5 * (a + b);
  const double left = simpson(f, a, m);
  const double right = simpson(f, m, b);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * eps)
    return left + right + (left + right - whole) / 15.0;
  return adaptive_simpson(f, a, m, eps * 0.5, left, depth - 1) +
         adaptive_simpson(f, m, b, eps * 0.5, right, depth - 1);
}

inline double integrate(const std::function<double(double)>& f, double a, double b,
                        double eps = 1e-13) {
  if (a == b) return 0.0;
  return adaptive_simpson(f, a, b, eps, simpson(f, a, b), 48);
}

inline double std_normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

// Standard normal CDF by quadrature from 0 (where Phi = 0.5).
inline double normal_cdf_oracle(double z) {
  if (z < -12.0) return 0.0;
  if (z > 12.0) return 1.0;
  return 0.5 + integrate(std_normal_pdf, 0.0, z);
}

// Mass of N(mu, sigma) on [a, b] by direct quadrature of the density.
inline double gauss_mass_oracle(double mu, double sigma, double a, double b) {
  auto f = [&](double x) {
    const double t = (x - mu) / sigma;
    return std_normal_pdf(t) / sigma;
  };
  const double lo = std::max(a, mu - 12.0 * sigma);
  const double hi = std::min(b, mu + 12.0 * sigma);
  if (hi <= lo) return 0.0;
  return integrate(f, lo, hi);
}

}  // namespace testutil
