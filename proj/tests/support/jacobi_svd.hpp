// Test-only dense SVD oracle (one-sided Jacobi), independent of the power
// iteration it is used to check.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "varnn/numerics.hpp"

namespace testsupport {

inline std::vector<double> jacobi_singular_values(varnn::Matrix a) {
  const int n = a.rows;
  const int m = a.cols;
  bool changed = true;
  int sweeps = 0;
  while (changed && sweeps < 60) {
    changed = false;
    ++sweeps;
    for (int p = 0; p < m - 1; ++p) {
      for (int q = p + 1; q < m; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (int k = 0; k < n; ++k) {
          app += a(k, p) * a(k, p);
          aqq += a(k, q) * a(k, q);
          apq += a(k, p) * a(k, q);
        }
        if (std::fabs(apq) <= 1e-15 * std::sqrt(app * aqq) || apq == 0.0) continue;
        changed = true;
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (int k = 0; k < n; ++k) {
          const double x = a(k, p);
          const double y = a(k, q);
          a(k, p) = c * x - s * y;
          a(k, q) = s * x + c * y;
        }
      }
    }
  }
  std::vector<double> sv(static_cast<size_t>(m));
  for (int j = 0; j < m; ++j) {
    double s = 0.0;
    for (int k = 0; k < n; ++k) s += a(k, j) * a(k, j);
    sv[static_cast<size_t>(j)] = std::sqrt(s);
  }
  std::sort(sv.rbegin(), sv.rend());
  return sv;
}

inline double svd_spectral_norm(const varnn::Matrix& a) { return jacobi_singular_values(a)[0]; }

}  // namespace testsupport
