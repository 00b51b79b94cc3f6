#pragma once

#include <cmath>

#include "atmos/harness/metrics.hpp"

namespace atmos::testing {

// Direct windowed statistics with explicit 2-D Gaussian weights.
inline double ssim_oracle(const harness::Image& a, const harness::Image& b, double L) {
  const int n = 11;
  double w[11][11], total = 0;
  for (int u = 0; u < n; ++u)
    for (int v = 0; v < n; ++v) total += w[u][v] = std::exp(-((u - 5) * (u - 5) + (v - 5) * (v - 5)) / (2 * 1.5 * 1.5));
  const double c1 = (0.01 * L) * (0.01 * L), c2 = (0.03 * L) * (0.03 * L);
  double sum = 0;
  int count = 0;
  for (std::int64_t i = 0; i + n <= a.rows; ++i)
    for (std::int64_t j = 0; j + n <= a.cols; ++j) {
      double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
      for (int u = 0; u < n; ++u)
        for (int v = 0; v < n; ++v) {
          const double k = w[u][v] / total, x = a(i + u, j + v), y = b(i + u, j + v);
          mx += k * x;
          my += k * y;
          xx += k * x * x;
          yy += k * y * y;
          xy += k * x * y;
        }
      const double sx = xx - mx * mx, sy = yy - my * my, sxy = xy - mx * my;
      sum += (2 * mx * my + c1) * (2 * sxy + c2) / ((mx * mx + my * my + c1) * (sx + sy + c2));
      ++count;
    }
  return sum / count;
}

}  // namespace atmos::testing
