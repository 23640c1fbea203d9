#pragma once

// Shared helpers for the unit suites: finite-difference oracles and small generators.

#include <cmath>
#include <functional>
#include <random>

#include "nsdf/common.hpp"

namespace nsdf::testing {

/// Central differences of f at x with step h.
inline VecX numeric_gradient(const std::function<double(const VecX&)>& f, const VecX& x, double h = 1e-6) {
  VecX g(x.size());
  VecX xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = xp[i];
    xp[i] = orig + h;
    const double fp = f(xp);
    xp[i] = orig - h;
    const double fm = f(xp);
    xp[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Largest per-entry relative disagreement, with a small absolute floor for entries near zero.
inline double max_relative_error(const VecX& analytic, const VecX& numeric, double floor = 1e-7) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

inline MatX random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double lo = -1.0,
                          double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  MatX m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v(n(rng), n(rng), n(rng));
  return v.normalized();
}

}  // namespace nsdf::testing
