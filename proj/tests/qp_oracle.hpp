#pragma once

#include <algorithm>
#include <array>
#include <random>

#include "slipstep/active_template.hpp"

namespace slipstep::testing {

// Largest violation of alpha >= 0, f = V alpha and the friction pyramid.
inline double constraint_violation(const ForceCone& c, const Eigen::Vector4d& alpha, const Vec3& f) {
  double v = std::max(0.0, -alpha.minCoeff());
  v = std::max(v, (c.V * alpha - f).cwiseAbs().maxCoeff());
  v = std::max(v, std::abs(f.x()) - c.mu * f.z());
  v = std::max(v, std::abs(f.y()) - c.mu * f.z());
  return v;
}

namespace oracle_detail {

// A force direction is written by its slopes (fx / fz, fy / fz). Friction is
// the box |s| <= mu and the foot cone is the convex hull of the generator
// slopes.
inline bool feasible_slope(const ForceCone& c, const Eigen::Vector2d& s) {
  if (std::abs(s.x()) > c.mu || std::abs(s.y()) > c.mu) return false;
  std::array<Eigen::Vector2d, 4> q;
  for (int i = 0; i < 4; ++i) q[i] = c.V.col(i).head<2>() / c.V(2, i);
  // the generators come from the foot corners in order, so the slopes form
  // a convex quadrilateral in the same winding
  int pos = 0, neg = 0;
  for (int i = 0; i < 4; ++i) {
    const Eigen::Vector2d e = q[(i + 1) % 4] - q[i], w = s - q[i];
    const double cr = e.x() * w.y() - e.y() * w.x();
    pos += cr >= 0;
    neg += cr <= 0;
  }
  return pos == 4 || neg == 4;
}

inline double ray_distance(const Vec3& fd, const ForceCone& c, const Eigen::Vector2d& s) {
  if (!feasible_slope(c, s)) return 1e300;
  const Vec3 d(s.x(), s.y(), 1.0);
  const double t = std::max(0.0, d.dot(fd) / d.squaredNorm());
  return (fd - t * d).norm();
}

}  // namespace oracle_detail

// Brute force over force directions: a grid over the slope plane, then
// nested local grids that shrink around the best points. Returns
// min |fd - f| over the feasible set, including f = 0.
inline double grid_projection_distance(const Vec3& fd, const ForceCone& c, int n = 60) {
  using oracle_detail::ray_distance;
  double best = fd.norm();
  std::vector<std::pair<double, Eigen::Vector2d>> seeds;
  for (int i = 0; i <= n; ++i)
    for (int j = 0; j <= n; ++j) {
      const Eigen::Vector2d s(c.mu * (2.0 * i / n - 1.0), c.mu * (2.0 * j / n - 1.0));
      const double d = ray_distance(fd, c, s);
      if (d < 1e299) seeds.push_back({d, s});
    }
  std::sort(seeds.begin(), seeds.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  seeds.resize(std::min<std::size_t>(6, seeds.size()));
  // the generators themselves, pulled into the friction box
  for (int i = 0; i < 4; ++i) {
    const Eigen::Vector2d g = (c.V.col(i).head<2>() / c.V(2, i)).cwiseMax(-c.mu).cwiseMin(c.mu);
    const double d = ray_distance(fd, c, g);
    if (d < 1e299) seeds.push_back({d, g});
  }
  const int m = 10;
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    Eigen::Vector2d s = seeds[k].second;
    double cur = seeds[k].first;
    for (double h = 2.0 * c.mu / n; h > 1e-15; h /= 3.0) {
      const Eigen::Vector2d centre = s;
      for (int i = -m; i <= m; ++i)
        for (int j = -m; j <= m; ++j) {
          const Eigen::Vector2d t = centre + Eigen::Vector2d(h * i / m, h * j / m);
          const double d = ray_distance(fd, c, t);
          if (d < cur) {
            cur = d;
            s = t;
          }
        }
    }
    best = std::min(best, cur);
  }
  return best;
}

}  // namespace slipstep::testing
