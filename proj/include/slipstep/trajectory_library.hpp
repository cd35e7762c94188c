#pragma once

#include <cmath>
#include <future>
#include <string>
#include <vector>

#include "slipstep/slip_core.hpp"

namespace slipstep {

using Vec2 = Eigen::Vector2d;

/// One periodic running gait. Selected parameters (th2, h_apex, k,
/// vx_apex), solved (th1, vy_apex) and the flat-ground step (dfx, dfy).
///
/// Everything is stored for a +1 stance side: the apex state precedes a
/// touchdown on the +1 leg, and dfy is the lateral step onto that leg.
struct TrajectoryEntry {
  double th2 = 0.0;
  double h_apex = 1.0;
  double k = 8000.0;
  double vx_apex = 0.0;
  double th1 = 0.0;
  double vy_apex = 0.0;
  double dfx = 0.0;
  double dfy = 0.0;
  double residual = 0.0;

  ApexState apex() const { return {vx_apex, vy_apex, h_apex}; }

  /// Periodic leg command; lh is anchored so the touchdown leg is r0 long.
  LegCommand command(const TemplateParams& P) const {
    return {th1, th2, nominal_leg_length(P.r0, P.yh, th2), 1};
  }
};

struct LibraryGrid {
  std::vector<double> vx;
  std::vector<double> h;
  std::vector<double> k;
  std::vector<double> th2;

  static constexpr double kDefaultTh2 = 0.04;

  static LibraryGrid default_grid() {
    LibraryGrid g;
    for (int i = 0; i <= 20; ++i) g.vx.push_back(0.1 * i);
    g.h = {0.90, 0.925, 0.95, 0.975, 1.0};
    g.k = {6000.0, 8000.0, 10000.0};
    g.th2 = {kDefaultTh2};
    return g;
  }

  std::size_t cardinality() const { return vx.size() * h.size() * k.size() * th2.size(); }
};

struct GridFailure {
  double th2 = 0.0;
  double h = 0.0;
  double k = 0.0;
  double vx = 0.0;
  std::string reason;
};

struct TrajectoryLibrary {
  static constexpr int kFormatVersion = 1;

  int version = kFormatVersion;
  TemplateParams params;
  LibraryGrid grid;
  std::vector<TrajectoryEntry> entries;
  std::vector<GridFailure> failures;

  std::size_t size() const { return entries.size(); }
  const TrajectoryEntry& operator[](std::size_t i) const { return entries[i]; }
};

/// x - E P(x, u) for the passive map with lh anchored at r0.
inline Vec3 periodic_residual(const TemplateParams& P, double h, double vx, double th2, double th1, double vy) {
  const LegCommand u{th1, th2, nominal_leg_length(P.r0, P.yh, th2), 1};
  const ApexState x{vx, vy, h};
  const ApexState next = passive_apex_step(P, x, u).next;
  return x.as_vector() - leg_switch() * next.as_vector();
}

struct PeriodicSolution {
  double th1 = 0.0;
  double vy = 0.0;
  double residual = 0.0;
  int iterations = 0;
};

struct SolverOptions {
  int max_iterations = 200;
  double tolerance = 1e-6;
  double target = 1e-11;
  double fd_step = 1e-6;
};

/// Levenberg-Marquardt on (th1, vy) with central-difference Jacobians of
/// the passive return map. Trial points that fail to integrate are rejected
/// like uphill steps.
inline PeriodicSolution solve_periodic(const TemplateParams& params, double h, double k, double vx, double th2,
                                       Vec2 guess, const SolverOptions& opt = {}) {
  if (!guess.allFinite()) throw Error(ErrorKind::InvalidArgument, "non-finite initial guess");
  const TemplateParams P = params.with_stiffness(k);

  auto residual = [&](const Vec2& z) -> std::optional<Vec3> {
    try {
      Vec3 r = periodic_residual(P, h, vx, th2, z.x(), z.y());
      if (!r.allFinite()) return std::nullopt;
      return r;
    } catch (const Error&) {
      return std::nullopt;
    }
  };

  Vec2 z = guess;
  auto r0 = residual(z);
  if (!r0) throw Error(ErrorKind::NoPeriodicSolution, "initial guess does not integrate");
  Vec3 r = *r0;
  double cost = r.squaredNorm();
  double lambda = 1e-3;
  int it = 0;
  for (; it < opt.max_iterations && std::sqrt(cost) > opt.target; ++it) {
    Eigen::Matrix<double, 3, 2> J;
    bool jac_ok = true;
    for (int j = 0; j < 2; ++j) {
      Vec2 zp = z, zm = z;
      zp[j] += opt.fd_step;
      zm[j] -= opt.fd_step;
      auto rp = residual(zp);
      auto rm = residual(zm);
      if (!rp || !rm) {
        jac_ok = false;
        break;
      }
      J.col(j) = (*rp - *rm) / (2.0 * opt.fd_step);
    }
    if (!jac_ok) break;

    const Eigen::Matrix2d A = J.transpose() * J;
    const Vec2 grad = J.transpose() * r;
    bool accepted = false;
    for (int tries = 0; tries < 30 && !accepted; ++tries) {
      Eigen::Matrix2d damped = A;
      damped.diagonal() += lambda * (A.diagonal().array() + 1e-12).matrix();
      const Vec2 step = -damped.ldlt().solve(grad);
      auto rt = residual(z + step);
      if (rt && rt->squaredNorm() < cost) {
        z += step;
        r = *rt;
        cost = r.squaredNorm();
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
      } else {
        lambda *= 4.0;
      }
    }
    if (!accepted) break;
  }

  const double res = std::sqrt(cost);
  if (!(res < opt.tolerance))
    throw Error(ErrorKind::NoPeriodicSolution, "residual " + std::to_string(res) + " after " +
                                                   std::to_string(it) + " iterations");
  return {z.x(), z.y(), res, it};
}

/// Flat-ground (or delta_z) step displacement of an entry under full
/// convergence, using the symmetry of the periodic stance.
inline Vec2 nominal_step_displacement(const TrajectoryEntry& e, const TemplateParams& P, double delta_z = 0.0) {
  const LegCommand u = e.command(P);
  const FlightTimes ft = flight_times(e.h_apex, u, delta_z, P.g);
  const double t = ft.total();
  const double c2 = std::cos(u.th2);
  return {t * e.vx_apex + 2.0 * u.lh * std::sin(u.th1) * c2,
          t * e.vy_apex + 2.0 * (P.yh + u.lh * std::sin(u.th2))};
}

/// Foot displacement from the actual liftoff state. `u_next` carries its own
/// stance side; `yaw` orients the leg frame in the world.
inline Vec2 liftoff_step_displacement(const ComState& lo, const Vec3& pf_current, const LegCommand& u_next,
                                      const TemplateParams& P, double delta_z, double yaw = 0.0) {
  const Vec3 offset = yaw_rotation(yaw) * leg_offset(u_next, P.yh);
  const auto t = time_to_height(lo, offset.z(), pf_current.z() + delta_z, P.g);
  if (!t) throw Error(ErrorKind::UnreachableHeight, "foot never reaches the target surface");
  const ComState td = ballistic(lo, *t, P.g);
  return (td.p + offset - pf_current).head<2>();
}

inline TrajectoryEntry make_entry(const TemplateParams& P, double th2, double h, double k, double vx,
                                  const PeriodicSolution& sol) {
  TrajectoryEntry e;
  e.th2 = th2;
  e.h_apex = h;
  e.k = k;
  e.vx_apex = vx;
  e.th1 = sol.th1;
  e.vy_apex = sol.vy;
  e.residual = sol.residual;
  const Vec2 d = nominal_step_displacement(e, P, 0.0);
  e.dfx = d.x();
  e.dfy = d.y();
  return e;
}

inline Vec2 default_guess(double vx) { return {0.12 * vx, 0.05}; }

namespace detail {

struct SliceResult {
  std::vector<TrajectoryEntry> entries;
  std::vector<GridFailure> failures;
};

// One (th2, h, k) slice, warm-started along increasing vx.
inline SliceResult solve_slice(const TemplateParams& P, double th2, double h, double k,
                               const std::vector<double>& vxs) {
  SliceResult out;
  std::optional<Vec2> warm;
  for (double vx : vxs) {
    const Vec2 guess = warm ? *warm : default_guess(vx);
    try {
      const PeriodicSolution sol = solve_periodic(P, h, k, vx, th2, guess);
      out.entries.push_back(make_entry(P, th2, h, k, vx, sol));
      warm = Vec2(sol.th1, sol.vy);
    } catch (const Error&) {
      // retry cold before giving up on the point
      try {
        const PeriodicSolution sol = solve_periodic(P, h, k, vx, th2, default_guess(vx));
        out.entries.push_back(make_entry(P, th2, h, k, vx, sol));
        warm = Vec2(sol.th1, sol.vy);
      } catch (const Error& err2) {
        out.failures.push_back({th2, h, k, vx, err2.what()});
      }
    }
  }
  return out;
}

}  // namespace detail

/// Solves every grid point. Slices (th2, h, k) are independent and may run
/// on `jobs` threads; the result is identical to the sequential build.
inline TrajectoryLibrary build_library(const TemplateParams& P, const LibraryGrid& grid, unsigned jobs = 1) {
  P.validate();
  if (grid.cardinality() == 0) throw Error(ErrorKind::InvalidArgument, "empty grid");

  struct Key {
    double th2, h, k;
  };
  std::vector<Key> slices;
  for (double th2 : grid.th2)
    for (double h : grid.h)
      for (double k : grid.k) slices.push_back({th2, h, k});

  std::vector<detail::SliceResult> results(slices.size());
  if (jobs <= 1) {
    for (std::size_t i = 0; i < slices.size(); ++i)
      results[i] = detail::solve_slice(P, slices[i].th2, slices[i].h, slices[i].k, grid.vx);
  } else {
    for (std::size_t start = 0; start < slices.size(); start += jobs) {
      std::vector<std::future<detail::SliceResult>> batch;
      for (std::size_t i = start; i < std::min(slices.size(), start + jobs); ++i)
        batch.push_back(std::async(std::launch::async, [&, i] {
          return detail::solve_slice(P, slices[i].th2, slices[i].h, slices[i].k, grid.vx);
        }));
      for (std::size_t i = 0; i < batch.size(); ++i) results[start + i] = batch[i].get();
    }
  }

  TrajectoryLibrary lib;
  lib.params = P;
  lib.grid = grid;
  for (auto& r : results) {
    lib.entries.insert(lib.entries.end(), r.entries.begin(), r.entries.end());
    lib.failures.insert(lib.failures.end(), r.failures.begin(), r.failures.end());
  }
  return lib;
}

}  // namespace slipstep
