#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "slipstep/deadbeat.hpp"

namespace slipstep {

/// Obstacle appearing ahead of the current foot. `d1x` is measured from the
/// back of the current foot to the far edge of the obstacle.
struct Obstacle {
  double d1x = 0.4;
  double d1z = 0.1;
};

/// Target foothold region. `offset` is the stone center relative to the
/// current foothold; the window is offset.x +- w/2 and offset.y +- l/2.
struct SteppingStone {
  Vec3 offset = Vec3::Zero();
  double l = 0.25;
  double w = 0.3;

  bool contains(const Vec2& d) const {
    return std::abs(d.x() - offset.x()) < 0.5 * w && std::abs(d.y() - offset.y()) < 0.5 * l;
  }
};

struct SelectionResult {
  std::size_t index = 0;
  LegCommand u_new;
  Vec3 foothold = Vec3::Zero();
  double score = 0.0;
  std::vector<std::size_t> stage_counts;
};

/// Selection failure: carries the survivor counts up to the stage that
/// emptied the candidate set.
class SelectionError : public Error {
 public:
  SelectionError(std::string stage, std::vector<std::size_t> counts)
      : Error(ErrorKind::NoFeasibleTrajectory, "empty after " + stage),
        stage_(std::move(stage)),
        counts_(std::move(counts)) {}

  const std::string& stage() const noexcept { return stage_; }
  const std::vector<std::size_t>& stage_counts() const noexcept { return counts_; }

 private:
  std::string stage_;
  std::vector<std::size_t> counts_;
};

/// Apex of the ballistic arc through `s`; the current height when already
/// descending.
inline ApexState predict_apex(const ComState& s, double g) {
  const double vz = std::max(0.0, s.v.z());
  const double t_rise = vz / g;
  return {s.v.x(), s.v.y(), s.p.z() + vz * t_rise - 0.5 * g * t_rise * t_rise};
}

inline double apex_clearance(double h, const LegCommand& u) {
  return h - u.lh * std::cos(u.th1) * std::cos(u.th2);
}

/// Read-only view over a trajectory library and its gains that runs the
/// selection policies.
///
/// All geometric inputs are expressed in the frame of the landing leg with
/// its stance side normalized to +1, and relative to the current foothold.
class Selector {
 public:
  Selector(const TrajectoryLibrary& lib, const GainLibrary& gains, Vec3 weights = Vec3::Ones())
      : lib_(&lib), gains_(&gains), weights_(std::move(weights)) {
    if (gains.size() != lib.size()) throw Error(ErrorKind::InvalidArgument, "gain library not index-aligned");
    const TemplateParams& P = lib.params;
    cache_.reserve(lib.size());
    for (std::size_t i = 0; i < lib.size(); ++i) {
      const TrajectoryEntry& e = lib[i];
      Cached c;
      c.x = e.apex().as_vector();
      c.u = e.command(P);
      c.clearance = apex_clearance(e.h_apex, c.u);
      c.flat = Vec2(e.dfx, e.dfy);
      c.ok = gains[i].ok;
      cache_.push_back(c);
    }
  }

  const TrajectoryLibrary& library() const { return *lib_; }
  const GainLibrary& gains() const { return *gains_; }
  const TemplateParams& params() const { return lib_->params; }

  /// u*_i + K_i (x - x*_i).
  LegCommand deadbeat(std::size_t i, const ApexState& x) const {
    const Vec3 u = cache_[i].u.as_vector() + (*gains_)[i].K * (x.as_vector() - cache_[i].x);
    return LegCommand::from_vector(u, 1);
  }

  double apex_distance(std::size_t i, const ApexState& x) const {
    return (weights_.asDiagonal() * (x.as_vector() - cache_[i].x)).norm();
  }

  double touchdown_distance(std::size_t i, const ApexState& x_td, const LegCommand& u_td) const {
    return (u_td.as_vector() - deadbeat(i, x_td).as_vector()).norm();
  }

  /// Jumping over an obstacle, decided at touchdown.
  SelectionResult select_obstacle_touchdown(const Obstacle& obs, const ApexState& x_td, const LegCommand& u_td) const {
    return touchdown_policy(x_td, u_td, obs.d1z, 0.0, [&](const Vec2& d) { return obs.d1x < d.x(); });
  }

  /// Stepping onto `stone1`, decided at touchdown. `stone1.offset.z()` is the
  /// surface height difference.
  SelectionResult select_stones_touchdown(const SteppingStone& stone1, const ApexState& x_td,
                                          const LegCommand& u_td) const {
    return touchdown_policy(x_td, u_td, stone1.offset.z(), stone1.offset.z(), [&](const Vec2& d) { return stone1.contains(d); });
  }

  /// Jumping over an obstacle, decided at liftoff from the current foot.
  SelectionResult select_obstacle_liftoff(const Obstacle& obs, const ComState& lo) const {
    Candidates c = liftoff_candidates(lo, obs.d1z, 0.0, [&](const Vec2& d) { return obs.d1x < d.x(); });
    return pick_closest_apex(c, "displacement");
  }

  /// Stepping onto a final stone at liftoff, with no stone after it.
  SelectionResult select_stone_liftoff(const SteppingStone& stone1, const ComState& lo) const {
    Candidates c = liftoff_candidates(lo, stone1.offset.z(), stone1.offset.z(),
                                      [&](const Vec2& d) { return stone1.contains(d); });
    return pick_closest_apex(c, "stone1 window");
  }

  /// Stepping onto `stone1` at liftoff while keeping `stone2` (offset
  /// relative to stone1's center, same frame) reachable by the converged
  /// trajectory on the following step.
  SelectionResult select_stones_liftoff(const SteppingStone& stone1, const SteppingStone& stone2,
                                        const ComState& lo) const {
    Candidates c = liftoff_candidates(lo, stone1.offset.z(), stone1.offset.z(),
                                      [&](const Vec2& d) { return stone1.contains(d); });
    if (c.idx.empty()) throw SelectionError("stone1 window", c.counts);

    const double dz2 = stone2.offset.z();
    std::vector<std::size_t> keep;
    for (std::size_t n = 0; n < c.idx.size(); ++n)
      if (dz2 < cache_[c.idx[n]].clearance) keep.push_back(n);
    c.counts.push_back(keep.size());
    if (keep.empty()) throw SelectionError("stone2 clearance", c.counts);

    Candidates out;
    out.apex = c.apex;
    out.counts = c.counts;
    for (std::size_t n : keep) {
      const std::size_t i = c.idx[n];
      SteppingStone window = stone2;
      window.offset.head<2>() = two_ahead_target(stone1, stone2, c.feet[n].head<2>());
      try {
        if (!window.contains(nominal_step_displacement((*lib_)[i], params(), dz2))) continue;
      } catch (const Error&) {
        continue;
      }
      out.idx.push_back(i);
      out.u.push_back(c.u[n]);
      out.feet.push_back(c.feet[n]);
    }
    out.counts.push_back(out.idx.size());
    if (out.idx.empty()) throw SelectionError("stone2 window", out.counts);
    return pick_closest_apex(out, "stone2 window");
  }

  /// Stone2 target as seen from the candidate's landing point, in the frame
  /// of the following (opposite-side) step.
  static Vec2 two_ahead_target(const SteppingStone& stone1, const SteppingStone& stone2, const Vec2& landing) {
    const Vec2 rel = stone2.offset.head<2>() - (landing - stone1.offset.head<2>());
    return {rel.x(), -rel.y()};
  }

 private:
  struct Cached {
    Vec3 x;
    LegCommand u;
    double clearance = 0.0;
    Vec2 flat;
    bool ok = false;
  };

  struct Candidates {
    ApexState apex;
    std::vector<std::size_t> idx;
    std::vector<LegCommand> u;
    std::vector<Vec3> feet;
    std::vector<std::size_t> counts;
  };

  template <class Window>
  SelectionResult touchdown_policy(const ApexState& x_td, const LegCommand& u_td, double dz_clear, double dz_land,
                                   Window window) const {
    std::vector<std::size_t> counts{cache_.size()};
    std::size_t n_clear = 0, n_window = 0;
    SelectionResult best;
    double best_score = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cache_.size(); ++i) {
      const Cached& c = cache_[i];
      if (!c.ok || !(dz_clear < c.clearance)) continue;
      ++n_clear;
      Vec2 d;
      try {
        d = dz_land == 0.0 ? c.flat : nominal_step_displacement((*lib_)[i], params(), dz_land);
      } catch (const Error&) {
        continue;
      }
      if (!window(d)) continue;
      ++n_window;
      const double score = touchdown_distance(i, x_td, u_td);
      if (score < best_score) {
        best_score = score;
        best.index = i;
        best.u_new = c.u;
        best.foothold = Vec3(d.x(), d.y(), dz_land);
      }
    }
    counts.push_back(n_clear);
    if (n_clear == 0) throw SelectionError("clearance", counts);
    counts.push_back(n_window);
    if (n_window == 0) throw SelectionError("displacement", counts);
    best.score = best_score;
    best.stage_counts = std::move(counts);
    return best;
  }

  // Deadbeat, kinematic, clearance and window filters at liftoff. `dz_clear`
  // is tested against the apex clearance and `dz_land` is the landing surface.
  template <class Window>
  Candidates liftoff_candidates(const ComState& lo, double dz_clear, double dz_land, Window window) const {
    const TemplateParams& P = params();
    Candidates c;
    c.apex = predict_apex(lo, P.g);
    c.counts.push_back(cache_.size());
    std::vector<std::size_t> kin;
    std::vector<LegCommand> us;
    for (std::size_t i = 0; i < cache_.size(); ++i) {
      if (!cache_[i].ok) continue;
      const LegCommand u = deadbeat(i, c.apex);
      if (!u.within(P)) continue;
      kin.push_back(i);
      us.push_back(u);
    }
    c.counts.push_back(kin.size());
    if (kin.empty()) throw SelectionError("kinematic limits", c.counts);

    std::size_t n_clear = 0;
    for (std::size_t n = 0; n < kin.size(); ++n) {
      if (!(dz_clear < apex_clearance(c.apex.h, us[n]))) continue;
      ++n_clear;
      Vec2 d;
      try {
        d = liftoff_step_displacement(lo, Vec3::Zero(), us[n], P, dz_land);
      } catch (const Error&) {
        continue;
      }
      if (!window(d)) continue;
      c.idx.push_back(kin[n]);
      c.u.push_back(us[n]);
      c.feet.push_back(Vec3(d.x(), d.y(), dz_land));
    }
    c.counts.push_back(n_clear);
    if (n_clear == 0) throw SelectionError("clearance", c.counts);
    c.counts.push_back(c.idx.size());
    return c;
  }

  SelectionResult pick_closest_apex(const Candidates& c, const char* stage) const {
    if (c.idx.empty()) throw SelectionError(stage, c.counts);
    SelectionResult best;
    double best_score = std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < c.idx.size(); ++n) {
      const double score = apex_distance(c.idx[n], c.apex);
      if (score < best_score) {
        best_score = score;
        best.index = c.idx[n];
        best.u_new = c.u[n];
        best.foothold = c.feet[n];
      }
    }
    best.score = best_score;
    best.stage_counts = c.counts;
    return best;
  }

  const TrajectoryLibrary* lib_;
  const GainLibrary* gains_;
  Vec3 weights_;
  std::vector<Cached> cache_;
};

inline bool is_yaw_rotation(const Mat3& R, double tol = 1e-9) {
  return (R.transpose() * R - Mat3::Identity()).norm() < tol && std::abs(R.determinant() - 1.0) < tol &&
         std::abs(R(2, 2) - 1.0) < tol;
}

/// Rotates a reference into a new running direction and maps a world-frame
/// apex state back for the deadbeat error.
inline std::pair<ReferenceTrajectory, Vec3> heading_transform(const Mat3& Rh, const ReferenceTrajectory& ref,
                                                              const ApexState& x, const ApexState& x_star) {
  if (!is_yaw_rotation(Rh)) throw Error(ErrorKind::InvalidArgument, "heading transform must be a yaw rotation");
  ReferenceTrajectory out = ref;
  out.rotation = Rh * ref.rotation;
  out.anchor = Rh * ref.anchor;
  const Vec3 v = Rh.transpose() * Vec3(x.vx, x.vy, 0.0);
  return {out, Vec3(v.x(), v.y(), x.h) - x_star.as_vector()};
}

/// States one step before landing on `pf_target` with an entry's periodic
/// trajectory. The previous stance is on the -1 side.
struct BackIntegration {
  Vec3 pf_target = Vec3::Zero();
  ComState td;       // touchdown on pf_target
  ComState liftoff;  // liftoff of the previous stance
  ComState prev_td;  // touchdown of the previous stance
  Vec3 prev_pf = Vec3::Zero();
  LegCommand prev_u;
};

/// Leg command that reproduces the offset `pf - p` for stance side `sigma`.
inline LegCommand inverse_leg_kinematics(const Vec3& offset, double yh, int sigma) {
  const Vec3 w = offset - Vec3(0.0, sigma * yh, 0.0);
  const double lh = w.norm();
  const double th2 = std::asin(std::clamp(sigma * w.y() / lh, -1.0, 1.0));
  const double th1 = std::atan2(w.x(), -w.z());
  return {th1, th2, lh, sigma};
}

inline BackIntegration back_integrate_target(const TrajectoryEntry& entry, const Vec3& pf_target,
                                             const TemplateParams& params) {
  const TemplateParams P = params.with_stiffness(entry.k);
  const LegCommand u = entry.command(P);
  const ApexStep periodic = passive_apex_step(P, entry.apex(), u);

  BackIntegration out;
  out.pf_target = pf_target;
  out.td.p = pf_target - leg_offset(u, P.yh);
  const double clearance = apex_clearance(entry.h_apex, u);
  out.td.v = Vec3(entry.vx_apex, entry.vy_apex, -std::sqrt(2.0 * P.g * clearance));
  out.td.t = 0.0;

  const FlightTimes ft = flight_times(entry.h_apex, u, 0.0, P.g);
  out.liftoff = ballistic(out.td, -ft.total(), P.g);

  // periodic liftoff leg of the mirrored (-1) stance
  const Vec3 r_lo = side_mirror(-1) * (periodic.liftoff.p - periodic.pf);
  out.prev_pf = out.liftoff.p - r_lo;
  out.prev_td = integrate_passive_stance(P, out.liftoff, out.prev_pf, -P.dt_stance);

  out.prev_u = inverse_leg_kinematics(out.prev_pf - out.prev_td.p, P.yh, -1);
  if (out.prev_u.th1 < P.th1_min || out.prev_u.th1 > P.th1_max || out.prev_u.th2 < P.th2_min ||
      out.prev_u.th2 > P.th2_max || out.prev_u.lh < P.lh_min || out.prev_u.lh > P.lh_max)
    throw Error(ErrorKind::KinematicLimits, "back-integrated touchdown outside leg limits");
  return out;
}

}  // namespace slipstep
