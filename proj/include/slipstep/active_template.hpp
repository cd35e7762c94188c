#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "slipstep/slip_core.hpp"
#include "slipstep/trajectory_library.hpp"

namespace slipstep {

/// Task-space PD gains of the stance controller.
struct PdGains {
  Mat3 Kp = Mat3::Identity();
  Mat3 Kd = Mat3::Identity();

  /// Critically damped gains with natural frequency `omega` for mass `m`.
  static PdGains critically_damped(double m, double omega = 20.0) {
    return {m * omega * omega * Mat3::Identity(), 2.0 * m * omega * Mat3::Identity()};
  }

  PdGains scaled(double factor) const { return {factor * Kp, factor * Kd}; }
};

struct ReferencePoint {
  Vec3 p;
  Vec3 v;
  Vec3 a;
};

/// One stance phase of a passive periodic trajectory, stored relative to its
/// foot in the +1 stance-side frame, plus the anchor that places it in the
/// world: p_world = anchor + rotation * mirror(sigma) * p_rel.
///
/// Past the stored liftoff the reference continues ballistically.
struct ReferenceTrajectory {
  double dt = 1e-4;
  double g = 9.81;
  std::vector<double> t;
  std::vector<ReferencePoint> rel;

  Vec3 anchor = Vec3::Zero();
  Mat3 rotation = Mat3::Identity();
  int sigma = 1;

  double duration() const { return t.empty() ? 0.0 : t.back(); }

  Mat3 frame() const { return rotation * side_mirror(sigma); }

  ReferenceTrajectory anchored(const Vec3& pf, const Mat3& rot = Mat3::Identity(), int side = 1) const {
    ReferenceTrajectory out = *this;
    out.anchor = pf;
    out.rotation = rot;
    out.sigma = side;
    return out;
  }

  /// Relative (unanchored) sample at time t since touchdown.
  ReferencePoint relative_at(double time) const {
    const Vec3 gvec(0.0, 0.0, -g);
    if (time >= duration()) {
      const ReferencePoint& last = rel.back();
      const double s = time - duration();
      return {last.p + last.v * s + 0.5 * s * s * gvec, last.v + s * gvec, gvec};
    }
    if (time <= 0.0) return rel.front();
    std::size_t i = static_cast<std::size_t>(std::floor(time / dt));
    if (i + 1 >= t.size()) i = t.size() - 2;
    const double tau = time - t[i];
    if (std::abs(tau) < 1e-12) return rel[i];
    const double h = t[i + 1] - t[i];
    const double s = tau / h;
    const ReferencePoint& a = rel[i];
    const ReferencePoint& b = rel[i + 1];
    // cubic Hermite on position (p, v) and velocity (v, a)
    const double h00 = 2 * s * s * s - 3 * s * s + 1;
    const double h10 = s * s * s - 2 * s * s + s;
    const double h01 = -2 * s * s * s + 3 * s * s;
    const double h11 = s * s * s - s * s;
    return {h00 * a.p + h10 * h * a.v + h01 * b.p + h11 * h * b.v,
            h00 * a.v + h10 * h * a.a + h01 * b.v + h11 * h * b.a, (1 - s) * a.a + s * b.a};
  }

  ReferencePoint at(double time) const {
    const ReferencePoint r = relative_at(time);
    const Mat3 M = frame();
    return {anchor + M * r.p, M * r.v, M * r.a};
  }
};

/// Integrates the passive stance of `entry` and samples it on the physics
/// grid (liftoff appended as the final sample).
inline ReferenceTrajectory make_reference(const TrajectoryEntry& entry, const TemplateParams& params) {
  const TemplateParams P = params.with_stiffness(entry.k);
  HybridTrace trace;
  const ApexStep step = passive_apex_step(P, entry.apex(), entry.command(P), 0.0, &trace);

  ReferenceTrajectory ref;
  ref.dt = P.dt_stance;
  ref.g = P.g;
  std::size_t n = 0;
  for (const TraceSample& s : trace.samples) {
    if (s.phase != Phase::Stance) continue;
    const double rel_t = s.state.t - step.touchdown.t;
    const bool last = std::abs(s.state.t - step.liftoff.t) < 1e-15 && s.state.p == step.liftoff.p;
    ref.t.push_back(last ? rel_t : static_cast<double>(n) * P.dt_stance);
    ref.rel.push_back({s.state.p - step.pf, s.state.v, stance_accel(P, s.state.p, step.pf)});
    ++n;
  }
  return ref;
}

/// fd = m a_ref - m g + Kd (v_ref - v) + Kp (p_ref - p).
inline Vec3 desired_force(double m, double g, const ReferencePoint& ref, const Vec3& p, const Vec3& v,
                          const PdGains& gains) {
  return m * ref.a - m * Vec3(0.0, 0.0, -g) + gains.Kd * (ref.v - v) + gains.Kp * (ref.p - p);
}

/// Unit vectors from the four foot corners to the CoM and the friction
/// coefficient. Corners are ordered counter-clockwise seen from above.
struct ForceCone {
  Eigen::Matrix<double, 3, 4> V;
  double mu = 0.6;
};

inline ForceCone make_force_cone(const Vec3& p, const Vec3& pf, double foot_len, double foot_wid, double mu,
                                 double yaw = 0.0) {
  const Mat3 R = yaw_rotation(yaw);
  const double hl = 0.5 * foot_len, hw = 0.5 * foot_wid;
  const std::array<Vec3, 4> corners = {Vec3(hl, hw, 0), Vec3(-hl, hw, 0), Vec3(-hl, -hw, 0), Vec3(hl, -hw, 0)};
  ForceCone cone;
  cone.mu = mu;
  for (int i = 0; i < 4; ++i) {
    const Vec3 d = p - (pf + R * corners[i]);
    const double n = d.norm();
    if (n < 1e-9 || d.z() / n < 1e-9) throw Error(ErrorKind::DegenerateCone, "CoM not above the foot plane");
    cone.V.col(i) = d / n;
  }
  return cone;
}

inline ForceCone make_force_cone(const Vec3& p, const Vec3& pf, const TemplateParams& P, double yaw = 0.0) {
  return make_force_cone(p, pf, P.foot_len, P.foot_wid, P.mu, yaw);
}

struct ProjectedForce {
  Vec3 f = Vec3::Zero();
  Eigen::Vector4d alpha = Eigen::Vector4d::Zero();
  bool was_projected = false;
};

namespace detail {

// Halfspaces a.f <= 0 describing cone(V) intersected with the friction
// pyramid. Rows are unit normals.
inline Eigen::Matrix<double, 8, 3> cone_halfspaces(const ForceCone& cone) {
  Eigen::Matrix<double, 8, 3> A;
  const Vec3 interior = cone.V.rowwise().sum();
  for (int i = 0; i < 4; ++i) {
    Vec3 n = cone.V.col(i).cross(cone.V.col((i + 1) % 4));
    if (n.dot(interior) < 0) n = -n;
    A.row(i) = (-n.normalized()).transpose();
  }
  const double mu = cone.mu;
  A.row(4) = Vec3(1, 0, -mu).normalized().transpose();
  A.row(5) = Vec3(-1, 0, -mu).normalized().transpose();
  A.row(6) = Vec3(0, 1, -mu).normalized().transpose();
  A.row(7) = Vec3(0, -1, -mu).normalized().transpose();
  return A;
}

// Non-negative generator weights for f inside cone(V). Any point of a
// pointed four-generator cone lies in one of the four consecutive triples.
inline Eigen::Vector4d cone_weights(const ForceCone& cone, const Vec3& f) {
  Eigen::Vector4d best = Eigen::Vector4d::Zero();
  double best_min = -std::numeric_limits<double>::infinity();
  for (int skip = 0; skip < 4; ++skip) {
    Mat3 S;
    std::array<int, 3> idx{};
    for (int c = 0, j = 0; j < 4; ++j)
      if (j != skip) {
        S.col(c) = cone.V.col(j);
        idx[c++] = j;
      }
    const Vec3 w = S.fullPivLu().solve(f);
    if (!w.allFinite()) continue;
    if (w.minCoeff() > best_min) {
      best_min = w.minCoeff();
      best.setZero();
      for (int c = 0; c < 3; ++c) best[idx[c]] = w[c];
    }
    if (best_min >= 0.0) break;
  }
  return best.cwiseMax(0.0);
}

}  // namespace detail

/// Closest feasible force to `fd` in the polyhedral cone spanned by the foot
/// corners and limited by the friction pyramid.
///
/// The problem is solved in force space, where the Hessian is the identity:
/// the optimum has at most two active constraints (a face or an edge of the
/// feasible cone) or sits at the apex, so every active set is tried and the
/// nearest feasible candidate wins. Ties resolve in enumeration order.
inline ProjectedForce project_force(const Vec3& fd, const ForceCone& cone) {
  const Eigen::Matrix<double, 8, 3> A = detail::cone_halfspaces(cone);
  const double scale = std::max(1.0, fd.norm());
  const double feas_tol = 1e-12 * scale;
  auto feasible = [&](const Vec3& f) { return (A * f).maxCoeff() <= feas_tol; };

  Vec3 best = Vec3::Zero();
  double best_dist = fd.norm();
  auto consider = [&](const Vec3& f) {
    if (!f.allFinite() || !feasible(f)) return;
    const double d = (fd - f).norm();
    if (d < best_dist) {
      best_dist = d;
      best = f;
    }
  };

  if (feasible(fd)) {
    best = fd;
    best_dist = 0.0;
  } else {
    for (int i = 0; i < 8; ++i) {
      const Vec3 a = A.row(i).transpose();
      const double s = a.dot(fd);
      if (s > 0) consider(fd - s * a);
    }
    for (int i = 0; i < 8; ++i)
      for (int j = i + 1; j < 8; ++j) {
        Vec3 d = A.row(i).transpose().cross(A.row(j).transpose());
        const double n = d.norm();
        if (n < 1e-12) continue;
        d /= n;
        consider(d.dot(fd) * d);
      }
  }

  ProjectedForce out;
  out.alpha = detail::cone_weights(cone, best);
  out.f = cone.V * out.alpha;
  out.was_projected = (fd - out.f).norm() >= 1e-9;
  return out;
}

/// Outcome of advancing the plant for one zero-order-hold interval.
struct AdvanceResult {
  ComState state;
  bool lifted_off = false;
};

/// Point-mass motion under constant force `f` for `substeps` steps of `dt`,
/// stopping at liftoff (leg at r0 and extending). Motion within a substep is
/// exact, so the liftoff instant is bisected on the closed form.
inline AdvanceResult advance_under_force(const TemplateParams& P, double plant_mass, const ComState& start,
                                         const Vec3& pf, const Vec3& f, double dt, int substeps,
                                         HybridTrace* trace = nullptr) {
  const Vec3 acc = P.gravity() + f / plant_mass;
  auto propagate = [&](const ComState& s, double h) {
    ComState o;
    o.p = s.p + s.v * h + 0.5 * h * h * acc;
    o.v = s.v + h * acc;
    o.t = s.t + h;
    return o;
  };
  auto exit_fn = [&](const ComState& s) {
    const Vec3 r = s.p - pf;
    return std::min(r.norm() - P.r0, r.dot(s.v));
  };

  ComState s = start;
  for (int i = 0; i < substeps; ++i) {
    ComState next = propagate(s, dt);
    if (next.p.z() <= pf.z()) throw Error(ErrorKind::Crashed, "CoM reached ground during stance");
    if (exit_fn(next) >= 0.0) {
      double lo = 0.0, hi = dt;
      while (hi - lo > P.event_tol) {
        const double mid = 0.5 * (lo + hi);
        if (exit_fn(propagate(s, mid)) >= 0.0)
          hi = mid;
        else
          lo = mid;
      }
      next = propagate(s, hi);
      if (trace) trace->push(next, Phase::Stance, pf, f);
      return {next, true};
    }
    s = next;
    if (trace) trace->push(s, Phase::Stance, pf, f);
  }
  return {s, false};
}

struct ActiveStanceOptions {
  double tick = 1e-3;
  int substeps = 10;
};

struct ActiveStanceResult {
  ComState liftoff;
  HybridTrace trace;
  int projected_ticks = 0;
  int ticks = 0;
};

inline double heading_yaw(const Mat3& R) { return std::atan2(R(1, 0), R(0, 0)); }

/// Stance of the actively controlled point mass tracking an anchored
/// reference. Force is recomputed every control tick and held in between.
inline ActiveStanceResult simulate_active_stance(const TemplateParams& P, const ReferenceTrajectory& ref,
                                                 const ComState& init, const Vec3& pf, const PdGains& gains,
                                                 const ActiveStanceOptions& opt = {}) {
  ActiveStanceResult out;
  const double yaw = heading_yaw(ref.rotation);
  ComState s = init;
  out.trace.push(s, Phase::Stance, pf, Vec3::Zero());
  const int max_ticks = static_cast<int>(std::ceil(P.max_phase_time / opt.tick));
  for (int k = 0; k < max_ticks; ++k) {
    const double t_rel = k * opt.tick;
    ReferencePoint r = ref.at(t_rel);
    // the force is held for a whole tick, so feed forward the mean reference
    // acceleration over that tick
    r.a = (ref.at(t_rel + opt.tick).v - r.v) / opt.tick;
    const Vec3 fd = desired_force(P.m, P.g, r, s.p, s.v, gains);
    const ProjectedForce pr = project_force(fd, make_force_cone(s.p, pf, P, yaw));
    if (k == 0) out.trace.samples.back().f = pr.f;
    out.projected_ticks += pr.was_projected ? 1 : 0;
    ++out.ticks;
    const AdvanceResult adv =
        advance_under_force(P, P.m, s, pf, pr.f, opt.tick / opt.substeps, opt.substeps, &out.trace);
    s = adv.state;
    if (adv.lifted_off) {
      out.liftoff = s;
      return out;
    }
  }
  throw Error(ErrorKind::StuckInStance, "no liftoff within time limit");
}

struct ActiveStep {
  ApexState next;
  ComState touchdown;
  ComState liftoff;
  Vec3 pf = Vec3::Zero();
};

/// Active apex-to-apex map: passive flight with the leg held at `u`, active
/// stance tracking `ref` re-anchored at the realized foothold, flight to the
/// next apex. `ref` is the unanchored reference of the target entry.
inline ActiveStep active_apex_step(const TemplateParams& P, const ApexState& x, const LegCommand& u,
                                   const ReferenceTrajectory& ref, const PdGains& gains, double ground_z = 0.0,
                                   HybridTrace* trace = nullptr) {
  ComState s0;
  s0.p = Vec3(0.0, 0.0, x.h);
  s0.v = Vec3(x.vx, x.vy, 0.0);
  const Vec3 offset = leg_offset(u, P.yh);
  const double clearance = x.h + offset.z() - ground_z;
  if (clearance < 0.0) throw Error(ErrorKind::ImmediateTouchdown, "foot below ground at apex");

  ActiveStep out;
  out.touchdown = ballistic(s0, std::sqrt(2.0 * clearance / P.g), P.g);
  out.pf = out.touchdown.p + offset;
  out.pf.z() = ground_z;
  if (trace) {
    sample_flight(P, s0, out.touchdown.t, offset, *trace);
    trace->mark(EventKind::Touchdown, out.touchdown.t);
  }

  ActiveStanceResult st = simulate_active_stance(P, ref.anchored(out.pf, Mat3::Identity(), u.sigma),
                                                 out.touchdown, out.pf, gains);
  out.liftoff = st.liftoff;
  const double t_up = std::max(0.0, out.liftoff.v.z() / P.g);
  const ComState apex = ballistic(out.liftoff, t_up, P.g);
  if (trace) {
    trace->append(st.trace);
    trace->mark(EventKind::Liftoff, out.liftoff.t);
    LegCommand mirrored = u;
    mirrored.sigma = -u.sigma;
    sample_flight(P, out.liftoff, t_up, leg_offset(mirrored, P.yh), *trace);
    trace->mark(EventKind::Apex, apex.t);
  }
  out.next = {apex.v.x(), apex.v.y(), apex.p.z()};
  return out;
}

inline ApexState active_return_map(const TemplateParams& P, const ApexState& x, const LegCommand& u,
                                   const ReferenceTrajectory& ref, const PdGains& gains) {
  return active_apex_step(P, x, u, ref, gains).next;
}

inline ApexState active_return_map(const TemplateParams& P, const ApexState& x, const LegCommand& u,
                                   const TrajectoryEntry& ref_entry, const PdGains& gains) {
  return active_return_map(P, x, u, make_reference(ref_entry, P), gains);
}

}  // namespace slipstep
