#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>

#include "slipstep/types.hpp"

namespace slipstep {

/// Passive spring-leg stance acceleration for CoM `p` over foot `pf`.
inline Vec3 stance_accel(const TemplateParams& params, const Vec3& p, const Vec3& pf) {
  const Vec3 r = p - pf;
  const double len = r.norm();
  if (len < 1e-9) throw Error(ErrorKind::SingularLeg, "");
  return (params.k / params.m) * (params.r0 - len) * (r / len) + params.gravity();
}

/// Foot point relative to the CoM while the leg is held at `u` (pf - p).
inline Vec3 leg_offset(const LegCommand& u, double yh) {
  const double s = static_cast<double>(u.sigma);
  const double c2 = std::cos(u.th2);
  return Vec3(0.0, s * yh, 0.0) +
         u.lh * Vec3(std::sin(u.th1) * c2, s * std::sin(u.th2), -std::cos(u.th1) * c2);
}

inline Vec3 foot_kinematics(const Vec3& p, const LegCommand& u, double yh) {
  return p + leg_offset(u, yh);
}

/// Virtual leg length that makes the touchdown leg vector exactly r0 long
/// for a given lateral angle. Independent of th1 and of the stance side.
inline double nominal_leg_length(double r0, double yh, double th2) {
  const double c2 = std::cos(th2);
  const double disc = r0 * r0 - yh * yh * c2 * c2;
  if (disc <= 0.0) throw Error(ErrorKind::InvalidArgument, "hip offset exceeds rest length");
  return -yh * std::sin(th2) + std::sqrt(disc);
}

inline ComState ballistic(const ComState& s, double dt, double g) {
  ComState out;
  out.p = s.p + s.v * dt + 0.5 * dt * dt * Vec3(0.0, 0.0, -g);
  out.v = s.v + dt * Vec3(0.0, 0.0, -g);
  out.t = s.t + dt;
  return out;
}

/// Time until `p_z + offset_z` falls to `ground_z` on the descending branch
/// of a ballistic arc. Empty if the height is never reached.
inline std::optional<double> time_to_height(const ComState& s, double offset_z, double ground_z,
                                            double g) {
  const double z0 = s.p.z() + offset_z - ground_z;
  const double vz = s.v.z();
  // z0 + vz t - g t^2 / 2 = 0
  const double disc = vz * vz + 2.0 * g * z0;
  if (disc < 0.0) return std::nullopt;
  const double t = (vz + std::sqrt(disc)) / g;
  if (t < 0.0) return std::nullopt;
  return t;
}

namespace detail {

struct Deriv {
  Vec3 dp;
  Vec3 dv;
};

inline ComState rk4_stance_step(const TemplateParams& P, const ComState& s, const Vec3& pf, double h) {
  auto f = [&](const Vec3& p, const Vec3& v) { return Deriv{v, stance_accel(P, p, pf)}; };
  const Deriv k1 = f(s.p, s.v);
  const Deriv k2 = f(s.p + 0.5 * h * k1.dp, s.v + 0.5 * h * k1.dv);
  const Deriv k3 = f(s.p + 0.5 * h * k2.dp, s.v + 0.5 * h * k2.dv);
  const Deriv k4 = f(s.p + h * k3.dp, s.v + h * k3.dv);
  ComState out;
  out.p = s.p + (h / 6.0) * (k1.dp + 2.0 * k2.dp + 2.0 * k3.dp + k4.dp);
  out.v = s.v + (h / 6.0) * (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv);
  out.t = s.t + h;
  return out;
}

// Positive once the leg is at or beyond r0 and extending in the direction of
// integration. Crosses zero exactly once at liftoff (or at touchdown when
// integrating backwards).
inline double leg_exit_function(const TemplateParams& P, const ComState& s, const Vec3& pf, double dir) {
  const Vec3 r = s.p - pf;
  return std::min(r.norm() - P.r0, dir * r.dot(s.v));
}

}  // namespace detail

/// Integrates the passive stance from `start` with signed step `dt` until the
/// leg returns to rest length while extending (dt > 0: liftoff; dt < 0:
/// touchdown of the time-reversed motion). The crossing is located by
/// bisection on the final partial step.
inline ComState integrate_passive_stance(const TemplateParams& P, const ComState& start, const Vec3& pf,
                                         double dt, HybridTrace* trace = nullptr) {
  const double dir = dt > 0 ? 1.0 : -1.0;
  auto record = [&](const ComState& s) {
    if (trace) {
      const Vec3 force = P.m * (stance_accel(P, s.p, pf) - P.gravity());
      trace->push(s, Phase::Stance, pf, force);
    }
  };

  ComState s = start;
  record(s);
  if (detail::leg_exit_function(P, s, pf, dir) >= 0.0) return s;

  const int max_steps = static_cast<int>(std::ceil(P.max_phase_time / std::abs(dt)));
  for (int i = 0; i < max_steps; ++i) {
    ComState next = detail::rk4_stance_step(P, s, pf, dt);
    if (next.p.z() <= pf.z()) throw Error(ErrorKind::Crashed, "CoM reached ground during stance");
    if (detail::leg_exit_function(P, next, pf, dir) >= 0.0) {
      double lo = 0.0;
      double hi = std::abs(dt);
      while (hi - lo > P.event_tol) {
        const double mid = 0.5 * (lo + hi);
        const ComState probe = detail::rk4_stance_step(P, s, pf, dir * mid);
        if (detail::leg_exit_function(P, probe, pf, dir) >= 0.0)
          hi = mid;
        else
          lo = mid;
      }
      next = detail::rk4_stance_step(P, s, pf, dir * hi);
      record(next);
      return next;
    }
    s = next;
    record(s);
  }
  throw Error(ErrorKind::StuckInStance, "no liftoff within time limit");
}

inline void sample_flight(const TemplateParams& P, const ComState& from, double duration,
                          const Vec3& foot_offset, HybridTrace& trace) {
  const int n = static_cast<int>(std::floor(duration / P.dt_flight));
  for (int i = 0; i <= n; ++i) {
    const ComState s = ballistic(from, i * P.dt_flight, P.g);
    trace.push(s, Phase::Flight, s.p + foot_offset, Vec3::Zero());
  }
}

/// Everything produced by one apex-to-apex passive step.
struct ApexStep {
  ApexState next;
  ComState touchdown;
  ComState liftoff;
  ComState apex;
  Vec3 pf = Vec3::Zero();
};

/// Passive return map. Starts at the apex (0, 0, h) with velocity
/// (vx, vy, 0), holds the leg at `u` until the foot reaches `ground_z`,
/// runs the spring stance to liftoff and flies to the next apex.
inline ApexStep passive_apex_step(const TemplateParams& P, const ApexState& apex, const LegCommand& u,
                                  double ground_z = 0.0, HybridTrace* trace = nullptr) {
  ComState s0;
  s0.p = Vec3(0.0, 0.0, apex.h);
  s0.v = Vec3(apex.vx, apex.vy, 0.0);

  const Vec3 offset = leg_offset(u, P.yh);
  const double clearance = apex.h + offset.z() - ground_z;
  if (clearance < 0.0) throw Error(ErrorKind::ImmediateTouchdown, "foot below ground at apex");

  const double t_td = std::sqrt(2.0 * clearance / P.g);
  if (t_td > P.max_phase_time) throw Error(ErrorKind::NoTouchdown, "");

  ApexStep out;
  out.touchdown = ballistic(s0, t_td, P.g);
  out.pf = out.touchdown.p + offset;
  out.pf.z() = ground_z;
  if (trace) {
    sample_flight(P, s0, t_td, offset, *trace);
    trace->mark(EventKind::Touchdown, t_td);
  }

  out.liftoff = integrate_passive_stance(P, out.touchdown, out.pf, P.dt_stance, trace);
  if (trace) trace->mark(EventKind::Liftoff, out.liftoff.t);

  const double t_up = std::max(0.0, out.liftoff.v.z() / P.g);
  out.apex = ballistic(out.liftoff, t_up, P.g);
  out.apex.v.z() = 0.0;
  if (trace) {
    LegCommand mirrored = u;
    mirrored.sigma = -u.sigma;
    sample_flight(P, out.liftoff, t_up, leg_offset(mirrored, P.yh), *trace);
    trace->mark(EventKind::Apex, out.apex.t);
  }
  out.next = {out.apex.v.x(), out.apex.v.y(), out.apex.p.z()};
  return out;
}

inline std::pair<ApexState, HybridTrace> integrate_apex_to_apex(const TemplateParams& P, const ApexState& apex,
                                                                const LegCommand& u, double ground_z = 0.0) {
  HybridTrace trace;
  const ApexStep step = passive_apex_step(P, apex, u, ground_z, &trace);
  return {step.next, std::move(trace)};
}

struct FlightTimes {
  double rise = 0.0;
  double fall = 0.0;
  double total() const { return rise + fall; }
};

/// Rise and fall times of the symmetric flight for apex height `h_apex`
/// (above the take-off surface) and a landing surface `delta_z` higher.
inline FlightTimes flight_times(double h_apex, const LegCommand& u, double delta_z, double g) {
  const double foot_apex = h_apex - u.lh * std::cos(u.th1) * std::cos(u.th2);
  if (foot_apex < 0.0 || foot_apex - delta_z < 0.0) throw Error(ErrorKind::UnreachableHeight, "");
  return {std::sqrt(2.0 * foot_apex / g), std::sqrt(2.0 * (foot_apex - delta_z) / g)};
}

}  // namespace slipstep
