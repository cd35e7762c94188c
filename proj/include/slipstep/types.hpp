#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace slipstep {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

enum class ErrorKind {
  InvalidArgument,
  SingularLeg,
  NoTouchdown,
  ImmediateTouchdown,
  Crashed,
  StuckInStance,
  UnreachableHeight,
  NoPeriodicSolution,
  DegenerateCone,
  SingularJacobian,
  NoFeasibleTrajectory,
  KinematicLimits,
  Io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid argument";
    case ErrorKind::SingularLeg: return "singular leg vector";
    case ErrorKind::NoTouchdown: return "no touchdown";
    case ErrorKind::ImmediateTouchdown: return "immediate touchdown";
    case ErrorKind::Crashed: return "crashed";
    case ErrorKind::StuckInStance: return "stuck in stance";
    case ErrorKind::UnreachableHeight: return "unreachable height difference";
    case ErrorKind::NoPeriodicSolution: return "no periodic solution";
    case ErrorKind::DegenerateCone: return "degenerate force cone";
    case ErrorKind::SingularJacobian: return "singular input jacobian";
    case ErrorKind::NoFeasibleTrajectory: return "no feasible trajectory";
    case ErrorKind::KinematicLimits: return "kinematic limits violated";
    case ErrorKind::Io: return "i/o error";
  }
  return "unknown";
}

/// Library-wide exception. `kind()` is stable and machine readable; the
/// message carries context for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& detail)
      : std::runtime_error(detail.empty() ? std::string(to_string(kind))
                                          : std::string(to_string(kind)) + ": " + detail),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Physical constants and kinematic limits of the template model.
///
/// `k` is the default stiffness; library entries carry their own and use
/// `with_stiffness` to specialize a copy.
struct TemplateParams {
  double m = 73.4;
  double k = 8000.0;
  double r0 = 0.9;
  double yh = 0.1;
  double g = 9.81;
  double mu = 0.6;
  double foot_len = 0.2;
  double foot_wid = 0.1;
  double lh_min = 0.6;
  double lh_max = 0.945;
  double th1_min = -0.6;
  double th1_max = 0.6;
  double th2_min = -0.3;
  double th2_max = 0.3;

  // integration
  double dt_stance = 1e-4;
  double dt_flight = 1e-3;
  double event_tol = 1e-13;
  double max_phase_time = 5.0;

  TemplateParams with_stiffness(double stiffness) const {
    TemplateParams p = *this;
    p.k = stiffness;
    return p;
  }

  Vec3 gravity() const { return {0.0, 0.0, -g}; }

  void validate() const {
    auto fail = [](const char* what) { throw Error(ErrorKind::InvalidArgument, what); };
    if (!(m > 0)) fail("mass must be positive");
    if (!(k > 0)) fail("stiffness must be positive");
    if (!(r0 > 0)) fail("rest length must be positive");
    if (!(g > 0)) fail("gravity must be positive");
    if (!(mu > 0)) fail("friction coefficient must be positive");
    if (!(foot_len > 0) || !(foot_wid > 0)) fail("foot dimensions must be positive");
    if (!(lh_min > 0) || lh_min > lh_max || lh_max > r0 * 1.05)
      fail("leg length limits must satisfy 0 < lh_min <= lh_max <= 1.05 r0");
    if (th1_min > th1_max || th2_min > th2_max) fail("angle limits inverted");
    if (!(dt_stance > 0) || !(dt_flight > 0)) fail("time steps must be positive");
  }
};

struct ComState {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  double t = 0.0;

  bool finite() const { return p.allFinite() && v.allFinite() && std::isfinite(t); }
};

/// Touchdown leg configuration. `sigma` is +1 / -1 for the stance side.
struct LegCommand {
  double th1 = 0.0;
  double th2 = 0.0;
  double lh = 0.9;
  int sigma = 1;

  Vec3 as_vector() const { return {th1, th2, lh}; }
  static LegCommand from_vector(const Vec3& u, int sigma = 1) { return {u.x(), u.y(), u.z(), sigma}; }

  bool within(const TemplateParams& p) const {
    return th1 > p.th1_min && th1 < p.th1_max && th2 > p.th2_min && th2 < p.th2_max &&
           lh > p.lh_min && lh < p.lh_max;
  }
};

/// Apex-section coordinate x = (vx, vy, h).
struct ApexState {
  double vx = 0.0;
  double vy = 0.0;
  double h = 1.0;

  Vec3 as_vector() const { return {vx, vy, h}; }
  static ApexState from_vector(const Vec3& x) { return {x.x(), x.y(), x.z()}; }
};

/// Leg-switch sign flip between consecutive apexes, diag(1, -1, 1).
inline Mat3 leg_switch() { return Vec3(1.0, -1.0, 1.0).asDiagonal(); }

enum class Phase { Flight, Stance };

enum class EventKind { Touchdown, Liftoff, Apex };

inline const char* to_string(Phase p) { return p == Phase::Flight ? "flight" : "stance"; }

inline const char* to_string(EventKind e) {
  switch (e) {
    case EventKind::Touchdown: return "touchdown";
    case EventKind::Liftoff: return "liftoff";
    case EventKind::Apex: return "apex";
  }
  return "?";
}

struct TraceSample {
  ComState state;
  Phase phase = Phase::Flight;
  Vec3 pf = Vec3::Zero();
  Vec3 f = Vec3::Zero();
};

struct TraceEvent {
  EventKind kind;
  double t;
};

struct HybridTrace {
  std::vector<TraceSample> samples;
  std::vector<TraceEvent> events;

  void push(const ComState& s, Phase phase, const Vec3& pf, const Vec3& f) {
    samples.push_back({s, phase, pf, f});
  }
  void mark(EventKind kind, double t) { events.push_back({kind, t}); }
  void append(const HybridTrace& other) {
    samples.insert(samples.end(), other.samples.begin(), other.samples.end());
    events.insert(events.end(), other.events.begin(), other.events.end());
  }
};

/// Rotation about +z.
inline Mat3 yaw_rotation(double yaw) {
  return Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
}

/// Mirror used to move between the +1 stance-side convention and sigma.
inline Mat3 side_mirror(int sigma) { return Vec3(1.0, static_cast<double>(sigma), 1.0).asDiagonal(); }

}  // namespace slipstep
