#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "slipstep/harness/noise.hpp"
#include "slipstep/harness/run_log.hpp"
#include "slipstep/harness/scenario.hpp"
#include "slipstep/step_adaptation.hpp"

namespace slipstep {

struct HarnessOptions {
  double tick = 1e-3;
  int substeps = 10;
  double omega = 20.0;
  Vec3 weights = Vec3::Ones();
  double max_time = 600.0;
  bool bypass_noise = false;
  int first_obstacle_step = 3;
};

/// Nearest entry with a valid gain to (vx, h, k); ties go to the lower index.
inline std::size_t nearest_entry(const TrajectoryLibrary& lib, const GainLibrary& gains, double vx, double h,
                                 double k) {
  std::size_t best = lib.size();
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < lib.size(); ++i) {
    if (!gains[i].ok) continue;
    const TrajectoryEntry& e = lib[i];
    const double d = std::abs(e.vx_apex - vx) + std::abs(e.h_apex - h) + std::abs(e.k - k) / 1e4;
    if (d < best_d - 1e-12) {
      best_d = d;
      best = i;
    }
  }
  if (best == lib.size()) throw Error(ErrorKind::NoFeasibleTrajectory, "library has no usable entry");
  return best;
}

inline LegCommand clamp_to_limits(LegCommand u, const TemplateParams& P) {
  const double m = 1e-9;
  u.th1 = std::clamp(u.th1, P.th1_min + m, P.th1_max - m);
  u.th2 = std::clamp(u.th2, P.th2_min + m, P.th2_max - m);
  u.lh = std::clamp(u.lh, P.lh_min + m, P.lh_max - m);
  return u;
}

namespace detail {

// Raised inside the loop to stop a run; never escapes run_closed_loop.
struct RunStop {
  std::string status;
  std::string message;
  std::string stage;
};

class ClosedLoop {
 public:
  ClosedLoop(const ScenarioConfig& sc, const TrajectoryLibrary& lib, const GainLibrary& gains,
             const NoiseConfig& noise, const HarnessOptions& opt)
      : sc_(sc),
        lib_(lib),
        P_(lib.params),
        sel_(lib, gains, opt.weights),
        noise_(opt.bypass_noise ? NoiseConfig::none() : noise, sc.seed),
        opt_(opt),
        pd_(PdGains::critically_damped(lib.params.m, opt.omega)),
        refs_(lib.size()) {
    sc_.validate();
    if (sc_.kind == ScenarioKind::Stones) stones_ = generate_stone_course(sc_.seed, sc_.n_stones, sc_.stones);
    if (sc_.kind == ScenarioKind::Obstacles)
      obstacles_ = generate_obstacles(sc_.seed, sc_.n_obstacles, sc_.obstacles);
    vx_cmd_ = sc_.vx0;
  }

  RunLog run() {
    try {
      start();
      loop();
    } catch (const RunStop& stop) {
      log_.summary.status = stop.status;
      log_.summary.message = stop.message;
      log_.summary.failed_stage = stop.stage;
    } catch (const SelectionError& e) {
      log_.summary.status = "selection_error";
      log_.summary.message = e.what();
      log_.summary.failed_stage = e.stage();
    } catch (const Error& e) {
      log_.summary.status = "integration_error";
      log_.summary.message = e.what();
    }
    log_.summary.fell = log_.summary.status == "fall";
    log_.summary.steps = steps_;
    log_.summary.duration = s_.t;
    compute_rmse(log_.ticks, log_.summary.vx_rmse, log_.summary.vy_rmse, log_.summary.rmse_samples);
    return std::move(log_);
  }

 private:
  const ReferenceTrajectory& reference(std::size_t i) {
    if (!refs_[i]) refs_[i] = std::make_unique<ReferenceTrajectory>(make_reference(lib_[i], P_));
    return *refs_[i];
  }

  Mat3 frame(int side) const { return yaw_rotation(heading_) * side_mirror(side); }

  // Off the stones the foot drops into a pit below the lowest stone.
  double ground_at(const Vec3& q) const {
    if (stones_.empty()) return 0.0;
    double pit = 0.0;
    for (const Stone& st : stones_) {
      if (st.contains(q)) return st.center.z();
      pit = std::min(pit, st.center.z());
    }
    return pit - kPitDepth;
  }

  static constexpr double kPitDepth = 0.2;

  // Start at the apex of the initial entry, flying towards a -1 stance whose
  // foot lands on the origin.
  void start() {
    entry_lo_ = nearest_entry(lib_, sel_.gains(), sc_.vx0, sc_.h, sc_.k);
    entry_stance_ = entry_lo_;
    const TrajectoryEntry& e = lib_[entry_lo_];
    const LegCommand u = e.command(P_);
    const ApexStep st = passive_apex_step(P_.with_stiffness(e.k), e.apex(), u);
    side_ = 1;
    next_side_ = -1;
    pf_ = Vec3::Zero();
    const Mat3 F = frame(next_side_);
    s_.p = F * (Vec3(0.0, 0.0, e.h_apex) - st.pf);
    s_.v = F * Vec3(e.vx_apex, e.vy_apex, 0.0);
    s_.t = 0.0;
    phase_ = Phase::Flight;
    x_pred_ = e.apex();
    u_cmd_ = u;
    flight_offset_ = F * leg_offset(u, P_.yh);

    StepRecord rec;
    rec.step = 1;
    rec.side = next_side_;
    rec.entry = static_cast<int>(entry_lo_);
    rec.u = u.as_vector();
    rec.apex = Vec3(s_.v.x(), s_.v.y(), e.h_apex);
    rec.apex_ref = rec.apex;
    rec.heading = heading_;
    if (!stones_.empty()) {
      rec.targeted = true;
      rec.target = stones_[0].center;
      rec.target_l = stones_[0].l;
      rec.target_w = stones_[0].w;
    }
    pending_ = rec;
    liftoffs_ = 1;
  }

  Mat3 frame_rotation() const { return yaw_rotation(heading_); }

  // Speed and heading commands for step n take effect at touchdown n, when
  // the stance reference is switched and rotated.
  void apply_commands() {
    for (const Command& c : sc_.commands)
      if (c.step == steps_) {
        vx_cmd_ = c.vx;
        heading_ = c.heading;
      }
    if (sc_.kind == ScenarioKind::Slalom && sc_.slalom_period > 0 && steps_ > 1 &&
        (steps_ - 1) % sc_.slalom_period == 0)
      heading_ = (((steps_ - 1) / sc_.slalom_period) % 2 == 1) ? sc_.slalom_angle : -sc_.slalom_angle;
  }

  void on_liftoff(const ComState& truth) {
    const ComState seen = noise_.capture(truth);
    // apex that the stance just finished should reach, for diagnostics
    const Vec3 xs = lib_[entry_stance_].apex().as_vector();
    const Vec3 apex_ref = yaw_rotation(heading_) * side_mirror(-side_) * Vec3(xs.x(), xs.y(), 0.0);

    next_side_ = -side_;
    const Mat3 F = frame(next_side_);
    ComState lo;
    lo.p = F.transpose() * (seen.p - pf_);
    lo.v = F.transpose() * seen.v;
    lo.t = seen.t;
    x_pred_ = predict_apex(lo, P_.g);

    StepRecord rec;
    rec.step = liftoffs_ + 1;
    rec.side = next_side_;
    const ApexState a = predict_apex(truth, P_.g);
    rec.apex = Vec3(a.vx, a.vy, a.h - pf_.z());
    rec.apex_ref = apex_ref;
    rec.apex_ref.z() = lib_[entry_stance_].h_apex;
    rec.heading = heading_;

    LegCommand u;
    if (sc_.kind == ScenarioKind::Stones) {
      const std::size_t k1 = target_;
      SteppingStone s1{F.transpose() * (stones_[k1].center - pf_), stones_[k1].l, stones_[k1].w};
      SelectionResult r;
      if (k1 + 1 < stones_.size()) {
        SteppingStone s2{F.transpose() * (stones_[k1 + 1].center - stones_[k1].center), stones_[k1 + 1].l,
                         stones_[k1 + 1].w};
        r = sel_.select_stones_liftoff(s1, s2, lo);
      } else {
        r = sel_.select_stone_liftoff(s1, lo);
      }
      entry_lo_ = r.index;
      u = r.u_new;
      rec.targeted = true;
      rec.target = stones_[k1].center;
      rec.target_l = stones_[k1].l;
      rec.target_w = stones_[k1].w;
    } else if (obstacle_) {
      const SelectionResult r = sel_.select_obstacle_liftoff(obstacle_view(), lo);
      entry_lo_ = r.index;
      u = r.u_new;
    } else {
      entry_lo_ = entry_stance_;
      u = sc_.use_deadbeat ? sel_.deadbeat(entry_lo_, x_pred_) : lib_[entry_lo_].command(P_);
      u = clamp_to_limits(u, P_);
    }
    u_cmd_ = u;
    rec.entry = static_cast<int>(entry_lo_);
    rec.u = u.as_vector();
    if (obstacle_) {
      rec.targeted = true;
      rec.target = Vec3(obstacle_near_ + 0.5 * obstacle_->width, pf_.y(), obstacle_->height);
      rec.target_w = obstacle_->width;
      rec.note = "obstacle";
    }
    pending_ = rec;
    flight_offset_ = F * leg_offset(u, P_.yh);
    ++liftoffs_;
  }

  Obstacle obstacle_view() const { return obstacle_from_box(*obstacle_, sc_.obstacles); }

  void on_touchdown(const ComState& truth, const Vec3& foot) {
    pf_ = foot;
    side_ = next_side_;
    ++steps_;
    t_td_ = truth.t;
    StepRecord rec = pending_ ? *pending_ : StepRecord{};
    pending_.reset();
    rec.t_touchdown = truth.t;
    rec.foothold = pf_;
    apply_commands();
    rec.heading = heading_;

    bool finished = false;
    if (sc_.kind == ScenarioKind::Stones) {
      const Stone& st = stones_[target_];
      rec.landing_error = pf_ - st.center;
      rec.inside = st.contains(pf_);
      if (!rec.inside) {
        log_.steps.push_back(rec);
        throw RunStop{"missed_stone", "foothold outside stone " + std::to_string(target_), ""};
      }
      ++target_;
      finished = target_ >= stones_.size();
    }
    if (obstacle_) {
      const double far_edge = obstacle_near_ + obstacle_->width;
      rec.landing_error = Vec3(pf_.x() - far_edge, 0.0, 0.0);
      rec.inside = pf_.x() > far_edge && obstacle_trace_ok_ && obstacle_takeoff_ok_;
      obstacle_.reset();
    }

    // touchdown policy for the step that starts with this stance
    const Mat3 Fn = frame(-side_);
    std::size_t chosen = entry_lo_;
    bool policy = true;
    const std::optional<ObstacleBox> box = obstacle_due();
    if (sc_.kind == ScenarioKind::Stones && !finished) {
      const Stone& nx = stones_[target_];
      const SteppingStone s1{Fn.transpose() * (nx.center - pf_), nx.l, nx.w};
      chosen = sel_.select_stones_touchdown(s1, x_pred_, u_cmd_).index;
    } else if (box) {
      obstacle_ = box;
      obstacle_near_ = pf_.x() - 0.5 * P_.foot_len + sc_.obstacles.appear;
      obstacle_takeoff_ok_ = pf_.x() < obstacle_near_;
      obstacle_trace_ok_ = true;
      obstacle_apex_seen_ = false;
      chosen = sel_.select_obstacle_touchdown(obstacle_view(), x_pred_, u_cmd_).index;
    } else if (sc_.kind != ScenarioKind::Stones) {
      chosen = nearest_entry(lib_, sel_.gains(), vx_cmd_, sc_.h, sc_.k);
      policy = false;
    }
    if (chosen != entry_lo_) {
      const char* why = policy ? "touchdown override" : "command";
      rec.note += rec.note.empty() ? why : std::string("; ") + why;
    }
    entry_stance_ = chosen;
    rec.td_entry = static_cast<int>(chosen);
    log_.steps.push_back(rec);

    ref_ = reference(entry_stance_).anchored(pf_, frame_rotation(), side_);
    has_ref_ = true;
    if (finished) throw RunStop{"ok", "course completed", ""};
  }

  std::optional<ObstacleBox> obstacle_due() {
    if (sc_.kind != ScenarioKind::Obstacles || next_obstacle_ >= obstacles_.size()) return std::nullopt;
    const int due = opt_.first_obstacle_step + static_cast<int>(next_obstacle_) * sc_.obstacle_spacing;
    if (steps_ != due) return std::nullopt;
    return obstacles_[next_obstacle_++];
  }

  bool done() const {
    if (sc_.duration > 0) return s_.t >= sc_.duration - 1e-12;
    if (sc_.kind == ScenarioKind::Stones) return false;
    return steps_ >= sc_.steps;
  }

  void loop() {
    const double h = opt_.tick / opt_.substeps;
    const double m_plant = noise_.plant_mass(P_.m);
    while (!done()) {
      if (s_.t > opt_.max_time) throw RunStop{"timeout", "time limit reached", ""};
      const ComState seen = noise_.measure(s_);
      Vec3 f = Vec3::Zero();
      if (phase_ == Phase::Stance) f = control(seen);
      const Vec3 applied = noise_.actuate(f);
      record_tick(phase_ == Phase::Stance ? applied : Vec3::Zero());
      for (int i = 0; i < opt_.substeps; ++i) {
        advance(h, applied, m_plant);
        if (obstacle_ && phase_ == Phase::Flight) check_obstacle();
      }
      if (s_.p.z() - pf_.z() < sc_.fall_height)
        throw RunStop{"fall", "CoM below fall height at t=" + std::to_string(s_.t), ""};
    }
  }

  // The swing foot is lifted to its apex point, then descends with the
  // touchdown posture. Obstacle runs keep heading 0.
  void check_obstacle() {
    if (s_.v.z() > 0.0) return;
    const Vec3 foot = s_.p + flight_offset_;
    if (!obstacle_apex_seen_) {
      obstacle_apex_seen_ = true;
      if (foot.z() < obstacle_->height) obstacle_trace_ok_ = false;
    }
    if (foot.x() > obstacle_near_ && foot.x() < obstacle_near_ + obstacle_->width && foot.z() < obstacle_->height)
      obstacle_trace_ok_ = false;
  }

  Vec3 control(const ComState& seen) {
    const double tr = seen.t - t_td_;
    ReferencePoint r = ref_.at(tr);
    r.a = (ref_.at(tr + opt_.tick).v - r.v) / opt_.tick;
    const Vec3 fd = desired_force(P_.m, P_.g, r, seen.p, seen.v, pd_);
    const ForceCone cone = make_force_cone(seen.p, pf_, P_, heading_yaw(ref_.rotation));
    return project_force(fd, cone).f;
  }

  void record_tick(const Vec3& f) {
    TickRecord r;
    r.t = s_.t;
    r.phase = phase_;
    r.p = s_.p;
    r.v = s_.v;
    r.f = f;
    r.pf = phase_ == Phase::Stance ? pf_ : Vec3(s_.p + flight_offset_);
    r.ref_id = has_ref_ ? static_cast<int>(entry_stance_) : -1;
    r.v_ref = has_ref_ ? ref_.at(s_.t - t_td_).v : s_.v;
    r.heading = heading_;
    log_.ticks.push_back(r);
  }

  // One physics substep of length h; events inside it switch phase and the
  // remainder continues in the new phase. Force is zero-order held.
  void advance(double h, const Vec3& f, double m_plant) {
    double left = h;
    for (int guard = 0; left > 0.0 && guard < 4; ++guard) {
      if (phase_ == Phase::Flight) {
        auto foot_gap = [&](double t) {
          const ComState q = ballistic(s_, t, P_.g);
          const Vec3 foot = q.p + flight_offset_;
          return foot.z() - ground_at(foot);
        };
        // touchdown only counts on the way down
        const double t_top = std::max(0.0, s_.v.z() / P_.g);
        if (t_top >= left || foot_gap(left) > 0.0) {
          s_ = ballistic(s_, left, P_.g);
          return;
        }
        double lo = t_top, hi = left;
        if (foot_gap(lo) <= 0.0) hi = lo;
        while (hi - lo > P_.event_tol) {
          const double mid = 0.5 * (lo + hi);
          (foot_gap(mid) > 0.0 ? lo : hi) = mid;
        }
        s_ = ballistic(s_, hi, P_.g);
        left -= hi;
        Vec3 foot = s_.p + flight_offset_;
        foot.z() = ground_at(foot);
        phase_ = Phase::Stance;
        on_touchdown(s_, foot);
      } else {
        const AdvanceResult r = advance_under_force(P_, m_plant, s_, pf_, f, left, 1);
        if (!r.lifted_off) {
          s_ = r.state;
          return;
        }
        left -= r.state.t - s_.t;
        s_ = r.state;
        phase_ = Phase::Flight;
        on_liftoff(s_);
      }
    }
    if (left > 0.0) s_ = ballistic(s_, left, P_.g);
  }

  ScenarioConfig sc_;
  const TrajectoryLibrary& lib_;
  const TemplateParams& P_;
  Selector sel_;
  NoiseModel noise_;
  HarnessOptions opt_;
  PdGains pd_;
  std::vector<std::unique_ptr<ReferenceTrajectory>> refs_;
  std::vector<Stone> stones_;
  std::vector<ObstacleBox> obstacles_;

  RunLog log_;
  ComState s_;
  Phase phase_ = Phase::Flight;
  Vec3 pf_ = Vec3::Zero();
  int side_ = -1;
  int next_side_ = 1;
  double heading_ = 0.0;
  double vx_cmd_ = 1.0;
  std::size_t entry_lo_ = 0;
  std::size_t entry_stance_ = 0;
  ReferenceTrajectory ref_;
  double t_td_ = 0.0;
  ApexState x_pred_;
  LegCommand u_cmd_;
  Vec3 flight_offset_ = Vec3::Zero();
  std::optional<StepRecord> pending_;
  int steps_ = 0;
  int liftoffs_ = 0;
  std::size_t target_ = 0;
  bool has_ref_ = false;
  std::size_t next_obstacle_ = 0;
  std::optional<ObstacleBox> obstacle_;
  double obstacle_near_ = 0.0;
  bool obstacle_trace_ok_ = false;
  bool obstacle_apex_seen_ = false;
  bool obstacle_takeoff_ok_ = false;
};

}  // namespace detail

/// Runs one scenario. Falls, selection failures and integration errors end
/// the run and are reported in the summary; nothing is thrown past here
/// except for invalid configuration.
inline RunLog run_closed_loop(const ScenarioConfig& scenario, const TrajectoryLibrary& lib, const GainLibrary& gains,
                              const NoiseConfig& noise = {}, const HarnessOptions& opt = {}) {
  return detail::ClosedLoop(scenario, lib, gains, noise, opt).run();
}

}  // namespace slipstep
